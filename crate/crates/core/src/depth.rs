//! Dense metric depth priors: rendering sparse LiDAR depth onto the image
//! and affinely scaling an externally produced relative-depth image against
//! it.
//!
//! The fit is plain least squares with optional MAD trimming. Depth space is
//! the default fit domain; inverse-depth space is available behind a config
//! switch because relative-depth networks commonly predict affine-invariant
//! inverse depth.

use crate::geometry::{project, CameraIntrinsics, Point3, RigidPose};
use thiserror::Error;

/// One LiDAR return in the sensor frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn position(&self) -> Point3 {
        Point3::new(self.x as f64, self.y as f64, self.z as f64)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("need at least 2 valid sparse samples, found {found}")]
    InsufficientSamples { found: usize },
    #[error("all relative-depth values coincide; affine fit is degenerate")]
    DegenerateFit,
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("depth must be positive and finite (got {value} at pixel ({x}, {y}))")]
    InvalidDepth { x: usize, y: usize, value: f64 },
}

/// Per-pixel metric depth with validity. Valid pixels always carry finite,
/// strictly positive depth in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, DepthError> {
        assert_eq!(values.len(), width * height);
        assert_eq!(valid.len(), width * height);
        for i in 0..values.len() {
            if valid[i] && !(values[i] > 0.0 && values[i].is_finite()) {
                return Err(DepthError::InvalidDepth {
                    x: i % width,
                    y: i / width,
                    value: values[i],
                });
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.values[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        assert!(
            depth > 0.0 && depth.is_finite(),
            "depth must be positive and finite"
        );
        let i = self.index(x, y);
        self.values[i] = depth;
        self.valid[i] = true;
    }

    #[inline]
    pub fn set_invalid(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.values[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Iterates `(x, y, depth)` over valid pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let width = self.width;
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i % width, i / width, self.values[i]))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }
}

/// Unitless relative depth as produced by a monocular depth network.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl RelativeDepthMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Domain the affine relation is fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitSpace {
    /// d = gain * r + offset
    Depth,
    /// 1/d = gain * r + offset
    InverseDepth,
}

/// Configuration for [`fit_scale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFitConfig {
    pub space: FitSpace,
    /// Iterative MAD trimming of gross outliers before the final fit.
    pub trim: bool,
    /// Residuals beyond `mad_k` times the MAD are discarded per round.
    pub mad_k: f64,
    pub trim_rounds: usize,
}

impl Default for ScaleFitConfig {
    fn default() -> Self {
        Self {
            space: FitSpace::Depth,
            trim: true,
            mad_k: 3.0,
            trim_rounds: 3,
        }
    }
}

/// Result of the affine fit. `gain` is unitless; `offset` is meters in depth
/// space and 1/meters in inverse-depth space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFit {
    pub gain: f64,
    pub offset: f64,
    pub inlier_count: usize,
    pub rms_residual: f64,
    pub space: FitSpace,
}

/// Default clamp range for scaled depth, meters.
pub const DEPTH_CLAMP_DEFAULT: (f64, f64) = (0.1, 80.0);

/// Projects a LiDAR cloud into the camera and keeps the nearest depth per
/// pixel (z-buffer rule). Points are rasterized to the nearest integer
/// pixel; everything else stays invalid.
pub fn render_sparse_depth(
    points: &[LidarPoint],
    lidar_to_cam: &RigidPose,
    k: &CameraIntrinsics,
) -> DepthMap {
    let width = k.width as usize;
    let height = k.height as usize;
    let mut map = DepthMap::invalid(width, height);
    for point in points {
        let Ok((pixel, depth)) = project(&point.position(), lidar_to_cam, k) else {
            continue;
        };
        let x = pixel.x.round();
        let y = pixel.y.round();
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            continue;
        }
        let (x, y) = (x as usize, y as usize);
        match map.get(x, y) {
            Some(existing) if existing <= depth => {}
            _ => map.set(x, y, depth),
        }
    }
    map
}

fn least_squares(samples: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = samples.len() as f64;
    let mean_r = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_t = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for &(r, t) in samples {
        cov += (r - mean_r) * (t - mean_t);
        var += (r - mean_r) * (r - mean_r);
    }
    if var == 0.0 {
        return None;
    }
    let gain = cov / var;
    Some((gain, mean_t - gain * mean_r))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fits `target ≈ gain * relative + offset` over pixels that are valid in
/// the sparse map, where `target` is depth or inverse depth per
/// `cfg.space`. With trimming enabled, residuals beyond `mad_k * MAD` are
/// discarded for `trim_rounds` rounds before the final fit.
pub fn fit_scale(
    rel: &RelativeDepthMap,
    sparse: &DepthMap,
    cfg: &ScaleFitConfig,
) -> Result<ScaleFit, DepthError> {
    if rel.dims() != sparse.dims() {
        return Err(DepthError::DimensionMismatch {
            a: rel.dims(),
            b: sparse.dims(),
        });
    }
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (x, y, depth) in sparse.iter_valid() {
        let r = rel.get(x, y);
        if !r.is_finite() {
            continue;
        }
        let target = match cfg.space {
            FitSpace::Depth => depth,
            FitSpace::InverseDepth => 1.0 / depth,
        };
        samples.push((r, target));
    }
    if samples.len() < 2 {
        return Err(DepthError::InsufficientSamples {
            found: samples.len(),
        });
    }
    if samples.windows(2).all(|w| w[0].0 == w[1].0) {
        return Err(DepthError::DegenerateFit);
    }

    let mut active = samples;
    let (mut gain, mut offset) = least_squares(&active).ok_or(DepthError::DegenerateFit)?;

    if cfg.trim {
        for _ in 0..cfg.trim_rounds {
            let mut residuals: Vec<f64> = active
                .iter()
                .map(|&(r, t)| t - (gain * r + offset))
                .collect();
            let mut sorted = residuals.clone();
            let med = median(&mut sorted);
            let mut deviations: Vec<f64> = residuals.iter().map(|e| (e - med).abs()).collect();
            let mad = median(&mut deviations);
            let threshold = cfg.mad_k * mad;
            let kept: Vec<(f64, f64)> = active
                .iter()
                .zip(residuals.drain(..))
                .filter(|(_, e)| (e - med).abs() <= threshold)
                .map(|(s, _)| *s)
                .collect();
            // Stop rather than degrade to an unsolvable set.
            if kept.len() < 2 {
                break;
            }
            match least_squares(&kept) {
                Some((g, b)) => {
                    active = kept;
                    gain = g;
                    offset = b;
                }
                None => break,
            }
        }
    }

    let sq_sum: f64 = active
        .iter()
        .map(|&(r, t)| {
            let e = t - (gain * r + offset);
            e * e
        })
        .sum();
    Ok(ScaleFit {
        gain,
        offset,
        inlier_count: active.len(),
        rms_residual: (sq_sum / active.len() as f64).sqrt(),
        space: cfg.space,
    })
}

/// Applies a fitted scale to a relative-depth image, producing a dense map.
/// Every pixel becomes valid; predictions outside `(d_min, d_max)` are
/// clamped at the bounds. In inverse-depth space, non-positive inverse
/// predictions clamp to `d_max`.
pub fn apply_scale(rel: &RelativeDepthMap, fit: &ScaleFit, clamp: (f64, f64)) -> DepthMap {
    let (d_min, d_max) = clamp;
    assert!(d_min > 0.0 && d_max > d_min, "invalid clamp range");
    let mut out = DepthMap::invalid(rel.width(), rel.height());
    for y in 0..rel.height() {
        for x in 0..rel.width() {
            let prediction = fit.gain * rel.get(x, y) + fit.offset;
            let depth = match fit.space {
                FitSpace::Depth => prediction,
                FitSpace::InverseDepth => {
                    if prediction <= 1.0 / d_max {
                        d_max
                    } else {
                        1.0 / prediction
                    }
                }
            };
            out.set(x, y, depth.clamp(d_min, d_max));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn map_from(values: &[(usize, usize, f64)], w: usize, h: usize) -> DepthMap {
        let mut m = DepthMap::invalid(w, h);
        for &(x, y, d) in values {
            m.set(x, y, d);
        }
        m
    }

    fn rel_from(values: &[f64], w: usize, h: usize) -> RelativeDepthMap {
        RelativeDepthMap::from_values(w, h, values.to_vec())
    }

    #[test]
    fn single_axis_point_renders_at_principal_point() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap();
        let cloud = [LidarPoint {
            x: 0.0,
            y: 0.0,
            z: 5.0,
            intensity: 0.0,
        }];
        let map = render_sparse_depth(&cloud, &RigidPose::identity(), &k);
        assert_eq!(map.valid_count(), 1);
        assert_eq!(map.get(50, 50), Some(5.0));
    }

    #[test]
    fn z_buffer_keeps_nearest_depth() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap();
        let cloud = [
            LidarPoint {
                x: 0.0,
                y: 0.0,
                z: 9.0,
                intensity: 0.0,
            },
            LidarPoint {
                x: 0.0,
                y: 0.0,
                z: 4.0,
                intensity: 0.0,
            },
        ];
        let map = render_sparse_depth(&cloud, &RigidPose::identity(), &k);
        assert_eq!(map.get(50, 50), Some(4.0));
    }

    #[test]
    fn rendering_matches_projection_and_min_oracle() {
        let k = CameraIntrinsics::new(60.0, 55.0, 32.0, 24.0, 64, 48).unwrap();
        let pose = RigidPose::from_translation(nalgebra::Vector3::new(0.1, -0.2, 0.4));
        let mut rng = StdRng::seed_from_u64(77);
        let cloud: Vec<LidarPoint> = (0..4000)
            .map(|_| LidarPoint {
                x: rng.random_range(-4.0..4.0),
                y: rng.random_range(-3.0..3.0),
                z: rng.random_range(-1.0..12.0),
                intensity: rng.random_range(0.0..1.0),
            })
            .collect();
        let map = render_sparse_depth(&cloud, &pose, &k);

        // Brute-force oracle: min camera depth per rounded pixel.
        let mut expected = vec![f64::INFINITY; 64 * 48];
        for p in &cloud {
            if let Ok((px, d)) = project(&p.position(), &pose, &k) {
                let (x, y) = (px.x.round(), px.y.round());
                if x >= 0.0 && y >= 0.0 && x < 64.0 && y < 48.0 {
                    let i = y as usize * 64 + x as usize;
                    expected[i] = expected[i].min(d);
                }
            }
        }
        for y in 0..48 {
            for x in 0..64 {
                let want = expected[y * 64 + x];
                match map.get(x, y) {
                    Some(d) => assert_eq!(d, want),
                    None => assert!(want.is_infinite()),
                }
            }
        }
    }

    #[test]
    fn z_buffer_is_monotone_under_added_points() {
        let k = CameraIntrinsics::new(60.0, 55.0, 32.0, 24.0, 64, 48).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let cloud: Vec<LidarPoint> = (0..500)
            .map(|_| LidarPoint {
                x: rng.random_range(-3.0..3.0),
                y: rng.random_range(-2.0..2.0),
                z: rng.random_range(0.5..10.0),
                intensity: 0.0,
            })
            .collect();
        let base = render_sparse_depth(&cloud[..250], &RigidPose::identity(), &k);
        let full = render_sparse_depth(&cloud, &RigidPose::identity(), &k);
        for y in 0..48 {
            for x in 0..64 {
                if let Some(before) = base.get(x, y) {
                    assert!(full.get(x, y).unwrap() <= before);
                }
            }
        }
    }

    #[test]
    fn exact_two_point_fit() {
        let sparse = map_from(&[(0, 0, 2.0), (1, 0, 4.0)], 2, 1);
        let rel = rel_from(&[1.0, 2.0], 2, 1);
        let fit = fit_scale(&rel, &sparse, &ScaleFitConfig::default()).unwrap();
        assert_relative_eq!(fit.gain, 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.offset, 0.0, epsilon = 1e-12);
        assert_eq!(fit.inlier_count, 2);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn identity_fit_over_100_pixels() {
        let mut rng = StdRng::seed_from_u64(2);
        let values: Vec<f64> = (0..100).map(|_| rng.random_range(1.0..30.0)).collect();
        let sparse = DepthMap::from_parts(100, 1, values.clone(), vec![true; 100]).unwrap();
        let rel = rel_from(&values, 100, 1);
        let fit = fit_scale(&rel, &sparse, &ScaleFitConfig::default()).unwrap();
        assert_relative_eq!(fit.gain, 1.0, epsilon = 1e-9);
        assert!(fit.offset.abs() < 1e-9);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn trimmed_fit_recovers_planted_affine_against_normal_equations_oracle() {
        let mut rng = StdRng::seed_from_u64(42);
        let (a, b) = (2.5, 1.25);
        let n = 500;
        let mut rel_values = Vec::with_capacity(n);
        let mut depth_values = Vec::with_capacity(n);
        let mut inliers = Vec::new();
        for i in 0..n {
            let r: f64 = rng.random_range(0.5..10.0);
            let noise: f64 = rng.random_range(-0.05..0.05);
            let mut d = a * r + b + noise;
            if i % 10 == 0 {
                d += rng.random_range(10.0..40.0); // gross outlier
            } else {
                inliers.push((r, d));
            }
            rel_values.push(r);
            depth_values.push(d);
        }
        let sparse = DepthMap::from_parts(n, 1, depth_values, vec![true; n]).unwrap();
        let rel = rel_from(&rel_values, n, 1);
        let fit = fit_scale(&rel, &sparse, &ScaleFitConfig::default()).unwrap();
        assert!((fit.gain - a).abs() / a < 0.02, "gain {}", fit.gain);
        assert!((fit.offset - b).abs() / b < 0.02, "offset {}", fit.offset);

        // Closed-form normal equations on the clean inlier set.
        let (oracle_a, oracle_b) = least_squares(&inliers).unwrap();
        assert!((fit.gain - oracle_a).abs() < 0.02);
        assert!((fit.offset - oracle_b).abs() < 0.05);
    }

    #[test]
    fn fit_error_cases() {
        let sparse = map_from(&[(0, 0, 2.0)], 2, 1);
        let rel = rel_from(&[1.0, 2.0], 2, 1);
        assert_eq!(
            fit_scale(&rel, &sparse, &ScaleFitConfig::default()),
            Err(DepthError::InsufficientSamples { found: 1 })
        );

        let sparse = map_from(&[(0, 0, 2.0), (1, 0, 3.0)], 2, 1);
        let rel = rel_from(&[1.5, 1.5], 2, 1);
        assert_eq!(
            fit_scale(&rel, &sparse, &ScaleFitConfig::default()),
            Err(DepthError::DegenerateFit)
        );

        let rel_small = rel_from(&[1.0], 1, 1);
        assert!(matches!(
            fit_scale(&rel_small, &sparse, &ScaleFitConfig::default()),
            Err(DepthError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_scale_trivial_and_elementwise_oracle() {
        let rel = rel_from(&[3.0, 0.0, -5.0, 100.0], 4, 1);
        let identity = ScaleFit {
            gain: 1.0,
            offset: 0.0,
            inlier_count: 4,
            rms_residual: 0.0,
            space: FitSpace::Depth,
        };
        let out = apply_scale(&rel, &identity, DEPTH_CLAMP_DEFAULT);
        assert_eq!(out.get(0, 0), Some(3.0));
        assert_eq!(out.get(1, 0), Some(0.1)); // clamped low
        assert_eq!(out.get(2, 0), Some(0.1));
        assert_eq!(out.get(3, 0), Some(80.0)); // clamped high

        let shifted = ScaleFit {
            gain: 2.0,
            offset: 1.0,
            ..identity
        };
        let out = apply_scale(&rel, &shifted, DEPTH_CLAMP_DEFAULT);
        assert_eq!(out.get(1, 0), Some(1.0));

        // Elementwise oracle over a random image.
        let mut rng = StdRng::seed_from_u64(9);
        let vals: Vec<f64> = (0..256).map(|_| rng.random_range(-2.0..50.0)).collect();
        let rel = rel_from(&vals, 16, 16);
        let out = apply_scale(&rel, &shifted, DEPTH_CLAMP_DEFAULT);
        for y in 0..16 {
            for x in 0..16 {
                let expect = (2.0 * rel.get(x, y) + 1.0).clamp(0.1, 80.0);
                assert_eq!(out.get(x, y), Some(expect));
            }
        }
    }

    #[test]
    fn refit_after_apply_is_identity() {
        let mut rng = StdRng::seed_from_u64(13);
        let n = 200;
        let rel_values: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..9.0)).collect();
        let depth_values: Vec<f64> = rel_values.iter().map(|r| 3.0 * r + 2.0).collect();
        let sparse = DepthMap::from_parts(n, 1, depth_values, vec![true; n]).unwrap();
        let rel = rel_from(&rel_values, n, 1);
        let cfg = ScaleFitConfig {
            trim: false,
            ..ScaleFitConfig::default()
        };
        let fit = fit_scale(&rel, &sparse, &cfg).unwrap();
        let dense = apply_scale(&rel, &fit, (0.001, 1e6));

        // Refit dense-vs-sparse at the sparse pixels: must be the identity.
        let dense_as_rel = RelativeDepthMap::from_values(n, 1, dense.values().to_vec());
        let refit = fit_scale(&dense_as_rel, &sparse, &cfg).unwrap();
        assert!((refit.gain - 1.0).abs() < 1e-9);
        assert!(refit.offset.abs() < 1e-9);
    }

    #[test]
    fn inverse_depth_space_fit() {
        let rel_values = vec![0.1, 0.2, 0.4, 0.5];
        // 1/d = 2 r + 0.05
        let depth_values: Vec<f64> = rel_values.iter().map(|r| 1.0 / (2.0 * r + 0.05)).collect();
        let sparse = DepthMap::from_parts(4, 1, depth_values, vec![true; 4]).unwrap();
        let rel = rel_from(&rel_values, 4, 1);
        let cfg = ScaleFitConfig {
            space: FitSpace::InverseDepth,
            trim: false,
            ..ScaleFitConfig::default()
        };
        let fit = fit_scale(&rel, &sparse, &cfg).unwrap();
        assert_relative_eq!(fit.gain, 2.0, epsilon = 1e-9);
        assert_relative_eq!(fit.offset, 0.05, epsilon = 1e-9);
        let dense = apply_scale(&rel, &fit, (0.001, 1e6));
        for (i, r) in rel_values.iter().enumerate() {
            assert_relative_eq!(
                dense.get(i, 0).unwrap(),
                1.0 / (2.0 * r + 0.05),
                epsilon = 1e-9
            );
        }
    }
}
