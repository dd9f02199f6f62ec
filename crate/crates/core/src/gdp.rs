//! Gaussian-decay depth-prior projection (GDP): lifting per-pixel feature
//! vectors into a voxel volume along each pixel's line of sight, weighted by
//! a Gaussian centered at the back-projected depth prior.
//!
//! Two formulations are provided with matching outputs:
//!
//! - [`gdp_scatter`] walks each pixel's ray through the grid and deposits
//!   weighted features (pixel-parallel in [`gdp_scatter_fast`], with
//!   floating-point reassociation bounded by 1e-5).
//! - [`gdp_gather`] iterates voxels and collects from every pixel whose ray
//!   intersects the voxel cube. Each output element depends only on its own
//!   voxel, so it is bit-deterministic under any thread count.
//!
//! Sigma is configured in voxel-size units and converted to meters through
//! the grid spec. The Gaussian distance is Euclidean voxel-center-to-prior
//! distance; work per ray is bounded by truncating at
//! `truncation_radius * sigma`.

use crate::depth::DepthMap;
use crate::geometry::{back_project, ray_through_pixel, CameraIntrinsics, Pixel, Point3, Ray, RigidPose};
use crate::voxel::{FeatureGrid, GridSpec, LabelGrid, MaskGrid, ScalarGrid, EMPTY_LABEL};
use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GdpError {
    #[error("feature image is {feat:?} but depth prior is {depth:?}")]
    DimensionMismatch {
        feat: (usize, usize),
        depth: (usize, usize),
    },
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
}

/// H x W x C per-pixel feature vectors, pixel-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            values: vec![0.0; width * height * channels],
        }
    }

    pub fn from_values(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Self {
        assert_eq!(values.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.values[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.values[i..i + self.channels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// How accumulated ray weights are reported per voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Raw Gaussian weights.
    None,
    /// Each pixel's weights are scaled to sum to 1 along its ray before
    /// deposit.
    PerRay,
    /// Accumulated features are divided by the accumulated weight even in
    /// weighted-sum mode.
    PerVoxel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulation {
    /// Voxel feature = sum of weight * feature.
    WeightedSum,
    /// Voxel feature = sum of weight * feature / sum of weight.
    WeightedMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdpConfig {
    /// Gaussian standard deviation in voxel-size units.
    pub sigma: f64,
    /// Truncation radius in multiples of sigma. `INFINITY` disables
    /// truncation.
    pub truncation_radius: f64,
    pub normalization: Normalization,
    pub accumulation: Accumulation,
}

impl Default for GdpConfig {
    fn default() -> Self {
        Self {
            sigma: 16.0,
            truncation_radius: 3.0,
            normalization: Normalization::None,
            accumulation: Accumulation::WeightedMean,
        }
    }
}

impl GdpConfig {
    fn validate(&self) -> Result<(), GdpError> {
        if !(self.sigma > 0.0) {
            return Err(GdpError::InvalidConfig {
                reason: format!("sigma must be positive (got {})", self.sigma),
            });
        }
        if !(self.truncation_radius > 0.0) {
            return Err(GdpError::InvalidConfig {
                reason: format!(
                    "truncation radius must be positive (got {})",
                    self.truncation_radius
                ),
            });
        }
        Ok(())
    }
}

/// Result of a scatter pass: accumulated features, the per-voxel accumulated
/// weight, and the set of voxels any ray touched.
#[derive(Debug, Clone)]
pub struct GdpOutput {
    pub features: FeatureGrid,
    /// Accumulated Gaussian weight per voxel, kept in double precision.
    pub weights: ScalarGrid,
    pub touched: MaskGrid,
}

/// Gaussian-decay weight between a candidate voxel position and the
/// back-projected depth prior: `exp(-||p - p_hat||^2 / (2 sigma^2))`.
#[inline]
pub fn gaussian_weight(p: &Point3, p_hat: &Point3, sigma_meters: f64) -> f64 {
    debug_assert!(sigma_meters > 0.0);
    let dist2 = (p - p_hat).norm_squared();
    (-dist2 / (2.0 * sigma_meters * sigma_meters)).exp()
}

/// One traversed voxel with the parametric interval the ray spends inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub index: [usize; 3],
    pub t_entry: f64,
    pub t_exit: f64,
}

/// Walks a forward ray (t >= 0) through the volume, reporting every voxel
/// whose cube the ray's in-volume segment crosses with positive measure, in
/// increasing-distance order.
///
/// Cubes are half-open on every axis, so a ray running exactly along a
/// shared face or edge belongs to the upper-index cube, and crossings that
/// coincide exactly (corner hits) step diagonally. The walk merges per-axis
/// boundary crossing times and reads the voxel index from each interval
/// midpoint, which makes the output deterministic by construction.
pub fn traverse_ray(ray: &Ray, spec: &GridSpec) -> Vec<RaySegment> {
    let s = spec.voxel_size();
    let dims = spec.dims();
    let origin = spec.origin();

    // Clip the forward ray to the volume slab by slab.
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let o = ray.origin.coords[axis] - origin.coords[axis];
        let d = ray.direction[axis];
        let extent = dims[axis] as f64 * s;
        if d == 0.0 {
            if !(o >= 0.0 && o < extent) {
                return Vec::new();
            }
        } else {
            let ta = -o / d;
            let tb = (extent - o) / d;
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
    }
    if !(t1 > t0) {
        return Vec::new();
    }

    // Boundary crossing times strictly inside (t0, t1), merged across axes.
    let mut cuts: Vec<f64> = Vec::new();
    for axis in 0..3 {
        let d = ray.direction[axis];
        if d == 0.0 {
            continue;
        }
        let o = ray.origin.coords[axis] - origin.coords[axis];
        let c_start = o + t0 * d;
        let c_end = o + t1 * d;
        let (c_lo, c_hi) = if d > 0.0 {
            (c_start, c_end)
        } else {
            (c_end, c_start)
        };
        let m_lo = (c_lo / s).floor() as i64 + 1;
        let m_hi = (c_hi / s).ceil() as i64 - 1;
        for m in m_lo..=m_hi {
            let t = (m as f64 * s - o) / d;
            if t > t0 && t < t1 {
                cuts.push(t);
            }
        }
    }
    cuts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    cuts.push(t1);

    let mut segments = Vec::with_capacity(cuts.len());
    let mut prev = t0;
    for &cut in &cuts {
        if !(cut > prev) {
            continue;
        }
        let mid = ray.point_at(0.5 * (prev + cut));
        if let Some(index) = spec.world_to_index(&mid) {
            segments.push(RaySegment {
                index,
                t_entry: prev,
                t_exit: cut,
            });
        }
        prev = cut;
    }
    segments
}

struct Kernel {
    inv_two_sigma2: f64,
    /// Truncation radius in meters and its square (infinite when
    /// untruncated).
    radius: f64,
    radius2: f64,
}

impl Kernel {
    fn new(cfg: &GdpConfig, spec: &GridSpec) -> Self {
        let sigma_m = cfg.sigma * spec.voxel_size();
        let radius = cfg.truncation_radius * sigma_m;
        Self {
            inv_two_sigma2: 1.0 / (2.0 * sigma_m * sigma_m),
            radius,
            radius2: radius * radius,
        }
    }
}

/// Weighted deposits of one pixel along its ray: (linear voxel index, weight).
fn pixel_deposits(
    pixel: Pixel,
    depth: f64,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    spec: &GridSpec,
    kernel: &Kernel,
    normalization: Normalization,
    out: &mut Vec<(usize, f64)>,
) {
    out.clear();
    // depth > 0 is guaranteed by DepthMap validity.
    let p_hat = back_project(&pixel, depth, pose, k).expect("valid depth");
    let ray = ray_through_pixel(&pixel, pose, k);
    let t_hat = (p_hat - ray.origin).dot(&ray.direction);
    let half_diag = spec.voxel_size() * 3f64.sqrt() * 0.5;
    // Beyond this entry distance no voxel center can pass the truncation
    // test: |t_center - t_hat| alone already exceeds the radius.
    let t_stop = t_hat + kernel.radius + half_diag;

    for seg in traverse_ray(&ray, spec) {
        if seg.t_entry > t_stop {
            break;
        }
        let center = spec.voxel_center(seg.index);
        let dist2 = (center - p_hat).norm_squared();
        if dist2 <= kernel.radius2 {
            let w = (-dist2 * kernel.inv_two_sigma2).exp();
            out.push((spec.linear_index(seg.index), w));
        }
    }

    if normalization == Normalization::PerRay {
        let total: f64 = out.iter().map(|d| d.1).sum();
        if total > 0.0 {
            for d in out.iter_mut() {
                d.1 /= total;
            }
        }
    }
}

/// Threshold below which an accumulated weight counts as untouched when
/// dividing in weighted-mean / per-voxel modes.
pub const WEIGHT_EPSILON: f64 = 1e-12;

struct Accumulator {
    features: Vec<f64>,
    weights: Vec<f64>,
    touched: Vec<bool>,
}

impl Accumulator {
    fn new(num_voxels: usize, channels: usize) -> Self {
        Self {
            features: vec![0.0; num_voxels * channels],
            weights: vec![0.0; num_voxels],
            touched: vec![false; num_voxels],
        }
    }

    #[inline]
    fn deposit(&mut self, voxel: usize, w: f64, feature: &[f32]) {
        let base = voxel * feature.len();
        for (c, &f) in feature.iter().enumerate() {
            self.features[base + c] += w * f as f64;
        }
        self.weights[voxel] += w;
        self.touched[voxel] = true;
    }

    fn merge(&mut self, other: &Accumulator) {
        for (a, b) in self.features.iter_mut().zip(&other.features) {
            *a += *b;
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += *b;
        }
        for (a, b) in self.touched.iter_mut().zip(&other.touched) {
            *a |= *b;
        }
    }

    fn finalize(self, spec: &GridSpec, channels: usize, cfg: &GdpConfig) -> GdpOutput {
        let divide = matches!(cfg.accumulation, Accumulation::WeightedMean)
            || matches!(cfg.normalization, Normalization::PerVoxel);
        let mut values = vec![0.0f32; self.features.len()];
        for v in 0..self.weights.len() {
            let w = self.weights[v];
            let scale = if divide {
                if w > WEIGHT_EPSILON {
                    1.0 / w
                } else {
                    0.0
                }
            } else {
                1.0
            };
            for c in 0..channels {
                values[v * channels + c] = (self.features[v * channels + c] * scale) as f32;
            }
        }
        let features = FeatureGrid::from_values(*spec, channels, values).expect("sized buffer");
        let weights = ScalarGrid::from_values(*spec, self.weights).expect("sized buffer");
        let touched = MaskGrid::from_bits(*spec, self.touched).expect("sized buffer");
        GdpOutput {
            features,
            weights,
            touched,
        }
    }
}

fn check_dims(feat: &FeatureImage, depth_prior: &DepthMap) -> Result<(), GdpError> {
    if feat.dims() != depth_prior.dims() {
        return Err(GdpError::DimensionMismatch {
            feat: feat.dims(),
            depth: depth_prior.dims(),
        });
    }
    Ok(())
}

/// Scatters every valid pixel's feature along its line of sight with
/// Gaussian-decay weights centered at the back-projected depth prior.
///
/// Pixels are processed in row-major order with a fixed accumulation order,
/// so the output is bit-reproducible.
pub fn gdp_scatter(
    feat: &FeatureImage,
    depth_prior: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    spec: &GridSpec,
    cfg: &GdpConfig,
) -> Result<GdpOutput, GdpError> {
    check_dims(feat, depth_prior)?;
    cfg.validate()?;
    let kernel = Kernel::new(cfg, spec);
    let mut acc = Accumulator::new(spec.num_voxels(), feat.channels());
    let mut deposits = Vec::new();
    for y in 0..feat.height() {
        for x in 0..feat.width() {
            let Some(depth) = depth_prior.get(x, y) else {
                continue;
            };
            pixel_deposits(
                Pixel::new(x as f64, y as f64),
                depth,
                pose,
                k,
                spec,
                &kernel,
                cfg.normalization,
                &mut deposits,
            );
            let feature = feat.pixel(x, y);
            for &(voxel, w) in &deposits {
                acc.deposit(voxel, w, feature);
            }
        }
    }
    Ok(acc.finalize(spec, feat.channels(), cfg))
}

/// Pixel-parallel scatter. Each worker accumulates a band of rows into a
/// private grid; bands are merged in row order afterwards, so results match
/// [`gdp_scatter`] up to floating-point reassociation (within 1e-5).
pub fn gdp_scatter_fast(
    feat: &FeatureImage,
    depth_prior: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    spec: &GridSpec,
    cfg: &GdpConfig,
) -> Result<GdpOutput, GdpError> {
    check_dims(feat, depth_prior)?;
    cfg.validate()?;
    let kernel = Kernel::new(cfg, spec);
    let bands = rayon::current_num_threads().max(1);
    let rows_per_band = feat.height().div_ceil(bands).max(1);
    let row_bands: Vec<(usize, usize)> = (0..feat.height())
        .step_by(rows_per_band)
        .map(|start| (start, (start + rows_per_band).min(feat.height())))
        .collect();

    let partials: Vec<Accumulator> = row_bands
        .into_par_iter()
        .map(|(y0, y1)| {
            let mut acc = Accumulator::new(spec.num_voxels(), feat.channels());
            let mut deposits = Vec::new();
            for y in y0..y1 {
                for x in 0..feat.width() {
                    let Some(depth) = depth_prior.get(x, y) else {
                        continue;
                    };
                    pixel_deposits(
                        Pixel::new(x as f64, y as f64),
                        depth,
                        pose,
                        k,
                        spec,
                        &kernel,
                        cfg.normalization,
                        &mut deposits,
                    );
                    let feature = feat.pixel(x, y);
                    for &(voxel, w) in &deposits {
                        acc.deposit(voxel, w, feature);
                    }
                }
            }
            acc
        })
        .collect();

    let mut iter = partials.into_iter();
    let mut acc = iter
        .next()
        .unwrap_or_else(|| Accumulator::new(spec.num_voxels(), feat.channels()));
    for other in iter {
        acc.merge(&other);
    }
    Ok(acc.finalize(spec, feat.channels(), cfg))
}

/// Cached per-pixel ray data for the gather pass.
struct PixelRay {
    direction: Vector3<f64>,
    p_hat: Point3,
    feature_index: usize,
    /// Per-ray normalization divisor (1 when normalization is off).
    ray_norm: f64,
}

/// Voxel-parallel dual of [`gdp_scatter`]: iterates voxels and collects from
/// every pixel whose viewing ray crosses the voxel cube. Output matches the
/// scatter formulation within 1e-5 per element and is bit-deterministic
/// under any thread count.
pub fn gdp_gather(
    feat: &FeatureImage,
    depth_prior: &DepthMap,
    pose: &RigidPose,
    k: &CameraIntrinsics,
    spec: &GridSpec,
    cfg: &GdpConfig,
) -> Result<FeatureGrid, GdpError> {
    check_dims(feat, depth_prior)?;
    cfg.validate()?;
    let kernel = Kernel::new(cfg, spec);
    let (width, height) = feat.dims();
    let channels = feat.channels();

    // Dense pixel->ray table; -1 marks pixels without a valid depth prior.
    let mut table = vec![-1i32; width * height];
    let mut rays: Vec<PixelRay> = Vec::new();
    let inv_pose = pose.inverse();
    let cam_center = Point3::from(*inv_pose.translation());
    let mut deposits = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let Some(depth) = depth_prior.get(x, y) else {
                continue;
            };
            let pixel = Pixel::new(x as f64, y as f64);
            let p_hat = back_project(&pixel, depth, pose, k).expect("valid depth");
            let ray = ray_through_pixel(&pixel, pose, k);
            let ray_norm = if cfg.normalization == Normalization::PerRay {
                pixel_deposits(
                    pixel,
                    depth,
                    pose,
                    k,
                    spec,
                    &kernel,
                    Normalization::None,
                    &mut deposits,
                );
                let total: f64 = deposits.iter().map(|d| d.1).sum();
                if total > 0.0 {
                    total
                } else {
                    1.0
                }
            } else {
                1.0
            };
            table[y * width + x] = rays.len() as i32;
            rays.push(PixelRay {
                direction: ray.direction,
                p_hat,
                feature_index: (y * width + x) * channels,
                ray_norm,
            });
        }
    }

    let divide = matches!(cfg.accumulation, Accumulation::WeightedMean)
        || matches!(cfg.normalization, Normalization::PerVoxel);
    let s = spec.voxel_size();
    let dims = spec.dims();
    let origin = spec.origin();
    // Camera-frame edge vectors of a voxel cube.
    let col_x: Vector3<f64> = pose.rotation().column(0) * s;
    let col_y: Vector3<f64> = pose.rotation().column(1) * s;
    let col_z: Vector3<f64> = pose.rotation().column(2) * s;
    const Z_EPS: f64 = 1e-9;

    let mut out = FeatureGrid::zeros(*spec, channels);
    let slab = dims[1] * dims[2] * channels;
    out.as_mut_slice()
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(ix, out_slab)| {
            let mut acc = vec![0.0f64; channels];
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let lo = Point3::new(
                        origin.x + ix as f64 * s,
                        origin.y + iy as f64 * s,
                        origin.z + iz as f64 * s,
                    );
                    let hi = Point3::new(lo.x + s, lo.y + s, lo.z + s);
                    let base_cam = pose.transform_point(&lo);

                    // Projected footprint of the cube, clipped to the front
                    // half-space, bounds the candidate pixels.
                    let Some((px_lo, px_hi, py_lo, py_hi)) = cube_pixel_bbox(
                        &base_cam, &col_x, &col_y, &col_z, k, width, height, Z_EPS,
                    ) else {
                        continue;
                    };

                    let center = Point3::new(
                        0.5 * (lo.x + hi.x),
                        0.5 * (lo.y + hi.y),
                        0.5 * (lo.z + hi.z),
                    );
                    acc.fill(0.0);
                    let mut acc_w = 0.0f64;
                    for py in py_lo..=py_hi {
                        let row = py * width;
                        for px in px_lo..=px_hi {
                            let slot = table[row + px];
                            if slot < 0 {
                                continue;
                            }
                            let ray = &rays[slot as usize];
                            if !ray_hits_cube(&cam_center, &ray.direction, &lo, &hi) {
                                continue;
                            }
                            let dist2 = (center - ray.p_hat).norm_squared();
                            if dist2 > kernel.radius2 {
                                continue;
                            }
                            let w = (-dist2 * kernel.inv_two_sigma2).exp() / ray.ray_norm;
                            acc_w += w;
                            let f = &feat.as_slice()[ray.feature_index..ray.feature_index + channels];
                            for (c, &fv) in f.iter().enumerate() {
                                acc[c] += w * fv as f64;
                            }
                        }
                    }
                    if acc_w == 0.0 {
                        continue;
                    }
                    let scale = if divide {
                        if acc_w > WEIGHT_EPSILON {
                            1.0 / acc_w
                        } else {
                            0.0
                        }
                    } else {
                        1.0
                    };
                    let base = (iy * dims[2] + iz) * channels;
                    for c in 0..channels {
                        out_slab[base + c] = (acc[c] * scale) as f32;
                    }
                }
            }
        });
    Ok(out)
}

/// Positive-measure intersection test between a forward ray and an
/// axis-aligned cube. Zero-direction axes use the half-open membership rule
/// so boundary-riding rays land in the upper-index cube, matching
/// [`traverse_ray`].
#[inline]
fn ray_hits_cube(origin: &Point3, direction: &Vector3<f64>, lo: &Point3, hi: &Point3) -> bool {
    let mut t_near = 0.0f64;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let o = origin.coords[axis];
        let d = direction[axis];
        if d == 0.0 {
            if !(o >= lo.coords[axis] && o < hi.coords[axis]) {
                return false;
            }
        } else {
            let inv = 1.0 / d;
            let ta = (lo.coords[axis] - o) * inv;
            let tb = (hi.coords[axis] - o) * inv;
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            t_near = t_near.max(near);
            t_far = t_far.min(far);
        }
    }
    t_far > t_near
}

/// Pixel bounding box of a voxel cube's image footprint, or `None` when the
/// cube is entirely behind the camera or projects outside the image.
#[allow(clippy::too_many_arguments)]
fn cube_pixel_bbox(
    base_cam: &Point3,
    col_x: &Vector3<f64>,
    col_y: &Vector3<f64>,
    col_z: &Vector3<f64>,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
    z_eps: f64,
) -> Option<(usize, usize, usize, usize)> {
    let mut corners = [Point3::origin(); 8];
    let mut n_front = 0;
    for (bits, corner) in corners.iter_mut().enumerate() {
        let mut p = base_cam.coords;
        if bits & 1 != 0 {
            p += col_x;
        }
        if bits & 2 != 0 {
            p += col_y;
        }
        if bits & 4 != 0 {
            p += col_z;
        }
        *corner = Point3::from(p);
        if corner.z >= z_eps {
            n_front += 1;
        }
    }
    if n_front == 0 {
        return None;
    }

    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    let mut extend = |p: &Point3| {
        let px = k.fx * p.x / p.z + k.cx;
        let py = k.fy * p.y / p.z + k.cy;
        min_x = min_x.min(px);
        max_x = max_x.max(px);
        min_y = min_y.min(py);
        max_y = max_y.max(py);
    };

    if n_front == 8 {
        for c in &corners {
            extend(c);
        }
    } else {
        // Clip the cube against z = z_eps: keep front corners and add
        // edge/plane intersection points.
        const EDGES: [(usize, usize); 12] = [
            (0, 1),
            (0, 2),
            (0, 4),
            (1, 3),
            (1, 5),
            (2, 3),
            (2, 6),
            (3, 7),
            (4, 5),
            (4, 6),
            (5, 7),
            (6, 7),
        ];
        for c in corners.iter().filter(|c| c.z >= z_eps) {
            extend(c);
        }
        for &(a, b) in &EDGES {
            let (pa, pb) = (&corners[a], &corners[b]);
            if (pa.z >= z_eps) != (pb.z >= z_eps) {
                let t = (z_eps - pa.z) / (pb.z - pa.z);
                let p = Point3::from(pa.coords + (pb.coords - pa.coords) * t);
                extend(&p);
            }
        }
    }

    const BBOX_MARGIN: f64 = 1e-9;
    let px_lo = (min_x - BBOX_MARGIN).ceil().max(0.0);
    let px_hi = (max_x + BBOX_MARGIN).floor().min(width as f64 - 1.0);
    let py_lo = (min_y - BBOX_MARGIN).ceil().max(0.0);
    let py_hi = (max_y + BBOX_MARGIN).floor().min(height as f64 - 1.0);
    if px_lo > px_hi || py_lo > py_hi {
        return None;
    }
    Some((px_lo as usize, px_hi as usize, py_lo as usize, py_hi as usize))
}

/// Argmax decoding of a category-per-channel feature grid into labels.
/// Voxels whose accumulated weight falls below `min_weight` decode as empty.
/// Ties resolve to the lower channel index.
pub fn argmax_labels(features: &FeatureGrid, weights: &ScalarGrid, min_weight: f64) -> LabelGrid {
    assert_eq!(features.spec(), weights.spec(), "grid specs differ");
    assert!(features.channels() <= u8::MAX as usize + 1);
    let mut labels = LabelGrid::filled(*features.spec(), EMPTY_LABEL);
    let channels = features.channels();
    let values = features.as_slice();
    let out = labels.as_mut_slice();
    for (v, out_label) in out.iter_mut().enumerate() {
        if weights.as_slice()[v] < min_weight {
            continue;
        }
        let row = &values[v * channels..(v + 1) * channels];
        let mut best = 0usize;
        for (c, &val) in row.iter().enumerate() {
            if val > row[best] {
                best = c;
            }
        }
        *out_label = best as u8;
    }
    labels
}
