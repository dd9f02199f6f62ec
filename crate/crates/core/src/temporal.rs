//! Inter-frame propagation of voxel grids under known rigid motion.
//!
//! Warping is backward: every destination voxel inverse-maps its center into
//! the previous frame's volume and samples there, so the output has no
//! holes. Features interpolate trilinearly (or nearest); labels always
//! resample nearest since they are categorical. A destination voxel is
//! valid iff its mapped center lands inside the source volume — exactly the
//! membership rule of [`crate::voxel::overlap_mask`] — and interpolation
//! corners are clamped to the volume near its border.

use crate::geometry::RigidPose;
use crate::voxel::{overlap_mask, FeatureGrid, GridSpec, LabelGrid, MaskGrid, UNKNOWN_LABEL};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemporalError {
    #[error("constant init vector has {found} entries, hidden state has {expected} channels")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("invalid init policy: {reason}")]
    InvalidPolicy { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpMode {
    Nearest,
    Trilinear,
}

/// Hidden-state initialization for the first frame of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum InitPolicy {
    Zeros,
    /// I.i.d. Gaussian(0, stddev), reproducible from the seed.
    Random { seed: u64, stddev: f64 },
    /// Every voxel receives this channel vector.
    Constant(Vec<f32>),
}

/// Source position of one destination voxel center, in fractional grid
/// coordinates of the source volume (0 at the center of voxel 0).
#[inline]
fn source_coords(
    dst_spec: &GridSpec,
    src_spec: &GridSpec,
    rel_inv: &RigidPose,
    idx: [usize; 3],
) -> (nalgebra::Point3<f64>, bool) {
    let p = rel_inv.transform_point(&dst_spec.voxel_center(idx));
    let inside = src_spec.contains_point(&p);
    let g = nalgebra::Point3::new(
        (p.x - src_spec.origin().x) / src_spec.voxel_size() - 0.5,
        (p.y - src_spec.origin().y) / src_spec.voxel_size() - 0.5,
        (p.z - src_spec.origin().z) / src_spec.voxel_size() - 0.5,
    );
    (g, inside)
}

#[inline]
fn nearest_index(src_spec: &GridSpec, g: &nalgebra::Point3<f64>) -> [usize; 3] {
    let dims = src_spec.dims();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        // contains_point guarantees g in [-0.5, dims - 0.5); rounding stays
        // in range after the clamp below.
        let r = g.coords[a].round();
        idx[a] = (r.max(0.0) as usize).min(dims[a] - 1);
    }
    idx
}

/// Warps a feature grid from the previous camera frame into the current one.
/// Returns the resampled grid plus a mask of voxels whose source position
/// fell inside the previous volume; the rest are zero-filled.
pub fn warp_feature_grid(
    prev: &FeatureGrid,
    rel: &RigidPose,
    spec_curr: &GridSpec,
    mode: WarpMode,
) -> (FeatureGrid, MaskGrid) {
    let rel_inv = rel.inverse();
    let src_spec = *prev.spec();
    let channels = prev.channels();
    let dims = spec_curr.dims();
    let mut out = FeatureGrid::zeros(*spec_curr, channels);
    let mut mask = MaskGrid::filled(*spec_curr, false);

    let slab = dims[1] * dims[2];
    let mask_bits = mask.as_mut_slice();
    out.as_mut_slice()
        .par_chunks_mut(slab * channels)
        .zip(mask_bits.par_chunks_mut(slab))
        .enumerate()
        .for_each(|(ix, (out_slab, mask_slab))| {
            for iy in 0..dims[1] {
                for iz in 0..dims[2] {
                    let (g, inside) = source_coords(spec_curr, &src_spec, &rel_inv, [ix, iy, iz]);
                    if !inside {
                        continue;
                    }
                    let flat = iy * dims[2] + iz;
                    mask_slab[flat] = true;
                    let dst = &mut out_slab[flat * channels..(flat + 1) * channels];
                    match mode {
                        WarpMode::Nearest => {
                            dst.copy_from_slice(prev.get(nearest_index(&src_spec, &g)));
                        }
                        WarpMode::Trilinear => {
                            sample_trilinear(prev, &g, dst);
                        }
                    }
                }
            }
        });
    (out, mask)
}

/// Border-clamped trilinear sample at fractional grid coordinates `g`
/// (caller guarantees the point is inside the volume).
fn sample_trilinear(grid: &FeatureGrid, g: &nalgebra::Point3<f64>, out: &mut [f32]) {
    let dims = grid.spec().dims();
    let mut i0 = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let clamped = g.coords[a].clamp(0.0, (dims[a] - 1) as f64);
        let base = clamped.floor().min((dims[a] as f64 - 2.0).max(0.0));
        i0[a] = base.max(0.0) as usize;
        frac[a] = if dims[a] > 1 { clamped - base } else { 0.0 };
    }
    out.fill(0.0);
    for corner in 0..8usize {
        let mut weight = 1.0f64;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let hi = (corner >> a) & 1;
            idx[a] = (i0[a] + hi).min(dims[a] - 1);
            weight *= if hi == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if weight == 0.0 {
            continue;
        }
        for (o, &v) in out.iter_mut().zip(grid.get(idx)) {
            *o += (weight * v as f64) as f32;
        }
    }
}

/// Warps a label grid (nearest-neighbor only; labels are categorical).
/// Destination voxels without a source become [`UNKNOWN_LABEL`].
pub fn warp_label_grid(prev: &LabelGrid, rel: &RigidPose, spec_curr: &GridSpec) -> LabelGrid {
    let rel_inv = rel.inverse();
    let src_spec = *prev.spec();
    let mut out = LabelGrid::filled(*spec_curr, UNKNOWN_LABEL);
    for idx in spec_curr.index_iter() {
        let (g, inside) = source_coords(spec_curr, &src_spec, &rel_inv, idx);
        if inside {
            out.set(idx, prev.get(nearest_index(&src_spec, &g)));
        }
    }
    out
}

/// Builds the initial hidden state for a sequence.
pub fn init_hidden(
    spec: &GridSpec,
    channels: usize,
    policy: &InitPolicy,
) -> Result<FeatureGrid, TemporalError> {
    if channels == 0 {
        return Err(TemporalError::InvalidPolicy {
            reason: "hidden state needs at least one channel".to_owned(),
        });
    }
    match policy {
        InitPolicy::Zeros => Ok(FeatureGrid::zeros(*spec, channels)),
        InitPolicy::Random { seed, stddev } => {
            if !(*stddev >= 0.0) {
                return Err(TemporalError::InvalidPolicy {
                    reason: format!("stddev must be non-negative (got {stddev})"),
                });
            }
            let normal = Normal::new(0.0f64, *stddev).map_err(|e| TemporalError::InvalidPolicy {
                reason: e.to_string(),
            })?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let values = (0..spec.num_voxels() * channels)
                .map(|_| normal.sample(&mut rng) as f32)
                .collect();
            Ok(FeatureGrid::from_values(*spec, channels, values).expect("sized buffer"))
        }
        InitPolicy::Constant(vector) => {
            if vector.len() != channels {
                return Err(TemporalError::ChannelMismatch {
                    expected: channels,
                    found: vector.len(),
                });
            }
            let mut values = Vec::with_capacity(spec.num_voxels() * channels);
            for _ in 0..spec.num_voxels() {
                values.extend_from_slice(vector);
            }
            Ok(FeatureGrid::from_values(*spec, channels, values).expect("sized buffer"))
        }
    }
}

/// Per-sequence recurrent state: the hidden grid aligned to the current
/// frame and the overlap with the previous volume.
#[derive(Debug, Clone)]
pub struct SequenceState {
    pub hidden: FeatureGrid,
    pub overlap: MaskGrid,
    pub frame_index: usize,
}

impl SequenceState {
    pub fn initial(
        spec: &GridSpec,
        channels: usize,
        policy: &InitPolicy,
    ) -> Result<Self, TemporalError> {
        Ok(Self {
            hidden: init_hidden(spec, channels, policy)?,
            overlap: MaskGrid::filled(*spec, true),
            frame_index: 0,
        })
    }
}

/// Advances the sequence by one frame: warps the hidden state into the
/// current volume (trilinear), recomputes the overlap mask, and hands the
/// aligned state to `producer` (the per-frame model standing in for
/// whatever network consumes it). The producer's output becomes the new
/// hidden state.
pub fn step_state<F, E>(
    state: SequenceState,
    rel: &RigidPose,
    spec_curr: &GridSpec,
    producer: F,
) -> Result<SequenceState, E>
where
    F: FnOnce(FeatureGrid) -> Result<FeatureGrid, E>,
{
    let prev_spec = *state.hidden.spec();
    let (aligned, _valid) = warp_feature_grid(&state.hidden, rel, spec_curr, WarpMode::Trilinear);
    let overlap = overlap_mask(spec_curr, rel, &prev_spec);
    let hidden = producer(aligned)?;
    Ok(SequenceState {
        hidden,
        overlap,
        frame_index: state.frame_index + 1,
    })
}
