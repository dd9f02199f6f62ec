//! Dense 3D scene volumes: labels, class probabilities, feature vectors,
//! and boolean masks over a shared [`GridSpec`].
//!
//! Storage is dense row-major with x-major ordering
//! (`index = x * ny * nz + y * nz + z`), matching the SemanticKITTI on-disk
//! voxel layout so file I/O is a straight copy. Voxel cubes are half-open:
//! voxel (i, j, k) covers `[origin + idx*s, origin + (idx+1)*s)`.

use crate::geometry::{project, CameraIntrinsics, Point3, RigidPose};
use thiserror::Error;

/// Number of semantic classes (empty space excluded).
pub const NUM_CLASSES: usize = 19;
/// Number of probability categories: empty + the 19 semantic classes.
pub const NUM_CATEGORIES: usize = NUM_CLASSES + 1;
/// Label id of empty space.
pub const EMPTY_LABEL: u8 = 0;
/// Sentinel for voxels whose ground-truth status is unobserved. Kept outside
/// the class range; probability vectors never carry an unknown channel.
pub const UNKNOWN_LABEL: u8 = 255;

/// Class names in training-id order (ids 1..=19).
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "car",
    "bicycle",
    "motorcycle",
    "truck",
    "other-vehicle",
    "person",
    "bicyclist",
    "motorcyclist",
    "road",
    "parking",
    "sidewalk",
    "other-ground",
    "building",
    "fence",
    "vegetation",
    "trunk",
    "terrain",
    "pole",
    "traffic-sign",
];

#[derive(Debug, Error, PartialEq)]
pub enum VoxelError {
    #[error("invalid grid spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("label {label} is outside the class range and not UNKNOWN")]
    InvalidLabel { label: u8 },
    #[error("probability vector invalid at voxel {index}: {reason}")]
    InvalidDistribution { index: usize, reason: String },
    #[error("value buffer has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Geometry of a dense voxel volume: counts, edge length, and the position
/// of the (0,0,0) corner. The frame the origin lives in (world or a camera)
/// is decided by the caller and carried by context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dims: [usize; 3],
    voxel_size: f64,
    origin: Point3,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], voxel_size: f64, origin: Point3) -> Result<Self, VoxelError> {
        if dims.iter().any(|&d| d < 1) {
            return Err(VoxelError::InvalidSpec {
                reason: format!("all dimensions must be at least 1 (got {dims:?})"),
            });
        }
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(VoxelError::InvalidSpec {
                reason: format!("voxel size must be positive and finite (got {voxel_size})"),
            });
        }
        if !origin.coords.iter().all(|c| c.is_finite()) {
            return Err(VoxelError::InvalidSpec {
                reason: "origin must be finite".to_owned(),
            });
        }
        Ok(Self {
            dims,
            voxel_size,
            origin,
        })
    }

    /// The SemanticKITTI scene volume: 256x256x32 voxels of 0.2 m, spanning
    /// 51.2 m x 51.2 m x 6.4 m anchored at the sensor (x forward, y left,
    /// z up in the sensor frame).
    pub fn semantic_kitti() -> Self {
        Self {
            dims: [256, 256, 32],
            voxel_size: 0.2,
            origin: Point3::new(0.0, -25.6, -2.0),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Far corner of the volume, `origin + dims * voxel_size`.
    pub fn max_corner(&self) -> Point3 {
        Point3::new(
            self.origin.x + self.dims[0] as f64 * self.voxel_size,
            self.origin.y + self.dims[1] as f64 * self.voxel_size,
            self.origin.z + self.dims[2] as f64 * self.voxel_size,
        )
    }

    /// x-major flat index.
    #[inline]
    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        debug_assert!(idx[0] < self.dims[0] && idx[1] < self.dims[1] && idx[2] < self.dims[2]);
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    #[inline]
    pub fn voxel_center(&self, idx: [usize; 3]) -> Point3 {
        Point3::new(
            self.origin.x + (idx[0] as f64 + 0.5) * self.voxel_size,
            self.origin.y + (idx[1] as f64 + 0.5) * self.voxel_size,
            self.origin.z + (idx[2] as f64 + 0.5) * self.voxel_size,
        )
    }

    /// Voxel containing `p` under the half-open cube convention, or `None`
    /// when `p` lies outside the volume.
    #[inline]
    pub fn world_to_index(&self, p: &Point3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let rel = (p.coords[axis] - self.origin.coords[axis]) / self.voxel_size;
            let cell = rel.floor();
            if cell < 0.0 || cell >= self.dims[axis] as f64 {
                return None;
            }
            idx[axis] = cell as usize;
        }
        Some(idx)
    }

    /// True iff `p` lies inside `[origin, origin + dims*s)` on every axis.
    #[inline]
    pub fn contains_point(&self, p: &Point3) -> bool {
        (0..3).all(|axis| {
            let rel = p.coords[axis] - self.origin.coords[axis];
            rel >= 0.0 && rel < self.dims[axis] as f64 * self.voxel_size
        })
    }

    /// Iterates indices in storage order (x-major).
    pub fn index_iter(&self) -> impl Iterator<Item = [usize; 3]> {
        let [nx, ny, nz] = self.dims;
        (0..nx).flat_map(move |x| (0..ny).flat_map(move |y| (0..nz).map(move |z| [x, y, z])))
    }
}

/// Per-voxel class ids: 0 = empty, 1..=19 semantic, [`UNKNOWN_LABEL`] for
/// unobserved voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    spec: GridSpec,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn filled(spec: GridSpec, label: u8) -> Self {
        Self {
            labels: vec![label; spec.num_voxels()],
            spec,
        }
    }

    pub fn from_labels(spec: GridSpec, labels: Vec<u8>) -> Result<Self, VoxelError> {
        if labels.len() != spec.num_voxels() {
            return Err(VoxelError::LengthMismatch {
                expected: spec.num_voxels(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l as usize >= NUM_CATEGORIES && l != UNKNOWN_LABEL)
        {
            return Err(VoxelError::InvalidLabel { label: bad });
        }
        Ok(Self { spec, labels })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> u8 {
        self.labels[self.spec.linear_index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 3], label: u8) {
        let i = self.spec.linear_index(idx);
        self.labels[i] = label;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    /// Count of voxels carrying a semantic class (not empty, not unknown).
    pub fn occupied_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != EMPTY_LABEL && l != UNKNOWN_LABEL)
            .count()
    }
}

/// Per-voxel categorical distribution over [`NUM_CATEGORIES`] channels
/// (empty + 19 classes), voxel-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    spec: GridSpec,
    probs: Vec<f32>,
}

const PROB_SUM_TOLERANCE: f32 = 1e-5;

impl ProbGrid {
    pub fn uniform(spec: GridSpec) -> Self {
        let p = 1.0 / NUM_CATEGORIES as f32;
        Self {
            probs: vec![p; spec.num_voxels() * NUM_CATEGORIES],
            spec,
        }
    }

    pub fn from_values(spec: GridSpec, probs: Vec<f32>) -> Result<Self, VoxelError> {
        if probs.len() != spec.num_voxels() * NUM_CATEGORIES {
            return Err(VoxelError::LengthMismatch {
                expected: spec.num_voxels() * NUM_CATEGORIES,
                found: probs.len(),
            });
        }
        let grid = Self { spec, probs };
        grid.validate()?;
        Ok(grid)
    }

    /// One-hot distributions from a label grid; UNKNOWN voxels fall back to
    /// uniform (they are excluded from every masked evaluation anyway).
    pub fn one_hot(labels: &LabelGrid) -> Self {
        let spec = *labels.spec();
        let mut probs = vec![0.0f32; spec.num_voxels() * NUM_CATEGORIES];
        for (v, &label) in labels.as_slice().iter().enumerate() {
            let row = &mut probs[v * NUM_CATEGORIES..(v + 1) * NUM_CATEGORIES];
            if label == UNKNOWN_LABEL {
                row.fill(1.0 / NUM_CATEGORIES as f32);
            } else {
                row[label as usize] = 1.0;
            }
        }
        Self { spec, probs }
    }

    pub fn validate(&self) -> Result<(), VoxelError> {
        for (v, row) in self.probs.chunks_exact(NUM_CATEGORIES).enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(VoxelError::InvalidDistribution {
                    index: v,
                    reason: "negative or non-finite entry".to_owned(),
                });
            }
            let sum: f32 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(VoxelError::InvalidDistribution {
                    index: v,
                    reason: format!("sums to {sum}, expected 1"),
                });
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> &[f32] {
        let i = self.spec.linear_index(idx) * NUM_CATEGORIES;
        &self.probs[i..i + NUM_CATEGORIES]
    }

    pub fn set_distribution(&mut self, idx: [usize; 3], dist: &[f32]) -> Result<(), VoxelError> {
        if dist.len() != NUM_CATEGORIES {
            return Err(VoxelError::LengthMismatch {
                expected: NUM_CATEGORIES,
                found: dist.len(),
            });
        }
        let i = self.spec.linear_index(idx) * NUM_CATEGORIES;
        self.probs[i..i + NUM_CATEGORIES].copy_from_slice(dist);
        Ok(())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.probs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.probs
    }
}

/// Per-voxel feature vectors with a fixed channel count; also serves as the
/// recurrent hidden state carried across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    spec: GridSpec,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        Self {
            values: vec![0.0; spec.num_voxels() * channels],
            spec,
            channels,
        }
    }

    pub fn from_values(
        spec: GridSpec,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self, VoxelError> {
        if values.len() != spec.num_voxels() * channels {
            return Err(VoxelError::LengthMismatch {
                expected: spec.num_voxels() * channels,
                found: values.len(),
            });
        }
        Ok(Self {
            spec,
            channels,
            values,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> &[f32] {
        let i = self.spec.linear_index(idx) * self.channels;
        &self.values[i..i + self.channels]
    }

    #[inline]
    pub fn get_mut(&mut self, idx: [usize; 3]) -> &mut [f32] {
        let i = self.spec.linear_index(idx) * self.channels;
        &mut self.values[i..i + self.channels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn scale(&mut self, factor: f32) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// Single-channel f64 grid, used where accumulated quantities need full
/// double precision (e.g. projection weight sums).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            values: vec![0.0; spec.num_voxels()],
            spec,
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, VoxelError> {
        if values.len() != spec.num_voxels() {
            return Err(VoxelError::LengthMismatch {
                expected: spec.num_voxels(),
                found: values.len(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.values[self.spec.linear_index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 3], value: f64) {
        let i = self.spec.linear_index(idx);
        self.values[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Per-voxel boolean grid (FoV membership, overlap regions, known regions).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    spec: GridSpec,
    bits: Vec<bool>,
}

impl MaskGrid {
    pub fn filled(spec: GridSpec, value: bool) -> Self {
        Self {
            bits: vec![value; spec.num_voxels()],
            spec,
        }
    }

    pub fn from_bits(spec: GridSpec, bits: Vec<bool>) -> Result<Self, VoxelError> {
        if bits.len() != spec.num_voxels() {
            return Err(VoxelError::LengthMismatch {
                expected: spec.num_voxels(),
                found: bits.len(),
            });
        }
        Ok(Self { spec, bits })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> bool {
        self.bits[self.spec.linear_index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 3], value: bool) {
        let i = self.spec.linear_index(idx);
        self.bits[i] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Elementwise AND with another mask over the same spec.
    pub fn and(&self, other: &MaskGrid) -> MaskGrid {
        assert_eq!(self.spec, other.spec, "mask specs differ");
        MaskGrid {
            spec: self.spec,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// Elementwise NOT.
    pub fn not(&self) -> MaskGrid {
        MaskGrid {
            spec: self.spec,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }
}

/// Marks voxels whose centers project inside the image with positive
/// camera-frame depth. `pose` maps the frame the spec is expressed in to the
/// camera; pass the identity for camera-anchored volumes.
pub fn fov_mask(spec: &GridSpec, pose: &RigidPose, k: &CameraIntrinsics) -> MaskGrid {
    let mut mask = MaskGrid::filled(*spec, false);
    for idx in spec.index_iter() {
        let center = spec.voxel_center(idx);
        if let Ok((pixel, _)) = project(&center, pose, k) {
            if k.contains(&pixel) {
                mask.set(idx, true);
            }
        }
    }
    mask
}

/// Marks voxels of the current volume whose centers, mapped back through
/// `rel` (previous-to-current camera motion), land inside the previous
/// volume. This is the overlap region shared by consecutive frames.
pub fn overlap_mask(spec_curr: &GridSpec, rel: &RigidPose, spec_prev: &GridSpec) -> MaskGrid {
    let rel_inv = rel.inverse();
    let mut mask = MaskGrid::filled(*spec_curr, false);
    for idx in spec_curr.index_iter() {
        let in_prev = rel_inv.transform_point(&spec_curr.voxel_center(idx));
        if spec_prev.contains_point(&in_prev) {
            mask.set(idx, true);
        }
    }
    mask
}
