//! Sensor-fusion geometry toolkit for camera/LiDAR semantic scene completion.
//!
//! The crate covers the non-learned parts of a scene-completion pipeline:
//!
//! - [`geometry`]: pinhole projection, back-projection, rigid transforms
//! - [`voxel`]: typed dense 3D grids (labels, probabilities, features, masks)
//! - [`depth`]: sparse LiDAR depth rendering and affine depth-prior scaling
//! - [`gdp`]: Gaussian-decay depth-prior projection of 2D features into 3D
//! - [`temporal`]: inter-frame feature/label warping under known rigid motion
//! - [`metrics`]: occupancy IoU, semantic mIoU, consistency scores, losses
//! - [`kitti`]: bit-exact readers/writers for SemanticKITTI-style artifacts
//! - [`synth`]: seeded synthetic worlds and ray-cast renderings for testing

pub mod depth;
pub mod gdp;
pub mod geometry;
pub mod kitti;
pub mod metrics;
pub mod synth;
pub mod temporal;
pub mod voxel;

pub use geometry::{
    back_project, project, ray_through_pixel, relative_transform, CameraIntrinsics, GeometryError,
    Pixel, Point3, Ray, RigidPose,
};
pub use voxel::{
    fov_mask, overlap_mask, FeatureGrid, GridSpec, LabelGrid, MaskGrid, ProbGrid, VoxelError,
    CLASS_NAMES, EMPTY_LABEL, NUM_CATEGORIES, NUM_CLASSES, UNKNOWN_LABEL,
};
