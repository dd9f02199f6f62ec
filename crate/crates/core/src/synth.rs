//! Seeded synthetic worlds for end-to-end verification: small labeled voxel
//! volumes, camera trajectories over them, exact ray-cast depth/semantics
//! renderings, and per-frame ground-truth slices.
//!
//! Everything here is bit-reproducible from its seed. Per-pixel randomness
//! (subsampling, depth noise) derives from counter-based hashing of the
//! pixel index, so parallel evaluation order cannot change outputs.
//!
//! Conventions: worlds use the camera orientation (x right, y down,
//! z forward), so a ground plane occupies the largest-y slabs. Surface
//! depth is the camera-frame depth of the ray/cube entry point, not the
//! voxel center.

use crate::depth::DepthMap;
use crate::gdp::traverse_ray;
use crate::geometry::{ray_through_pixel, relative_transform, CameraIntrinsics, Pixel, RigidPose};
use crate::voxel::{GridSpec, LabelGrid, MaskGrid, EMPTY_LABEL, UNKNOWN_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("world dims {dims:?} exceed the desk-scale limit of {limit} per axis")]
    DimsTooLarge { dims: [usize; 3], limit: usize },
    #[error("invalid recipe: {reason}")]
    InvalidRecipe { reason: String },
    #[error("invalid trajectory: {reason}")]
    InvalidTrajectory { reason: String },
}

/// Desk-scale cap on synthetic world dimensions.
pub const MAX_WORLD_DIM: usize = 64;

/// Horizontal slab at the bottom of the volume (largest y indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub thickness: usize,
    pub label: u8,
}

impl Default for GroundPlane {
    fn default() -> Self {
        Self {
            thickness: 2,
            label: 9, // road
        }
    }
}

/// Axis-aligned box of voxels, half-open index ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpec {
    pub min: [usize; 3],
    pub max: [usize; 3],
    pub label: u8,
}

/// Seeded spheres with labels drawn from the world palette.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomBlobs {
    pub count: usize,
    /// Radius range in voxel units.
    pub min_radius: f64,
    pub max_radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneRecipe {
    pub ground_plane: Option<GroundPlane>,
    pub boxes: Vec<BoxSpec>,
    pub random_blobs: Option<RandomBlobs>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub grid: LabelGrid,
    pub seed: u64,
    pub palette: Vec<u8>,
}

/// Builds a deterministic labeled world: ground plane first, then explicit
/// boxes, then seeded blobs on top.
pub fn generate_world(
    seed: u64,
    spec: &GridSpec,
    recipe: &SceneRecipe,
    palette: &[u8],
) -> Result<SyntheticWorld, SynthError> {
    let dims = spec.dims();
    if dims.iter().any(|&d| d > MAX_WORLD_DIM) {
        return Err(SynthError::DimsTooLarge {
            dims,
            limit: MAX_WORLD_DIM,
        });
    }
    if palette.is_empty() || palette.iter().any(|&l| l == EMPTY_LABEL || l == UNKNOWN_LABEL) {
        return Err(SynthError::InvalidRecipe {
            reason: "palette must be non-empty semantic classes".to_owned(),
        });
    }

    let mut grid = LabelGrid::filled(*spec, EMPTY_LABEL);

    if let Some(plane) = recipe.ground_plane {
        if plane.thickness == 0 || plane.thickness > dims[1] {
            return Err(SynthError::InvalidRecipe {
                reason: format!("ground thickness {} exceeds ny {}", plane.thickness, dims[1]),
            });
        }
        for x in 0..dims[0] {
            for y in dims[1] - plane.thickness..dims[1] {
                for z in 0..dims[2] {
                    grid.set([x, y, z], plane.label);
                }
            }
        }
    }

    for (i, b) in recipe.boxes.iter().enumerate() {
        let valid = (0..3).all(|a| b.min[a] < b.max[a] && b.max[a] <= dims[a]);
        if !valid {
            return Err(SynthError::InvalidRecipe {
                reason: format!("box {i} range {:?}..{:?} outside {dims:?}", b.min, b.max),
            });
        }
        for x in b.min[0]..b.max[0] {
            for y in b.min[1]..b.max[1] {
                for z in b.min[2]..b.max[2] {
                    grid.set([x, y, z], b.label);
                }
            }
        }
    }

    if let Some(blobs) = recipe.random_blobs {
        if !(blobs.min_radius > 0.0 && blobs.max_radius >= blobs.min_radius) {
            return Err(SynthError::InvalidRecipe {
                reason: "blob radius range must be positive and ordered".to_owned(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..blobs.count {
            let center = [
                rng.random_range(0.0..dims[0] as f64),
                rng.random_range(0.0..dims[1] as f64),
                rng.random_range(0.0..dims[2] as f64),
            ];
            let radius = rng.random_range(blobs.min_radius..=blobs.max_radius);
            let label = palette[rng.random_range(0..palette.len())];
            let r2 = radius * radius;
            let lo = center.map(|c| (c - radius).floor().max(0.0) as usize);
            for x in lo[0]..dims[0].min((center[0] + radius).ceil() as usize + 1) {
                for y in lo[1]..dims[1].min((center[1] + radius).ceil() as usize + 1) {
                    for z in lo[2]..dims[2].min((center[2] + radius).ceil() as usize + 1) {
                        let d2 = [x, y, z]
                            .iter()
                            .zip(&center)
                            .map(|(&i, &c)| {
                                let d = i as f64 + 0.5 - c;
                                d * d
                            })
                            .sum::<f64>();
                        if d2 <= r2 {
                            grid.set([x, y, z], label);
                        }
                    }
                }
            }
        }
    }

    Ok(SyntheticWorld {
        grid,
        seed,
        palette: palette.to_vec(),
    })
}

/// Exact depth + per-pixel class rendering of a world from one camera.
#[derive(Debug, Clone)]
pub struct SurfaceRender {
    pub depth: DepthMap,
    /// Class of the first occupied voxel per pixel, EMPTY where no surface
    /// was hit (row-major).
    pub labels: Vec<u8>,
}

impl SurfaceRender {
    pub fn label_at(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.depth.width() + x]
    }
}

/// Ray-casts every pixel into the world and records the entry depth and
/// label of the first occupied voxel. UNKNOWN voxels are transparent.
pub fn raycast_depth_semantics(
    world: &SyntheticWorld,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> SurfaceRender {
    let width = k.width as usize;
    let height = k.height as usize;
    let mut depth = DepthMap::invalid(width, height);
    let mut labels = vec![EMPTY_LABEL; width * height];
    let spec = *world.grid.spec();
    for y in 0..height {
        for x in 0..width {
            let ray = ray_through_pixel(&Pixel::new(x as f64, y as f64), pose, k);
            for seg in traverse_ray(&ray, &spec) {
                let label = world.grid.get(seg.index);
                if label == EMPTY_LABEL || label == UNKNOWN_LABEL {
                    continue;
                }
                // Camera-frame depth of the cube entry point.
                let entry = ray.point_at(seg.t_entry);
                let z = pose.transform_point(&entry).z;
                if z > 0.0 {
                    depth.set(x, y, z);
                    labels[y * width + x] = label;
                }
                break;
            }
        }
    }
    SurfaceRender { depth, labels }
}

/// Resamples the world into a camera-anchored volume (nearest lookup).
/// Returns the labels and the known mask (inside the world bounds).
pub fn slice_frame_gt(
    world: &SyntheticWorld,
    pose: &RigidPose,
    spec_cam: &GridSpec,
) -> (LabelGrid, MaskGrid) {
    let to_world = pose.inverse();
    let mut labels = LabelGrid::filled(*spec_cam, UNKNOWN_LABEL);
    let mut known = MaskGrid::filled(*spec_cam, false);
    for idx in spec_cam.index_iter() {
        let p = to_world.transform_point(&spec_cam.voxel_center(idx));
        if let Some(world_idx) = world.grid.spec().world_to_index(&p) {
            labels.set(idx, world.grid.get(world_idx));
            known.set(idx, true);
        }
    }
    (labels, known)
}

/// Camera path over a world with one camera-anchored volume per frame.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// World-to-camera pose per frame.
    pub poses: Vec<RigidPose>,
    pub frame_specs: Vec<GridSpec>,
}

impl Trajectory {
    /// Validates that consecutive poses stay within the given motion bounds
    /// (translation in meters, rotation angle in radians).
    pub fn new(
        poses: Vec<RigidPose>,
        frame_specs: Vec<GridSpec>,
        max_step_translation: f64,
        max_step_rotation: f64,
    ) -> Result<Self, SynthError> {
        if poses.is_empty() || poses.len() != frame_specs.len() {
            return Err(SynthError::InvalidTrajectory {
                reason: format!(
                    "need matching non-empty pose/spec lists ({} vs {})",
                    poses.len(),
                    frame_specs.len()
                ),
            });
        }
        for (i, pair) in poses.windows(2).enumerate() {
            let rel = relative_transform(&pair[0], &pair[1]);
            let shift = rel.translation().norm();
            // Rotation angle from the trace of the relative rotation.
            let cos = ((rel.rotation().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            let angle = cos.acos();
            if shift > max_step_translation || angle > max_step_rotation {
                return Err(SynthError::InvalidTrajectory {
                    reason: format!(
                        "step {i} moves {shift:.3} m / {angle:.3} rad, beyond \
                         ({max_step_translation}, {max_step_rotation})"
                    ),
                });
            }
        }
        Ok(Self { poses, frame_specs })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates a sparse, noisy sensor from an exact dense depth map:
/// keeps each valid pixel with probability `keep_fraction` (decided by a
/// seeded hash of the pixel index) and perturbs kept depths with Gaussian
/// noise. Pixels whose noisy depth drops to zero or below become invalid.
pub fn degrade_depth(
    dense: &DepthMap,
    keep_fraction: f64,
    noise_stddev: f64,
    seed: u64,
) -> DepthMap {
    assert!(
        keep_fraction > 0.0 && keep_fraction <= 1.0,
        "keep_fraction must be in (0, 1]"
    );
    assert!(noise_stddev >= 0.0, "noise_stddev must be non-negative");
    let mut out = DepthMap::invalid(dense.width(), dense.height());
    for (x, y, d) in dense.iter_valid() {
        let pixel_index = (y * dense.width() + x) as u64;
        let h = splitmix64(seed ^ splitmix64(pixel_index.wrapping_add(1)));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u >= keep_fraction {
            continue;
        }
        let noisy = if noise_stddev > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(h));
            let normal = Normal::new(0.0, noise_stddev).expect("stddev checked");
            d + normal.sample(&mut rng)
        } else {
            d
        };
        if noisy > 0.0 && noisy.is_finite() {
            out.set(x, y, noisy);
        }
    }
    out
}
