//! Pinhole camera model and rigid-body transforms.
//!
//! Conventions used throughout the crate:
//!
//! - Camera frame: x right, y down, z along the optical axis. Depth is the
//!   camera-frame z coordinate in meters, not the distance along the ray.
//! - Pixel coordinates are continuous; integer coordinate (x, y) addresses
//!   the center of pixel (x, y). A point is inside the image iff
//!   x ∈ [-0.5, width-0.5) and y ∈ [-0.5, height-0.5).
//! - Poses map world coordinates to camera coordinates unless stated
//!   otherwise. Homogeneous forms are an implementation detail; the public
//!   API works with Euclidean points plus explicit depth.
//!
//! No lens distortion is modeled; rectified calibration is assumed.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// 3D point in meters. The frame (world, camera, grid) is given by context.
pub type Point3 = nalgebra::Point3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (camera-frame z = {z})")]
    PointBehindCamera { z: f64 },
    #[error("depth must be positive (got {depth})")]
    NonPositiveDepth { depth: f64 },
    #[error("invalid intrinsics: {reason}")]
    InvalidIntrinsics { reason: String },
    #[error("rotation is not special orthogonal (max deviation {deviation:.3e})")]
    InvalidRotation { deviation: f64 },
}

/// Continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Pinhole intrinsics of a rectified camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics {
                reason: format!("focal lengths must be positive (fx={fx}, fy={fy})"),
            });
        }
        if width < 1 || height < 1 {
            return Err(GeometryError::InvalidIntrinsics {
                reason: format!("image size must be at least 1x1 ({width}x{height})"),
            });
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics {
                reason: "principal point must be finite".to_owned(),
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Half-open in-image test: x ∈ [-0.5, width-0.5), y ∈ [-0.5, height-0.5).
    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= -0.5 && p.x < self.width as f64 - 0.5 && p.y >= -0.5 && p.y < self.height as f64 - 0.5
    }
}

/// Rigid transform: `p_out = rotation * p_in + translation`.
///
/// Construction validates that the rotation is special orthogonal within
/// 1e-9, so composed and inverted poses stay well-formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOLERANCE: f64 = 1e-9;

fn rotation_deviation(rotation: &Matrix3<f64>) -> f64 {
    let gram = rotation.transpose() * rotation;
    let ortho = (gram - Matrix3::identity()).abs().max();
    let det = (rotation.determinant() - 1.0).abs();
    ortho.max(det)
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidRotation { deviation });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from a possibly noisy 3x4 matrix by projecting the
    /// rotation part onto SO(3) (polar decomposition via SVD). Used by file
    /// readers where calibration text carries limited precision. Matrices
    /// already orthonormal within tolerance pass through unchanged.
    pub fn from_parts_orthonormalized(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if rotation_deviation(&rotation) <= ROTATION_TOLERANCE {
            return Ok(Self {
                rotation,
                translation,
            });
        }
        let svd = rotation.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => {
                return Err(GeometryError::InvalidRotation {
                    deviation: f64::INFINITY,
                })
            }
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the axis of least significance to land on det +1.
            let mut u_fixed = u;
            u_fixed.column_mut(2).neg_mut();
            r = u_fixed * v_t;
        }
        Self::new(r, translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> RigidPose {
        let rotation = self.rotation.transpose();
        RigidPose {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn compose(&self, inner: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }
}

/// Projects a world point into the image plane of `pose`'s camera.
///
/// Returns continuous pixel coordinates and the camera-frame depth in
/// meters. Fails when the transformed point does not lie strictly in front
/// of the camera.
pub fn project(
    point: &Point3,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<(Pixel, f64), GeometryError> {
    let cam = pose.transform_point(point);
    if cam.z <= 0.0 {
        return Err(GeometryError::PointBehindCamera { z: cam.z });
    }
    let pixel = Pixel::new(k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy);
    Ok((pixel, cam.z))
}

/// Lifts a pixel with known camera-frame depth back to a world point.
///
/// Inverse of [`project`]: `project(back_project(p, d)) == (p, d)`.
pub fn back_project(
    pixel: &Pixel,
    depth: f64,
    pose: &RigidPose,
    k: &CameraIntrinsics,
) -> Result<Point3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth { depth });
    }
    let cam = Point3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    );
    Ok(pose.inverse().transform_point(&cam))
}

/// Relative motion between two cameras observing the same world:
/// takes coordinates in the previous camera frame to the current one.
pub fn relative_transform(pose_prev: &RigidPose, pose_curr: &RigidPose) -> RigidPose {
    pose_curr.compose(&pose_prev.inverse())
}

/// A viewing ray in world coordinates with unit direction.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn point_at(&self, t: f64) -> Point3 {
        self.origin + self.direction * t
    }
}

/// The line of sight through a pixel, expressed in the world frame.
///
/// The origin is the camera center; the direction is a unit vector. A point
/// at camera-frame depth `d` sits at parameter `t = d * sqrt(1 + u² + v²)`
/// where (u, v) are the normalized image coordinates of the pixel.
pub fn ray_through_pixel(pixel: &Pixel, pose: &RigidPose, k: &CameraIntrinsics) -> Ray {
    let dir_cam = Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0);
    let inv = pose.inverse();
    let origin = Point3::from(*inv.translation());
    let direction = (inv.rotation() * dir_cam).normalize();
    Ray { origin, direction }
}
