//! Bit-exact readers and writers for the KITTI-odometry / SemanticKITTI
//! artifacts the pipeline consumes, plus the float containers it produces.
//!
//! Formats:
//!
//! - LiDAR scans: little-endian f32 quadruples (x, y, z, intensity)
//! - Voxel occupancy / invalid masks: 1 bit per voxel, MSB-first within
//!   each byte, x-major voxel order
//! - Voxel labels: little-endian u16 per voxel, raw dataset ids remapped to
//!   training ids 0..=19 through an external table
//! - `calib.txt` (`P2:` / `Tr:` rows) and `poses.txt` (row-major 3x4,
//!   camera-to-world; inverted to world-to-camera on load)
//! - PFM ("Pf", grayscale, bottom-up rows) for depth and feature planes
//! - `VXFG`/`VXSG` containers for feature (f32) and scalar (f64) voxel
//!   grids
//!
//! Readers return typed errors with byte or line locations instead of
//! panicking on malformed input.

use crate::depth::{DepthMap, LidarPoint, RelativeDepthMap};
use crate::gdp::FeatureImage;
use crate::geometry::{GeometryError, Point3, RigidPose};
use crate::voxel::{
    FeatureGrid, GridSpec, LabelGrid, MaskGrid, ScalarGrid, NUM_CLASSES, UNKNOWN_LABEL,
};
use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KittiIoError {
    #[error("file truncated: length {found} is not {unit}-aligned")]
    TruncatedFile { found: usize, unit: usize },
    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("raw label {raw} at voxel {offset} is not in the remap table")]
    UnknownRawLabel { raw: u16, offset: usize },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("invalid geometry in file: {0}")]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_error(line: usize, message: impl Into<String>) -> KittiIoError {
    KittiIoError::ParseError {
        line,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// LiDAR point clouds

pub fn read_lidar_bin(bytes: &[u8]) -> Result<Vec<LidarPoint>, KittiIoError> {
    if bytes.len() % 16 != 0 {
        return Err(KittiIoError::TruncatedFile {
            found: bytes.len(),
            unit: 16,
        });
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|chunk| LidarPoint {
            x: f32::from_le_bytes(chunk[0..4].try_into().unwrap()),
            y: f32::from_le_bytes(chunk[4..8].try_into().unwrap()),
            z: f32::from_le_bytes(chunk[8..12].try_into().unwrap()),
            intensity: f32::from_le_bytes(chunk[12..16].try_into().unwrap()),
        })
        .collect())
}

pub fn write_lidar_bin(points: &[LidarPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for p in points {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
        out.extend_from_slice(&p.intensity.to_le_bytes());
    }
    out
}

// ---------------------------------------------------------------------------
// Packed voxel bitfields

pub fn read_voxel_bin(bytes: &[u8], spec: &GridSpec) -> Result<MaskGrid, KittiIoError> {
    let n = spec.num_voxels();
    let expected = n.div_ceil(8);
    if bytes.len() != expected {
        return Err(KittiIoError::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let mut bits = Vec::with_capacity(n);
    for i in 0..n {
        let byte = bytes[i / 8];
        bits.push(byte & (0x80 >> (i % 8)) != 0);
    }
    Ok(MaskGrid::from_bits(*spec, bits).expect("sized buffer"))
}

pub fn write_voxel_bin(mask: &MaskGrid) -> Vec<u8> {
    let bits = mask.as_slice();
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &bit) in bits.iter().enumerate() {
        if bit {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Voxel labels and the class remap table

/// Raw-id to training-id remap. Training ids are 0 (empty) through 19 plus
/// the UNKNOWN sentinel; the table itself ships as external config so
/// dataset revisions do not require recompilation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRemap {
    map: HashMap<u16, u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemapMode {
    /// Raw ids missing from the table map to UNKNOWN.
    #[default]
    Lenient,
    /// Raw ids missing from the table are an error.
    Strict,
}

impl LabelRemap {
    /// Training-id space: 0..=19 and the UNKNOWN sentinel map to themselves.
    pub fn identity() -> Self {
        let mut map = HashMap::new();
        for id in 0..=NUM_CLASSES as u16 {
            map.insert(id, id as u8);
        }
        map.insert(UNKNOWN_LABEL as u16, UNKNOWN_LABEL);
        Self { map }
    }

    /// Parses `raw train` pairs, one per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, KittiIoError> {
        let mut map = HashMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let raw: u16 = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|e| parse_error(lineno + 1, format!("bad raw id: {e}")))?;
            let train: u16 = fields
                .next()
                .ok_or_else(|| parse_error(lineno + 1, "missing training id"))?
                .parse()
                .map_err(|e| parse_error(lineno + 1, format!("bad training id: {e}")))?;
            if fields.next().is_some() {
                return Err(parse_error(lineno + 1, "trailing fields"));
            }
            if train > NUM_CLASSES as u16 && train != UNKNOWN_LABEL as u16 {
                return Err(parse_error(
                    lineno + 1,
                    format!("training id {train} outside 0..={NUM_CLASSES}"),
                ));
            }
            map.insert(raw, train as u8);
        }
        if map.is_empty() {
            return Err(parse_error(0, "remap table is empty"));
        }
        Ok(Self { map })
    }

    pub fn from_path(path: &Path) -> Result<Self, KittiIoError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&self, raw: u16) -> Option<u8> {
        self.map.get(&raw).copied()
    }
}

pub fn read_label(
    bytes: &[u8],
    spec: &GridSpec,
    remap: &LabelRemap,
    mode: RemapMode,
) -> Result<LabelGrid, KittiIoError> {
    let n = spec.num_voxels();
    if bytes.len() != 2 * n {
        return Err(KittiIoError::SizeMismatch {
            expected: 2 * n,
            found: bytes.len(),
        });
    }
    let mut labels = Vec::with_capacity(n);
    for (offset, chunk) in bytes.chunks_exact(2).enumerate() {
        let raw = u16::from_le_bytes([chunk[0], chunk[1]]);
        let label = match remap.apply(raw) {
            Some(train) => train,
            None => match mode {
                RemapMode::Lenient => UNKNOWN_LABEL,
                RemapMode::Strict => {
                    return Err(KittiIoError::UnknownRawLabel { raw, offset });
                }
            },
        };
        labels.push(label);
    }
    Ok(LabelGrid::from_labels(*spec, labels).expect("remap output is in range"))
}

/// Serializes a grid already in training-id space.
pub fn write_label(grid: &LabelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(grid.as_slice().len() * 2);
    for &label in grid.as_slice() {
        out.extend_from_slice(&(label as u16).to_le_bytes());
    }
    out
}

// ---------------------------------------------------------------------------
// Calibration and poses

/// Calibration rows relevant to the pipeline: the left color camera
/// projection and the LiDAR-to-camera extrinsic.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibData {
    /// Row-major 3x4 projection matrix of camera 2.
    pub p2: [f64; 12],
    /// LiDAR to camera, orthonormalized on load.
    pub lidar_to_cam: RigidPose,
}

impl CalibData {
    /// Pinhole intrinsics extracted from P2. The image size is not part of
    /// calib.txt and must come from the image data.
    pub fn intrinsics(
        &self,
        width: u32,
        height: u32,
    ) -> Result<crate::geometry::CameraIntrinsics, GeometryError> {
        crate::geometry::CameraIntrinsics::new(
            self.p2[0],
            self.p2[5],
            self.p2[2],
            self.p2[6],
            width,
            height,
        )
    }
}

fn parse_floats(line: &str, lineno: usize, expect: usize) -> Result<Vec<f64>, KittiIoError> {
    let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
    let values =
        values.map_err(|e| parse_error(lineno, format!("bad float: {e}")))?;
    if values.len() != expect {
        return Err(parse_error(
            lineno,
            format!("expected {expect} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn pose_from_row_major(values: &[f64]) -> Result<RigidPose, GeometryError> {
    let rotation = Matrix3::new(
        values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
        values[10],
    );
    let translation = Vector3::new(values[3], values[7], values[11]);
    RigidPose::from_parts_orthonormalized(rotation, translation)
}

fn pose_to_row_major(pose: &RigidPose) -> [f64; 12] {
    let r = pose.rotation();
    let t = pose.translation();
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        t.x,
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        t.y,
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t.z,
    ]
}

pub fn read_calib(text: &str) -> Result<CalibData, KittiIoError> {
    let mut p2 = None;
    let mut tr = None;
    for (lineno, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("P2:") {
            let values = parse_floats(rest, lineno + 1, 12)?;
            p2 = Some(values.try_into().expect("length checked"));
        } else if let Some(rest) = line.strip_prefix("Tr:") {
            let values = parse_floats(rest, lineno + 1, 12)?;
            tr = Some(pose_from_row_major(&values)?);
        }
    }
    Ok(CalibData {
        p2: p2.ok_or_else(|| parse_error(0, "missing P2 row"))?,
        lidar_to_cam: tr.ok_or_else(|| parse_error(0, "missing Tr row"))?,
    })
}

fn format_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_calib(calib: &CalibData) -> String {
    format!(
        "P2: {}\nTr: {}\n",
        format_floats(&calib.p2),
        format_floats(&pose_to_row_major(&calib.lidar_to_cam))
    )
}

/// Raw pose rows exactly as stored on disk: camera-to-world transforms.
pub fn read_poses_raw(text: &str) -> Result<Vec<RigidPose>, KittiIoError> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = parse_floats(line, lineno + 1, 12)?;
        poses.push(pose_from_row_major(&values)?);
    }
    Ok(poses)
}

/// Poses converted to the crate convention (world-to-camera) on load.
pub fn read_poses(text: &str) -> Result<Vec<RigidPose>, KittiIoError> {
    Ok(read_poses_raw(text)?.iter().map(RigidPose::inverse).collect())
}

/// Writes camera-to-world rows, the on-disk convention.
pub fn write_poses(cam_to_world: &[RigidPose]) -> String {
    let mut out = String::new();
    for pose in cam_to_world {
        out.push_str(&format_floats(&pose_to_row_major(pose)));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// PFM float images

/// Grayscale 32-bit float image; row 0 is the top row in memory (the file
/// stores rows bottom-up per the PFM convention).
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl PfmImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }
}

pub fn read_pfm(bytes: &[u8]) -> Result<PfmImage, KittiIoError> {
    // Header: three whitespace-separated tokens after the magic, then one
    // single whitespace byte before the payload.
    let mut pos = 0usize;
    let mut next_token = |expect: &str| -> Result<String, KittiIoError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_error(0, format!("missing {expect} in header")));
        }
        String::from_utf8(bytes[start..pos].to_vec())
            .map_err(|_| parse_error(0, format!("non-ascii {expect} in header")))
    };

    let magic = next_token("magic")?;
    if magic == "PF" {
        return Err(parse_error(0, "color PFM is not supported, expected Pf"));
    }
    if magic != "Pf" {
        return Err(parse_error(0, format!("bad magic {magic:?}, expected Pf")));
    }
    let width: usize = next_token("width")?
        .parse()
        .map_err(|e| parse_error(0, format!("bad width: {e}")))?;
    let height: usize = next_token("height")?
        .parse()
        .map_err(|e| parse_error(0, format!("bad height: {e}")))?;
    let scale: f64 = next_token("scale")?
        .parse()
        .map_err(|e| parse_error(0, format!("bad scale: {e}")))?;
    if scale == 0.0 {
        return Err(parse_error(0, "scale must be non-zero"));
    }
    // One whitespace byte separates header and payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_error(0, "missing separator after header"));
    }
    pos += 1;

    let expected = width * height * 4;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(KittiIoError::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }

    let little_endian = scale < 0.0;
    let mut values = vec![0.0f32; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // Bottom-up file rows map to top-down memory rows.
        let file_row = i / width;
        let col = i % width;
        let row = height - 1 - file_row;
        values[row * width + col] = v;
    }
    Ok(PfmImage::new(width, height, values))
}

pub fn write_pfm(image: &PfmImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(15 + image.values.len() * 4);
    out.extend_from_slice(
        format!("Pf\n{} {}\n{:.4}\n", image.width, image.height, -1.0).as_bytes(),
    );
    for file_row in 0..image.height {
        let row = image.height - 1 - file_row;
        for col in 0..image.width {
            out.extend_from_slice(&image.values[row * image.width + col].to_le_bytes());
        }
    }
    out
}

/// Depth maps ride in PFM with 0.0 marking invalid pixels.
pub fn depth_to_pfm(depth: &DepthMap) -> PfmImage {
    let values = depth
        .values()
        .iter()
        .zip(depth.validity())
        .map(|(&v, &ok)| if ok { v as f32 } else { 0.0 })
        .collect();
    PfmImage::new(depth.width(), depth.height(), values)
}

pub fn pfm_to_depth(image: &PfmImage) -> DepthMap {
    let mut out = DepthMap::invalid(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            let v = image.values[y * image.width + x];
            if v > 0.0 && v.is_finite() {
                out.set(x, y, v as f64);
            }
        }
    }
    out
}

pub fn relative_depth_to_pfm(rel: &RelativeDepthMap) -> PfmImage {
    PfmImage::new(
        rel.width(),
        rel.height(),
        rel.values().iter().map(|&v| v as f32).collect(),
    )
}

pub fn pfm_to_relative_depth(image: &PfmImage) -> RelativeDepthMap {
    RelativeDepthMap::from_values(
        image.width,
        image.height,
        image.values.iter().map(|&v| v as f64).collect(),
    )
}

/// One channel of a feature image as a PFM plane.
pub fn feature_channel_to_pfm(feat: &FeatureImage, channel: usize) -> PfmImage {
    assert!(channel < feat.channels());
    let mut values = Vec::with_capacity(feat.width() * feat.height());
    for y in 0..feat.height() {
        for x in 0..feat.width() {
            values.push(feat.pixel(x, y)[channel]);
        }
    }
    PfmImage::new(feat.width(), feat.height(), values)
}

/// Reassembles a feature image from per-channel PFM planes.
pub fn feature_image_from_pfm_stack(planes: &[PfmImage]) -> Result<FeatureImage, KittiIoError> {
    let first = planes.first().ok_or_else(|| parse_error(0, "empty feature stack"))?;
    let mut feat = FeatureImage::zeros(first.width, first.height, planes.len());
    for (c, plane) in planes.iter().enumerate() {
        if plane.width != first.width || plane.height != first.height {
            return Err(KittiIoError::SizeMismatch {
                expected: first.width * first.height * 4,
                found: plane.width * plane.height * 4,
            });
        }
        for y in 0..plane.height {
            for x in 0..plane.width {
                feat.pixel_mut(x, y)[c] = plane.values[y * plane.width + x];
            }
        }
    }
    Ok(feat)
}

// ---------------------------------------------------------------------------
// Voxel grid containers (pipeline outputs)

const FEATURE_GRID_MAGIC: &[u8; 4] = b"VXFG";
const SCALAR_GRID_MAGIC: &[u8; 4] = b"VXSG";

fn write_grid_header(out: &mut Vec<u8>, magic: &[u8; 4], spec: &GridSpec, channels: u32) {
    out.extend_from_slice(magic);
    for d in spec.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&spec.voxel_size().to_le_bytes());
    for a in 0..3 {
        out.extend_from_slice(&spec.origin().coords[a].to_le_bytes());
    }
}

struct GridHeader {
    spec: GridSpec,
    channels: usize,
    payload_offset: usize,
}

fn read_grid_header(bytes: &[u8], magic: &[u8; 4]) -> Result<GridHeader, KittiIoError> {
    const HEADER_LEN: usize = 4 + 3 * 4 + 4 + 8 + 3 * 8;
    if bytes.len() < HEADER_LEN {
        return Err(KittiIoError::TruncatedFile {
            found: bytes.len(),
            unit: HEADER_LEN,
        });
    }
    if &bytes[0..4] != magic {
        return Err(parse_error(
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                &bytes[0..4],
                std::str::from_utf8(magic).unwrap()
            ),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims = [u32_at(4) as usize, u32_at(8) as usize, u32_at(12) as usize];
    let channels = u32_at(16) as usize;
    let voxel_size = f64_at(20);
    let origin = Point3::new(f64_at(28), f64_at(36), f64_at(44));
    let spec = GridSpec::new(dims, voxel_size, origin)
        .map_err(|e| parse_error(0, format!("bad grid spec: {e}")))?;
    Ok(GridHeader {
        spec,
        channels,
        payload_offset: HEADER_LEN,
    })
}

pub fn write_feature_grid(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(56 + grid.as_slice().len() * 4);
    write_grid_header(&mut out, FEATURE_GRID_MAGIC, grid.spec(), grid.channels() as u32);
    for v in grid.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_feature_grid(bytes: &[u8]) -> Result<FeatureGrid, KittiIoError> {
    let header = read_grid_header(bytes, FEATURE_GRID_MAGIC)?;
    let payload = &bytes[header.payload_offset..];
    let expected = header.spec.num_voxels() * header.channels * 4;
    if payload.len() != expected {
        return Err(KittiIoError::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureGrid::from_values(header.spec, header.channels, values).expect("sized payload"))
}

pub fn write_scalar_grid(grid: &ScalarGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(56 + grid.as_slice().len() * 8);
    write_grid_header(&mut out, SCALAR_GRID_MAGIC, grid.spec(), 1);
    for v in grid.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_scalar_grid(bytes: &[u8]) -> Result<ScalarGrid, KittiIoError> {
    let header = read_grid_header(bytes, SCALAR_GRID_MAGIC)?;
    let payload = &bytes[header.payload_offset..];
    let expected = header.spec.num_voxels() * 8;
    if payload.len() != expected {
        return Err(KittiIoError::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ScalarGrid::from_values(header.spec, values).expect("sized payload"))
}

// ---------------------------------------------------------------------------
// Frame bundles

/// Everything one SemanticKITTI frame provides to the pipeline. The RGB
/// image stays an opaque path; feature extraction happens outside this
/// crate.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub rgb_path: PathBuf,
    pub lidar: Vec<LidarPoint>,
    pub calib: CalibData,
    /// World-to-camera pose of this frame.
    pub pose: RigidPose,
    pub gt_labels: Option<LabelGrid>,
    pub invalid: Option<MaskGrid>,
}

/// Loads one frame from a KITTI-odometry sequence directory
/// (`calib.txt`, `poses.txt`, `velodyne/`, `voxels/`, `image_2/`).
/// Ground-truth grids use the standard scene volume and are optional on
/// disk.
pub fn read_frame_bundle(
    seq_dir: &Path,
    frame: usize,
    remap: &LabelRemap,
    mode: RemapMode,
) -> Result<FrameBundle, KittiIoError> {
    let calib = read_calib(&std::fs::read_to_string(seq_dir.join("calib.txt"))?)?;
    let poses = read_poses(&std::fs::read_to_string(seq_dir.join("poses.txt"))?)?;
    let pose = *poses.get(frame).ok_or_else(|| {
        parse_error(
            frame,
            format!("poses.txt has {} entries, frame {frame} requested", poses.len()),
        )
    })?;
    let lidar = read_lidar_bin(&std::fs::read(
        seq_dir.join(format!("velodyne/{frame:06}.bin")),
    )?)?;

    let spec = GridSpec::semantic_kitti();
    let label_path = seq_dir.join(format!("voxels/{frame:06}.label"));
    let gt_labels = if label_path.exists() {
        Some(read_label(&std::fs::read(label_path)?, &spec, remap, mode)?)
    } else {
        None
    };
    let invalid_path = seq_dir.join(format!("voxels/{frame:06}.invalid"));
    let invalid = if invalid_path.exists() {
        Some(read_voxel_bin(&std::fs::read(invalid_path)?, &spec)?)
    } else {
        None
    };

    Ok(FrameBundle {
        rgb_path: seq_dir.join(format!("image_2/{frame:06}.png")),
        lidar,
        calib,
        pose,
        gt_labels,
        invalid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn lidar_bin_hand_packed_bytes() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = read_lidar_bin(&bytes).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud[0].x, 1.0);
        assert_eq!(cloud[0].intensity, 0.5);

        assert!(read_lidar_bin(&[]).unwrap().is_empty());
        assert!(matches!(
            read_lidar_bin(&bytes[..15]),
            Err(KittiIoError::TruncatedFile { found: 15, unit: 16 })
        ));
    }

    #[test]
    fn lidar_round_trip_is_bit_exact() {
        let mut rng = StdRng::seed_from_u64(1);
        let cloud: Vec<LidarPoint> = (0..1000)
            .map(|_| LidarPoint {
                x: rng.random_range(-80.0..80.0),
                y: rng.random_range(-80.0..80.0),
                z: rng.random_range(-5.0..5.0),
                intensity: rng.random_range(0.0..1.0),
            })
            .collect();
        let bytes = write_lidar_bin(&cloud);
        let back = read_lidar_bin(&bytes).unwrap();
        assert_eq!(cloud, back);
        assert_eq!(write_lidar_bin(&back), bytes);
    }

    #[test]
    fn voxel_bin_msb_first_rule() {
        let spec = GridSpec::new([8, 1, 1], 0.2, Point3::origin()).unwrap();
        let mask = read_voxel_bin(&[0x80], &spec).unwrap();
        assert!(mask.get([0, 0, 0]));
        assert_eq!(mask.count_true(), 1);

        let all = read_voxel_bin(&[0xFF], &spec).unwrap();
        assert_eq!(all.count_true(), 8);

        assert!(matches!(
            read_voxel_bin(&[0xFF, 0x00], &spec),
            Err(KittiIoError::SizeMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn voxel_bin_round_trip() {
        let spec = GridSpec::new([16, 4, 2], 0.5, Point3::origin()).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        let bits: Vec<bool> = (0..spec.num_voxels()).map(|_| rng.random_bool(0.4)).collect();
        let mask = MaskGrid::from_bits(spec, bits).unwrap();
        let bytes = write_voxel_bin(&mask);
        let back = read_voxel_bin(&bytes, &spec).unwrap();
        assert_eq!(mask.as_slice(), back.as_slice());
        assert_eq!(write_voxel_bin(&back), bytes);
    }

    #[test]
    fn label_remap_table_lookup() {
        let remap = LabelRemap::parse("10 1 # car\n40 9\n252 1 # moving car\n").unwrap();
        let spec = GridSpec::new([2, 1, 1], 0.2, Point3::origin()).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&10u16.to_le_bytes());
        bytes.extend_from_slice(&40u16.to_le_bytes());
        let grid = read_label(&bytes, &spec, &remap, RemapMode::Lenient).unwrap();
        assert_eq!(grid.get([0, 0, 0]), 1);
        assert_eq!(grid.get([1, 0, 0]), 9);
    }

    #[test]
    fn unknown_raw_labels_follow_the_mode() {
        let remap = LabelRemap::parse("10 1").unwrap();
        let spec = GridSpec::new([1, 1, 1], 0.2, Point3::origin()).unwrap();
        let bytes = 99u16.to_le_bytes().to_vec();
        let lenient = read_label(&bytes, &spec, &remap, RemapMode::Lenient).unwrap();
        assert_eq!(lenient.get([0, 0, 0]), UNKNOWN_LABEL);
        assert!(matches!(
            read_label(&bytes, &spec, &remap, RemapMode::Strict),
            Err(KittiIoError::UnknownRawLabel { raw: 99, offset: 0 })
        ));
    }

    #[test]
    fn all_zero_labels_are_empty() {
        let spec = GridSpec::new([4, 2, 1], 0.2, Point3::origin()).unwrap();
        let bytes = vec![0u8; spec.num_voxels() * 2];
        let grid = read_label(&bytes, &spec, &LabelRemap::identity(), RemapMode::Strict).unwrap();
        assert_eq!(grid.occupied_count(), 0);
    }

    #[test]
    fn label_round_trip_in_training_space() {
        let spec = GridSpec::new([4, 4, 2], 0.2, Point3::origin()).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let labels: Vec<u8> = (0..spec.num_voxels())
            .map(|_| match rng.random_range(0..4) {
                0 => 0u8,
                1 => rng.random_range(1..=19) as u8,
                2 => UNKNOWN_LABEL,
                _ => 9,
            })
            .collect();
        let grid = LabelGrid::from_labels(spec, labels).unwrap();
        let bytes = write_label(&grid);
        let back = read_label(&bytes, &spec, &LabelRemap::identity(), RemapMode::Strict).unwrap();
        assert_eq!(grid.as_slice(), back.as_slice());
        assert_eq!(write_label(&back), bytes);
    }

    #[test]
    fn calib_field_extraction() {
        let text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nP2: 718.856 0 607.1928 45.38225 0 718.856 185.2157 -0.1130887 0 0 1 0.003779761\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let calib = read_calib(text).unwrap();
        assert_eq!(calib.p2[0], 718.856);
        let k = calib.intrinsics(1241, 376).unwrap();
        assert_eq!(k.fx, 718.856);
        assert_eq!(k.fy, 718.856);
        assert_eq!(k.cx, 607.1928);
        assert_eq!(k.cy, 185.2157);
    }

    #[test]
    fn calib_errors_carry_line_locations() {
        let err = read_calib("P2: 1 2 3\n").unwrap_err();
        match err {
            KittiIoError::ParseError { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(matches!(
            read_calib("Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n"),
            Err(KittiIoError::ParseError { .. })
        ));
    }

    #[test]
    fn calib_round_trip_recovers_exact_values() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..20 {
            let pose = crate::geometry::RigidPose::from_parts_orthonormalized(
                nalgebra::Rotation3::from_euler_angles(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
                .into_inner(),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            )
            .unwrap();
            let mut p2 = [0.0f64; 12];
            for v in p2.iter_mut() {
                *v = rng.random_range(-1000.0..1000.0);
            }
            let calib = CalibData {
                p2,
                lidar_to_cam: pose,
            };
            let text = write_calib(&calib);
            let back = read_calib(&text).unwrap();
            assert_eq!(calib, back);
            assert_eq!(write_calib(&back), text);
        }
    }

    #[test]
    fn identity_pose_line_loads_as_identity() {
        let poses = read_poses("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0], RigidPose::identity());
    }

    #[test]
    fn poses_round_trip_bit_exact_in_disk_convention() {
        let mut rng = StdRng::seed_from_u64(5);
        let cam_to_world: Vec<RigidPose> = (0..32)
            .map(|_| {
                RigidPose::from_parts_orthonormalized(
                    nalgebra::Rotation3::from_euler_angles(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                    )
                    .into_inner(),
                    Vector3::new(
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                        rng.random_range(-100.0..100.0),
                    ),
                )
                .unwrap()
            })
            .collect();
        let text = write_poses(&cam_to_world);
        let raw = read_poses_raw(&text).unwrap();
        assert_eq!(cam_to_world, raw);
        assert_eq!(write_poses(&raw), text);

        // The inverting loader produces world-to-camera poses.
        let world_to_cam = read_poses(&text).unwrap();
        for (wc, cw) in world_to_cam.iter().zip(&cam_to_world) {
            let id = wc.compose(cw);
            assert!((id.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
            assert!(id.translation().norm() < 1e-9);
        }
    }

    #[test]
    fn pfm_header_matches_the_fixed_layout() {
        let image = PfmImage::new(1, 1, vec![3.25]);
        let bytes = write_pfm(&image);
        assert_eq!(bytes.len(), 15 + 4);
        assert_eq!(&bytes[..15], b"Pf\n1 1\n-1.0000\n");
        assert_eq!(read_pfm(&bytes).unwrap(), image);
    }

    #[test]
    fn pfm_negative_scale_means_little_endian() {
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_le_bytes());
        assert_eq!(read_pfm(&bytes).unwrap().values, vec![2.5]);

        let mut be = b"Pf\n1 1\n1.0\n".to_vec();
        be.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(read_pfm(&be).unwrap().values, vec![2.5]);
    }

    #[test]
    fn pfm_rows_are_stored_bottom_up() {
        // 1x2 image: top row 1.0, bottom row 2.0. The file stores the
        // bottom row first.
        let image = PfmImage::new(1, 2, vec![1.0, 2.0]);
        let bytes = write_pfm(&image);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(f32::from_le_bytes(payload[0..4].try_into().unwrap()), 2.0);
        assert_eq!(f32::from_le_bytes(payload[4..8].try_into().unwrap()), 1.0);
        assert_eq!(read_pfm(&bytes).unwrap(), image);
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let mut rng = StdRng::seed_from_u64(6);
        let values: Vec<f32> = (0..64 * 48).map(|_| rng.random_range(-1e4..1e4)).collect();
        let image = PfmImage::new(64, 48, values);
        let bytes = write_pfm(&image);
        let back = read_pfm(&bytes).unwrap();
        assert_eq!(image, back);
        assert_eq!(write_pfm(&back), bytes);
    }

    #[test]
    fn pfm_rejects_garbage() {
        assert!(matches!(read_pfm(b"PF\n1 1\n-1.0\n"), Err(KittiIoError::ParseError { .. })));
        assert!(matches!(read_pfm(b"Pf\n1"), Err(KittiIoError::ParseError { .. })));
        assert!(matches!(
            read_pfm(b"Pf\n2 2\n-1.0\nxxxx"),
            Err(KittiIoError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn depth_pfm_conversion_preserves_validity() {
        let mut depth = DepthMap::invalid(3, 2);
        depth.set(0, 0, 4.5);
        depth.set(2, 1, 0.25);
        let back = pfm_to_depth(&write_read(&depth_to_pfm(&depth)));
        assert_eq!(back.get(0, 0), Some(4.5));
        assert_eq!(back.get(2, 1), Some(0.25));
        assert_eq!(back.valid_count(), 2);
    }

    fn write_read(image: &PfmImage) -> PfmImage {
        read_pfm(&write_pfm(image)).unwrap()
    }

    #[test]
    fn feature_grid_container_round_trip() {
        let spec = GridSpec::new([5, 4, 3], 0.25, Point3::new(-1.0, 0.5, 2.0)).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let values: Vec<f32> = (0..spec.num_voxels() * 6)
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        let grid = FeatureGrid::from_values(spec, 6, values).unwrap();
        let bytes = write_feature_grid(&grid);
        let back = read_feature_grid(&bytes).unwrap();
        assert_eq!(grid, back);
        assert_eq!(write_feature_grid(&back), bytes);

        assert!(matches!(
            read_feature_grid(&bytes[..40]),
            Err(KittiIoError::TruncatedFile { .. })
        ));
        assert!(matches!(
            read_scalar_grid(&bytes),
            Err(KittiIoError::ParseError { .. })
        ));
    }

    #[test]
    fn scalar_grid_container_round_trip() {
        let spec = GridSpec::new([3, 3, 3], 1.0, Point3::origin()).unwrap();
        let mut rng = StdRng::seed_from_u64(8);
        let values: Vec<f64> = (0..spec.num_voxels()).map(|_| rng.random()).collect();
        let grid = ScalarGrid::from_values(spec, values).unwrap();
        let bytes = write_scalar_grid(&grid);
        assert_eq!(read_scalar_grid(&bytes).unwrap(), grid);
    }

    #[test]
    fn feature_stack_round_trips_through_pfm_planes() {
        let mut feat = FeatureImage::zeros(4, 3, 3);
        let mut rng = StdRng::seed_from_u64(9);
        for v in feat.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let planes: Vec<PfmImage> = (0..3)
            .map(|c| write_read(&feature_channel_to_pfm(&feat, c)))
            .collect();
        let back = feature_image_from_pfm_stack(&planes).unwrap();
        assert_eq!(feat, back);
    }

    #[test]
    fn frame_bundle_reads_a_synthesized_sequence_dir() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path();
        std::fs::create_dir_all(seq.join("velodyne")).unwrap();
        std::fs::create_dir_all(seq.join("voxels")).unwrap();
        std::fs::write(
            seq.join("calib.txt"),
            "P2: 700 0 600 0 0 700 180 0 0 0 1 0\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n",
        )
        .unwrap();
        std::fs::write(
            seq.join("poses.txt"),
            "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 2 0 1 0 0 0 0 1 0\n",
        )
        .unwrap();
        let cloud = vec![LidarPoint {
            x: 5.0,
            y: 0.0,
            z: 0.0,
            intensity: 0.9,
        }];
        std::fs::write(seq.join("velodyne/000001.bin"), write_lidar_bin(&cloud)).unwrap();

        let spec = GridSpec::semantic_kitti();
        let labels = LabelGrid::filled(spec, 9);
        std::fs::write(seq.join("voxels/000001.label"), write_label(&labels)).unwrap();
        let invalid = MaskGrid::filled(spec, false);
        std::fs::write(seq.join("voxels/000001.invalid"), write_voxel_bin(&invalid)).unwrap();

        let bundle =
            read_frame_bundle(seq, 1, &LabelRemap::identity(), RemapMode::Strict).unwrap();
        assert_eq!(bundle.lidar, cloud);
        assert_eq!(bundle.pose.translation().x, -2.0); // inverted on load
        assert!(bundle.gt_labels.is_some());
        assert!(bundle.invalid.is_some());
        assert!(bundle.rgb_path.ends_with("image_2/000001.png"));

        assert!(matches!(
            read_frame_bundle(seq, 5, &LabelRemap::identity(), RemapMode::Strict),
            Err(KittiIoError::ParseError { .. })
        ));
    }
}
