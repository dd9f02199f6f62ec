//! Shared command plumbing: error classification, grid-spec flags, label
//! remap resolution, and manifest emission.

use serde::Serialize;
use std::path::{Path, PathBuf};
use voxfuse_core::kitti::{KittiIoError, LabelRemap};
use voxfuse_core::{GridSpec, Point3};

/// Errors split by exit code: I/O failures exit 2, validation failures
/// exit 3.
#[derive(Debug)]
pub enum CliError {
    Io(String),
    Validation(String),
}

impl CliError {
    pub fn io(message: impl Into<String>) -> Self {
        Self::Io(message.into())
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::Validation(message.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err.to_string())
    }
}

impl From<KittiIoError> for CliError {
    fn from(err: KittiIoError) -> Self {
        Self::Io(err.to_string())
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// Grid geometry flags shared by every grid-consuming subcommand. Defaults
/// describe the standard benchmark volume.
#[derive(Debug, Clone, clap::Args)]
pub struct GridSpecArgs {
    /// Voxel counts as nx,ny,nz.
    #[arg(long, value_name = "NX,NY,NZ", default_value = "256,256,32")]
    pub dims: String,

    /// Voxel edge length in meters.
    #[arg(long, value_name = "METERS", default_value_t = 0.2)]
    pub voxel_size: f64,

    /// Position of the (0,0,0) voxel corner, as x,y,z meters.
    #[arg(long, value_name = "X,Y,Z", default_value = "0,-25.6,-2")]
    pub origin: String,
}

impl GridSpecArgs {
    pub fn resolve(&self) -> Result<GridSpec, CliError> {
        let dims = parse_triple::<usize>(&self.dims)
            .map_err(|e| CliError::validation(format!("--dims: {e}")))?;
        let origin = parse_triple::<f64>(&self.origin)
            .map_err(|e| CliError::validation(format!("--origin: {e}")))?;
        GridSpec::new(
            dims,
            self.voxel_size,
            Point3::new(origin[0], origin[1], origin[2]),
        )
        .map_err(|e| CliError::validation(format!("--dims/--voxel-size/--origin: {e}")))
    }
}

pub fn parse_triple<T: std::str::FromStr>(text: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {text:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|e| format!("bad value {p:?}: {e}"))?);
    }
    Ok(out.try_into().map_err(|_| "length checked").unwrap())
}

/// Resolves the label remap table: `--remap` flag, then the VOXFUSE_REMAP
/// environment variable, then the identity table (training-id space).
pub fn resolve_remap(flag: &Option<PathBuf>) -> Result<LabelRemap, CliError> {
    let path = flag
        .clone()
        .or_else(|| std::env::var_os("VOXFUSE_REMAP").map(PathBuf::from));
    match path {
        Some(path) => LabelRemap::from_path(&path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display()))),
        None => Ok(LabelRemap::identity()),
    }
}

pub fn create_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::io(format!("{}: {e}", out.display())))
}

pub fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct GridSpecManifest {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
}

impl From<&GridSpec> for GridSpecManifest {
    fn from(spec: &GridSpec) -> Self {
        Self {
            dims: spec.dims(),
            voxel_size: spec.voxel_size(),
            origin: [spec.origin().x, spec.origin().y, spec.origin().z],
        }
    }
}

/// Writes `manifest.json` recording the resolved configuration next to the
/// outputs, so a run can be audited and reproduced exactly.
pub fn write_manifest<T: Serialize>(out_dir: &Path, manifest: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::validation(format!("manifest serialization: {e}")))?;
    write_output(&out_dir.join("manifest.json"), json.as_bytes())
}
