//! `voxfuse warp`: resample a voxel grid from one camera frame into
//! another under the rigid motion between two poses.

use crate::common::{
    create_out_dir, read_file, read_text, resolve_remap, write_manifest, write_output, CliError,
    GridSpecArgs, GridSpecManifest,
};
use serde::Serialize;
use std::path::PathBuf;
use voxfuse_core::kitti::{
    read_feature_grid, read_label, read_poses, write_feature_grid, write_label, write_voxel_bin,
    RemapMode,
};
use voxfuse_core::temporal::{warp_feature_grid, warp_label_grid, WarpMode};
use voxfuse_core::{overlap_mask, relative_transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GridTypeArg {
    Label,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum WarpModeArg {
    Nearest,
    Trilinear,
}

#[derive(Debug, clap::Args)]
pub struct WarpArgs {
    /// Input grid: a .label file or a .vxfg feature container.
    #[arg(long, value_name = "FILE", required = true)]
    pub grid: PathBuf,

    #[arg(long, value_enum, required = true)]
    pub grid_type: GridTypeArg,

    /// Pose file (camera-to-world rows, one per frame).
    #[arg(long, value_name = "FILE", required = true)]
    pub poses: PathBuf,

    /// Source frame index.
    #[arg(long, required = true)]
    pub from: usize,

    /// Destination frame index.
    #[arg(long, required = true)]
    pub to: usize,

    #[arg(long, value_enum, default_value_t = WarpModeArg::Nearest)]
    pub warp_mode: WarpModeArg,

    /// Grid geometry for label inputs (.vxfg files carry their own).
    #[command(flatten)]
    pub grid_spec: GridSpecArgs,

    /// Raw-to-training label remap table (or env VOXFUSE_REMAP).
    #[arg(long, value_name = "FILE")]
    pub remap: Option<PathBuf>,

    /// Output directory.
    #[arg(long, value_name = "DIR", required = true)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct WarpManifest {
    command: &'static str,
    grid: String,
    grid_type: String,
    poses: String,
    from: usize,
    to: usize,
    warp_mode: String,
    spec: GridSpecManifest,
    outputs: Vec<&'static str>,
}

pub fn run(args: WarpArgs) -> Result<(), CliError> {
    let poses = read_poses(&read_text(&args.poses)?)?;
    let fetch = |i: usize| {
        poses.get(i).copied().ok_or_else(|| {
            CliError::validation(format!("frame {i} out of range ({} poses)", poses.len()))
        })
    };
    let rel = relative_transform(&fetch(args.from)?, &fetch(args.to)?);
    let grid_bytes = read_file(&args.grid)?;

    create_out_dir(&args.out)?;
    let (spec, outputs) = match args.grid_type {
        GridTypeArg::Label => {
            if args.warp_mode == WarpModeArg::Trilinear {
                return Err(CliError::validation(
                    "--warp-mode trilinear is not defined for label grids; labels resample nearest",
                ));
            }
            let spec = args.grid_spec.resolve()?;
            let remap = resolve_remap(&args.remap)?;
            let labels = read_label(&grid_bytes, &spec, &remap, RemapMode::Lenient)
                .map_err(|e| CliError::validation(format!("--grid: {e}")))?;
            let warped = warp_label_grid(&labels, &rel, &spec);
            let overlap = overlap_mask(&spec, &rel, &spec);
            write_output(&args.out.join("warped.label"), &write_label(&warped))?;
            write_output(&args.out.join("overlap.bin"), &write_voxel_bin(&overlap))?;
            (spec, vec!["warped.label", "overlap.bin"])
        }
        GridTypeArg::Feature => {
            let features = read_feature_grid(&grid_bytes)
                .map_err(|e| CliError::validation(format!("--grid: {e}")))?;
            let spec = *features.spec();
            let mode = match args.warp_mode {
                WarpModeArg::Nearest => WarpMode::Nearest,
                WarpModeArg::Trilinear => WarpMode::Trilinear,
            };
            let (warped, valid) = warp_feature_grid(&features, &rel, &spec, mode);
            write_output(&args.out.join("warped.vxfg"), &write_feature_grid(&warped))?;
            write_output(&args.out.join("overlap.bin"), &write_voxel_bin(&valid))?;
            (spec, vec!["warped.vxfg", "overlap.bin"])
        }
    };

    let manifest = WarpManifest {
        command: "warp",
        grid: args.grid.display().to_string(),
        grid_type: format!("{:?}", args.grid_type).to_lowercase(),
        poses: args.poses.display().to_string(),
        from: args.from,
        to: args.to,
        warp_mode: format!("{:?}", args.warp_mode).to_lowercase(),
        spec: GridSpecManifest::from(&spec),
        outputs,
    };
    write_manifest(&args.out, &manifest)?;

    println!(
        "warped {:?} grid from frame {} to frame {} ({:?} mode)",
        args.grid_type, args.from, args.to, args.warp_mode
    );
    Ok(())
}
