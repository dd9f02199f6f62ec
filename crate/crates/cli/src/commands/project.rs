//! `voxfuse project`: lift a per-pixel feature stack into a voxel grid
//! along depth-prior rays with Gaussian-decay weighting.

use crate::common::{
    create_out_dir, read_file, read_text, write_manifest, write_output, CliError, GridSpecArgs,
    GridSpecManifest,
};
use serde::Serialize;
use std::path::PathBuf;
use voxfuse_core::depth::{apply_scale, fit_scale, FitSpace, ScaleFitConfig, DEPTH_CLAMP_DEFAULT};
use voxfuse_core::gdp::{
    argmax_labels, gdp_scatter, gdp_scatter_fast, Accumulation, GdpConfig, Normalization,
};
use voxfuse_core::kitti::{
    feature_image_from_pfm_stack, pfm_to_depth, pfm_to_relative_depth, read_calib, read_pfm,
    read_poses, write_feature_grid, write_label, write_scalar_grid, write_voxel_bin,
};
use voxfuse_core::RigidPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NormalizationArg {
    None,
    Ray,
    Voxel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AccumulationArg {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitSpaceArg {
    Depth,
    Inverse,
}

#[derive(Debug, clap::Args)]
pub struct ProjectArgs {
    /// Per-channel feature planes (PFM), in channel order.
    #[arg(long, value_name = "PFM", num_args = 1.., required = true)]
    pub features: Vec<PathBuf>,

    /// Dense metric depth prior (PFM, zeros mark invalid pixels).
    #[arg(long, value_name = "PFM", conflicts_with_all = ["relative_depth", "sparse_depth"])]
    pub depth: Option<PathBuf>,

    /// Relative-depth image (PFM) to be scaled against --sparse-depth.
    #[arg(long, value_name = "PFM", requires = "sparse_depth")]
    pub relative_depth: Option<PathBuf>,

    /// Sparse metric depth (PFM) used to fit the scaling.
    #[arg(long, value_name = "PFM", requires = "relative_depth")]
    pub sparse_depth: Option<PathBuf>,

    /// Domain of the affine depth fit.
    #[arg(long, value_enum, default_value_t = FitSpaceArg::Depth)]
    pub fit_space: FitSpaceArg,

    /// KITTI-style calibration file providing the P2 projection.
    #[arg(long, value_name = "FILE", required = true)]
    pub calib: PathBuf,

    /// Pose file; without it the grid is camera-anchored (identity pose).
    #[arg(long, value_name = "FILE")]
    pub poses: Option<PathBuf>,

    /// Frame index into --poses.
    #[arg(long, default_value_t = 0)]
    pub frame: usize,

    #[command(flatten)]
    pub grid: GridSpecArgs,

    /// Gaussian standard deviation in voxel-size units.
    #[arg(long, default_value_t = 16.0)]
    pub sigma: f64,

    /// Truncation radius in multiples of sigma.
    #[arg(long, default_value_t = 3.0)]
    pub truncation: f64,

    #[arg(long, value_enum, default_value_t = NormalizationArg::None)]
    pub normalization: NormalizationArg,

    #[arg(long, value_enum, default_value_t = AccumulationArg::Mean)]
    pub accumulation: AccumulationArg,

    /// Fixed accumulation order (bit-reproducible). `--strict=false`
    /// enables the parallel path, deterministic within 1e-5.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set,
          num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub strict: bool,

    /// Accumulated-weight floor below which the argmax output stays empty.
    #[arg(long, default_value_t = 1e-8)]
    pub min_weight: f64,

    /// Output directory.
    #[arg(long, value_name = "DIR", required = true)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ScaleFitManifest {
    gain: f64,
    offset: f64,
    inlier_count: usize,
    rms_residual: f64,
    space: String,
}

#[derive(Debug, Serialize)]
struct ProjectManifest {
    command: &'static str,
    features: Vec<String>,
    depth: Option<String>,
    relative_depth: Option<String>,
    sparse_depth: Option<String>,
    calib: String,
    poses: Option<String>,
    frame: usize,
    grid: GridSpecManifest,
    sigma: f64,
    truncation: f64,
    normalization: String,
    accumulation: String,
    strict: bool,
    min_weight: f64,
    scale_fit: Option<ScaleFitManifest>,
    image_size: [usize; 2],
    channels: usize,
    outputs: Vec<&'static str>,
}

pub fn run(args: ProjectArgs) -> Result<(), CliError> {
    let spec = args.grid.resolve()?;

    // Read every input before creating any output.
    let calib = read_calib(&read_text(&args.calib)?)?;
    let planes: Result<Vec<_>, CliError> = args
        .features
        .iter()
        .map(|p| Ok(read_pfm(&read_file(p)?)?))
        .collect();
    let feat = feature_image_from_pfm_stack(&planes?)
        .map_err(|e| CliError::validation(format!("--features: {e}")))?;

    let k = calib
        .intrinsics(feat.width() as u32, feat.height() as u32)
        .map_err(|e| CliError::validation(format!("--calib P2: {e}")))?;

    let pose = match &args.poses {
        Some(path) => {
            let poses = read_poses(&read_text(path)?)?;
            *poses.get(args.frame).ok_or_else(|| {
                CliError::validation(format!(
                    "--frame {} out of range ({} poses)",
                    args.frame,
                    poses.len()
                ))
            })?
        }
        None => RigidPose::identity(),
    };

    let (depth_prior, scale_fit) = match (&args.depth, &args.relative_depth, &args.sparse_depth) {
        (Some(path), None, None) => (pfm_to_depth(&read_pfm(&read_file(path)?)?), None),
        (None, Some(rel_path), Some(sparse_path)) => {
            let rel = pfm_to_relative_depth(&read_pfm(&read_file(rel_path)?)?);
            let sparse = pfm_to_depth(&read_pfm(&read_file(sparse_path)?)?);
            let cfg = ScaleFitConfig {
                space: match args.fit_space {
                    FitSpaceArg::Depth => FitSpace::Depth,
                    FitSpaceArg::Inverse => FitSpace::InverseDepth,
                },
                ..ScaleFitConfig::default()
            };
            let fit = fit_scale(&rel, &sparse, &cfg)
                .map_err(|e| CliError::validation(format!("depth scaling: {e}")))?;
            (apply_scale(&rel, &fit, DEPTH_CLAMP_DEFAULT), Some(fit))
        }
        _ => {
            return Err(CliError::validation(
                "provide either --depth, or both --relative-depth and --sparse-depth",
            ))
        }
    };

    let cfg = GdpConfig {
        sigma: args.sigma,
        truncation_radius: args.truncation,
        normalization: match args.normalization {
            NormalizationArg::None => Normalization::None,
            NormalizationArg::Ray => Normalization::PerRay,
            NormalizationArg::Voxel => Normalization::PerVoxel,
        },
        accumulation: match args.accumulation {
            AccumulationArg::Sum => Accumulation::WeightedSum,
            AccumulationArg::Mean => Accumulation::WeightedMean,
        },
    };

    let output = if args.strict {
        gdp_scatter(&feat, &depth_prior, &pose, &k, &spec, &cfg)
    } else {
        gdp_scatter_fast(&feat, &depth_prior, &pose, &k, &spec, &cfg)
    }
    .map_err(|e| CliError::validation(e.to_string()))?;

    let labels = argmax_labels(&output.features, &output.weights, args.min_weight);

    create_out_dir(&args.out)?;
    write_output(
        &args.out.join("features.vxfg"),
        &write_feature_grid(&output.features),
    )?;
    write_output(
        &args.out.join("weights.vxsg"),
        &write_scalar_grid(&output.weights),
    )?;
    write_output(
        &args.out.join("touched.bin"),
        &write_voxel_bin(&output.touched),
    )?;
    write_output(&args.out.join("argmax.label"), &write_label(&labels))?;

    let manifest = ProjectManifest {
        command: "project",
        features: args.features.iter().map(|p| p.display().to_string()).collect(),
        depth: args.depth.as_ref().map(|p| p.display().to_string()),
        relative_depth: args.relative_depth.as_ref().map(|p| p.display().to_string()),
        sparse_depth: args.sparse_depth.as_ref().map(|p| p.display().to_string()),
        calib: args.calib.display().to_string(),
        poses: args.poses.as_ref().map(|p| p.display().to_string()),
        frame: args.frame,
        grid: GridSpecManifest::from(&spec),
        sigma: args.sigma,
        truncation: args.truncation,
        normalization: format!("{:?}", args.normalization).to_lowercase(),
        accumulation: format!("{:?}", args.accumulation).to_lowercase(),
        strict: args.strict,
        min_weight: args.min_weight,
        scale_fit: scale_fit.map(|fit| ScaleFitManifest {
            gain: fit.gain,
            offset: fit.offset,
            inlier_count: fit.inlier_count,
            rms_residual: fit.rms_residual,
            space: format!("{:?}", fit.space).to_lowercase(),
        }),
        image_size: [feat.width(), feat.height()],
        channels: feat.channels(),
        outputs: vec!["features.vxfg", "weights.vxsg", "touched.bin", "argmax.label"],
    };
    write_manifest(&args.out, &manifest)?;

    println!(
        "projected {} channels over {}x{} pixels into {:?} voxels \
         (touched {}, sigma {} voxels)",
        feat.channels(),
        feat.width(),
        feat.height(),
        spec.dims(),
        output.touched.count_true(),
        args.sigma
    );
    Ok(())
}
