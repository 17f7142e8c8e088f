use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "lfz", version, about = "Light-field compression via a single JPEG view and learned view synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode the center view of a light field into a .lfz container
    Compress(CompressArgs),
    /// Rebuild every view from a .lfz container
    Decompress(DecompressArgs),
    /// Score reconstructions against ground truth (JSON lines plus SVG plots)
    Eval(EvalArgs),
    /// Synthetic refocus of a light field at one disparity
    Refocus(RefocusArgs),
    /// Mean of all views (wide-aperture image)
    Dof(DofArgs),
    /// Write the views as a numbered frame sequence for external video encoders
    Pseudoseq(PseudoseqArgs),
    /// Train the networks on synthetic planar scenes
    Train(TrainArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Describe a container, weight archive or light field
    Info(InfoArgs),
}

/// Where a light field is read from.
#[derive(Args, Debug, Clone)]
pub struct LfSource {
    /// Light field: a directory of view_{u}_{v}.png files, or a tiled grid image
    #[arg(long = "in", value_name = "LF")]
    pub input: PathBuf,
    /// Angular size UxV of a grid image (e.g. 7x7); not used for directories
    #[arg(long, value_name = "UxV", value_parser = parse_angular)]
    pub angular: Option<(usize, usize)>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrientationArg {
    /// Row offsets grow downward, column offsets rightward
    Standard,
    /// Both offsets negated
    Flipped,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[command(flatten)]
    pub lf: LfSource,
    /// JPEG quality, 1..=100
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub quality: u8,
    /// Output container
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecompressArgs {
    /// Input .lfz container
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Weight archive or training checkpoint
    #[arg(long, value_name = "FILE", required_unless_present = "baseline")]
    pub weights: Option<PathBuf>,
    /// Replicate the decoded center to every view instead of using the networks
    #[arg(long, conflicts_with = "weights")]
    pub baseline: bool,
    /// Output directory for view_{u}_{v}.png
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Also write all views tiled into this PNG
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,
    /// Sign convention of the angular offsets
    #[arg(long, value_enum, default_value_t = OrientationArg::Standard)]
    pub orientation: OrientationArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth light field; repeat for several
    #[arg(long, value_name = "LF", required = true)]
    pub gt: Vec<PathBuf>,
    /// Reconstruction per --gt: a .lfz container (decoded with --weights) or a light field.
    /// Without it each --gt is compressed at --quality and decoded (both timed)
    #[arg(long = "in", value_name = "PATH")]
    pub input: Vec<PathBuf>,
    /// Angular size UxV for grid images
    #[arg(long, value_name = "UxV", value_parser = parse_angular)]
    pub angular: Option<(usize, usize)>,
    /// Weight archive or training checkpoint
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// JPEG quality when compressing --gt directly
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub quality: u8,
    /// Comma-separated refocus disparities
    #[arg(long, value_delimiter = ',', default_values_t = [0.15, 1.5], allow_hyphen_values = true)]
    pub alphas: Vec<f64>,
    /// Sign convention of the angular offsets
    #[arg(long, value_enum, default_value_t = OrientationArg::Standard)]
    pub orientation: OrientationArg,
    /// Write the JSON-lines report here (it is always printed to stdout)
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Directory for SVG metric plots; defaults to the report's directory
    #[arg(long, value_name = "DIR")]
    pub plots: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RefocusArgs {
    #[command(flatten)]
    pub lf: LfSource,
    /// Disparity (pixels per angular step) brought into focus
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Sign convention of the angular offsets
    #[arg(long, value_enum, default_value_t = OrientationArg::Standard)]
    pub orientation: OrientationArg,
    /// Output PNG
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DofArgs {
    #[command(flatten)]
    pub lf: LfSource,
    /// Output PNG
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    /// Row by row
    Raster,
    /// Outward from the center
    Spiral,
}

#[derive(Args, Debug)]
pub struct PseudoseqArgs {
    #[command(flatten)]
    pub lf: LfSource,
    /// Order in which views become frames
    #[arg(long, value_enum, default_value_t = OrderArg::Raster)]
    pub order: OrderArg,
    /// Output directory for frame_000.png, frame_001.png, ...
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    /// Enhancement net alone against uncompressed centers
    HancePretrain,
    /// Disparity net alone, enhancement frozen
    DepthPretrain,
    /// Both nets on crops
    Joint,
    /// Both nets on whole scenes at a lower rate
    FinetuneFullres,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum NetSize {
    /// Small networks suited to CPU training
    Desk,
    /// Full-size networks
    Paper,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training phase
    #[arg(long, value_enum, default_value_t = PhaseArg::Joint)]
    pub phase: PhaseArg,
    /// Seeds network initialization and every training step
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total optimization steps
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Samples per step
    #[arg(long)]
    pub batch: Option<usize>,
    /// Steps per epoch (the learning rate changes per epoch)
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Number of synthetic scenes
    #[arg(long, default_value_t = 16)]
    pub scenes: usize,
    /// Scene side in pixels (at least 32)
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Angular grid of the scenes
    #[arg(long, value_name = "UxV", default_value = "7x7", value_parser = parse_angular)]
    pub angular: (usize, usize),
    /// Largest absolute scene disparity in pixels
    #[arg(long, default_value_t = 2.0)]
    pub d_range: f32,
    /// Seeds the synthetic scenes
    #[arg(long, default_value_t = 1)]
    pub scene_seed: u64,
    /// JPEG quality of the training inputs
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub quality: u8,
    /// Network size for a fresh start
    #[arg(long, value_enum, default_value_t = NetSize::Desk)]
    pub nets: NetSize,
    /// Start from these weights (archive or checkpoint) instead of a fresh init
    #[arg(long, value_name = "FILE", conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Resume weights, optimizer state and step count from a checkpoint
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    /// Final weight archive
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Checkpoint rewritten at the end of every epoch
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Training log as JSON lines (default: stdout)
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random shapes per operator
    #[arg(long, default_value_t = 3)]
    pub shapes: usize,
    /// Skip the whole-network checks
    #[arg(long)]
    pub no_networks: bool,
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    /// .lfz container, weight archive/checkpoint, or light field
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Angular size UxV for grid images
    #[arg(long, value_name = "UxV", value_parser = parse_angular)]
    pub angular: Option<(usize, usize)>,
}

pub fn parse_angular(s: &str) -> Result<(usize, usize), String> {
    let (u, v) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected UxV, got '{s}'"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad angular size '{s}': {e}"));
    let (u, v) = (parse(u)?, parse(v)?);
    if u == 0 || v == 0 {
        return Err(format!("angular size must be positive, got '{s}'"));
    }
    Ok((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn angular_sizes() {
        assert_eq!(parse_angular("7x7"), Ok((7, 7)));
        assert_eq!(parse_angular("3X5"), Ok((3, 5)));
        assert!(parse_angular("7").is_err());
        assert!(parse_angular("0x3").is_err());
    }
}
