use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tarspot::detector::ClassicalStage;
use tarspot::metrics::Averaging;
use tarspot::{Split, SplitRatio};

#[derive(Debug, Parser)]
#[command(name = "tarspot", version, about = "Tar spot ground truthing, detection and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML settings file. Flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed for splits and overlay colors [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Abort on the first per-image error.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Log more; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Threshold-based instance masks plus a COCO manifest.
    Groundtruth(GroundtruthArgs),
    /// Run a detector, whole-image or tiled, and report severity.
    Detect(DetectArgs),
    /// Grid-search the two color thresholds against ground truth.
    Calibrate(CalibrateArgs),
    /// Compare predicted and ground-truth manifests.
    Eval(EvalArgs),
    /// Lay out a manifest and its images as per-split training folders.
    Export(ExportArgs),
    /// Assign a seeded train/val/test split to a manifest.
    Split(SplitArgs),
    /// Render instance overlays for a manifest.
    Overlay(OverlayArgs),
    /// Time detectors on images.
    Bench(BenchArgs),
    /// Render synthetic leaves with known spots.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default, Clone)]
pub struct ThresholdArgs {
    /// HSV value threshold; pixels at or below it are dark.
    #[arg(long, value_name = "V")]
    pub threshold_v: Option<f64>,
    /// CIELAB a* threshold; pixels at or above it are non-green.
    #[arg(long, value_name = "A", allow_hyphen_values = true)]
    pub threshold_a: Option<f64>,
    /// Drop instances smaller than this many pixels.
    #[arg(long)]
    pub min_area: Option<usize>,
    /// Rounds of opening then closing.
    #[arg(long)]
    pub morph_iterations: Option<u32>,
    /// Leaf tissue is any pixel with a* at or below this value.
    #[arg(long, value_name = "A", allow_hyphen_values = true)]
    pub leaf_a_max: Option<f64>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct TileArgs {
    /// Detect on overlapping windows and fuse their votes.
    #[arg(long)]
    pub tiled: bool,
    /// Window size.
    #[arg(long, value_name = "WxH", value_parser = parse_pair)]
    pub window: Option<(usize, usize)>,
    /// Window stride.
    #[arg(long, value_name = "XxY", value_parser = parse_pair)]
    pub stride: Option<(usize, usize)>,
    /// Minimum share of covering windows voting positive, in (0, 1].
    #[arg(long, value_name = "TAU")]
    pub vote_threshold: Option<f64>,
    /// Windows handed to the detector per call.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct DetectorArgs {
    /// `classical`, `classical:threshold-only` or `external:<command>`.
    #[arg(long, value_name = "SPEC", value_parser = parse_detector)]
    pub detector: Option<DetectorChoice>,
    /// Drop external detections scoring below this.
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Seconds before an external detector call is killed.
    #[arg(long, value_name = "SECS")]
    pub detector_timeout: Option<f64>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct MatchArgs {
    /// IoU needed for a predicted instance to match a true one.
    #[arg(long)]
    pub iou: Option<f64>,
    /// Pool counts over images (micro) or average per-image scores (macro).
    #[arg(long, value_parser = parse_averaging)]
    pub averaging: Option<Averaging>,
}

#[derive(Debug, Args)]
pub struct GroundtruthArgs {
    /// Image files, directories or glob patterns.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(short, long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    /// Skip writing overlay images.
    #[arg(long)]
    pub no_overlays: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(short, long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub tile: TileArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long)]
    pub no_overlays: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Ground-truth manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub truth: PathBuf,
    /// Directory holding the manifest's images [default: the manifest's directory].
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Only use images assigned to this split.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// V grid as start:stop:step.
    #[arg(long, value_name = "RANGE", default_value = "0.10:0.50:0.05")]
    pub grid_v: String,
    /// a* grid as start:stop:step.
    #[arg(long, value_name = "RANGE", default_value = "-10:10:2.5", allow_hyphen_values = true)]
    pub grid_a: String,
    #[arg(short, long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub matching: MatchArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "MANIFEST")]
    pub pred: PathBuf,
    #[arg(long, value_name = "MANIFEST")]
    pub truth: PathBuf,
    /// Only score ground-truth images in this split; other predictions are ignored.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Write the full report here.
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub matching: MatchArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(short, long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: PathBuf,
    /// Split weights, e.g. test:4,val:1.
    #[arg(long, default_value = "test:4,val:1", value_parser = parse_ratio)]
    pub ratio: SplitRatio,
    /// Reassign images that already carry a split.
    #[arg(long)]
    pub force: bool,
    #[arg(short, long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long, value_name = "MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    #[arg(short, long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(required = true)]
    pub inputs: Vec<String>,
    /// Detector to time; repeat for one row each [default: classical].
    #[arg(long = "detector", value_name = "SPEC", value_parser = parse_detector)]
    pub detectors: Vec<DetectorChoice>,
    /// Timed runs per image.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub tile: TileArgs,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long, value_name = "SECS")]
    pub detector_timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 6000)]
    pub width: usize,
    #[arg(long, default_value_t = 4000)]
    pub height: usize,
    /// Spots per image as MIN:MAX.
    #[arg(long, value_name = "MIN:MAX", default_value = "0:150", value_parser = parse_usize_range)]
    pub spots: (usize, usize),
    /// Ellipse semi-axes in pixels as MIN:MAX.
    #[arg(long, value_name = "MIN:MAX", default_value = "5:20", value_parser = parse_f64_range)]
    pub radius: (f64, f64),
    /// Minimum clear distance between spots.
    #[arg(long, default_value_t = 6.0)]
    pub min_gap: f64,
    /// Share of dark rather than brown spots.
    #[arg(long, default_value_t = 0.7)]
    pub dark_fraction: f64,
    /// Leaf band margin as a fraction of the height; omit to fill the frame.
    #[arg(long)]
    pub strip_margin: Option<f64>,
    /// Generator V threshold.
    #[arg(long, default_value_t = 0.30)]
    pub gen_v: f64,
    /// Generator a* threshold.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gen_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorChoice {
    Classical(ClassicalStage),
    External(String),
}

impl DetectorChoice {
    pub fn label(&self) -> String {
        match self {
            DetectorChoice::Classical(ClassicalStage::Full) => "classical".into(),
            DetectorChoice::Classical(ClassicalStage::ThresholdOnly) => {
                "classical:threshold-only".into()
            }
            DetectorChoice::External(cmd) => format!("external:{cmd}"),
        }
    }
}

pub fn parse_detector(s: &str) -> Result<DetectorChoice, String> {
    match s {
        "classical" | "classical:full" => Ok(DetectorChoice::Classical(ClassicalStage::Full)),
        "classical:threshold-only" => Ok(DetectorChoice::Classical(ClassicalStage::ThresholdOnly)),
        _ => match s.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(DetectorChoice::External(cmd.to_string())),
            _ => Err(format!(
                "expected classical, classical:threshold-only or external:<command>, got {s:?}"
            )),
        },
    }
}

pub fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_usize_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_f64_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected MIN:MAX, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

/// `start:stop:step`, inclusive of `stop` when the steps land on it.
pub fn parse_range(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, c] = parts[..] else {
        return Err(format!("expected start:stop:step, got {s:?}"));
    };
    let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(a)?, parse(b)?, parse(c)?))
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: tarspot::Error| e.to_string())
}

fn parse_ratio(s: &str) -> Result<SplitRatio, String> {
    s.parse().map_err(|e: tarspot::Error| e.to_string())
}

fn parse_averaging(s: &str) -> Result<Averaging, String> {
    match s {
        "micro" => Ok(Averaging::Micro),
        "macro" => Ok(Averaging::Macro),
        _ => Err(format!("expected micro or macro, got {s:?}")),
    }
}
