use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "spixel", version, about = "Superpixel segmentation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Run configuration shared by every subcommand.
#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration entry, e.g. `--set loss.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network on the training split of a manifest.
    Train(TrainArgs),
    /// Decode superpixels for one or more images.
    Infer(InferArgs),
    /// Score superpixels against ground truth for every manifest row.
    Eval(EvalArgs),
    /// Boundary-aware label tools.
    #[command(subcommand)]
    Bal(BalCommand),
    /// Tabulate the contrast sensitivity model.
    Csf(CsfArgs),
    /// Draw superpixel boundaries over an image.
    Viz(VizArgs),
    /// Generate a synthetic corpus with a manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Manifest CSV (image,label,split).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints, the loss log and the config snapshot.
    #[arg(long)]
    pub out: PathBuf,
    /// Start from this checkpoint instead of fresh weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Use every manifest row instead of only the train split.
    #[arg(long)]
    pub all_splits: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// The learned association network (needs --checkpoint).
    Net,
    /// The clustering baseline.
    Slic,
}

#[derive(Debug, Args, Clone)]
pub struct DecodeArgs {
    #[arg(long, value_enum, default_value = "net")]
    pub method: Method,
    /// Network checkpoint for `--method net`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Target superpixel count; sets the grid interval (or the SLIC seed count).
    #[arg(long)]
    pub spix_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Output directory; one `<stem>.png` plus `<stem>.json` per input.
    #[arg(long)]
    pub out: PathBuf,
    /// Input RGB PNGs.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for metrics.csv and per-image JSON reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Boundary tolerance in pixels.
    #[arg(long, default_value_t = spixel_core::metrics::DEFAULT_TOLERANCE)]
    pub tolerance: usize,
}

#[derive(Debug, Subcommand)]
pub enum BalCommand {
    /// Encode a label PNG into soft targets and an entropy heatmap.
    Encode(BalEncodeArgs),
}

#[derive(Debug, Args)]
pub struct BalEncodeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// 16-bit category id PNG.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CsfArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Highest frequency in cycles per degree.
    #[arg(long, default_value_t = 60.0)]
    pub max_f: f64,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub image: PathBuf,
    /// Superpixel id PNG written by `infer`.
    #[arg(long)]
    pub superpixels: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Boundary colour as R,G,B in 0..=255.
    #[arg(long, value_parser = parse_rgb, default_value = "255,0,0")]
    pub color: [u8; 3],
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of scenes.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    /// Fraction of scenes, taken from the end, assigned to the val split.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected R,G,B, got {s:?}"));
    }
    let mut out = [0u8; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}
