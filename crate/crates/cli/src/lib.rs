//! `longtail` command-line frontend.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation or I/O fails,
//! 2 on usage errors (bad flags, unknown subcommand, missing seed).

mod commands;
pub mod config;
mod io;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::ToolConfig;

#[derive(Parser, Debug)]
#[command(
    name = "longtail",
    version,
    about = "Long-tail instance segmentation data and evaluation toolkit"
)]
pub struct Cli {
    /// TOML config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Category frequency buckets and their category/instance shares
    Stats(StatsArgs),
    /// Repeat factors and the sampling schedule for one epoch
    Rfs(RfsArgs),
    /// Bucket-balanced copy-paste onto one image
    Copypaste(CopyPasteArgs),
    /// Probabilistic four-image mosaic over an RFS schedule
    Mosaic(MosaicArgs),
    /// Seesaw loss utilities
    #[command(subcommand)]
    Seesaw(SeesawCommand),
    /// Exponential moving average over a sequence of flat checkpoints
    Ema(EmaArgs),
    /// Pick an epoch from an AP curve
    Select(SelectArgs),
    /// Mask or boundary AP of a results file
    Eval(EvalArgs),
    /// Map multi-view detections back and fuse them
    TtaFuse(TtaFuseArgs),
    /// Generate a synthetic Zipf long-tail dataset
    GenFixture(GenFixtureArgs),
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Annotation JSON
    #[arg(long)]
    pub annotations: PathBuf,
    /// Output JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RfsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Image-fraction threshold t
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Schedule JSON (stdout if omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-image CSV: image_id, repeat_factor, multiplicity
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CopyPasteArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory holding the images named by `file_name`
    #[arg(long)]
    pub images: PathBuf,
    /// Target image id
    #[arg(long)]
    pub image_id: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_instances: Option<usize>,
    /// Bucket weights as rare,common,frequent
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct MosaicArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of output samples
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Epoch of the RFS schedule used as the input pool
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    /// RFS threshold for the input pool
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub apply_prob: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum SeesawCommand {
    /// Loss and gradient for one sample
    Loss(SeesawLossArgs),
    /// Compare analytic gradients to finite differences on random cases
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct SeesawLossArgs {
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub logits: Vec<f64>,
    #[arg(long)]
    pub label: usize,
    /// Cumulative per-class positive counts
    #[arg(long, value_delimiter = ',', required = true)]
    pub counts: Vec<u64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct EmaArgs {
    /// Flat checkpoints in training order
    #[arg(long, num_args = 1.., required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// JSON array of {epoch, AP, APr, APc, APf}
    #[arg(long)]
    pub curve: PathBuf,
    /// max_ap, max_min_bucket, or weighted:r,c,f
    #[arg(long, default_value = "max_ap")]
    pub criterion: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MetricArg {
    Mask,
    Boundary,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth annotation JSON
    #[arg(long)]
    pub gt: PathBuf,
    /// Results JSON array
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Cap detections per category over the dataset
    #[arg(long)]
    pub fixed_ap: bool,
    #[arg(long)]
    pub max_per_img: Option<usize>,
    #[arg(long)]
    pub max_per_class: Option<usize>,
    /// Multiply scores by iou_pred before ranking
    #[arg(long)]
    pub rescore: bool,
    /// Report JSON (stdout if omitted)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TtaFuseArgs {
    /// Annotation JSON giving the original image extents
    #[arg(long)]
    pub annotations: PathBuf,
    /// JSON array of {"view": {"w", "h", "hflip"}, "results": [...]}
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub mask_vote: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenFixtureArgs {
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub zipf: Option<f64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset JSON
    #[arg(long, default_value = "fixture.json")]
    pub out: PathBuf,
    /// Ground-truth statistics JSON (defaults to `<out>.truth.json`)
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Also paint every image as PNG into this directory
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
}

/// An error that maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn init_threads() {
    if let Some(n) = std::env::var("LONGTAIL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_threads();
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}
