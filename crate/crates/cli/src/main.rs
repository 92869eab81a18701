mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Camera-trace erasing: training, anti-forensic baselines and forensic
/// evaluation.
#[derive(Parser, Debug)]
#[command(name = "siamte", version)]
struct Cli {
    /// Worker threads for per-image work; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic multi-camera corpus.
    SynthCorpus(SynthArgs),
    /// List a dataset directory and write train/val/test manifests.
    Scan(ScanArgs),
    /// Train the camera-type classifier (on images, or on traces of an eraser).
    TrainClassifier(TrainClassifierArgs),
    /// Train the trace eraser with the hybrid loss.
    Train(TrainArgs),
    /// Erase camera trace from every image of a dataset.
    Erase(EraseArgs),
    /// Apply a baseline anti-forensic method (or the eraser) to a dataset.
    Attack(AttackArgs),
    /// Build per-camera fingerprints from averaged noise residuals.
    Fingerprint(FingerprintArgs),
    /// Fit the pristine model for NIQE.
    FitNiqe(FitNiqeArgs),
    /// Score one method on every available forensic task.
    Evaluate(EvaluateArgs),
    /// Write spatial and spectral renderings of an image's trace.
    Visualize(VisualizeArgs),
    /// Merge evaluation reports into a method-by-metric table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// TOML corpus description; defaults to four built-in profiles.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write camera-free renders (count from the config).
    #[arg(long)]
    pristine: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ScanArgs {
    #[arg(long)]
    root: PathBuf,
    /// Training config whose `[data]` section sets the split.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory or manifest; split with the config's `[data]` section.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train on traces `x - F(x)` of this eraser instead of on images.
    #[arg(long)]
    trace_eraser: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Frozen classifier checkpoint (also serves as the embedder).
    #[arg(long)]
    classifier: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EraseArgs {
    /// Dataset directory or manifest.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AttackArgs {
    /// mf3|mf5|gf3|gf5|cp30|cp40|cp50|ad1|ad2|siamte (any mfK, gfK, cpQ, adE).
    #[arg(long)]
    method: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Classifier attacked by adN.
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// Eraser checkpoint for `siamte`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FingerprintArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Center-crop size; defaults to the largest square common to the
    /// dataset, capped at 512.
    #[arg(long)]
    crop: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct FitNiqeArgs {
    /// Directory of pristine PNG/JPEG images (searched recursively).
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 96)]
    patch: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Row label in the report, e.g. `ori`, `mf5`, `siamte`.
    #[arg(long)]
    method: String,
    /// Unprocessed dataset (directory or manifest); defines labels.
    #[arg(long)]
    original: PathBuf,
    /// Processed copies laid out as `<dir>/<camera>/<stem>.png`; omit to
    /// score the originals.
    #[arg(long)]
    processed: Option<PathBuf>,
    #[arg(long)]
    classifier: Option<PathBuf>,
    /// Directory of `<camera>.fp` files.
    #[arg(long)]
    fingerprints: Option<PathBuf>,
    #[arg(long)]
    niqe_model: Option<PathBuf>,
    /// Eraser and trace classifier for trace-only identification.
    #[arg(long, requires = "trace_classifier")]
    eraser: Option<PathBuf>,
    #[arg(long, requires = "eraser")]
    trace_classifier: Option<PathBuf>,
    /// Classifier input size.
    #[arg(long, default_value_t = 96)]
    patch: usize,
    #[arg(long, default_value_t = 4)]
    crops: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of clusters; defaults to the number of camera types. 0 skips
    /// clustering.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long, default_value_t = 4)]
    cluster_patches: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = siamte::forensics::DEFAULT_EXCLUSION_RADIUS)]
    exclusion_radius: usize,
    /// Report file; `.json` (a CSV twin is written alongside) or `.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct VisualizeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Report files (JSON or long-format CSV).
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Table CSV.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use siamte::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config { .. } => 2,
                Error::MissingInput(_) => 3,
                Error::Numerical(_) => 4,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = siamte::parallel::with_jobs(cli.jobs, || commands::dispatch(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
