mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "otsd", version, about = "Open-target stance detection harness")]
pub struct Cli {
    /// TOML config file. Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Response cache (JSON lines). Defaults to `<output_dir>/cache.jsonl`.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArgs {
    /// Normalized dataset CSV (`id,text,target,stance`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Dataset tag: tse, vast, ezstance or any custom name.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a single-target CSV, classify explicitness and write the normalized form.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "id")]
        id_col: String,
        #[arg(long, default_value = "text")]
        text_col: String,
        #[arg(long, default_value = "target")]
        target_col: String,
        #[arg(long, default_value = "stance")]
        stance_col: String,
    },
    /// Collapse raw VAST rows to one target per original topic.
    ConvertVast {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// ori-topic or text-and-ori-topic.
        #[arg(long, default_value = "ori-topic")]
        grouping: String,
    },
    /// Collapse EZSTANCE rows to one target per text.
    ConvertEzstance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write explicit and non-explicit strata as separate files.
    Split {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Generate targets and stances for every configured model.
    Run {
        #[command(flatten)]
        data: DatasetArgs,
        /// TG+SD, TG&SD or both.
        #[arg(long, default_value = "both")]
        approach: String,
        /// Restrict to these model ids.
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Compute SS, SC and (with a classifier) BTSD for run directories.
    Score {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
    },
    /// Draw a stance-balanced sample for human evaluation.
    SampleHuman {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        explicit: Option<usize>,
        #[arg(long)]
        non_explicit: Option<usize>,
    },
    /// Build anonymized annotation tasks and the sealed key.
    ExportTasks {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Sampled dataset from `sample-human`.
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        repetition: Option<u32>,
    },
    /// Serve the annotation API (and optional static UI).
    ServeAnnotation {
        #[arg(long)]
        bundle: PathBuf,
        /// Annotation CSV store, created if missing.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Merge an annotation CSV into the store (idempotent).
    ImportAnnotations {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Bundle to validate sample/slot pairs against.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Krippendorff's alpha and Fleiss' kappa per configuration.
    Agreement {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        /// interval, ordinal or nominal.
        #[arg(long, default_value = "interval")]
        distance: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// BTSD on tweet-only, gold and perturbed targets.
    CalibrateBtsd {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Results grid, HE distribution and correlations.
    Report {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, requires_all = ["key", "sampled"])]
        annotations: Option<PathBuf>,
        #[arg(long)]
        key: Option<PathBuf>,
        /// Sampled dataset the annotations refer to.
        #[arg(long)]
        sampled: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
