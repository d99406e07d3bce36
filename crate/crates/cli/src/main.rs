//! `swphm`: estimate how many more releases a system can ship before its
//! response time crosses a threshold.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Remaining-useful-life estimation for software releases.
#[derive(Debug, Parser)]
#[command(name = "swphm", version, about)]
pub struct Cli {
    /// Seed for every random choice (shuffles, k-means, simulation).
    #[arg(long, global = true, env = "SWPHM_SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Backlog items (JSON array or CSV).
    #[arg(long)]
    pub backlog: PathBuf,
    /// Release records with measured response times (JSON array or CSV).
    #[arg(long)]
    pub releases: PathBuf,
    /// Input format; guessed from the file extension when omitted.
    #[arg(long, value_enum)]
    pub input_format: Option<FileFormat>,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// JSON map overriding severity impact factors.
    #[arg(long)]
    pub impact_table: Option<PathBuf>,
    /// Classifier filling in missing severities.
    #[arg(long)]
    pub severity_model: Option<PathBuf>,
    /// Classifier filling in missing story points.
    #[arg(long)]
    pub story_points_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write the result here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Trained model from `swphm train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Plan file: horizon, items, optional allocation and env overrides.
    #[arg(long)]
    pub plan: PathBuf,
    /// Backlog to draw plan items from; defaults to the model's open backlog.
    #[arg(long)]
    pub backlog: Option<PathBuf>,
    /// Response-time threshold in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub threshold: f64,
    /// Also write the predicted trajectory as CSV.
    #[arg(long)]
    pub trajectory_csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a backlog and release file and write them back normalized.
    Ingest {
        #[command(flatten)]
        data: DatasetArgs,
        /// Directory for normalized backlog.json and releases.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Train or apply a naive Bayes text classifier.
    Classify {
        #[command(subcommand)]
        action: ClassifyAction,
    },
    /// Emit per-release PV and CPV.
    Weigh {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: FileFormat,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Group releases by the make-up of their items.
    Cluster {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Fixed number of clusters; chosen by silhouette when omitted.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = swphm_core::pipeline::DEFAULT_K_MAX)]
        k_max: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Fit the response-time regression and write the model.
    Train {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Where to write the trained model.
        #[arg(long)]
        model_out: PathBuf,
        /// Ratio of 32-bit to 64-bit response time.
        #[arg(long, conflicts_with = "os_pairs")]
        os_factor: Option<f64>,
        /// CSV of paired `rt32,rt64` measurements to estimate the OS factor from.
        #[arg(long)]
        os_pairs: Option<PathBuf>,
        #[arg(long)]
        clock_coefficient: Option<f64>,
        #[arg(long, default_value_t = swphm_core::regress::DEFAULT_TRAIN_FRACTION)]
        train_fraction: f64,
        #[arg(long, default_value_t = swphm_core::pipeline::DEFAULT_K_MAX)]
        k_max: usize,
        /// Fit a single regression even when releases cluster.
        #[arg(long)]
        no_cluster: bool,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Predict response time at a cumulative weight.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        cpv: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Remaining useful life of an explicit release plan.
    Rul {
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Search for the allocation with the longest remaining life.
    Plan {
        #[command(flatten)]
        plan: PlanArgs,
        /// Overrides the strategy named in the plan file.
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Move a response time to another clock speed or OS word size, or
    /// estimate the OS factor from paired runs.
    Adjust {
        /// Response time in milliseconds.
        #[arg(long, required_unless_present = "pairs")]
        rt: Option<f64>,
        #[arg(long, required_unless_present = "pairs")]
        from_ghz: Option<f64>,
        #[arg(long, required_unless_present = "pairs")]
        to_ghz: Option<f64>,
        #[arg(long, value_parser = ["32", "64"])]
        from_bits: Option<String>,
        #[arg(long, value_parser = ["32", "64"])]
        to_bits: Option<String>,
        #[arg(long)]
        os_factor: Option<f64>,
        #[arg(long)]
        clock_coefficient: Option<f64>,
        /// Take unset factors from this trained model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV of paired `rt32,rt64` measurements; prints the OS factor.
        #[arg(long, conflicts_with_all = ["rt", "from_ghz", "to_ghz"])]
        pairs: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Generate a synthetic dataset with known ground truth.
    Simulate {
        /// JSON simulator settings; defaults apply to anything omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Start the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory the session is persisted to and restored from.
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Browser origin allowed by CORS; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClassifyAction {
    /// Learn a label from item titles and descriptions.
    Train {
        /// Backlog whose labelled items form the training set.
        #[arg(long)]
        backlog: PathBuf,
        #[arg(long, value_enum)]
        label: LabelArg,
        /// Laplace smoothing strength.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Label every item of a backlog.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        backlog: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelArg {
    Kind,
    Severity,
    StoryPoints,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Exhaustive,
    Greedy,
}

/// Bad flag combinations that clap cannot express; exit like usage errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            println!("error_code=USAGE");
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(usage) = err.downcast_ref::<UsageError>() {
                println!("error_code=USAGE");
                eprintln!("error: {usage}");
                return ExitCode::from(2);
            }
            let code = err
                .chain()
                .find_map(|e| e.downcast_ref::<swphm_core::Error>())
                .map_or("ERROR", |e| e.code());
            println!("error_code={code}");
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
