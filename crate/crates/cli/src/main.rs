//! `fairgen`: command-line entry point for corpus building, generation,
//! attribute inference, audits, balancing and human annotation.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairgen_core::labels::PerceivedAxis;
use fairgen_core::report::ReportFormat;

#[derive(Debug, Parser)]
#[command(name = "fairgen", version, about = "Fairness audits for text-to-image models")]
pub struct Cli {
    /// Pipeline config (TOML, or JSON by extension).
    #[arg(long, global = true, env = "FAIRGEN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides every seed a command uses (corpus sampling, job seeds, subsets, task samples).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use deterministic offline stand-ins instead of the configured services.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and inspect prompt corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Plan and execute generation jobs.
    #[command(subcommand)]
    Jobs(JobsCmd),
    /// Ask the VQA model about generated images.
    #[command(subcommand)]
    Infer(InferCmd),
    /// Disparate-impact audits and classifier validation.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Select a subset with a target group composition.
    Balance(BalanceArgs),
    /// Human labeling of generated images.
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Render a stored report.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Run every stage end to end.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Expand or sample a corpus spec into prompt records.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append LLM paraphrases of every template record.
    Paraphrase {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        variants: u32,
        #[arg(long)]
        out: PathBuf,
        /// Where to write records that produced no paraphrase.
        #[arg(long)]
        failures: Option<PathBuf>,
    },
    /// Per-axis histograms of a corpus.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum JobsCmd {
    /// One job per (prompt, seed).
    Plan {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute pending jobs; done jobs are never re-run.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model_tag: Option<String>,
        /// Records of done jobs.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        limits: Limits,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Limits {
    #[arg(long)]
    pub max_parallel: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum InferCmd {
    /// Predict one axis for every image in a generation record file.
    Run {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        axis: PerceivedAxis,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the model tag stamped on the images.
        #[arg(long)]
        model_tag: Option<String>,
        #[command(flatten)]
        limits: Limits,
    },
}

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    /// Marginals, disparate impact and optional improvement over a baseline.
    Audit {
        /// Prediction files; repeat once per axis.
        #[arg(long, required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Format printed to stdout.
        #[arg(long, default_value = "text")]
        format: ReportFormat,
    },
    /// Agreement of predictions with human labels.
    Accuracy {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        axis: PerceivedAxis,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    BestEffort,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub axis: PerceivedAxis,
    /// `uniform`, `only-<label>`, or a JSON file `{"axis", "target"}`.
    #[arg(long, default_value = "uniform")]
    pub target: String,
    /// Defaults to the smallest stratum times the number of groups for `uniform`.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCmd {
    /// Uniform sample of images to label.
    Sample {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        n: usize,
        /// Axes to label; both when omitted.
        #[arg(long)]
        axis: Vec<PerceivedAxis>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the labeling API and UI bundle.
    Serve {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        journal: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Write the current labels as a labels file.
    Export {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        journal: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    Render {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Corpus, jobs, generation, inference and report; completed stages are reused.
    Run {
        #[arg(long)]
        tau: Option<f64>,
        /// corpus, jobs, generation, inference or report.
        #[arg(long, value_parser = commands::parse_stage)]
        stop_after: Option<fairgen_core::pipeline::Stage>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    commands::dispatch(cli)
}
