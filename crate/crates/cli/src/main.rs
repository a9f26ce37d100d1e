mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "radar", version, about = "Draft-tree speculative sampling with a learned stopping policy")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output path; its meaning depends on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Config override such as `draft.t_max=6`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SyntheticKind {
    /// Deterministic chains separated by unpredictable tokens.
    Chain,
    /// Random sparse target with an n-gram draft fitted to its samples.
    Random,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a smoothed n-gram model to a corpus and save it as JSON.
    MakeModel {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Write a synthetic target, draft, corpora and config to a directory.
    MakeSynthetic {
        #[arg(long, value_enum, default_value_t = SyntheticKind::Chain)]
        kind: SyntheticKind,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        doc_len: Option<usize>,
        #[arg(long)]
        eval_docs: Option<usize>,
        #[arg(long)]
        eval_len: Option<usize>,
    },
    /// Build the offline stopping dataset from a corpus.
    BuildDataset,
    /// Train the stopping policy on the offline dataset.
    Train,
    /// Generate from a prompt with the policy or a fixed depth.
    Generate {
        /// Whitespace-separated token ids.
        #[arg(long)]
        prompt: String,
        /// Draft exactly this many calls per cycle instead of using the policy.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Compare the policy against fixed-depth baselines on the eval corpus.
    Bench {
        /// Skip the policy even when a checkpoint is configured.
        #[arg(long)]
        no_policy: bool,
    },
    /// Run the statistical and gradient oracle suites.
    VerifyOracles,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RADAR_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind, "message": e.message });
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}
