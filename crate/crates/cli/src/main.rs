//! `echoview`: synthetic data generation, VAE pretraining, classifier
//! training, evaluation and reporting.
//!
//! Exit codes: 0 success, 1 configuration, 2 data, 3 training, 4 evaluation.
//! Failures print one JSON line on stderr:
//! `{"error":"training","exit_code":3,"message":"..."}`.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use echoview::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "echoview", version, about = "Multi-view VAE pretraining and classification pipeline")]
pub struct Cli {
    /// Run configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root for run directories; overrides `output_dir` from the config.
    #[arg(long, global = true, env = "ECHOVIEW_OUTPUT_ROOT")]
    pub output_root: Option<PathBuf>,

    /// Run seed; replaces the configured seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Comma-separated views used for classification, e.g. `A4C,PSAX-P`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub views: Option<Vec<String>>,

    /// `binary` or `severity`.
    #[arg(long, global = true)]
    pub task: Option<String>,

    /// `independent`, `mmvm` or `supervised-baseline`.
    #[arg(long, global = true)]
    pub mode: Option<String>,

    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_effective_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-view dataset.
    Synth {
        /// Dataset directory (defaults to `data_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain per-view VAEs on the development partition.
    Pretrain {
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Train a classifier on pretrained (or fresh, for the baseline) encoders.
    Train {
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Score every classifier of a run on the held-out partition.
    Eval {
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Merge the metrics of several runs into one table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for the merged metrics files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full seed/cell evaluation grid.
    Protocol {
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 1,
        ErrorKind::Data => 2,
        ErrorKind::Training => 3,
        ErrorKind::Evaluation => 4,
    }
}

fn fail(kind: ErrorKind, message: &str) -> ExitCode {
    let name = match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Training => "training",
        ErrorKind::Evaluation => "evaluation",
    };
    let code = exit_code(kind);
    eprintln!(
        "{}",
        serde_json::json!({ "error": name, "exit_code": code, "message": message })
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(ErrorKind::Config, e.to_string().lines().next().unwrap_or("bad arguments")),
    };
    match run::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<echoview::Error>())
                .map_or(ErrorKind::Config, echoview::Error::kind);
            fail(kind, &format!("{e:#}"))
        }
    }
}
