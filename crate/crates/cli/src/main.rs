mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use agentgeo_core::engine::CitationMode;
use agentgeo_core::pipeline::EvalSplit;
use agentgeo_core::querygen::BenchVariant;

use crate::config::AppConfig;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: anyhow::anyhow!(msg.into()),
        }
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_DATA,
            error: error.into(),
        }
    }
}

pub fn error_code(e: &agentgeo_core::Error) -> u8 {
    use agentgeo_core::Error as E;
    match e {
        E::Stage { source, .. } => error_code(source),
        E::Transport(_) | E::UnmatchedPrompt { .. } => EXIT_TRANSPORT,
        E::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

impl From<agentgeo_core::Error> for Failure {
    fn from(e: agentgeo_core::Error) -> Self {
        Failure {
            code: error_code(&e),
            error: e.into(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "agentgeo",
    version,
    about = "Diagnose and repair webpages so generative engines cite them"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset JSON.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Scripted transcript; runs offline.
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// Cache directory for model responses.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Worker threads (default: logical CPUs; 1 is fully sequential).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Log filter, e.g. `warn` or `agentgeo_core=debug`.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Disable trajectory memory (no masks, no escalation).
    #[arg(long)]
    pub no_memory: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// in-context or attr-first.
    #[arg(long)]
    pub citation_mode: Option<CitationMode>,
    /// Use only the first n training queries per page.
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Queries to evaluate: train, test or all.
    #[arg(long)]
    pub eval_split: Option<EvalSplit>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate queries for webpages and write a dataset.
    BuildBench {
        /// Where to write the dataset.
        #[arg(long)]
        output: PathBuf,
        /// standard, ood or html.
        #[arg(long)]
        variant: Option<BenchVariant>,
        #[arg(long)]
        target_queries: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated page ids to build queries for (default: all).
        #[arg(long, value_delimiter = ',')]
        pages: Option<Vec<String>>,
    },
    /// Optimize every page with queries and write the run record.
    Optimize {
        #[command(flatten)]
        run: RunArgs,
        /// Run id (default: derived from the clock).
        #[arg(long)]
        run_id: Option<String>,
        /// Comma-separated page ids.
        #[arg(long, value_delimiter = ',')]
        pages: Option<Vec<String>>,
        /// Evaluate the original pages only.
        #[arg(long)]
        vanilla: bool,
    },
    /// Run the generative engine on one query.
    Simulate {
        #[arg(long)]
        query: String,
        /// Replace the target page's HTML with this file.
        #[arg(long)]
        html: Option<PathBuf>,
        #[arg(long)]
        citation_mode: Option<CitationMode>,
    },
    /// Explain why a page is not cited for one query.
    Diagnose {
        #[arg(long)]
        query: String,
        #[arg(long)]
        html: Option<PathBuf>,
    },
    /// Recompute metrics for a finished run.
    Evaluate {
        /// run.json or its directory.
        #[arg(long)]
        run: PathBuf,
        /// Directory holding the optimized pages (default: `<out>/optimized`).
        #[arg(long)]
        optimized_dir: Option<PathBuf>,
    },
    /// Topic, length and failure breakdowns of a run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn resolve_config(global: &GlobalArgs) -> Result<AppConfig, Failure> {
    let mut cfg = match &global.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(d) = &global.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &global.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = &global.transcript {
        cfg.transcript = Some(t.clone());
    }
    if let Some(c) = &global.cache_dir {
        cfg.cache_dir = Some(c.clone());
    }
    if let Some(n) = global.threads {
        cfg.threads = Some(n);
    }
    if let Some(l) = &global.log_level {
        cfg.log_level = l.clone();
    }
    Ok(cfg)
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .or_else(|_| tracing_subscriber::EnvFilter::try_new(level))
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = resolve_config(&cli.global).and_then(|cfg| {
        init_logging(&cfg.log_level);
        commands::dispatch(cli.command, &cfg, cli.global.json)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
