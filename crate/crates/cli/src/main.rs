//! `stuperf`: config-driven experiment runner.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod commands;
mod config;
mod table;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{Config, Overrides};

#[derive(Parser, Debug)]
#[command(name = "stuperf", version, about = "Student-performance classification benchmark")]
struct Cli {
    /// Experiment config, TOML or JSON (by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream [default: 42].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores [default: 0].
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset CSV, overriding the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Class balance, feature tests and plot data.
    Eda,
    /// Grid search per family under k-fold CV.
    Tune,
    /// Evaluation protocols for every configured model and feature protocol.
    Evaluate,
    /// Kernel SHAP over the test fold of a stored run.
    Explain {
        /// Report stem written by `evaluate`, e.g. MLP_SF_CV10x10.
        #[arg(long)]
        run: Option<String>,
        /// Split index within that run.
        #[arg(long)]
        split: Option<usize>,
    },
    /// Re-render the accuracy and tuning tables from stored JSON.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Eda => "eda",
            Command::Tune => "tune",
            Command::Evaluate => "evaluate",
            Command::Explain { .. } => "explain",
            Command::Report => "report",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Display) -> Self {
        Failure::Usage(msg.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<stuperf::Error> for Failure {
    fn from(e: stuperf::Error) -> Self {
        match e {
            stuperf::Error::InvalidArgument(m) => Failure::Usage(m),
            e => Failure::Runtime(e.into()),
        }
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    command: &'a str,
    version: &'a str,
    started: String,
    finished: String,
    seed: u64,
    workers: usize,
    status: &'a str,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let over = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
        data: cli.data,
    };
    let mut cfg = Config::load(cli.config.as_deref(), &over)?;
    if let Command::Explain { run, split } = &cli.command {
        if let Some(r) = run {
            cfg.explain.run = r.clone();
        }
        if let Some(s) = split {
            cfg.explain.split = *s;
        }
    }
    cfg.validate()?;
    let name = cli.command.name();
    let started = chrono::Utc::now();
    let result = match cli.command {
        Command::Eda => commands::eda(&cfg),
        Command::Tune => commands::tune(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Explain { .. } => commands::explain(&cfg),
        Command::Report => commands::report(&cfg),
    };
    // Timestamps live only in this sidecar so the reports stay byte-identical.
    if std::fs::create_dir_all(&cfg.out).is_ok() {
        let sidecar = Sidecar {
            command: name,
            version: env!("CARGO_PKG_VERSION"),
            started: started.to_rfc3339(),
            finished: chrono::Utc::now().to_rfc3339(),
            seed: cfg.seed,
            workers: cfg.workers,
            status: if result.is_ok() { "ok" } else { "failed" },
        };
        if let Ok(text) = serde_json::to_string_pretty(&sidecar) {
            let _ = std::fs::write(cfg.out.join(format!("{name}.run.json")), text);
        }
    }
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
