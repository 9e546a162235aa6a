use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use w2s_core::dataset::{write_corpus, Corpus};
use w2s_core::pipeline::{
    default_config_toml, emit_artifacts, emit_auroc_report, emit_report, load_report, pgr, run_auroc_matrix_auto,
    run_w2sg_auto, CorpusSource, ExperimentConfig, Method, TaskSelector,
};

/// Selective weak-to-strong generalization laboratory.
#[derive(Parser)]
#[command(name = "w2s", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print (or write) the commented default configuration.
    Config {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the synthetic corpus of a configuration as JSON lines.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed whose corpus draw is written.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the weak-to-strong protocol and write report files.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides W2S_OUTPUT_DIR and the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds replacing the configured ones.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated methods replacing the configured ones.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Also write metrics logs, smoothing dumps and weak labels.
        #[arg(long)]
        artifacts: bool,
    },
    /// Train P(IK)-only models per task and write the AUROC matrix.
    AurocMatrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Task selectors (`tag` or `tag:lo-hi`); defaults to the config.
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Re-render a saved report.json; optionally rewrite its CSV tables.
    Report {
        path: PathBuf,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// PGR of three accuracies (weak, weak-to-strong, ceiling).
    Pgr {
        #[arg(allow_negative_numbers = true)]
        weak: f64,
        #[arg(allow_negative_numbers = true)]
        w2s: f64,
        #[arg(allow_negative_numbers = true)]
        ceiling: f64,
    },
}

const OUTPUT_ENV: &str = "W2S_OUTPUT_DIR";

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(ExperimentConfig::standard_suite()),
    }
}

fn output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| config.output_dir.clone())
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { out } => {
            let text = default_config_toml();
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
        Command::GenData { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            let CorpusSource::Synthetic(_) = &cfg.corpus else {
                bail!("gen-data needs a synthetic corpus source");
            };
            let corpus: Corpus<f64> = w2s_core::pipeline::load_source(&cfg.corpus, seed)?;
            write_corpus(&corpus, &out)?;
            println!("wrote {} samples to {}", corpus.len(), out.display());
        }
        Command::Run {
            config,
            out,
            seeds,
            methods,
            artifacts,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(m) = methods {
                cfg.methods = m.iter().map(|s| s.parse::<Method>()).collect::<Result<_, _>>()?;
            }
            let dir = output_dir(out, &cfg);
            let (report, extra) = run_w2sg_auto(&cfg)?;
            print!("{}", report.render_table());
            list(&emit_report(&report, &dir)?);
            if artifacts {
                list(&emit_artifacts(&extra, &dir)?);
            }
            if !report.failures.is_empty() {
                bail!("{} of {} seeds failed", report.failures.len(), cfg.seeds.len());
            }
        }
        Command::AurocMatrix {
            config,
            out,
            tasks,
            seeds,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let tasks = tasks.unwrap_or_else(|| cfg.auroc.tasks.clone());
            let selectors = tasks.iter().map(|t| t.parse::<TaskSelector>()).collect::<Result<Vec<_>, _>>()?;
            let report = run_auroc_matrix_auto(&cfg, &selectors)?;
            print!("{}", report.render_table());
            list(&emit_auroc_report(&report, output_dir(out, &cfg))?);
        }
        Command::Report { path, emit } => {
            let report = load_report(&path)?;
            print!("{}", report.render_table());
            if let Some(dir) = emit {
                list(&emit_report(&report, dir)?);
            }
        }
        Command::Pgr { weak, w2s, ceiling } => {
            let v = pgr(weak, w2s, ceiling)?;
            println!("{v:.6} ({:.2}%)", v * 100.0);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
