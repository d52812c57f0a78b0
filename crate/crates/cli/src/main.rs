use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use htsid::speaker::BackendKind;
use htsid_cli::commands;
use htsid_cli::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "htsid",
    version,
    about = "Histogram-transform speaker identification"
)]
struct Cli {
    /// TOML configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract MFCC frames from `<corpus>/<speaker>/<utt>.wav` into the cache.
    Extract {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Fit one model per speaker and write a registry per backend.
    Train {
        #[arg(long = "backend", value_parser = parse_backend, default_value = "ht")]
        backends: Vec<BackendKind>,
        /// Feature directory (extraction cache or `.htfx` corpus).
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Rank enrolled speakers for one WAV or `.htfx` file; prints JSON.
    Identify {
        #[arg(long)]
        registry: PathBuf,
        input: PathBuf,
        /// Score only this many super-frames.
        #[arg(long = "frames")]
        frames: Option<usize>,
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Run the accuracy sweep and write JSON and CSV reports.
    Evaluate {
        /// Corpus of `.wav` or `.htfx` files; synthetic data when omitted
        /// and unset in the configuration.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Ignore any configured corpus and use synthetic data.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write every fitted model under this directory.
        #[arg(long)]
        save_models: Option<PathBuf>,
    },
    /// Write the configured synthetic corpus as `.htfx` files.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a JSON summary of a model or feature file.
    InspectModel { path: PathBuf },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: htsid::Error| e.to_string())
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match cli.command {
        Command::Extract { corpus, cache } => {
            let corpus = corpus
                .or_else(|| cfg.paths.corpus_root.clone())
                .context("no corpus: pass --corpus or set paths.corpus_root")?;
            let cache = cache.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            let s = commands::cmd_extract(&cfg, &corpus, &cache)?;
            println!(
                "{} written, {} up to date, {} failed; manifest {}",
                s.written,
                s.up_to_date,
                s.failures.len(),
                s.manifest.display()
            );
            for (path, msg) in &s.failures {
                eprintln!("failed: {}: {msg}", path.display());
            }
        }
        Command::Train {
            backends,
            features,
            models,
        } => {
            let features = features.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            let models = models.unwrap_or_else(|| cfg.paths.model_dir.clone());
            let mut backends = backends;
            backends.sort();
            backends.dedup();
            for r in commands::cmd_train(&cfg, &backends, &features, &models)? {
                println!("registry {}", r.display());
            }
        }
        Command::Identify {
            registry,
            input,
            frames,
            start,
        } => {
            print_json(&commands::cmd_identify(
                &cfg, &registry, &input, frames, start,
            )?)?;
        }
        Command::Evaluate {
            corpus,
            synthetic,
            report,
            save_models,
        } => {
            let corpus = if synthetic {
                None
            } else {
                corpus.or_else(|| cfg.paths.corpus_root.clone())
            };
            let report = report.unwrap_or_else(|| cfg.paths.report_path.clone());
            let r =
                commands::cmd_evaluate(&cfg, corpus.as_deref(), &report, save_models.as_deref())?;
            for s in &r.summaries {
                println!(
                    "{:<28} mean {:.4}  median {:.4}",
                    s.label, s.stats.mean, s.stats.median
                );
            }
            println!(
                "report {} and {}",
                report.display(),
                commands::csv_path(&report).display()
            );
        }
        Command::SynthCorpus { out } => {
            let c = commands::cmd_synth_corpus(&cfg, &out)?;
            println!("{} speakers written to {}", c.speakers.len(), out.display());
        }
        Command::InspectModel { path } => print_json(&commands::cmd_inspect(&path)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
