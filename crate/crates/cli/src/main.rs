//! `adbench` command-line front end.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adbench::ad_eval::AdLevel;
use adbench::datagen::{generate_dataset, Recipe};
use adbench::pipeline::{cmd_run, write_report_tables, RunConfig, RunOverrides};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adbench", version, about = "Explainable anomaly detection benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset from a recipe.
    Generate {
        /// Recipe JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for traces and ground truth.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the recipe's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run detection and explanation from a run config.
    Run {
        /// Run config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write CSV tables and curve files for a finished run.
    Report {
        /// Run directory.
        #[arg(long, required_unless_present = "config")]
        out: Option<PathBuf>,
        /// Run config whose output directory is reported.
        #[arg(long, conflicts_with = "out")]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Domain(adbench::Error),
}

impl From<adbench::Error> for Failure {
    fn from(e: adbench::Error) -> Self {
        Failure::Domain(e)
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} not found", path.display())))
    }
}

fn check_workers(workers: Option<usize>) -> Result<(), Failure> {
    match workers {
        Some(0) => Err(Failure::Usage("--workers must be at least 1".into())),
        _ => Ok(()),
    }
}

fn generate(config: &Path, out: &Path, seed: Option<u64>, workers: Option<usize>) -> Result<(), Failure> {
    require_file(config, "recipe")?;
    check_workers(workers)?;
    let mut recipe = Recipe::load(config)?;
    if let Some(s) = seed {
        recipe.generator.seed = s;
    }
    let summary = match rayon_pool(workers) {
        Some(pool) => pool.install(|| generate_dataset(&recipe, out)),
        None => generate_dataset(&recipe, out),
    }?;
    println!(
        "wrote {} traces ({} disturbed) to {}",
        summary.traces,
        summary.disturbed_traces,
        out.display()
    );
    for (t, n) in &summary.counts {
        println!("  {t}: {n}");
    }
    Ok(())
}

fn rayon_pool(workers: Option<usize>) -> Option<rayon::ThreadPool> {
    let w = workers?;
    rayon::ThreadPoolBuilder::new().num_threads(w).build().ok()
}

fn run(config: &Path, overrides: RunOverrides) -> Result<(), Failure> {
    require_file(config, "config")?;
    check_workers(overrides.workers)?;
    let s = cmd_run(config, &overrides)?;
    println!("run finished: {}", s.output_dir.display());
    println!(
        "  M = {}, alpha = {:.4}, P1 = {:.3}s, P2 = {:.3}s over {} records",
        s.perf.m_features, s.perf.alpha, s.perf.p1_fit_seconds, s.perf.p2_scoring_seconds, s.perf.p2_records
    );
    for level in AdLevel::ALL {
        if let Some(a) = s.ad.auprc_at(level) {
            let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
            println!(
                "  {level} AUPRC global {} app {} trace {}",
                fmt(a.global),
                fmt(a.app),
                fmt(a.trace)
            );
        }
    }
    for l in &s.ad.median_of_rules {
        println!(
            "  {} median over rules: P {:.3} R {:.3} F {:.3}",
            l.level, l.precision, l.recall, l.f_score
        );
    }
    if let Some(ed) = &s.ed {
        println!(
            "  {}: {} anomalies explained ({} unexplained), P3 = {}",
            ed.explainer,
            ed.average.n_anomalies - ed.average.n_unexplained,
            ed.average.n_unexplained,
            s.perf
                .p3_explanation_seconds
                .map_or("-".to_string(), |v| format!("{v:.4}s"))
        );
    }
    Ok(())
}

fn report(out: Option<PathBuf>, config: Option<PathBuf>) -> Result<(), Failure> {
    let dir = match (out, config) {
        (Some(o), _) => o,
        (None, Some(c)) => {
            require_file(&c, "config")?;
            RunConfig::load(&c)?.output_dir
        }
        (None, None) => return Err(Failure::Usage("give --out or --config".into())),
    };
    let s = write_report_tables(&dir)?;
    if s.ed_skipped {
        println!("no explanation results in {}; ED table skipped", dir.display());
    }
    for p in s.tables.iter().chain(&s.curves) {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            workers,
        } => generate(&config, &out, seed, workers),
        Command::Run {
            config,
            out,
            seed,
            workers,
        } => run(
            &config,
            RunOverrides {
                output_dir: out,
                seed,
                workers,
            },
        ),
        Command::Report { out, config } => report(out, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
