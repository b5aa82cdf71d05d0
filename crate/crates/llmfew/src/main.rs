//! Experiment CLI.
//!
//! Subcommands: `validate-data` (parse + reference statistics check),
//! `train` (one config), `sweep` (hyperparameter grid), `ablate` (all four
//! variants from one base config), `report` (aggregate results to
//! CSV/markdown). Exit code 0 only when every run succeeded.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use llmfew::data::{
    check_against_reference, dataset_stats, load_dataset_dir, reference_for, UEA_REFERENCE,
};
use llmfew::error::Error;
use llmfew::experiment::{
    aggregate, config_hash, format_aggregate_markdown, read_results, run_experiment, sweep,
    write_aggregate_csv, ExperimentConfig, Grid, KShot, RunResult, RunStatus, DATA_ROOT_ENV,
    DEFAULT_DATA_ROOT,
};
use llmfew::model::VariantKind;

#[derive(Parser)]
#[command(
    name = "llmfew",
    about = "Few-shot multivariate time series classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigOverrides {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Dataset root directory (falls back to $LLMFEW_DATA_ROOT, then ./data)
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Output directory for results and checkpoints
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list, e.g. 0,1,2
    #[arg(long)]
    seeds: Option<String>,
    /// Shots per class, or `full`
    #[arg(long)]
    k: Option<String>,
    /// Model variant: full|no_ptcenc|frozen|no_llm
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse local UEA datasets and compare their statistics against the
    /// published reference table
    ValidateData {
        /// Dataset root directory
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Datasets to check (defaults to the ten benchmark datasets)
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<String>,
    },
    /// Run one experiment config
    Train {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Expand a hyperparameter grid over a base config
    Sweep {
        #[command(flatten)]
        overrides: ConfigOverrides,
        /// Grid file (JSON map: field -> list of values)
        #[arg(long)]
        grid: PathBuf,
    },
    /// Run all four variants from one base config
    Ablate {
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Aggregate result files into a CSV and markdown table
    Report {
        /// results.jsonl files (or their parent directories)
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        /// Where to write report.csv / report.md
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::ValidateData { data_root, datasets } => validate_data(data_root, datasets),
        Command::Train { overrides } => {
            let cfg = load_config(&overrides)?;
            let results = run_experiment(&cfg)?;
            print_results(&results);
            print_aggregate(&results);
            Ok(exit_for(&results))
        }
        Command::Sweep { overrides, grid } => {
            let cfg = load_config(&overrides)?;
            let text = std::fs::read_to_string(&grid).map_err(|e| Error::io(&grid, e))?;
            let grid: Grid = serde_json::from_str(&text)?;
            let results = sweep(&grid, &cfg)?;
            print_results(&results);
            print_aggregate(&results);
            Ok(exit_for(&results))
        }
        Command::Ablate { overrides } => {
            let base = load_config(&overrides)?;
            let mut all = Vec::new();
            for variant in VariantKind::ALL {
                let mut cfg = base.clone();
                cfg.variant = variant;
                // the frozen and decoder-free variants carry no adapters
                if matches!(variant, VariantKind::Frozen | VariantKind::NoLlm) {
                    cfg.lora = None;
                }
                println!("== variant {variant} (config {})", config_hash(&cfg));
                all.extend(run_experiment(&cfg)?);
            }
            print_results(&all);
            print_aggregate(&all);
            Ok(exit_for(&all))
        }
        Command::Report { results, out } => {
            let mut all = Vec::new();
            for path in &results {
                let file = if path.is_dir() {
                    path.join("results.jsonl")
                } else {
                    path.clone()
                };
                all.extend(read_results(&file)?);
            }
            let (rows, warnings) = aggregate(&all);
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", format_aggregate_markdown(&rows));
            if let Some(out) = out {
                std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
                write_aggregate_csv(&rows, &out.join("report.csv"))?;
                std::fs::write(out.join("report.md"), format_aggregate_markdown(&rows))
                    .map_err(|e| Error::io(&out, e))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(overrides: &ConfigOverrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_file(&overrides.config)?;
    if let Some(root) = &overrides.data_root {
        cfg.data_root = Some(root.clone());
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seeds) = &overrides.seeds {
        cfg.seeds = seeds
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Argument(format!("bad seed {s:?}")))
            })
            .collect::<Result<Vec<u64>, Error>>()?;
    }
    if let Some(k) = &overrides.k {
        cfg.k = KShot::parse(k)?;
    }
    if let Some(variant) = &overrides.variant {
        cfg.variant = VariantKind::parse(variant)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_root(data_root: Option<PathBuf>) -> PathBuf {
    data_root
        .or_else(|| std::env::var(DATA_ROOT_ENV).ok().filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_ROOT))
}

fn validate_data(data_root: Option<PathBuf>, datasets: Vec<String>) -> Result<ExitCode, Error> {
    let root = resolve_root(data_root);
    let names: Vec<String> = if datasets.is_empty() {
        UEA_REFERENCE.iter().map(|i| i.name.to_string()).collect()
    } else {
        datasets
    };
    let mut mismatches = 0usize;
    let mut present = 0usize;
    for name in &names {
        if !dataset_present(&root, name) {
            println!("{name}: absent under {}", root.display());
            continue;
        }
        present += 1;
        let pair = load_dataset_dir(&root, name)?;
        let stats = dataset_stats(&pair);
        match reference_for(name) {
            Some(info) => {
                let problems = check_against_reference(&stats, info);
                if problems.is_empty() {
                    println!(
                        "{name}: ok (train {}, test {}, dims {}, length {}, classes {})",
                        stats.train_size,
                        stats.test_size,
                        stats.dims,
                        stats.length,
                        stats.num_classes
                    );
                } else {
                    mismatches += 1;
                    println!("{name}: MISMATCH — {}", problems.join("; "));
                }
            }
            None => println!(
                "{name}: no reference entry (train {}, test {}, dims {}, length {}, classes {})",
                stats.train_size, stats.test_size, stats.dims, stats.length, stats.num_classes
            ),
        }
    }
    println!("checked {present}/{} datasets, {mismatches} mismatches", names.len());
    Ok(if mismatches == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn dataset_present(root: &Path, name: &str) -> bool {
    root.join(name).join(format!("{name}_TRAIN.ts")).is_file()
        && root.join(name).join(format!("{name}_TEST.ts")).is_file()
}

fn print_results(results: &[RunResult]) {
    for r in results {
        match (r.status, r.accuracy) {
            (RunStatus::Ok, Some(acc)) => println!(
                "{} k={} {} seed={} accuracy={:.4} ({:.1}s)",
                r.dataset, r.k, r.variant, r.seed, acc, r.wall_seconds
            ),
            _ => println!(
                "{} k={} {} seed={} FAILED: {}",
                r.dataset,
                r.k,
                r.variant,
                r.seed,
                r.error.as_deref().unwrap_or("unknown error")
            ),
        }
    }
}

fn print_aggregate(results: &[RunResult]) {
    let (rows, warnings) = aggregate(results);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if !rows.is_empty() {
        print!("{}", format_aggregate_markdown(&rows));
    }
}

fn exit_for(results: &[RunResult]) -> ExitCode {
    if results.iter().all(|r| r.status == RunStatus::Ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
