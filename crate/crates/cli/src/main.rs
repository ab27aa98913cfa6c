use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use codistill_core::experiment::{self, report::GroupKey};
use codistill_core::nn::gradcheck;

/// Co-distillation federated learning experiments.
#[derive(Parser)]
#[command(name = "codistill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a sweep config and write the results table.
    Run {
        config: PathBuf,
        /// Suppress per-run progress lines.
        #[arg(short, long)]
        quiet: bool,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Print a pivot of a results file.
    Report {
        results: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "strategy,skew")]
        group_by: Vec<GroupKey>,
    },
    /// Check backpropagation against finite differences on random tiny networks.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn run(config: PathBuf, quiet: bool) -> Result<ExitCode> {
    let plan = experiment::parse_config(&config).with_context(|| format!("reading {}", config.display()))?;
    let total = plan.run_count();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let (outcome, path) = experiment::run_and_emit(&plan, |row, secs| {
        let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
        if !quiet {
            let k = row.key;
            let acc = row.mean_accuracy.map_or("-".to_string(), |a| format!("{:.4}", a));
            eprintln!(
                "[{n}/{total}] {} clients={} skew={} images={} seed={}: {} acc={acc} ({secs:.1}s)",
                k.strategy, k.clients, k.skew, k.images_per_class, k.seed, row.status
            );
        }
    })?;
    let failures = outcome.table.failures();
    println!("wrote {} rows to {}", outcome.table.rows.len(), path.display());
    if failures > 0 {
        eprintln!("{failures} run(s) failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, quiet } => run(config, quiet),
        Command::Validate { config } => experiment::parse_config(&config)
            .map(|plan| {
                println!(
                    "ok: {} runs ({} strategies × {} client counts × {} skews × {} budgets × {} seeds), output {}",
                    plan.run_count(),
                    plan.strategies.len(),
                    plan.clients.len(),
                    plan.skews.len(),
                    plan.images_per_class.len(),
                    plan.seeds.len(),
                    plan.resolved_output().display()
                );
                ExitCode::SUCCESS
            })
            .with_context(|| format!("invalid config {}", config.display())),
        Command::Report { results, group_by } => experiment::read_results(&results)
            .and_then(|t| experiment::pivot(&t, &group_by))
            .map(|text| {
                print!("{text}");
                ExitCode::SUCCESS
            })
            .with_context(|| format!("reporting {}", results.display())),
        Command::Gradcheck {
            configs,
            seed,
            eps,
            tolerance,
        } => gradcheck_cmd(configs, seed, eps, tolerance),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn gradcheck_cmd(configs: usize, seed: u64, eps: f64, tolerance: f64) -> Result<ExitCode> {
    if configs == 0 {
        bail!("--configs must be at least 1");
    }
    let outcomes = gradcheck::run_suite(configs, seed, eps)?;
    let mut worst: f64 = 0.0;
    for o in &outcomes {
        let d = o.descriptor;
        println!(
            "widths {:?} fc {} batch {}: {} parameters, max rel err {:.3e} ({})",
            d.conv_widths, d.fc_width, o.batch, o.parameters, o.max_rel_err, o.worst_param
        );
        worst = worst.max(o.max_rel_err);
    }
    if worst < tolerance {
        println!("PASS: max rel err {worst:.3e} < {tolerance:e}");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL: max rel err {worst:.3e} >= {tolerance:e}");
        Ok(ExitCode::FAILURE)
    }
}
