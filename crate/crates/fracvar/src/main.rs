//! Command-line entry point.
//!
//! Loads a strict JSON run configuration, applies flag overrides, prints a
//! run header with the sampled coefficient bounds, dispatches the task, and
//! exits 0 only when every invoked check passes. Module errors exit 2 with
//! a structured JSON record on stderr. Log verbosity comes from the
//! FRACVAR_LOG environment variable.

use std::path::PathBuf;

use clap::Parser;

use fracvar::config::{load_config, Task};
use fracvar::error::Result;
use fracvar::report;
use fracvar::runner;

/// Fractional-derivative operators and a certified Galerkin solver.
#[derive(Parser)]
#[command(name = "fracvar", version, about)]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Override the configured task.
    #[arg(long, value_enum)]
    task: Option<Task>,

    /// Output directory for artifacts; defaults to the config "out" field
    /// or the working directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<bool> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(task) = cli.task {
        cfg.task = task;
        cfg.validate_task_requirements()?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out_dir = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    println!(
        "run: task={} d={} alpha={} n={} a0={:.6e} p0={:.6e} seed={}",
        cfg.task.name(),
        cfg.d,
        cfg.alpha.value(),
        cfg.n,
        cfg.a0,
        cfg.p0,
        cfg.seed
    );

    let outcome = runner::run(&cfg, &out_dir)?;
    for check in &outcome.checks {
        println!(
            "check {}: {} ({})",
            check.name,
            if check.pass { "pass" } else { "fail" },
            check.detail
        );
    }
    for artifact in &outcome.artifacts {
        println!("wrote {}", out_dir.join(artifact).display());
    }
    println!("result: {}", if outcome.pass { "pass" } else { "fail" });
    Ok(outcome.pass)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FRACVAR_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("{}", report::error_record(&e));
            2
        }
    };
    std::process::exit(code);
}
