use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use risfuse_cli::{emit_results, run, Experiment, ExperimentConfig, OutputFormat};

/// Monte Carlo experiments for decision fusion over a RIS-assisted
/// massive-MIMO channel.
#[derive(Debug, Parser)]
#[command(name = "risfuse", version)]
struct Args {
    /// Experiment to run (overrides the config file).
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// JSON configuration; unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// H0 calibration trials per point.
    #[arg(long)]
    trials_h0: Option<usize>,
    /// H1 trials per point (also the held-out H0 count unless configured).
    #[arg(long)]
    trials_h1: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve(args: &Args) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = args.experiment {
        config.experiment = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.trials_h0 {
        config.trials.h0 = n;
    }
    if let Some(n) = args.trials_h1 {
        config.trials.h1 = n;
    }
    if let Some(p) = &args.out {
        config.output = Some(p.clone());
    }
    if let Some(f) = args.format {
        config.format = f;
    }
    config.validate()?;
    Ok(config)
}

fn main_inner(args: Args) -> anyhow::Result<()> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let config = resolve(&args)?;
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(());
    }
    let started = std::time::Instant::now();
    let table = run(&config)?;
    let written = emit_results(&table, &config, config.output.as_deref(), config.format)?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    for row in &table.rows {
        let at = format!("{} ({}) at {} = {:?}", row.rule, row.ris_mode, row.sweep_name, row.sweep_value);
        if let Some(reason) = &row.skipped {
            eprintln!("skipped {at}: {reason}");
        }
        if row.calibration_undersampled == Some(true) {
            eprintln!("warning: {at}: fewer than 10/P_F0 calibration trials for target {:?}", row.pf0_target);
        }
        if row.numerical_failures.is_some_and(|n| n > 0) {
            eprintln!("warning: {at}: {} channel draws failed numerically", row.numerical_failures.unwrap_or(0));
        }
    }
    eprintln!("{} finished in {:.1} s", config.experiment, started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": {
                    "message": e.to_string(),
                    "chain": e.chain().skip(1).map(ToString::to_string).collect::<Vec<_>>(),
                }
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
