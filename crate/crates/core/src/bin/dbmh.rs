//! `dbmh <experiment> --config <path> [--seed S] [--out DIR] [--workers K]`
//!
//! Exit status: 0 when every check passes, 1 when a threshold fails, 2 on
//! error, 3 when the run produced no checks at all.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dbmh::experiment::{parse_config, run, summarize, ExperimentKind, SummaryStatus};

#[derive(Parser, Debug)]
#[command(name = "dbmh", version, about = "Run a coupled Dyson Brownian motion experiment")]
struct Cli {
    /// One of: homog-residual, homog-scaling, pde-check, fsp-check,
    /// gap-coupling, mean-shift, regularity.
    experiment: String,
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for run output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to DBMH_WORKERS, then to all cores.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(SummaryStatus::Pass) => ExitCode::from(0),
        Ok(SummaryStatus::Fail) => ExitCode::from(1),
        Ok(SummaryStatus::NoData) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<SummaryStatus, Box<dyn std::error::Error>> {
    let kind: ExperimentKind = cli.experiment.parse()?;
    let mut cfg = parse_config(&cli.config)?;
    if cfg.experiment != kind {
        return Err(format!("config describes `{}` but `{kind}` was requested", cfg.experiment).into());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = Some(o.clone());
    }
    let workers = match cli.workers {
        Some(k) => Some(k),
        None => match std::env::var("DBMH_WORKERS") {
            Ok(v) => Some(v.parse().map_err(|_| format!("DBMH_WORKERS must be a positive integer, got `{v}`"))?),
            Err(_) => None,
        },
    };
    if workers == Some(0) {
        return Err("worker count must be positive".into());
    }
    let record = run(&cfg, workers)?;
    let summary = summarize(std::slice::from_ref(&record));
    print!("{}", summary.text);
    let header = format!("# config_hash={} seed={}\n", record.config_hash, record.seed);
    std::fs::write(record.output_dir.join("summary.csv"), header + &summary.csv)?;
    eprintln!("wrote {} in {:.1}s", record.output_dir.display(), record.wall_clock_s);
    Ok(summary.status)
}
