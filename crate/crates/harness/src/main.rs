use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use legged_harness::pipeline::{metrics_from_dir, write_outputs};
use legged_harness::{run, HarnessError, Mode, RunConfig};

#[derive(Parser)]
#[command(
    name = "legged-est",
    version,
    about = "Simulate a legged robot scenario and run the estimator on it"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario, run the estimator and write CSV logs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Contact threshold as a fraction of the weight.
        #[arg(long)]
        threshold: Option<f64>,
        /// Withhold a limb from the estimator (repeatable).
        #[arg(long = "hide-contact")]
        hide_contact: Vec<u32>,
        #[arg(long)]
        baseline: Option<Switch>,
        /// Log per-step wall time (makes the metrics log non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Recompute metrics from the logs of a run directory.
    Metrics { dir: PathBuf },
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            seed,
            dt,
            out,
            threshold,
            hide_contact,
            baseline,
            timing,
        } => {
            let mut cfg = RunConfig::load(&scenario)?;
            let e = &mut cfg.estimator;
            if let Some(m) = mode {
                e.mode = m;
            }
            if let Some(t) = threshold {
                e.threshold = t;
            }
            if !hide_contact.is_empty() {
                e.hide_contacts = hide_contact;
            }
            if let Some(b) = baseline {
                e.baseline = matches!(b, Switch::On);
            }
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            if let Some(dt) = dt {
                cfg.simulation.dt = dt;
            }
            let output = run(&cfg)?;
            let m = write_outputs(&out, &output, timing)?;
            print!("{}", m.summary());
            println!("logs written to {}", out.display());
        }
        Command::Metrics { dir } => {
            print!("{}", metrics_from_dir(&dir)?.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Io { .. } | HarnessError::Config { .. } | HarnessError::Invalid(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
