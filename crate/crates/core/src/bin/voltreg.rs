use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voltreg::harness::{self, Backend, Outputs, RunConfig};

#[derive(Parser)]
#[command(name = "voltreg", version, about = "Volt-VAR control with a learned grid surrogate")]
struct Cli {
    /// Run configuration (JSON). Defaults to the desk preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample operating points and solve them into a dataset.
    GenData,
    /// Fit the surrogate on the dataset and score it.
    TrainSurrogate,
    /// Train a DDPG agent.
    TrainAgent {
        #[arg(long, value_parser = ["surrogate", "truemodel"])]
        backend: String,
    },
    /// Evaluate no-control and both agents on the held-out days.
    Compare,
    /// Run the 60-second PV ramp.
    FastFluct,
    /// Solve one profile hour without control.
    Pf {
        #[arg(long, default_value_t = 0)]
        day: usize,
        #[arg(long, default_value_t = 12)]
        hour: usize,
    },
    /// Print the effective configuration.
    Config {
        /// Print the full-size preset instead of the desk one.
        #[arg(long)]
        paper: bool,
    },
}

fn print_outputs(o: &Outputs) {
    for (path, digest) in &o.files {
        println!("{digest}  {}", path.display());
    }
}

fn run(cli: Cli) -> voltreg::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    match cli.command {
        Command::GenData => {
            let s = harness::gen_data(&cfg)?;
            println!("attempted {} discarded {}", s.log.attempted, s.log.discarded);
            print_outputs(&s.outputs);
        }
        Command::TrainSurrogate => {
            let s = harness::train_surrogate(&cfg)?;
            println!("test mae {:.3e} max error {:.3e}", s.report.mae, s.report.max_error);
            print_outputs(&s.outputs);
        }
        Command::TrainAgent { backend } => {
            let s = harness::train_agent(&cfg, Backend::parse(&backend)?)?;
            let smooth = s.log.smoothed(100);
            println!(
                "episodes {} updates {} mean100 return {:.3} -> {:.3}",
                s.log.returns.len(),
                s.log.updates,
                smooth.first().copied().unwrap_or(f64::NAN),
                smooth.last().copied().unwrap_or(f64::NAN)
            );
            print_outputs(&s.outputs);
        }
        Command::Compare => {
            let s = harness::compare(&cfg)?;
            print!("{}", harness::format_table(&s.reports));
            print_outputs(&s.outputs);
        }
        Command::FastFluct => {
            let s = harness::fast_fluct(&cfg)?;
            for (m, _) in &s.traces {
                println!("{m:<11} in band {:5.1}%", 100.0 * s.in_band_fraction(m).unwrap_or(0.0));
            }
            println!("max decision latency {:?}", s.max_decision_latency);
            print_outputs(&s.outputs);
        }
        Command::Pf { day, hour } => {
            let s = harness::pf(&cfg, day, hour)?;
            println!("converged {} in {} iterations, residual {:.2e}", s.converged, s.iterations, s.residual);
            print_outputs(&s.outputs);
        }
        Command::Config { paper } => {
            let preset = if paper { RunConfig::paper() } else { cfg };
            println!("{}", serde_json::to_string_pretty(&preset).expect("config serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(2)
        }
    }
}
