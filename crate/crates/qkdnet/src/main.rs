use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qkdnet::sweep::{self, SweepSpec};
use qkdnet::{cmd_run, cmd_validate, Error, RunConfig};
use qkdnet_core::sim::TraceLevel;

/// Trusted-relay QKD network simulator.
#[derive(Parser)]
#[command(name = "qkdnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceArg {
    None,
    Circuit,
    Frame,
}

impl From<TraceArg> for TraceLevel {
    fn from(t: TraceArg) -> TraceLevel {
        match t {
            TraceArg::None => TraceLevel::None,
            TraceArg::Circuit => TraceLevel::Circuit,
            TraceArg::Frame => TraceLevel::Frame,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics.json (and trace.jsonl when tracing).
    Run(RunArgs),
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario once per parameter value and seed; writes sweep.csv.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Defaults to the scenario's config.trace.
    #[arg(long, value_enum)]
    trace: Option<TraceArg>,
    /// Key-store sample period in seconds.
    #[arg(long)]
    sample_interval: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// `link.<id>.<field>`, `links.<field>` or a dotted path such as `config.admission_factor`.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, conflicts_with = "range", required_unless_present = "range")]
    values: Option<String>,
    /// `start:stop:step`, inclusive.
    #[arg(long)]
    range: Option<String>,
    /// Comma-separated seeds; seed 0 when empty.
    #[arg(long, default_value = "")]
    seeds: String,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(a) => {
            let cfg = RunConfig {
                scenario: a.scenario,
                out: a.out,
                seed: a.seed,
                trace: a.trace.map(Into::into),
                sample_interval: a.sample_interval,
            };
            let outcome = cmd_run(&cfg)?;
            let n = &outcome.metrics.network;
            println!(
                "ran {} s: {} circuits admitted, {} rejected, {} reroutes; wrote {}",
                outcome.metrics.duration,
                n.admitted,
                n.rejected.len(),
                n.reroutes,
                cfg.out.join("metrics.json").display()
            );
        }
        Command::Validate { scenario } => {
            for w in cmd_validate(&scenario)? {
                println!("warning: {}: {}", w.path, w.message);
            }
            println!("OK");
        }
        Command::Sweep(a) => {
            let values = match (&a.values, &a.range) {
                (Some(v), _) => sweep::parse_values(v)?,
                (None, Some(r)) => sweep::parse_range(r)?,
                (None, None) => unreachable!("clap requires one"),
            };
            let spec = SweepSpec { param: a.param, values, seeds: sweep::parse_seeds(&a.seeds)? };
            let rows = sweep::cmd_sweep(&a.scenario, &spec, &a.out)?;
            println!("{} runs; wrote {}", rows.len(), a.out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Bad arguments are input errors; 2 is reserved for I/O failures.
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
