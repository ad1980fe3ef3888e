//! `bcmon`: run scenarios, sweep parameters, and evaluate the committee
//! fault-probability model.
//!
//! Exit codes: 0 on success, 1 when a run ends with invariant violations,
//! 2 on configuration or usage errors. Log verbosity comes from the
//! `BCMON_LOG` environment variable (`error`..`trace`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bcmon_core::harness::{run_scenario, run_sweep, Axis, Scenario};
use bcmon_core::ofbs::{fault_probability, fault_probability_exact, FaultModel};
use bcmon_core::{Bls12381Engine, ToyEngine};

#[derive(Parser)]
#[command(name = "bcmon", about = "BcMON middleware simulator", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Engine {
    /// Fast pairing stand-in over a prime field; same protocol surface.
    #[default]
    Toy,
    /// Real BLS12-381 pairings; slower but cryptographically sound.
    Bls,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and print its report.
    Run {
        scenario: PathBuf,
        /// Process actors with a thread pool; output is identical either way.
        #[arg(long)]
        parallel: bool,
        #[arg(long, value_enum, default_value_t = Engine::Toy)]
        engine: Engine,
    },
    /// Run a template scenario over a grid of axis values.
    Sweep {
        template: PathBuf,
        /// Axis as name=start,stop,step (inclusive); repeatable.
        /// Names: nodes, clients, transactions, payload.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long)]
        parallel: bool,
        #[arg(long, value_enum, default_value_t = Engine::Toy)]
        engine: Engine,
    },
    /// P[at least K malicious relays in a sample of T from N with F bad].
    Faultprob { n: u64, f: u64, t: u64, k: u64 },
}

fn parse_axis(spec: &str) -> Result<(Axis, Vec<u64>), String> {
    let (name, range) = spec
        .split_once('=')
        .ok_or_else(|| format!("axis {spec:?} is not name=start,stop,step"))?;
    let axis = Axis::parse(name).ok_or_else(|| format!("unknown axis {name:?}"))?;
    let nums: Vec<u64> = range
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("axis {spec:?}: {e}"))?;
    let (start, stop, step) = match nums[..] {
        [v] => (v, v, 1),
        [start, stop] => (start, stop, 1),
        [start, stop, step] if step > 0 => (start, stop, step),
        _ => return Err(format!("axis {spec:?} is not name=start,stop,step")),
    };
    let mut values: Vec<u64> = (start..=stop).step_by(step as usize).collect();
    if axis == Axis::Nodes {
        // Committee sizes must be 3f+1; drop the rest of the range.
        values.retain(|v| *v >= 4 && (*v - 1) % 3 == 0);
    }
    if values.is_empty() {
        return Err(format!("axis {spec:?} produced no usable values"));
    }
    Ok((axis, values))
}

fn cmd_run(scenario: &PathBuf, parallel: bool, engine: Engine) -> ExitCode {
    let scenario = match Scenario::from_file(scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match engine {
        Engine::Toy => run_scenario::<ToyEngine>(scenario, parallel),
        Engine::Bls => run_scenario::<Bls12381Engine>(scenario, parallel),
    };
    match report {
        Ok(report) => {
            print!("{}", report.text);
            if report.ok {
                log::info!("run ok");
                ExitCode::SUCCESS
            } else {
                log::error!("{} invariant violation(s)", report.violations.len());
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_sweep(template: &PathBuf, axes: &[String], parallel: bool, engine: Engine) -> ExitCode {
    let template = match Scenario::from_file(template) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut parsed = Vec::new();
    for spec in axes {
        match parse_axis(spec) {
            Ok(axis) => parsed.push(axis),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }
    let result = match engine {
        Engine::Toy => run_sweep::<ToyEngine>(&template, &parsed, parallel),
        Engine::Bls => run_sweep::<Bls12381Engine>(&template, &parsed, parallel),
    };
    match result {
        Ok(result) => {
            print!("{}", result.render());
            if result.points.iter().all(|p| p.ok) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_faultprob(n: u64, f: u64, t: u64, k: u64) -> ExitCode {
    let model = match FaultModel::new(n, f, t) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match (fault_probability_exact(&model, k), fault_probability(&model, k)) {
        (Ok(exact), Ok(float)) => {
            println!("faultprob n={n} f={f} t={t} k={k} exact={exact} p={float:.9}");
            ExitCode::SUCCESS
        }
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("BCMON_LOG")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, parallel, engine } => cmd_run(&scenario, parallel, engine),
        Command::Sweep { template, axes, parallel, engine } => {
            cmd_sweep(&template, &axes, parallel, engine)
        }
        Command::Faultprob { n, f, t, k } => cmd_faultprob(n, f, t, k),
    }
}
