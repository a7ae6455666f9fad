use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vcgmpc::harness::{self, Overrides};
use vcgmpc::scenario::{self, Horizon, Scenario};
use vcgmpc::{Error, Execution, GridSpec, Result};

/// MPC load-frequency control with VCG-style taxes.
#[derive(Parser, Debug)]
#[command(name = "vcgmpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-loop MPC (or LQR) under truthful reports.
    Simulate(Common),
    /// Truthful run plus counterfactuals, taxes and net costs.
    Mechanism(Common),
    /// Efficiency certificates and per-step MPC cost over a horizon list.
    Bounds(Common),
    /// Grid search for the best misreport of one agent, with taxes on and off.
    Misreport(Common),
    /// Two-case cost comparison with a discretization/length sensitivity table.
    ReproTables(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file; the bundled two-area benchmark when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for CSV and SVG artifacts.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// MPC horizon, or `infinite` for stationary LQR. For `bounds`, certifies
    /// this single horizon and fails with exit code 4 if gamma >= 1.
    #[arg(long, value_name = "N", value_parser = parse_horizon)]
    horizon: Option<Horizon>,
    /// Closed-loop steps.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Zero all taxes.
    #[arg(long)]
    no_tax: bool,
    /// Agent for `misreport`, 1-based.
    #[arg(long, value_name = "I", default_value_t = 1)]
    agent: usize,
    /// Seed for sampled initial states.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

fn parse_horizon(s: &str) -> std::result::Result<Horizon, String> {
    if s == "infinite" {
        return Ok(Horizon::Infinite);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("horizon must be >= 1".into()),
        Ok(t) => Ok(Horizon::Finite(t)),
        Err(_) => Err(format!("expected a positive integer or `infinite`, got `{s}`")),
    }
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        let mut s = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
                scenario::parse_scenario(&text)?
            }
            None => Scenario::two_area_table1(),
        };
        Overrides { horizon: self.horizon, steps: self.steps, no_tax: self.no_tax, seed: self.seed }.apply(&mut s)?;
        Ok(s)
    }
}

fn report_written(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = Execution::default();
    match cli.command {
        Command::Simulate(c) => {
            let r = harness::cmd_simulate(&c.scenario()?)?;
            print!("{}", r.summary());
            report_written(&harness::emit_artifacts(&r, &c.out)?);
        }
        Command::Mechanism(c) => {
            let r = harness::cmd_mechanism(&c.scenario()?, exec)?;
            print!("{}", r.summary());
            report_written(&harness::emit_artifacts(&r, &c.out)?);
        }
        Command::Bounds(c) => {
            let s = c.scenario()?;
            let horizons: Vec<usize> = match c.horizon {
                Some(Horizon::Finite(t)) => vec![t],
                Some(Horizon::Infinite) => {
                    return Err(Error::InvalidParameter {
                        name: "--horizon".into(),
                        reason: "certificates need a finite horizon".into(),
                    })
                }
                None => harness::DEFAULT_BOUND_HORIZONS.to_vec(),
            };
            let r = harness::cmd_bounds(&s, &horizons, exec)?;
            print!("{}", r.summary());
            report_written(&harness::emit_bounds(&r, &c.out)?);
            if c.horizon.is_some() {
                r.require_valid()?;
            }
        }
        Command::Misreport(c) => {
            let s = c.scenario()?;
            if c.agent == 0 {
                return Err(Error::InvalidParameter { name: "--agent".into(), reason: "agents are numbered from 1".into() });
            }
            let r = harness::cmd_misreport(&s, c.agent - 1, &GridSpec::default(), exec)?;
            print!("{}", r.summary());
            report_written(&harness::emit_misreport(&r, &c.out)?);
        }
        Command::ReproTables(c) => {
            let r = harness::cmd_repro_tables(&c.scenario()?, exec)?;
            print!("{}", r.summary());
            report_written(&harness::emit_repro(&r, &c.out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
