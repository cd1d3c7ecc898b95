//! `bifluid`: run, sweep and validate two-fluid Stokes scenarios.

use bifluid_core::closure;
use bifluid_core::lagrangian::{self, LagrangianState, WindowConfig};
use bifluid_core::scenario::{self, SweepAxis};
use bifluid_core::{Error, ModelParams};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bifluid", version, about = "Compressible two-fluid semi-stationary Stokes simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Overrides `run.output_dir`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run one scenario per value of a single axis.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Parse and validate a configuration without running it.
    Validate { config: PathBuf },
    /// Print reference values used by the test fixtures.
    Oracle { which: OracleKind },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Closure,
    Twomarker,
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("BIFLUID_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::config("BIFLUID_THREADS", format!("not a thread count: `{v}`")))?;
        if n == 0 {
            return Err(Error::config("BIFLUID_THREADS", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("BIFLUID_THREADS", e.to_string()))?;
    }
    Ok(())
}

fn oracle_closure() -> Result<(), Error> {
    let half = ModelParams::new_test_only(1.5, 3.0, 1.0, 1.0, 1.0, f64::INFINITY)?;
    println!("gamma,R,Q,Z");
    for &(r, q) in &[(1.0, 1.0), (0.5, 2.0), (2.0, 0.5), (0.0, 1.0), (1.0, 0.0), (10.0, 3.0)] {
        println!("{},{r},{q},{:.17e}", half.gamma, closure::solve_z(r, q, &half)?);
    }
    let linear = ModelParams::new_test_only(2.0, 2.0, 1.0, 1.0, 1.0, f64::INFINITY)?;
    for &(r, q) in &[(1.0, 1.0), (0.25, 3.0)] {
        println!("{},{r},{q},{:.17e}", linear.gamma, closure::solve_z(r, q, &linear)?);
    }
    Ok(())
}

fn oracle_twomarker() -> Result<(), Error> {
    let p = ModelParams::new(1.5, 3.0, 1.0, 1.0, 1.0, 10.0)?;
    let s0 = LagrangianState::new(vec![1.0, 2.0], vec![1.0, 1.0], &p)?;
    let run = lagrangian::run(&s0, 0.1, &[], &p, &WindowConfig::default())?;
    let end = run.outputs.last().expect("run has a final state");
    println!("marker,r,q,z,cum_sigma");
    for i in 0..2 {
        println!(
            "{i},{:.17e},{:.17e},{:.17e},{:.17e}",
            end.r[i], end.q[i], end.z[i], end.cum_sigma[i]
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, output } => {
            let mut cfg = scenario::parse_config(&config)?;
            if let Some(o) = output {
                cfg.run.output_dir = o;
            }
            scenario::execute(&cfg)?;
            println!("wrote {}", cfg.run.output_dir.display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            output,
        } => {
            let mut cfg = scenario::parse_config(&config)?;
            if let Some(o) = output {
                cfg.run.output_dir = o;
            }
            let axis = SweepAxis::parse(&axis)?;
            let rows = scenario::sweep(&cfg, axis, &values)?;
            println!("wrote {} sweep entries under {}", rows.len(), cfg.run.output_dir.display());
        }
        Command::Validate { config } => {
            let cfg = scenario::parse_config(&config)?;
            println!(
                "ok: d={} n={} t_final={} dt={} mode={:?}",
                cfg.grid.d, cfg.grid.n, cfg.time.t_final, cfg.time.dt, cfg.run.mode
            );
        }
        Command::Oracle { which } => match which {
            OracleKind::Closure => oracle_closure()?,
            OracleKind::Twomarker => oracle_twomarker()?,
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
