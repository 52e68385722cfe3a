use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fescycle_cli::commands::{apply_steps, parse_grid, sweep_csv};
use fescycle_cli::{certify_config, pattern_csv, run_simulation, sweep, CliError, RunConfig, SweepParam};

#[derive(Parser)]
#[command(name = "fescycle", version, about = "Simulate and certify switched sliding-mode FES cycling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML). Defaults to the built-in default scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run for exactly N integration steps instead of the configured duration.
    #[arg(long, global = true)]
    steps: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop; writes trace.csv, schedule.csv, summary.txt.
    Simulate,
    /// Print the stability certificate; exit 4 if any condition fails.
    Certify,
    /// Certify and briefly simulate over a parameter grid.
    Sweep {
        /// epsilon, epsilon_fraction, cadence, gain, alpha, k1, k2, k3 or k4.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        grid: String,
    },
    /// Torque transfer ratios and region tags over the crank cycle.
    Pattern,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(&p.to_string_lossy())?,
        None => RunConfig::default_config(),
    };
    if let Some(n) = cli.steps {
        if n == 0 {
            return Err(CliError::Config("--steps must be positive".into()));
        }
        apply_steps(&mut cfg, n);
    }
    match cli.command {
        Command::Simulate => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
            let res = run_simulation(&cfg, Some(&out))?;
            stdout(&res.summary);
            Ok(())
        }
        Command::Certify => {
            let cert = certify_config(&cfg)?;
            let report = cert.render();
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("certificate.txt"), &report)?;
            }
            stdout(&report);
            match cert.first_failure {
                None if cert.certified => Ok(()),
                f => Err(CliError::Certification(f.unwrap_or_else(|| "no conditions evaluated".into()))),
            }
        }
        Command::Sweep { param, grid } => {
            let p: SweepParam = param.parse().map_err(CliError::Config)?;
            let grid = parse_grid(&grid)?;
            let csv = sweep_csv(p, &sweep(&cfg, p, &grid));
            emit(&cli.out, "sweep.csv", &csv)
        }
        Command::Pattern => {
            let csv = pattern_csv(&cfg)?;
            emit(&cli.out, "pattern.csv", &csv)
        }
    }
}

fn emit(out: &Option<PathBuf>, name: &str, text: &str) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), text)?;
        }
        None => stdout(text),
    }
    Ok(())
}

/// Prints to stdout, tolerating a closed pipe.
fn stdout(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fescycle: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
