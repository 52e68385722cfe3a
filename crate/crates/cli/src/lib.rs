//! Command-line front end: configuration files, simulation runs,
//! certification reports, parameter sweeps and stimulation patterns.

pub mod commands;
pub mod config;

use thiserror::Error;

use fescycle::simulator::SimulationError;

pub use commands::{certify_config, pattern_csv, run_simulation, sweep, SweepParam, SweepRow};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_CERTIFICATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Simulation(SimulationError),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Simulation(SimulationError::InvalidScenario(_) | SimulationError::Model(_)) => EXIT_CONFIG,
            CliError::Simulation(_) => EXIT_SIMULATION,
            CliError::Certification(_) => EXIT_CERTIFICATION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
