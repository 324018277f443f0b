//! Fault-tolerant individual pitch control for a three-bladed rotor:
//! observer-based pitch-actuator fault diagnosis feeding a subspace
//! predictive repetitive controller that is warm-started from a bank of
//! offline-tuned parameters once the stuck blade is isolated.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: QR-RLS, Riccati solver, ZOH discretization, spectra.
//! * [`plant`]: blade-load surrogate with a 1P disturbance.
//! * [`actuator`]: second-order pitch actuators and stuck-fault injection.
//! * [`fdi`]: estimator bank, adaptive thresholds and isolation logic.
//! * [`sprc`]: periodic-difference identification and the lifted 1P law.
//! * [`supervisor`]: pretuned parameter bank and online switching.
//! * [`harness`]: run configuration, simulation loop, metrics and I/O.

pub mod actuator;
pub mod fdi;
pub mod harness;
pub mod numerics;
pub mod plant;
pub mod sprc;
pub mod supervisor;

pub use actuator::{apply_pas_fault, ActuatorBank, FaultDescriptor};
pub use fdi::{FdDecision, Fdie, FdieBank};
pub use harness::{run_simulation, Mode, RunConfig, RunReport, TimeSeries};
pub use numerics::{NumericsError, StateSpaceModel};
pub use plant::{load_case_params, LoadCase, LoadCaseId, Plant, PlantConfig};
pub use sprc::{RepetitiveLaw, SprcConfig, SprcState};
pub use supervisor::{BankEntry, PretunedBank};

/// Number of blades (and pitch actuators) on the rotor.
pub const NUM_BLADES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("unknown load case {0:?}")]
    UnknownLoadCase(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("pretuned bank: {0}")]
    Bank(String),
    #[error("no pretuned entry for blade {0}")]
    MissingBankEntry(usize),
    #[error("no convergence after {periods} rotor periods (last relative increment {last_increment:.3e})")]
    NoConvergence { periods: usize, last_increment: f64 },
    #[error("baseline variance is zero")]
    ZeroBaselineVariance,
    #[error("time series: {0}")]
    Series(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
