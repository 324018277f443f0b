use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actuator::FaultDescriptor;
use crate::fdi::NoiseBound;
use crate::plant::{load_case_params, LoadCaseId, PlantConfig};
use crate::sprc::SprcConfig;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Collective setpoint only.
    Baseline,
    /// Adaptive repetitive control without fault-triggered switching.
    SprcOnly,
    /// Repetitive control warm-started from the pretuned bank on isolation.
    Proposed,
    /// Fault present from the first sample; used to fill the bank.
    OfflineTune,
}

impl Mode {
    pub fn uses_sprc(self) -> bool {
        !matches!(self, Mode::Baseline)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::SprcOnly => "sprc_only",
            Mode::Proposed => "proposed",
            Mode::OfflineTune => "offline_tune",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "sprc_only" => Ok(Mode::SprcOnly),
            "proposed" => Ok(Mode::Proposed),
            "offline_tune" => Ok(Mode::OfflineTune),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// How the configured pitch-noise figure is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInterpretation {
    /// The figure is a variance in deg².
    Variance,
    /// The figure is a standard deviation in degrees.
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchNoiseConfig {
    pub level: f64,
    pub interpretation: NoiseInterpretation,
    pub enabled: bool,
}

impl Default for PitchNoiseConfig {
    fn default() -> Self {
        PitchNoiseConfig { level: 1.5, interpretation: NoiseInterpretation::Variance, enabled: true }
    }
}

impl PitchNoiseConfig {
    /// Standard deviation of the pitch measurement noise, degrees.
    pub fn std_dev(&self) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        match self.interpretation {
            NoiseInterpretation::Variance => self.level.sqrt(),
            NoiseInterpretation::StdDev => self.level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorConfig {
    /// Natural frequency, rad/s.
    pub omega: f64,
    pub damping: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        ActuatorConfig { omega: 6.28, damping: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdiConfig {
    /// Radius of the observer error poles.
    pub pole_radius: f64,
    /// Threshold rate `δ = ρ + fraction·(1 − ρ)`.
    pub margin_fraction: f64,
    /// Output-noise bound in pitch-noise standard deviations.
    pub eta_y_sigmas: f64,
    /// Optional piecewise-constant output-noise bound `[[start_sample, bound], …]`;
    /// overrides `eta_y_sigmas`.
    pub eta_y_schedule: Option<Vec<(u64, f64)>>,
    pub eta_x: f64,
    /// Bound on the initial estimation error, degrees.
    pub eps_x0: f64,
    /// Consecutive samples above threshold needed to confirm a crossing.
    pub confirm: u32,
}

impl Default for FdiConfig {
    fn default() -> Self {
        FdiConfig { pole_radius: 0.95, margin_fraction: 0.5, eta_y_sigmas: 4.0, eta_y_schedule: None, eta_x: 0.0, eps_x0: 1.0, confirm: 10 }
    }
}

impl FdiConfig {
    pub fn noise_bound(&self, pitch_std: f64) -> NoiseBound {
        match &self.eta_y_schedule {
            Some(s) => NoiseBound::Schedule(s.clone()),
            None => NoiseBound::Constant(self.eta_y_sigmas * pitch_std),
        }
    }
}

/// Parameters of the metrics computed from a time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Length of the comparison window at the end of the run, seconds.
    pub comparison_window: f64,
    /// Rotor periods after the decision excluded from convergence checks.
    pub settle_periods: usize,
    /// Relative θ increment below which a period counts as converged.
    pub convergence_eps: f64,
    /// Lower bound on ‖θ‖ in the relative test, degrees.
    pub convergence_floor: f64,
    /// Consecutive converged periods required.
    pub consecutive: usize,
    /// Welch segment length in rotor periods.
    pub psd_segment_periods: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { comparison_window: 200.0, settle_periods: 2, convergence_eps: 0.01, convergence_floor: 0.1, consecutive: 10, psd_segment_periods: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    /// Relative θ increment that ends offline tuning.
    pub convergence_eps: f64,
    pub consecutive: usize,
    /// Give up after this many rotor periods.
    pub max_periods: usize,
    pub seed: u64,
    /// Directory holding bank files.
    pub bank_dir: PathBuf,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig { convergence_eps: 0.005, consecutive: 10, max_periods: 600, seed: 7, bank_dir: PathBuf::from("bank") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// CSV time series.
    pub series: Option<PathBuf>,
    /// Structured report (JSON).
    pub report: Option<PathBuf>,
}

/// Fault as written in the configuration; unset fields take the load case's
/// stuck angle and the configured fault time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub blade: usize,
    pub stuck_angle: Option<f64>,
    pub onset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub load_case: LoadCaseId,
    pub seed: u64,
    /// Sample time, s.
    pub ts: f64,
    /// Simulated time, s.
    pub duration: f64,
    /// Fault time, s.
    pub fault_time: f64,
    /// Rotor revolution time, s; must equal `ts · sprc.period`.
    pub rotor_period: f64,
    pub fault: Option<FaultSpec>,
    pub plant: PlantConfig,
    pub actuator: ActuatorConfig,
    pub pitch_noise: PitchNoiseConfig,
    pub fdi: FdiConfig,
    pub sprc: SprcConfig,
    pub metrics: MetricsConfig,
    pub tune: TuneConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Proposed,
            load_case: LoadCaseId::LC3,
            seed: 1,
            ts: 0.01,
            duration: 1400.0,
            fault_time: 900.0,
            rotor_period: 6.25,
            fault: Some(FaultSpec { blade: 3, stuck_angle: None, onset: None }),
            plant: PlantConfig::default(),
            actuator: ActuatorConfig::default(),
            pitch_noise: PitchNoiseConfig::default(),
            fdi: FdiConfig::default(),
            sprc: SprcConfig::default(),
            metrics: MetricsConfig::default(),
            tune: TuneConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, Error> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn total_samples(&self) -> u64 {
        (self.duration / self.ts).round() as u64
    }

    pub fn fault_sample(&self) -> u64 {
        (self.fault_time / self.ts).round() as u64
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.ts > 0.0) {
            return bad(format!("sample time must be positive, got {}", self.ts));
        }
        if !(self.fault_time >= 0.0 && self.fault_time < self.duration) {
            return bad(format!("fault time {} must lie in [0, duration = {})", self.fault_time, self.duration));
        }
        if (self.sprc.period as f64 * self.ts - self.rotor_period).abs() > 1e-9 * self.rotor_period.max(1.0) {
            return bad(format!("rotor period {} s does not equal {} samples of {} s", self.rotor_period, self.sprc.period, self.ts));
        }
        self.sprc.validate()?;
        if !(self.pitch_noise.level >= 0.0) {
            return bad("pitch noise level must be nonnegative".into());
        }
        if !(self.metrics.comparison_window > 0.0 && self.metrics.comparison_window <= self.duration) {
            return bad("comparison window must be positive and no longer than the run".into());
        }
        if self.metrics.consecutive == 0 || self.tune.consecutive == 0 {
            return bad("consecutive-period counts must be positive".into());
        }
        if let Some(f) = self.resolved_fault() {
            f.validate()?;
        }
        Ok(())
    }

    /// Fault with defaults filled in; offline tuning injects it at sample 0.
    pub fn resolved_fault(&self) -> Option<FaultDescriptor> {
        let spec = self.fault?;
        let lc = load_case_params(self.load_case);
        let onset = match self.mode {
            Mode::OfflineTune => 0,
            _ => spec.onset.unwrap_or_else(|| self.fault_sample()),
        };
        Some(FaultDescriptor { blade: spec.blade, stuck_angle: spec.stuck_angle.unwrap_or(lc.stuck_angle), onset })
    }

    /// Hash of everything that shapes a pretuned bank entry: plant,
    /// actuator, noise, estimator and controller settings, tuning settings
    /// and the stuck angle. Seeds, modes, run lengths and output paths are
    /// excluded so one bank serves every online run.
    pub fn config_hash(&self, stuck_angle: f64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            ts: f64,
            rotor_period: f64,
            plant: &'a PlantConfig,
            actuator: &'a ActuatorConfig,
            pitch_noise: &'a PitchNoiseConfig,
            fdi: &'a FdiConfig,
            sprc: &'a SprcConfig,
            tune_eps: f64,
            tune_consecutive: usize,
            tune_max: usize,
            tune_seed: u64,
            stuck_angle: f64,
        }
        let key = Key {
            ts: self.ts,
            rotor_period: self.rotor_period,
            plant: &self.plant,
            actuator: &self.actuator,
            pitch_noise: &self.pitch_noise,
            fdi: &self.fdi,
            sprc: &self.sprc,
            tune_eps: self.tune.convergence_eps,
            tune_consecutive: self.tune.consecutive,
            tune_max: self.tune.max_periods,
            tune_seed: self.tune.seed,
            stuck_angle,
        };
        let text = serde_json::to_string(&key).expect("configuration serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_protocol_constants() {
        let c = RunConfig::default();
        assert_eq!((c.ts, c.duration, c.fault_time), (0.01, 1400.0, 900.0));
        assert_eq!(c.sprc.forgetting, 0.99999);
        assert_eq!(c.sprc.prbs.amplitude, 3.0);
        assert_eq!(c.pitch_noise.level, 1.5);
        assert_eq!(c.sprc.period, 625);
        assert_eq!(c.fault_sample(), 90_000);
        assert_eq!(c.total_samples(), 140_000);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = RunConfig::from_toml_str("mode = \"baseline\"\nload_case = \"LC1\"\nseed = 4\n[fault]\nblade = 2\n").unwrap();
        assert_eq!(c.mode, Mode::Baseline);
        let f = c.resolved_fault().unwrap();
        assert_eq!((f.blade, f.stuck_angle, f.onset), (2, 20.0, 90_000));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(RunConfig::from_toml_str("fault_time = 2000.0").is_err());
        assert!(RunConfig::from_toml_str("ts = 0.02").is_err());
        assert!(RunConfig::from_toml_str("[fault]\nblade = 4").is_err());
        assert!(RunConfig::from_toml_str("unknown_key = 1").is_err());
    }

    #[test]
    fn noise_interpretations() {
        let mut n = PitchNoiseConfig::default();
        assert!((n.std_dev() - 1.5f64.sqrt()).abs() < 1e-15);
        n.interpretation = NoiseInterpretation::StdDev;
        assert_eq!(n.std_dev(), 1.5);
    }

    #[test]
    fn hash_ignores_seed_but_not_plant() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 99;
        b.mode = Mode::SprcOnly;
        assert_eq!(a.config_hash(10.0), b.config_hash(10.0));
        b.plant.dc_gain = -100.0;
        assert_ne!(a.config_hash(10.0), b.config_hash(10.0));
        assert_ne!(a.config_hash(10.0), a.config_hash(11.0));
    }
}
