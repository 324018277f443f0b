//! Closed-loop simulation, run configuration, recorded series and metrics.
//!
//! One sample of the loop:
//!
//! 1. apply a pending switch to pretuned parameters (proposed mode);
//! 2. compose `u_ref = setpoint + φ_k·θ + PRBS`;
//! 3. actuators produce the physical pitch, the fault acts on it;
//! 4. the plant produces blade loads;
//! 5. the estimator bank sees `u_ref` and the noisy measured pitch;
//! 6. the controller identifies from the physical pitch and the loads.

mod config;
mod report;
mod series;

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use config::{ActuatorConfig, FaultSpec, FdiConfig, MetricsConfig, Mode, NoiseInterpretation, OutputConfig, PitchNoiseConfig, RunConfig, TuneConfig};
pub use report::{
    convergence_time, healthy_blades, load_reduction_metrics, period_thetas, replay_crossings, variance, BladeStats, ComparisonReport, Convergence, ConvergenceSummary,
    CrossingReplay, DetectionSummary, LoadReduction, RunReport,
};
pub use series::{flags, SampleRow, SeriesMeta, TimeSeries, SERIES_FORMAT, SERIES_VERSION};

use crate::actuator::{ActuatorBank, FaultDescriptor};
use crate::fdi::{design_fdie, FdDecision, FdieBank, ThresholdBounds};
use crate::numerics::{discretize_second_order, StateSpaceModel};
use crate::plant::{load_case_params, LoadCase, Plant};
use crate::sprc::{Prbs, SprcEventKind, SprcState};
use crate::supervisor::{compose_pitch_command, on_detection, PretunedBank, SwitchOutcome};
use crate::{Error, NUM_BLADES};

/// Random streams derived from one seed.
const PLANT_STREAM: u64 = 1;
const PITCH_STREAM: u64 = 2;
const PRBS_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `‖b − a‖ / max(‖a‖, floor)`.
pub fn relative_theta_increment(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt();
    let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n.max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SwitchState {
    Idle,
    Pending,
    Done,
}

/// Full closed-loop state; cloning it forks a run.
#[derive(Debug, Clone)]
pub struct Simulation {
    mode: Mode,
    lc: LoadCase,
    plant: Plant,
    actuators: ActuatorBank,
    fdie: FdieBank,
    sprc: Option<SprcState>,
    prbs: Option<Prbs>,
    pitch_rng: ChaCha8Rng,
    pitch_noise: Option<Normal<f64>>,
    bank: Option<Arc<PretunedBank>>,
    switch: SwitchState,
    events_seen: usize,
    k: u64,
    end: u64,
    series: Option<TimeSeries>,
}

/// Actuator model shared by the actuators and the estimators.
pub fn actuator_model(cfg: &RunConfig) -> Result<StateSpaceModel, Error> {
    Ok(discretize_second_order(cfg.actuator.omega, cfg.actuator.damping, cfg.ts)?)
}

/// Estimator bank for the configured actuator, noise level and thresholds,
/// initialised at the rest state for `initial` degrees.
pub fn build_fdie_bank(cfg: &RunConfig, model: &StateSpaceModel, initial: f64) -> Result<FdieBank, Error> {
    let bounds = ThresholdBounds { eta_x: cfg.fdi.eta_x, eta_y: cfg.fdi.noise_bound(cfg.pitch_noise.std_dev()), eps_x0: cfg.fdi.eps_x0 };
    let rest = {
        let n = model.states();
        let m = nalgebra::DMatrix::<f64>::identity(n, n) - &model.A;
        let x = m.lu().solve(&model.B).ok_or_else(|| Error::Config("actuator model has a pole at 1".into()))?;
        DVector::from_column_slice(x.column(0).as_slice()) * initial
    };
    let estimators = (0..NUM_BLADES)
        .map(|_| design_fdie(model, cfg.fdi.pole_radius, cfg.fdi.margin_fraction, bounds.clone(), rest.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    FdieBank::new(estimators, cfg.fdi.confirm)
}

impl Simulation {
    /// Build the loop for `cfg`. In proposed mode, `bank` supplies the
    /// pretuned parameters; `record` keeps a row per sample.
    pub fn new(cfg: &RunConfig, bank: Option<Arc<PretunedBank>>, record: bool) -> Result<Self, Error> {
        cfg.validate()?;
        let lc = load_case_params(cfg.load_case);
        let fault = cfg.resolved_fault();
        let period = cfg.sprc.period;
        let plant = Plant::new(cfg.plant.clone(), lc, period, cfg.ts, stream(cfg.seed, PLANT_STREAM))?;
        let model = actuator_model(cfg)?;
        let setpoint = [lc.collective_setpoint; NUM_BLADES];
        let actuators = ActuatorBank::new(&model, setpoint, fault)?;
        let fdie = build_fdie_bank(cfg, &model, lc.collective_setpoint)?;
        let (sprc, prbs) = if cfg.mode.uses_sprc() {
            let mut s = SprcState::new(cfg.sprc.clone())?;
            if cfg.mode == Mode::OfflineTune {
                if let Some(f) = &fault {
                    s.freeze_blade(f.blade - 1);
                }
            }
            (Some(s), Some(Prbs::new(&cfg.sprc.prbs, cfg.ts, stream(cfg.seed, PRBS_STREAM))))
        } else {
            (None, None)
        };
        let sigma = cfg.pitch_noise.std_dev();
        let pitch_noise = if sigma > 0.0 { Some(Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?) } else { None };
        let series = record.then(|| {
            TimeSeries::new(SeriesMeta {
                mode: cfg.mode,
                load_case: cfg.load_case,
                seed: cfg.seed,
                ts: cfg.ts,
                period,
                fault_blade: fault.map(|f| f.blade).unwrap_or(0),
                stuck_angle: fault.map(|f| f.stuck_angle).unwrap_or(f64::NAN),
                fault_onset: fault.map(|f| f.onset).unwrap_or(u64::MAX),
                fault_sample: cfg.fault_sample(),
                confirm: cfg.fdi.confirm,
            })
        });
        Ok(Simulation {
            mode: cfg.mode,
            lc,
            plant,
            actuators,
            fdie,
            sprc,
            prbs,
            pitch_rng: stream(cfg.seed, PITCH_STREAM),
            pitch_noise,
            bank,
            switch: SwitchState::Idle,
            events_seen: 0,
            k: 0,
            end: cfg.total_samples(),
            series,
        })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn fault(&self) -> Option<&FaultDescriptor> {
        self.actuators.fault()
    }

    pub fn sprc(&self) -> Option<&SprcState> {
        self.sprc.as_ref()
    }

    pub fn decision(&self) -> FdDecision {
        self.fdie.decision()
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    /// Turn a fork into another controller mode. Only the two adaptive
    /// online modes are interchangeable, and only before any switch.
    pub fn set_mode(&mut self, mode: Mode) -> Result<(), Error> {
        let ok = matches!((self.mode, mode), (Mode::SprcOnly | Mode::Proposed, Mode::SprcOnly | Mode::Proposed));
        if !ok || self.switch == SwitchState::Done {
            return Err(Error::Config(format!("cannot turn a {} run into {mode}", self.mode)));
        }
        self.mode = mode;
        if let Some(s) = &mut self.series {
            s.meta.mode = mode;
        }
        self.switch = match (mode, self.fdie.decision().d_fd) {
            (Mode::Proposed, d) if d != 0 => SwitchState::Pending,
            _ => SwitchState::Idle,
        };
        Ok(())
    }

    pub fn step(&mut self) -> Result<(), Error> {
        let k = self.k;
        let mut row_flags = 0;
        if self.switch == SwitchState::Pending {
            self.switch = SwitchState::Done;
            let (Some(sprc), Some(bank)) = (self.sprc.as_mut(), self.bank.as_deref()) else {
                log::warn!("isolation without a pretuned bank; keeping the running controller");
                row_flags |= flags::MISSING_BANK_ENTRY;
                return self.advance(k, row_flags);
            };
            match on_detection(&self.fdie.decision(), bank, sprc)? {
                SwitchOutcome::Switched { .. } => row_flags |= flags::SWITCHED,
                SwitchOutcome::MissingEntry { .. } => row_flags |= flags::MISSING_BANK_ENTRY,
                SwitchOutcome::NoDecision => {}
            }
        }
        self.advance(k, row_flags)
    }

    fn advance(&mut self, k: u64, mut row_flags: u32) -> Result<(), Error> {
        let sprc_out = self.sprc.as_ref().map(|s| s.control_output()).unwrap_or([0.0; NUM_BLADES]);
        let thetas = self.sprc.as_ref().map(|s| s.thetas()).unwrap_or([[0.0; 2]; NUM_BLADES]);
        let excitation = self.prbs.as_mut().map(|p| p.step()).unwrap_or([0.0; NUM_BLADES]);
        let u_ref = compose_pitch_command(&self.lc, sprc_out, excitation);
        let pitch = self.actuators.step(u_ref, k);
        let out = self.plant.step(pitch);
        let meas: [f64; NUM_BLADES] = match &self.pitch_noise {
            Some(n) => std::array::from_fn(|l| pitch[l] + n.sample(&mut self.pitch_rng)),
            None => pitch,
        };
        let fd = self.fdie.step(u_ref, meas);
        let mut ident = [0.0; NUM_BLADES];
        if let Some(s) = &mut self.sprc {
            ident = s.observe(pitch, out.y)?.ident_residuals;
            for e in &s.events()[self.events_seen..] {
                row_flags |= match e.kind {
                    SprcEventKind::GainKept => flags::GAIN_KEPT,
                    SprcEventKind::DegenerateFactor => flags::DEGENERATE_FACTOR,
                    SprcEventKind::Switched => 0,
                };
            }
            self.events_seen = s.events().len();
        }
        if self.mode == Mode::Proposed && self.switch == SwitchState::Idle && fd.decision.d_fd != 0 {
            self.switch = SwitchState::Pending;
        }
        if out.saturated {
            row_flags |= flags::SATURATED;
        }
        if let Some(series) = &mut self.series {
            let mut row = SampleRow { k, flags: row_flags, ..Default::default() };
            row.set_triples(out.y, u_ref, pitch, meas);
            row.set_fdi(fd.residuals, fd.thresholds, fd.decision.d_fd);
            row.set_sprc(thetas, sprc_out, excitation, ident);
            series.rows.push(row);
        }
        self.k += 1;
        Ok(())
    }

    /// Step until sample `k` (exclusive) or the end of the run.
    pub fn run_to(&mut self, k: u64) -> Result<(), Error> {
        while self.k < k.min(self.end) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), Error> {
        self.run_to(self.end)
    }

    pub fn into_series(self) -> Option<TimeSeries> {
        self.series
    }
}

/// Run `cfg` to the end and report on it.
pub fn run_simulation(cfg: &RunConfig, bank: Option<Arc<PretunedBank>>) -> Result<(TimeSeries, RunReport), Error> {
    let mut sim = Simulation::new(cfg, bank, true)?;
    sim.run_to_end()?;
    let series = sim.into_series().expect("recording enabled");
    let report = RunReport::from_series(&series, &cfg.metrics)?;
    Ok((series, report))
}

/// Baseline, controller-only and proposed runs on one seed.
#[derive(Debug, Clone)]
pub struct MatchedRuns {
    pub baseline: (TimeSeries, RunReport),
    pub sprc_only: (TimeSeries, RunReport),
    pub proposed: (TimeSeries, RunReport),
    pub comparison: ComparisonReport,
}

/// Run the three modes on `cfg`'s seed and load case. The two adaptive
/// runs share their trajectory up to the first isolation (or the fault
/// onset), so it is simulated once and forked.
pub fn run_matched(cfg: &RunConfig, bank: Arc<PretunedBank>) -> Result<MatchedRuns, Error> {
    let with_mode = |mode| RunConfig { mode, ..cfg.clone() };
    let baseline = run_simulation(&with_mode(Mode::Baseline), None)?;
    let mut proposed = Simulation::new(&with_mode(Mode::Proposed), Some(bank), true)?;
    let onset = proposed.fault().map(|f| f.onset).unwrap_or(proposed.end());
    while proposed.k() < onset && proposed.decision().d_fd == 0 {
        proposed.step()?;
    }
    let mut sprc_only = proposed.clone();
    sprc_only.set_mode(Mode::SprcOnly)?;
    let finish = |mut sim: Simulation| -> Result<(TimeSeries, RunReport), Error> {
        sim.run_to_end()?;
        let series = sim.into_series().expect("recording enabled");
        let report = RunReport::from_series(&series, &cfg.metrics)?;
        Ok((series, report))
    };
    let proposed = finish(proposed)?;
    let sprc_only = finish(sprc_only)?;
    let comparison = ComparisonReport::new(&baseline, &sprc_only, &proposed, &cfg.metrics)?;
    Ok(MatchedRuns { baseline, sprc_only, proposed, comparison })
}
