//! Pretuned parameter bank and the online switch.
//!
//! For every blade `l` the bank holds the Markov rows and 1P coefficients
//! reached by tuning the controller offline with blade `l` stuck from the
//! first sample. When the estimator bank isolates blade `l` online, those
//! parameters replace the running ones and the faulty blade stops adapting.
//!
//! Entries are stored one per JSON file named
//! `bank_f{blade}_{load case}_{config hash}.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fdi::FdDecision;
use crate::harness::{relative_theta_increment, Mode, RunConfig, Simulation};
use crate::plant::{LoadCase, LoadCaseId};
use crate::sprc::SprcState;
use crate::{Error, NUM_BLADES};

pub const BANK_FORMAT: &str = "ftipc-pretuned-bank";
pub const BANK_VERSION: u32 = 1;

/// Offline-tuned parameters for one fault scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub format: String,
    pub version: u32,
    /// Stuck blade, 1-based.
    pub fault_blade: usize,
    pub stuck_angle: f64,
    pub load_case: LoadCaseId,
    pub config_hash: String,
    pub period: usize,
    pub past: usize,
    pub forgetting: f64,
    pub load_scale: f64,
    /// Markov rows `[hu[p] … hu[1] | hy[p] … hy[1]]`, one per blade.
    pub rows: Vec<Vec<f64>>,
    /// 1P coefficients `[sin, cos]`, one pair per blade; zero for the stuck blade.
    pub thetas: Vec<[f64; 2]>,
    /// Rotor period at which tuning was declared converged.
    pub converged_period: usize,
    pub final_increment: f64,
}

impl BankEntry {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Bank(m));
        if self.format != BANK_FORMAT {
            return bad(format!("unexpected format {:?}", self.format));
        }
        if self.version != BANK_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        if !(1..=NUM_BLADES).contains(&self.fault_blade) {
            return bad(format!("fault blade {} out of range", self.fault_blade));
        }
        if self.rows.len() != NUM_BLADES || self.thetas.len() != NUM_BLADES {
            return bad("need one row and one θ per blade".into());
        }
        if self.rows.iter().any(|r| r.len() != 2 * self.past) {
            return bad(format!("rows must have length {}", 2 * self.past));
        }
        if self.rows.iter().flatten().chain(self.thetas.iter().flatten()).any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn file_name(fault_blade: usize, load_case: LoadCaseId, config_hash: &str) -> String {
        format!("bank_f{fault_blade}_{load_case}_{config_hash}.json")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, Error> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::file_name(self.fault_blade, self.load_case, &self.config_hash));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let entry: BankEntry = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        entry.validate()?;
        Ok(entry)
    }
}

/// Bank entries for one load case and configuration, keyed by stuck blade.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretunedBank {
    entries: BTreeMap<usize, BankEntry>,
}

impl PretunedBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: BankEntry) -> Result<(), Error> {
        entry.validate()?;
        if let Some(first) = self.entries.values().next() {
            if first.load_case != entry.load_case || first.config_hash != entry.config_hash {
                return Err(Error::Bank("entries must share load case and configuration".into()));
            }
        }
        self.entries.insert(entry.fault_blade, entry);
        Ok(())
    }

    pub fn get(&self, fault_blade: usize) -> Option<&BankEntry> {
        self.entries.get(&fault_blade)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every entry in `dir` matching the load case and configuration hash.
    /// Entries with a different hash are ignored; a missing directory gives
    /// an empty bank.
    pub fn load_dir(dir: &Path, load_case: LoadCaseId, hashes: &[(usize, String)]) -> Result<Self, Error> {
        let mut bank = PretunedBank::new();
        for (blade, hash) in hashes {
            let path = dir.join(BankEntry::file_name(*blade, load_case, hash));
            if path.exists() {
                bank.entries.insert(*blade, BankEntry::load(&path)?);
            }
        }
        Ok(bank)
    }

    /// Bank matching a run configuration.
    pub fn for_config(cfg: &RunConfig) -> Result<Self, Error> {
        Self::load_dir(&cfg.tune.bank_dir, cfg.load_case, &bank_keys(cfg))
    }
}

/// `(blade, config hash)` for every fault a configuration can switch to.
pub fn bank_keys(cfg: &RunConfig) -> Vec<(usize, String)> {
    let stuck = stuck_angle(cfg);
    (1..=NUM_BLADES).map(|b| (b, cfg.config_hash(stuck))).collect()
}

fn stuck_angle(cfg: &RunConfig) -> f64 {
    cfg.fault
        .and_then(|f| f.stuck_angle)
        .unwrap_or_else(|| crate::plant::load_case_params(cfg.load_case).stuck_angle)
}

/// Reference pitch: collective setpoint plus repetitive and excitation terms.
pub fn compose_pitch_command(lc: &LoadCase, sprc: [f64; NUM_BLADES], excitation: [f64; NUM_BLADES]) -> [f64; NUM_BLADES] {
    std::array::from_fn(|l| lc.collective_setpoint + sprc[l] + excitation[l])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchOutcome {
    NoDecision,
    Switched { blade: usize },
    MissingEntry { blade: usize },
}

/// Warm-start the controller from the bank after an isolation. Without a
/// matching entry the controller is left untouched.
pub fn on_detection(decision: &FdDecision, bank: &PretunedBank, sprc: &mut SprcState) -> Result<SwitchOutcome, Error> {
    let blade = decision.d_fd;
    if blade == 0 {
        return Ok(SwitchOutcome::NoDecision);
    }
    let Some(entry) = bank.get(blade) else {
        log::warn!("no pretuned entry for blade {blade}; keeping the running controller");
        return Ok(SwitchOutcome::MissingEntry { blade });
    };
    if entry.past != sprc.config().past || entry.period != sprc.config().period {
        return Err(Error::Bank("entry does not match the controller dimensions".into()));
    }
    sprc.warm_start(&entry.rows, &entry.thetas)?;
    sprc.freeze_blade(blade - 1);
    Ok(SwitchOutcome::Switched { blade })
}

/// Tune with `fault_blade` stuck from the first sample until the healthy
/// blades' θ has settled, and return the resulting bank entry.
pub fn offline_tune(cfg: &RunConfig, fault_blade: usize) -> Result<BankEntry, Error> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::OfflineTune;
    cfg.seed = cfg.tune.seed;
    cfg.duration = cfg.duration.max((cfg.tune.max_periods + 1) as f64 * cfg.rotor_period);
    let stuck = stuck_angle(&cfg);
    cfg.fault = Some(crate::harness::FaultSpec { blade: fault_blade, stuck_angle: Some(stuck), onset: Some(0) });
    cfg.validate()?;
    let mut sim = Simulation::new(&cfg, None, false)?;
    let period = cfg.sprc.period as u64;
    let healthy: Vec<usize> = (0..NUM_BLADES).filter(|&l| l + 1 != fault_blade).collect();
    let stacked = |s: &SprcState| -> Vec<f64> { healthy.iter().flat_map(|&l| s.thetas()[l]).collect() };
    let mut prev: Option<Vec<f64>> = None;
    let mut run = 0;
    let mut last_inc = f64::INFINITY;
    for j in 1..=cfg.tune.max_periods {
        sim.run_to(j as u64 * period)?;
        let sprc = sim.sprc().expect("tuning runs the controller");
        if healthy.iter().any(|&l| sprc.gain(l).is_none()) {
            continue;
        }
        let cur = stacked(sprc);
        if let Some(p) = &prev {
            last_inc = relative_theta_increment(p, &cur, cfg.metrics.convergence_floor);
            run = if last_inc < cfg.tune.convergence_eps { run + 1 } else { 0 };
            if run >= cfg.tune.consecutive {
                let mut sprc = sprc.clone();
                let rows = (0..NUM_BLADES).map(|l| sprc.refreshed_row(l)).collect();
                let mut thetas = sprc.thetas().to_vec();
                thetas[fault_blade - 1] = [0.0; 2];
                let entry = BankEntry {
                    format: BANK_FORMAT.into(),
                    version: BANK_VERSION,
                    fault_blade,
                    stuck_angle: stuck,
                    load_case: cfg.load_case,
                    config_hash: cfg.config_hash(stuck),
                    period: cfg.sprc.period,
                    past: cfg.sprc.past,
                    forgetting: cfg.sprc.forgetting,
                    load_scale: cfg.sprc.load_scale,
                    rows,
                    thetas,
                    converged_period: j,
                    final_increment: last_inc,
                };
                entry.validate()?;
                return Ok(entry);
            }
        }
        prev = Some(cur);
    }
    Err(Error::NoConvergence { periods: cfg.tune.max_periods, last_increment: last_inc })
}
