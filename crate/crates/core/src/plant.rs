//! Three-blade load surrogate: maps physical pitch angles to blade-root
//! out-of-plane moments under a once-per-revolution disturbance.
//!
//! Per blade `l` the measured load is
//!
//! ```text
//! y_l = x_l + d_l + e_l
//! x_l⁺ = a·x_l + (1 − a)·[g₀·(ũ_l − u_c) + g_c·w]
//! w    = Σ_m (ũ_m − u_c)·cos(ψ + 2π(m−1)/3)
//! d_l  = A·sin(ψ + 2π(l−1)/3)
//! ```
//!
//! `a = exp(−Ts/τ)` is a first-order lag with negative DC gain `g₀`
//! (pitching towards feather unloads the blade). `w` is the rotor imbalance:
//! a pitch asymmetry rotates with the rotor, loads the support structure at
//! 1P and is felt by every blade through the `g_c` path. Symmetric 1P pitch
//! (healthy IPC) makes `w` constant; a stuck blade turns it into a new 1P
//! load on the healthy blades.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, NUM_BLADES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoadCaseId {
    LC1,
    LC2,
    LC3,
}

impl LoadCaseId {
    pub const ALL: [LoadCaseId; 3] = [LoadCaseId::LC1, LoadCaseId::LC2, LoadCaseId::LC3];
}

impl fmt::Display for LoadCaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LoadCaseId::LC1 => "LC1",
            LoadCaseId::LC2 => "LC2",
            LoadCaseId::LC3 => "LC3",
        };
        f.write_str(s)
    }
}

impl FromStr for LoadCaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LC1" | "1" => Ok(LoadCaseId::LC1),
            "LC2" | "2" => Ok(LoadCaseId::LC2),
            "LC3" | "3" => Ok(LoadCaseId::LC3),
            other => Err(Error::UnknownLoadCase(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCase {
    pub id: LoadCaseId,
    /// Mean hub-height wind speed, m/s.
    pub u_hub: f64,
    /// 1P load amplitude, kN·m.
    pub disturbance_amplitude: f64,
    /// Collective pitch demand, degrees.
    pub collective_setpoint: f64,
    /// Angle at which blade 3 sticks in this case, degrees.
    pub stuck_angle: f64,
}

pub fn load_case_params(id: LoadCaseId) -> LoadCase {
    match id {
        LoadCaseId::LC1 => LoadCase { id, u_hub: 12.0, disturbance_amplitude: 400.0, collective_setpoint: 8.0, stuck_angle: 20.0 },
        LoadCaseId::LC2 => LoadCase { id, u_hub: 16.0, disturbance_amplitude: 550.0, collective_setpoint: 14.0, stuck_angle: 0.0 },
        LoadCaseId::LC3 => LoadCase { id, u_hub: 20.0, disturbance_amplitude: 700.0, collective_setpoint: 19.0, stuck_angle: 10.0 },
    }
}

/// Parse a load-case name ("LC1".."LC3") and return its table row.
pub fn load_case_by_name(name: &str) -> Result<LoadCase, Error> {
    Ok(load_case_params(name.parse()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Pitch-to-load lag time constant, s.
    pub time_constant: f64,
    /// Static pitch-to-load gain, kN·m per degree.
    pub dc_gain: f64,
    /// Rotor-imbalance coupling gain, kN·m per degree.
    pub imbalance_gain: f64,
    /// Load noise standard deviation as a fraction of the 1P amplitude.
    pub noise_fraction: f64,
    pub pitch_min: f64,
    pub pitch_max: f64,
    /// Rotor azimuth at sample 0, degrees.
    pub initial_azimuth_deg: f64,
    pub noise_enabled: bool,
    pub disturbance_enabled: bool,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            time_constant: 0.5,
            dc_gain: -150.0,
            imbalance_gain: 45.0,
            noise_fraction: 0.02,
            pitch_min: -5.0,
            pitch_max: 90.0,
            initial_azimuth_deg: 0.0,
            noise_enabled: true,
            disturbance_enabled: true,
        }
    }
}

/// `A·sin(ψ + 2π(blade−1)/3)`; `blade` is 1-based.
pub fn periodic_disturbance(azimuth: f64, blade: usize, lc: &LoadCase) -> f64 {
    debug_assert!((1..=NUM_BLADES).contains(&blade));
    lc.disturbance_amplitude * (azimuth + blade_offset(blade - 1)).sin()
}

fn blade_offset(index: usize) -> f64 {
    2.0 * PI * index as f64 / NUM_BLADES as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantOutput {
    pub y: [f64; NUM_BLADES],
    /// Some pitch input was clipped to the admissible range.
    pub saturated: bool,
}

#[derive(Debug, Clone)]
pub struct Plant {
    cfg: PlantConfig,
    lc: LoadCase,
    period: usize,
    k: u64,
    pole: f64,
    filter: [f64; NUM_BLADES],
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    saturations: u64,
}

impl Plant {
    pub fn new(cfg: PlantConfig, lc: LoadCase, period_samples: usize, ts: f64, rng: ChaCha8Rng) -> Result<Self, Error> {
        if period_samples < 4 {
            return Err(Error::Config(format!("rotor period must span at least 4 samples, got {period_samples}")));
        }
        if !(cfg.time_constant > 0.0) {
            return Err(Error::Config("plant time constant must be positive".into()));
        }
        if !(cfg.pitch_min < cfg.pitch_max) {
            return Err(Error::Config("pitch range is empty".into()));
        }
        let std = (cfg.noise_fraction * lc.disturbance_amplitude).abs();
        let noise = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Plant {
            pole: (-ts / cfg.time_constant).exp(),
            cfg,
            lc,
            period: period_samples,
            k: 0,
            filter: [0.0; NUM_BLADES],
            rng,
            noise,
            saturations: 0,
        })
    }

    /// Deterministic plant with its own noise stream seeded from `seed`.
    pub fn seeded(cfg: PlantConfig, lc: LoadCase, period_samples: usize, ts: f64, seed: u64) -> Result<Self, Error> {
        Self::new(cfg, lc, period_samples, ts, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn load_case(&self) -> &LoadCase {
        &self.lc
    }

    pub fn sample_index(&self) -> u64 {
        self.k
    }

    /// Azimuth of blade 1 at the current sample, in `[0, 2π)`.
    pub fn azimuth(&self) -> f64 {
        let base = 2.0 * PI * (self.k % self.period as u64) as f64 / self.period as f64;
        (base + self.cfg.initial_azimuth_deg.to_radians()).rem_euclid(2.0 * PI)
    }

    pub fn saturation_count(&self) -> u64 {
        self.saturations
    }

    /// Advance one sample with physical pitch `pitch` (degrees).
    pub fn step(&mut self, pitch: [f64; NUM_BLADES]) -> PlantOutput {
        let psi = self.azimuth();
        let sp = self.lc.collective_setpoint;
        let mut saturated = false;
        let mut dev = [0.0; NUM_BLADES];
        for (d, &p) in dev.iter_mut().zip(&pitch) {
            let clipped = p.clamp(self.cfg.pitch_min, self.cfg.pitch_max);
            saturated |= clipped != p;
            *d = clipped - sp;
        }
        if saturated {
            self.saturations += 1;
        }
        let imbalance: f64 = dev.iter().enumerate().map(|(m, d)| d * (psi + blade_offset(m)).cos()).sum();

        let mut y = [0.0; NUM_BLADES];
        for l in 0..NUM_BLADES {
            let dist = if self.cfg.disturbance_enabled { periodic_disturbance(psi, l + 1, &self.lc) } else { 0.0 };
            let noise = if self.cfg.noise_enabled { self.noise.sample(&mut self.rng) } else { 0.0 };
            y[l] = self.filter[l] + dist + noise;
            let input = self.cfg.dc_gain * dev[l] + self.cfg.imbalance_gain * imbalance;
            self.filter[l] = self.pole * self.filter[l] + (1.0 - self.pole) * input;
        }
        self.k += 1;
        PlantOutput { y, saturated }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: usize = 625;
    const TS: f64 = 0.01;

    fn quiet(mut cfg: PlantConfig) -> PlantConfig {
        cfg.noise_enabled = false;
        cfg
    }

    #[test]
    fn load_case_table() {
        let lc1 = load_case_params(LoadCaseId::LC1);
        assert_eq!((lc1.u_hub, lc1.stuck_angle), (12.0, 20.0));
        let lc2 = load_case_params(LoadCaseId::LC2);
        assert_eq!((lc2.u_hub, lc2.stuck_angle), (16.0, 0.0));
        let lc3 = load_case_params(LoadCaseId::LC3);
        assert_eq!((lc3.u_hub, lc3.stuck_angle), (20.0, 10.0));
        assert!(load_case_by_name("LC4").is_err());
        assert_eq!(load_case_by_name("lc2").unwrap().id, LoadCaseId::LC2);
    }

    #[test]
    fn disturbance_properties() {
        let lc = load_case_params(LoadCaseId::LC3);
        assert_eq!(periodic_disturbance(0.0, 1, &lc), 0.0);
        let mut sum = [0.0; 3];
        for k in 0..P {
            let psi = 2.0 * PI * k as f64 / P as f64;
            for b in 1..=3 {
                sum[b - 1] += periodic_disturbance(psi, b, &lc);
            }
        }
        for s in sum {
            assert!(s.abs() < 1e-9 * lc.disturbance_amplitude);
        }
    }

    #[test]
    fn setpoint_pitch_gives_pure_one_p() {
        let lc = load_case_params(LoadCaseId::LC2);
        let mut plant = Plant::seeded(quiet(PlantConfig::default()), lc, P, TS, 1).unwrap();
        let sp = lc.collective_setpoint;
        for _ in 0..2 * P {
            let psi = plant.azimuth();
            let out = plant.step([sp; 3]);
            for b in 0..3 {
                let expect = lc.disturbance_amplitude * (psi + 2.0 * PI * b as f64 / 3.0).sin();
                assert!((out.y[b] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_blade_offset_dc_gain() {
        let lc = load_case_params(LoadCaseId::LC1);
        let sp = lc.collective_setpoint;
        let mut cfg = quiet(PlantConfig::default());
        cfg.disturbance_enabled = false;
        cfg.imbalance_gain = 0.0;
        let mut plant = Plant::seeded(cfg.clone(), lc, P, TS, 1).unwrap();
        let mut y = [0.0; 3];
        for _ in 0..1000 {
            y = plant.step([sp + 2.0, sp, sp]).y;
        }
        assert!((y[0] - cfg.dc_gain * 2.0).abs() < 1e-6);
        assert_eq!(y[1], 0.0);

        // With imbalance coupling the offset adds a zero-mean 1P term; the
        // per-revolution mean still sits at the static gain.
        cfg.imbalance_gain = 20.0;
        let mut plant = Plant::seeded(cfg.clone(), lc, P, TS, 1).unwrap();
        for _ in 0..10 * P {
            plant.step([sp + 2.0, sp, sp]);
        }
        let mean: f64 = (0..P).map(|_| plant.step([sp + 2.0, sp, sp]).y[0]).sum::<f64>() / P as f64;
        assert!((mean - cfg.dc_gain * 2.0).abs() < 1e-6);
    }

    #[test]
    fn noise_free_output_is_periodic_after_transients() {
        let lc = load_case_params(LoadCaseId::LC3);
        let mut plant = Plant::seeded(quiet(PlantConfig::default()), lc, P, TS, 4).unwrap();
        let mut ys = Vec::new();
        for k in 0..6 * P {
            let psi = 2.0 * PI * (k % P) as f64 / P as f64;
            // Periodic pitch with an asymmetric offset on blade 3.
            let u = [lc.collective_setpoint + psi.sin(), lc.collective_setpoint + psi.cos(), lc.stuck_angle];
            ys.push(plant.step(u).y);
        }
        // The lag's transient decays by exp(−Ts/τ) per sample, so both
        // compared samples lie at least 2P samples past the start.
        for k in 3 * P..ys.len() {
            for b in 0..3 {
                assert!((ys[k][b] - ys[k - P][b]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stuck_blade_loads_healthy_blades_at_one_p() {
        let lc = load_case_params(LoadCaseId::LC2);
        let mut cfg = quiet(PlantConfig::default());
        cfg.disturbance_enabled = false;
        let mut plant = Plant::seeded(cfg, lc, P, TS, 2).unwrap();
        let sp = lc.collective_setpoint;
        let mut y1 = Vec::new();
        for k in 0..4 * P {
            let y = plant.step([sp, sp, lc.stuck_angle]).y;
            if k >= 3 * P {
                y1.push(y[0]);
            }
        }
        let mean = y1.iter().sum::<f64>() / P as f64;
        let amp = y1.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        assert!(amp > 100.0, "imbalance amplitude {amp}");
    }

    #[test]
    fn saturation_is_flagged() {
        let lc = load_case_params(LoadCaseId::LC1);
        let mut plant = Plant::seeded(PlantConfig::default(), lc, P, TS, 1).unwrap();
        assert!(!plant.step([8.0; 3]).saturated);
        assert!(plant.step([-10.0, 8.0, 8.0]).saturated);
        assert_eq!(plant.saturation_count(), 1);
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let lc = load_case_params(LoadCaseId::LC1);
        let mut a = Plant::seeded(PlantConfig::default(), lc, P, TS, 9).unwrap();
        let mut b = Plant::seeded(PlantConfig::default(), lc, P, TS, 9).unwrap();
        for k in 0..3000 {
            let u = [8.0 + (k as f64 * 0.01).sin(), 8.0, 9.0];
            assert_eq!(a.step(u).y, b.step(u).y);
        }
    }

    #[test]
    fn phases_are_offset_by_a_third_of_a_turn() {
        let lc = load_case_params(LoadCaseId::LC1);
        let psi = 0.37;
        let d2 = periodic_disturbance(psi, 2, &lc);
        let d1_later = periodic_disturbance(psi + 2.0 * PI / 3.0, 1, &lc);
        assert!((d2 - d1_later).abs() < 1e-9);
    }
}
