use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::psd_estimate;
use crate::plant::LoadCaseId;
use crate::{Error, NUM_BLADES};

use super::series::{flags, TimeSeries};
use super::{MetricsConfig, Mode};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Variance reductions of the healthy blades relative to a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReduction {
    /// `(blade, 100·(1 − var_run/var_base))`, blades 1-based.
    pub per_blade: Vec<(usize, f64)>,
    /// `100·(1 − Σ var_run / Σ var_base)` over the same blades.
    pub cumulative: f64,
}

/// Percent variance reduction of `run` relative to `base` per blade and
/// summed over blades. `blades` are 1-based.
pub fn load_reduction_metrics(run: &[Vec<f64>], base: &[Vec<f64>], blades: &[usize]) -> Result<LoadReduction, Error> {
    let (mut sr, mut sb) = (0.0, 0.0);
    let mut per_blade = Vec::new();
    for &b in blades {
        let vr = variance(&run[b - 1]);
        let vb = variance(&base[b - 1]);
        if vb == 0.0 {
            return Err(Error::ZeroBaselineVariance);
        }
        per_blade.push((b, 100.0 * (1.0 - vr / vb)));
        sr += vr;
        sb += vb;
    }
    Ok(LoadReduction { per_blade, cumulative: 100.0 * (1.0 - sr / sb) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// First index from which `consecutive` increments stay below the
    /// relative tolerance.
    pub index: Option<usize>,
    /// Relative size of the last increment in the sequence.
    pub final_increment: f64,
    /// The sequence never moved.
    pub degenerate: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_increment(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    norm(&d) / norm(a).max(floor)
}

/// First `j ≥ start` with `‖θ_{i+1} − θ_i‖ < eps·max(‖θ_i‖, floor)` for
/// every `i` in `j..j+consecutive`.
pub fn convergence_time(thetas: &[Vec<f64>], start: usize, eps: f64, floor: f64, consecutive: usize) -> Convergence {
    let n = thetas.len();
    let incs: Vec<f64> = (0..n.saturating_sub(1)).map(|i| relative_increment(&thetas[i], &thetas[i + 1], floor)).collect();
    let final_increment = incs.last().copied().unwrap_or(0.0);
    let degenerate = n > 1 && thetas[start.min(n - 1)..].windows(2).all(|w| w[0] == w[1]);
    let mut run = 0;
    let mut index = None;
    for (i, inc) in incs.iter().enumerate().skip(start) {
        if *inc < eps {
            run += 1;
            if run == consecutive {
                index = Some(i + 1 - consecutive);
                break;
            }
        } else {
            run = 0;
        }
    }
    Convergence { index, final_increment, degenerate }
}

/// Replay of the persistence logic on the recorded residuals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrossingReplay {
    /// `(sample, blade)` whenever a blade completes `confirm` consecutive
    /// samples above threshold.
    pub confirmed: Vec<(u64, usize)>,
    /// Several blades were confirmed at once before any isolation.
    pub ambiguous: bool,
}

pub fn replay_crossings(series: &TimeSeries, confirm: u32) -> CrossingReplay {
    let mut counters = [0u32; NUM_BLADES];
    let mut out = CrossingReplay::default();
    let mut isolated = false;
    for row in &series.rows {
        let (r, rb) = (row.residuals(), row.thresholds());
        for l in 0..NUM_BLADES {
            if r[l].abs() > rb[l] {
                counters[l] = counters[l].saturating_add(1);
                if counters[l] == confirm {
                    out.confirmed.push((row.k, l + 1));
                }
            } else {
                counters[l] = 0;
            }
        }
        let n = counters.iter().filter(|&&c| c >= confirm).count();
        if !isolated {
            if n == 1 {
                isolated = true;
            } else if n > 1 {
                out.ambiguous = true;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BladeStats {
    pub blade: usize,
    /// Load variance over the window before the fault, (kN·m)².
    pub prefault_variance: f64,
    /// Load variance over the comparison window at the end, (kN·m)².
    pub final_variance: f64,
    /// Load spectral density at 1P over the comparison window.
    pub psd_1p: f64,
    pub final_theta: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    /// Isolated blade, 0 if none.
    pub d_fd: usize,
    pub k_d: Option<u64>,
    /// `k_d − onset`, samples.
    pub delay_samples: Option<i64>,
    pub delay_seconds: Option<f64>,
    pub ambiguous: bool,
    /// Isolated blade equals the injected one.
    pub correct: bool,
    /// Confirmed crossings before the fault onset.
    pub false_alarms: usize,
    /// Single-sample threshold crossings before the fault onset, per blade.
    pub raw_prefault_exceedances: [u64; NUM_BLADES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    /// First rotor period checked.
    pub start_period: usize,
    /// Periods from the fault until the healthy-blade θ settled.
    pub periods_after_fault: Option<usize>,
    pub seconds_after_fault: Option<f64>,
    pub final_increment: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub load_case: LoadCaseId,
    pub seed: u64,
    pub fault_blade: usize,
    pub samples: usize,
    pub blades: Vec<BladeStats>,
    pub detection: DetectionSummary,
    pub convergence: Option<ConvergenceSummary>,
    pub switch_sample: Option<u64>,
    pub saturated_samples: usize,
    pub gain_kept_events: usize,
    pub degenerate_factor_events: usize,
    pub missing_bank_entry: bool,
}

/// Healthy blades (1-based) of a run.
pub fn healthy_blades(fault_blade: usize) -> Vec<usize> {
    (1..=NUM_BLADES).filter(|&b| b != fault_blade).collect()
}

/// θ of the healthy blades at the start of every rotor period.
pub fn period_thetas(series: &TimeSeries) -> Vec<Vec<f64>> {
    let p = series.meta.period;
    let healthy = healthy_blades(series.meta.fault_blade);
    series
        .rows
        .iter()
        .step_by(p)
        .map(|row| {
            let th = row.thetas();
            healthy.iter().flat_map(|&b| th[b - 1]).collect()
        })
        .collect()
}

impl RunReport {
    /// Everything is derived from the recorded series.
    pub fn from_series(series: &TimeSeries, cfg: &MetricsConfig) -> Result<Self, Error> {
        let meta = &series.meta;
        let n = series.len();
        let window = (cfg.comparison_window / meta.ts).round() as usize;
        let t0 = meta.fault_sample as usize;
        if n < window || t0 > n {
            return Err(Error::Series(format!("{n} samples are too few for a {window}-sample window")));
        }
        let pre = t0.saturating_sub(window)..t0;
        let post = n - window..n;
        let seg = cfg.psd_segment_periods * meta.period;
        let f1p = 1.0 / (meta.period as f64 * meta.ts);
        let last = series.rows.last().ok_or_else(|| Error::Series("empty series".into()))?;
        let mut blades = Vec::new();
        for l in 0..NUM_BLADES {
            let tail = series.load(l, post.clone());
            let psd = psd_estimate(&tail, 1.0 / meta.ts, seg)?;
            blades.push(BladeStats {
                blade: l + 1,
                prefault_variance: if pre.is_empty() { f64::NAN } else { variance(&series.load(l, pre.clone())) },
                final_variance: variance(&tail),
                psd_1p: psd.value_at(f1p),
                final_theta: last.thetas()[l],
            });
        }

        let onset = meta.fault_onset;
        let replay = replay_crossings(series, meta.confirm);
        let false_alarms = replay.confirmed.iter().filter(|(k, _)| meta.fault_blade == 0 || *k < onset).count();
        let mut raw = [0u64; NUM_BLADES];
        for row in series.rows.iter().take_while(|r| meta.fault_blade == 0 || r.k < onset) {
            let (r, rb) = (row.residuals(), row.thresholds());
            for l in 0..NUM_BLADES {
                raw[l] += (r[l].abs() > rb[l]) as u64;
            }
        }
        let d_fd = last.d_fd;
        let k_d = series.rows.iter().find(|r| r.d_fd != 0).map(|r| r.k);
        let delay = k_d.filter(|_| meta.fault_blade != 0).map(|k| k as i64 - onset as i64);
        let detection = DetectionSummary {
            d_fd,
            k_d,
            delay_samples: delay,
            delay_seconds: delay.map(|d| d as f64 * meta.ts),
            ambiguous: replay.ambiguous,
            correct: meta.fault_blade != 0 && d_fd == meta.fault_blade,
            false_alarms,
            raw_prefault_exceedances: raw,
        };

        let convergence = if meta.mode.uses_sprc() && meta.mode != Mode::OfflineTune {
            let thetas = period_thetas(series);
            let p = meta.period;
            let fault_period = t0.div_ceil(p);
            let decision_period = k_d.map(|k| k as usize / p + 1).unwrap_or(0);
            let start = fault_period.max(decision_period + cfg.settle_periods);
            let c = convergence_time(&thetas, start, cfg.convergence_eps, cfg.convergence_floor, cfg.consecutive);
            let after = c.index.map(|j| j - fault_period);
            Some(ConvergenceSummary {
                start_period: start,
                periods_after_fault: after,
                seconds_after_fault: after.map(|j| (j * p) as f64 * meta.ts),
                final_increment: c.final_increment,
                degenerate: c.degenerate,
            })
        } else {
            None
        };

        let count = |bit: u32| series.rows.iter().filter(|r| r.flags & bit != 0).count();
        Ok(RunReport {
            mode: meta.mode,
            load_case: meta.load_case,
            seed: meta.seed,
            fault_blade: meta.fault_blade,
            samples: n,
            blades,
            detection,
            convergence,
            switch_sample: series.rows.iter().find(|r| r.flags & flags::SWITCHED != 0).map(|r| r.k),
            saturated_samples: count(flags::SATURATED),
            gain_kept_events: count(flags::GAIN_KEPT),
            degenerate_factor_events: count(flags::DEGENERATE_FACTOR),
            missing_bank_entry: count(flags::MISSING_BANK_ENTRY) > 0,
        })
    }

    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode {}  load case {}  seed {}  fault blade {}", self.mode, self.load_case, self.seed, self.fault_blade)?;
        writeln!(f, "{:>5} {:>14} {:>14} {:>12} {:>10} {:>10}", "blade", "var pre-fault", "var final", "PSD 1P", "θ sin", "θ cos")?;
        for b in &self.blades {
            writeln!(
                f,
                "{:>5} {:>14.1} {:>14.1} {:>12.3e} {:>10.3} {:>10.3}",
                b.blade, b.prefault_variance, b.final_variance, b.psd_1p, b.final_theta[0], b.final_theta[1]
            )?;
        }
        let d = &self.detection;
        writeln!(
            f,
            "detection: blade {}  at {}  delay {} s  correct {}  ambiguous {}  false alarms {}  raw pre-fault crossings {:?}",
            d.d_fd,
            opt(d.k_d),
            opt(d.delay_seconds.map(|s| format!("{s:.2}"))),
            d.correct,
            d.ambiguous,
            d.false_alarms,
            d.raw_prefault_exceedances
        )?;
        if let Some(c) = &self.convergence {
            writeln!(
                f,
                "convergence: {} periods ({} s) after the fault, checked from period {}, last increment {:.2e}{}",
                opt(c.periods_after_fault),
                opt(c.seconds_after_fault),
                c.start_period,
                c.final_increment,
                if c.degenerate { ", θ never moved" } else { "" }
            )?;
        }
        write!(
            f,
            "switch at {}  saturated samples {}  kept gains {}  degenerate factors {}{}",
            opt(self.switch_sample),
            self.saturated_samples,
            self.gain_kept_events,
            self.degenerate_factor_events,
            if self.missing_bank_entry { "  (no bank entry)" } else { "" }
        )
    }
}

/// Three matched runs compared on the healthy blades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub load_case: LoadCaseId,
    pub seed: u64,
    pub fault_blade: usize,
    pub sprc_only_reduction: LoadReduction,
    pub proposed_reduction: LoadReduction,
    /// Healthy-blade 1P spectral density relative to the baseline.
    pub sprc_only_psd_ratio: f64,
    pub proposed_psd_ratio: f64,
    pub sprc_only_convergence: Option<usize>,
    pub proposed_convergence: Option<usize>,
    pub detection_delay_seconds: Option<f64>,
    pub correct_isolation: bool,
}

impl ComparisonReport {
    pub fn new(baseline: &(TimeSeries, RunReport), sprc_only: &(TimeSeries, RunReport), proposed: &(TimeSeries, RunReport), cfg: &MetricsConfig) -> Result<Self, Error> {
        let meta = &baseline.0.meta;
        let healthy = healthy_blades(meta.fault_blade);
        let window = |s: &TimeSeries| -> Vec<Vec<f64>> {
            let n = s.len();
            let w = (cfg.comparison_window / s.meta.ts).round() as usize;
            (0..NUM_BLADES).map(|l| s.load(l, n - w..n)).collect()
        };
        let base = window(&baseline.0);
        let psd_sum = |r: &RunReport| healthy.iter().map(|&b| r.blades[b - 1].psd_1p).sum::<f64>();
        let base_psd = psd_sum(&baseline.1);
        if base_psd == 0.0 {
            return Err(Error::ZeroBaselineVariance);
        }
        let conv = |r: &RunReport| r.convergence.as_ref().and_then(|c| c.periods_after_fault);
        Ok(ComparisonReport {
            load_case: meta.load_case,
            seed: meta.seed,
            fault_blade: meta.fault_blade,
            sprc_only_reduction: load_reduction_metrics(&window(&sprc_only.0), &base, &healthy)?,
            proposed_reduction: load_reduction_metrics(&window(&proposed.0), &base, &healthy)?,
            sprc_only_psd_ratio: psd_sum(&sprc_only.1) / base_psd,
            proposed_psd_ratio: psd_sum(&proposed.1) / base_psd,
            sprc_only_convergence: conv(&sprc_only.1),
            proposed_convergence: conv(&proposed.1),
            detection_delay_seconds: proposed.1.detection.delay_seconds,
            correct_isolation: proposed.1.detection.correct,
        })
    }

    pub fn to_json(&self) -> Result<String, Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "load case {}  seed {}  fault blade {}", self.load_case, self.seed, self.fault_blade)?;
        writeln!(f, "{:<10} {:>22} {:>12} {:>14} {:>18}", "mode", "reduction per blade %", "cumulative %", "PSD 1P ratio", "convergence [per]")?;
        for (name, red, psd, conv) in [
            ("sprc_only", &self.sprc_only_reduction, self.sprc_only_psd_ratio, self.sprc_only_convergence),
            ("proposed", &self.proposed_reduction, self.proposed_psd_ratio, self.proposed_convergence),
        ] {
            let per: Vec<String> = red.per_blade.iter().map(|(b, v)| format!("{b}:{v:.1}")).collect();
            writeln!(f, "{:<10} {:>22} {:>12.1} {:>14.3} {:>18}", name, per.join(" "), red.cumulative, psd, opt(conv))?;
        }
        write!(
            f,
            "isolation correct {}  detection delay {} s",
            self.correct_isolation,
            opt(self.detection_delay_seconds.map(|s| format!("{s:.2}")))
        )
    }
}
