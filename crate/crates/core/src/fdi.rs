//! Fault detection and isolation: one estimator per pitch actuator.
//!
//! Each estimator runs a Luenberger observer of the healthy actuator,
//!
//! ```text
//! x̂⁺ = A x̂ + ρ(x̂, u) + B u_ref + L r,    û = C x̂ + D u_ref,    r = ũ − û
//! ```
//!
//! and compares `|r|` with an adaptive threshold that bounds the healthy
//! residual:
//!
//! ```text
//! r̄_k = α δ^k ε̄₀ + Σ_{h<k} α δ^{k−1−h} (Δ̄ρ_h + η̄ˣ) + η̄ʸ_k
//! ```
//!
//! where `‖C (A − LC)^k‖ ≤ α δ^k`. It is evaluated recursively. A blade is
//! isolated when its residual alone stays above threshold for a number of
//! consecutive samples; the decision is latched for the rest of the run.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::numerics::{spectral_norm, spectral_radius, StateSpaceModel};
use crate::{Error, NUM_BLADES};

/// Nonlinear part `ρ(x, u)` of a monitored system together with a bound on
/// the mismatch `‖ρ(x, u) − ρ(x̂, u)‖` over the admissible state region.
pub trait NonlinearTerm: Debug + Send + Sync {
    fn eval(&self, x: &DVector<f64>, u: f64) -> DVector<f64>;
    fn mismatch_bound(&self, xhat: &DVector<f64>, u: f64) -> f64;
}

/// Globally Lipschitz nonlinearity on a ball `‖x‖ ≤ radius`.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzTerm {
    pub f: fn(&DVector<f64>, f64) -> DVector<f64>,
    pub lipschitz: f64,
    pub radius: f64,
}

impl NonlinearTerm for LipschitzTerm {
    fn eval(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        (self.f)(x, u)
    }

    fn mismatch_bound(&self, xhat: &DVector<f64>, _u: f64) -> f64 {
        self.lipschitz * (self.radius + xhat.norm())
    }
}

/// Output-noise bound `η̄ʸ_k`: constant, or piecewise constant from the
/// listed start samples onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseBound {
    Constant(f64),
    Schedule(Vec<(u64, f64)>),
}

impl NoiseBound {
    pub fn at(&self, k: u64) -> f64 {
        match self {
            NoiseBound::Constant(c) => *c,
            NoiseBound::Schedule(steps) => steps.iter().take_while(|(start, _)| *start <= k).last().map_or(0.0, |s| s.1),
        }
    }

    fn validate(&self) -> Result<(), Error> {
        let ok = match self {
            NoiseBound::Constant(c) => *c >= 0.0,
            NoiseBound::Schedule(s) => s.iter().all(|(_, v)| *v >= 0.0) && s.windows(2).all(|w| w[0].0 < w[1].0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("noise bound must be nonnegative with increasing start samples".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBounds {
    /// Process-uncertainty bound `η̄ˣ`.
    pub eta_x: f64,
    /// Measurement-noise bound `η̄ʸ`.
    pub eta_y: NoiseBound,
    /// Initial estimation-error bound `ε̄₀`.
    pub eps_x0: f64,
}

impl ThresholdBounds {
    pub fn zero() -> Self {
        ThresholdBounds { eta_x: 0.0, eta_y: NoiseBound::Constant(0.0), eps_x0: 0.0 }
    }
}

/// Adaptive threshold recursion `z⁺ = δz + α(Δ̄ρ + η̄ˣ)`, `r̄ = z + η̄ʸ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub alpha: f64,
    pub delta: f64,
    pub bounds: ThresholdBounds,
    z: f64,
    k: u64,
}

impl Threshold {
    pub fn new(alpha: f64, delta: f64, bounds: ThresholdBounds) -> Result<Self, Error> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("threshold rate must lie in (0, 1), got {delta}")));
        }
        if !(alpha >= 0.0) || !(bounds.eta_x >= 0.0) || !(bounds.eps_x0 >= 0.0) {
            return Err(Error::Config("threshold constants must be nonnegative".into()));
        }
        bounds.eta_y.validate()?;
        let z = alpha * bounds.eps_x0;
        Ok(Threshold { alpha, delta, bounds, z, k: 0 })
    }

    /// Threshold for the current sample, then advance with the mismatch
    /// bound `Δ̄ρ_k` of this sample.
    pub fn step(&mut self, delta_rho: f64) -> f64 {
        let rbar = self.z + self.bounds.eta_y.at(self.k);
        self.z = self.delta * self.z + self.alpha * (delta_rho + self.bounds.eta_x);
        self.k += 1;
        rbar
    }

    pub fn current(&self) -> f64 {
        self.z + self.bounds.eta_y.at(self.k)
    }
}

/// `(α, δ)` with `‖C A0^k‖ ≤ α δ^k` for every `k ≥ 0`, `δ = ρ(A0) + margin`.
///
/// A horizon `s ≥ 1` with `‖A0^s‖ ≤ δ^s` is located first; any `k = qs + r`
/// then satisfies `‖C A0^k‖ ≤ ‖C A0^r‖ δ^{qs}`, so scanning `r < s` is enough.
pub fn compute_alpha_delta(a0: &DMatrix<f64>, c: &DMatrix<f64>, margin: f64) -> Result<(f64, f64), Error> {
    const MAX_HORIZON: usize = 1_000_000;
    let rho = spectral_radius(a0);
    if rho >= 1.0 {
        return Err(Error::Config(format!("observer error dynamics are not stable (spectral radius {rho})")));
    }
    let delta = rho + margin;
    if !(margin >= 0.0 && delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("threshold rate {delta} outside (0, 1)")));
    }
    let mut power = DMatrix::identity(a0.nrows(), a0.ncols());
    let mut dk = 1.0;
    let mut alpha = 0.0f64;
    for _ in 0..MAX_HORIZON {
        alpha = alpha.max(spectral_norm(&(c * &power)) / dk);
        power = &power * a0;
        dk *= delta;
        if spectral_norm(&power) <= dk {
            return Ok((alpha, delta));
        }
    }
    Err(Error::Config("no finite horizon certifies the threshold rate; increase the margin".into()))
}

/// Observer gain placing the eigenvalues of `A − LC` on the circle of radius
/// `pole_radius`, at the angles of the open-loop eigenvalues (dead-beat for a
/// zero radius). Ackermann's formula on the dual pair.
pub fn observer_gain(model: &StateSpaceModel, pole_radius: f64) -> Result<DMatrix<f64>, Error> {
    if !(0.0..1.0).contains(&pole_radius) {
        return Err(Error::Config(format!("observer pole radius must lie in [0, 1), got {pole_radius}")));
    }
    if model.C.nrows() != 1 {
        return Err(Error::Config("observer design needs a single output".into()));
    }
    let a = &model.A;
    let n = a.nrows();
    let mut obs = DMatrix::zeros(n, n);
    let mut row = model.C.clone();
    for i in 0..n {
        obs.set_row(i, &row.row(0));
        row = &row * a;
    }
    let smax = spectral_norm(&obs);
    let sv = obs.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin > 1e-12 * smax) {
        return Err(Error::Config("actuator model is not observable".into()));
    }

    // Desired characteristic polynomial z^n + c₁ z^{n−1} + … + c_n.
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for ev in a.complex_eigenvalues().iter() {
        let target = if ev.norm() > 0.0 { ev / ev.norm() * pole_radius } else { Complex::new(pole_radius, 0.0) };
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * target;
        }
        coeffs = next;
    }
    let mut phi = DMatrix::zeros(n, n);
    let mut power = DMatrix::identity(n, n);
    for i in (0..=n).rev() {
        phi += &power * coeffs[i].re;
        power = &power * a;
    }
    let mut en = DVector::zeros(n);
    en[n - 1] = 1.0;
    let sol = obs.lu().solve(&en).ok_or_else(|| Error::Config("actuator model is not observable".into()))?;
    let l = phi * sol;
    Ok(DMatrix::from_column_slice(n, 1, l.as_slice()))
}

/// One estimator: observer plus threshold.
#[derive(Debug, Clone)]
pub struct Fdie {
    pub model: StateSpaceModel,
    pub gain: DMatrix<f64>,
    pub threshold: Threshold,
    nonlinear: Option<Arc<dyn NonlinearTerm>>,
    xhat: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdieOutput {
    pub residual: f64,
    pub threshold: f64,
    pub estimate: f64,
}

impl Fdie {
    pub fn new(model: StateSpaceModel, gain: DMatrix<f64>, threshold: Threshold, xhat0: DVector<f64>) -> Result<Self, Error> {
        let n = model.states();
        if gain.shape() != (n, 1) || xhat0.len() != n {
            return Err(Error::Config("estimator dimensions do not match the model".into()));
        }
        Ok(Fdie { model, gain, threshold, nonlinear: None, xhat: xhat0 })
    }

    pub fn with_nonlinearity(mut self, term: Arc<dyn NonlinearTerm>) -> Self {
        self.nonlinear = Some(term);
        self
    }

    /// Error dynamics `A − LC`.
    pub fn error_dynamics(&self) -> DMatrix<f64> {
        &self.model.A - &self.gain * &self.model.C
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.xhat
    }

    /// Residual and threshold for this sample, then advance the estimate.
    pub fn step(&mut self, u_ref: f64, u_meas: f64) -> FdieOutput {
        let estimate = (&self.model.C * &self.xhat)[(0, 0)] + self.model.D[(0, 0)] * u_ref;
        let residual = u_meas - estimate;
        let delta_rho = match &self.nonlinear {
            Some(term) => term.mismatch_bound(&self.xhat, u_ref),
            None => 0.0,
        };
        let mut next = &self.model.A * &self.xhat;
        next.axpy(u_ref, &self.model.B.column(0), 1.0);
        next.axpy(residual, &self.gain.column(0), 1.0);
        if let Some(term) = &self.nonlinear {
            next += term.eval(&self.xhat, u_ref);
        }
        self.xhat = next;
        let threshold = self.threshold.step(delta_rho);
        FdieOutput { residual, threshold, estimate }
    }
}

/// Build an estimator for `model` with observer poles at `pole_radius` and
/// threshold rate `δ = ρ + margin_fraction·(1 − ρ)`.
pub fn design_fdie(model: &StateSpaceModel, pole_radius: f64, margin_fraction: f64, bounds: ThresholdBounds, xhat0: DVector<f64>) -> Result<Fdie, Error> {
    if !(0.0..1.0).contains(&margin_fraction) || margin_fraction == 0.0 && pole_radius == 0.0 {
        return Err(Error::Config(format!("threshold margin fraction must lie in (0, 1), got {margin_fraction}")));
    }
    let gain = observer_gain(model, pole_radius)?;
    let a0 = &model.A - &gain * &model.C;
    let rho = spectral_radius(&a0);
    let (alpha, delta) = compute_alpha_delta(&a0, &model.C, margin_fraction * (1.0 - rho))?;
    let threshold = Threshold::new(alpha, delta, bounds)?;
    Fdie::new(model.clone(), gain, threshold, xhat0)
}

/// Latched fault decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FdDecision {
    /// Isolated blade (1-based), 0 while healthy.
    pub d_fd: usize,
    /// Sample at which the decision was taken.
    pub k_d: Option<u64>,
    /// Several residuals crossed together at least once.
    pub ambiguous: bool,
}

pub fn crossings(residuals: [f64; NUM_BLADES], thresholds: [f64; NUM_BLADES]) -> [bool; NUM_BLADES] {
    let mut out = [false; NUM_BLADES];
    for l in 0..NUM_BLADES {
        out[l] = residuals[l].abs() > thresholds[l];
    }
    out
}

/// Isolation logic on crossing flags: a blade is isolated only when it is
/// the sole crossing one; a simultaneous multi-blade crossing is reported as
/// ambiguous. Once set, the decision never changes.
pub fn fuse_flags(flags: [bool; NUM_BLADES], k: u64, prev: FdDecision) -> FdDecision {
    if prev.d_fd != 0 {
        return prev;
    }
    let count = flags.iter().filter(|&&f| f).count();
    match count {
        0 => prev,
        1 => {
            let l = flags.iter().position(|&f| f).unwrap() + 1;
            FdDecision { d_fd: l, k_d: Some(k), ambiguous: prev.ambiguous }
        }
        _ => FdDecision { ambiguous: true, ..prev },
    }
}

/// Single-sample isolation from residuals and thresholds.
pub fn fuse_decision(residuals: [f64; NUM_BLADES], thresholds: [f64; NUM_BLADES], k: u64, prev: FdDecision) -> FdDecision {
    fuse_flags(crossings(residuals, thresholds), k, prev)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankOutput {
    pub residuals: [f64; NUM_BLADES],
    pub thresholds: [f64; NUM_BLADES],
    pub decision: FdDecision,
}

/// The three estimators, persistence counters and the latched decision.
#[derive(Debug, Clone)]
pub struct FdieBank {
    estimators: Vec<Fdie>,
    confirm: u32,
    counters: [u32; NUM_BLADES],
    decision: FdDecision,
    raw_exceedances: [u64; NUM_BLADES],
    k: u64,
}

impl FdieBank {
    pub fn new(estimators: Vec<Fdie>, confirm: u32) -> Result<Self, Error> {
        if estimators.len() != NUM_BLADES {
            return Err(Error::Config(format!("need {NUM_BLADES} estimators, got {}", estimators.len())));
        }
        if confirm == 0 {
            return Err(Error::Config("confirmation count must be at least 1".into()));
        }
        Ok(FdieBank { estimators, confirm, counters: [0; NUM_BLADES], decision: FdDecision::default(), raw_exceedances: [0; NUM_BLADES], k: 0 })
    }

    pub fn decision(&self) -> FdDecision {
        self.decision
    }

    pub fn estimators(&self) -> &[Fdie] {
        &self.estimators
    }

    /// Samples in which a residual exceeded its threshold, per blade,
    /// regardless of persistence.
    pub fn raw_exceedances(&self) -> [u64; NUM_BLADES] {
        self.raw_exceedances
    }

    pub fn step(&mut self, u_ref: [f64; NUM_BLADES], u_meas: [f64; NUM_BLADES]) -> BankOutput {
        let mut residuals = [0.0; NUM_BLADES];
        let mut thresholds = [0.0; NUM_BLADES];
        for l in 0..NUM_BLADES {
            let o = self.estimators[l].step(u_ref[l], u_meas[l]);
            residuals[l] = o.residual;
            thresholds[l] = o.threshold;
        }
        let raw = crossings(residuals, thresholds);
        let mut confirmed = [false; NUM_BLADES];
        for l in 0..NUM_BLADES {
            if raw[l] {
                self.raw_exceedances[l] += 1;
                self.counters[l] = self.counters[l].saturating_add(1);
            } else {
                self.counters[l] = 0;
            }
            confirmed[l] = self.counters[l] >= self.confirm;
        }
        self.decision = fuse_flags(confirmed, self.k, self.decision);
        self.k += 1;
        BankOutput { residuals, thresholds, decision: self.decision }
    }
}
