//! Subspace predictive repetitive control.
//!
//! Per blade, the periodic difference `δx_k = x_k − x_{k−P}` removes the
//! rotor-synchronous disturbance, leaving a predictor-form ARX model
//!
//! ```text
//! δy_t = Σ_{m=1..p} hu[m]·δu_{t−m} + Σ_{m=1..p} hy[m]·δy_{t−m} + δe_t
//! ```
//!
//! whose Markov row `ξ = [hu[p] … hu[1] | hy[p] … hy[1]]` is tracked by
//! QR-RLS. Once per rotor period the row is lifted to a period-to-period
//! model of the 1P projections
//!
//! ```text
//! [Ȳ; δθ; δȲ]_{j+1} = [[I, Ψu, Ψy], [0, 0, 0], [0, Ψu, Ψy]]·[Ȳ; δθ; δȲ]_j + [Ĥ; I; Ĥ]·δθ_{j+1}
//! ```
//!
//! an LQR gain is synthesised for it and the 1P coefficients are updated as
//! `θ_{j+1} = σθ_j − βK[Ȳ; δθ; δȲ]_j`. The pitch contribution within a
//! period is `φ_k·θ_j` with `φ_k = [sin(2πk/P), cos(2πk/P)]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{pseudo_inverse, solve_dare, NumericsError, QrRls, DARE_MAX_ITER, DARE_TOL};
use crate::{Error, NUM_BLADES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrbsConfig {
    /// Peak amplitude, degrees.
    pub amplitude: f64,
    /// Samples each random bit is held for.
    pub clock: usize,
    /// Cutoff of the first-order shaping filter, Hz.
    pub cutoff_hz: f64,
}

impl Default for PrbsConfig {
    fn default() -> Self {
        PrbsConfig { amplitude: 3.0, clock: 1, cutoff_hz: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprcConfig {
    /// Samples per rotor revolution.
    pub period: usize,
    /// Past window length of the predictor.
    pub past: usize,
    /// RLS forgetting factor.
    pub forgetting: f64,
    /// State weight of the lifted LQR, times identity.
    pub q_weight: f64,
    /// Input weight of the lifted LQR, times identity.
    pub r_weight: f64,
    pub sigma: f64,
    pub beta: f64,
    /// Factor applied to blade loads before they enter the controller
    /// (1e-3 turns kN·m into MN·m).
    pub load_scale: f64,
    /// Full rotor periods of identification before the first gain synthesis.
    pub warmup_periods: usize,
    /// Factor scale used when the RLS is re-seeded around a pretuned row.
    pub reseed_scale: f64,
    pub prbs: PrbsConfig,
}

impl Default for SprcConfig {
    fn default() -> Self {
        SprcConfig {
            period: 625,
            past: 100,
            forgetting: 0.99999,
            q_weight: 1.0,
            r_weight: 0.1,
            sigma: 1.0,
            beta: 0.3,
            load_scale: 1e-3,
            warmup_periods: 4,
            reseed_scale: 1e-2,
            prbs: PrbsConfig::default(),
        }
    }
}

impl SprcConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.period < 4 {
            return bad("rotor period must be at least 4 samples");
        }
        if self.past == 0 || self.past >= self.period {
            return bad("past window must be positive and shorter than the rotor period");
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return bad("forgetting factor must lie in (0, 1]");
        }
        if !(self.q_weight >= 0.0 && self.r_weight > 0.0) {
            return bad("LQR weights must satisfy Q ≥ 0, R > 0");
        }
        if !((0.0..=1.0).contains(&self.sigma) && (0.0..=1.0).contains(&self.beta)) {
            return bad("sigma and beta must lie in [0, 1]");
        }
        if !(self.load_scale > 0.0 && self.reseed_scale > 0.0) {
            return bad("load and reseed scales must be positive");
        }
        if !(self.prbs.amplitude >= 0.0 && self.prbs.clock >= 1 && self.prbs.cutoff_hz > 0.0) {
            return bad("PRBS needs amplitude ≥ 0, clock ≥ 1 and a positive cutoff");
        }
        Ok(())
    }
}

/// Ring buffers for the periodic difference and the past windows.
///
/// Raw samples are kept for one period to form `δx_k`; the last `p + 1`
/// differences are stored twice side by side so that every window is a
/// contiguous, time-ascending slice.
#[derive(Debug, Clone)]
pub struct DeltaBuffers {
    period: usize,
    past: usize,
    raw_u: Vec<[f64; NUM_BLADES]>,
    raw_y: Vec<[f64; NUM_BLADES]>,
    du: [Vec<f64>; NUM_BLADES],
    dy: [Vec<f64>; NUM_BLADES],
    pos: usize,
    count: u64,
}

impl DeltaBuffers {
    pub fn new(period: usize, past: usize) -> Self {
        let len = 2 * (past + 1);
        DeltaBuffers {
            period,
            past,
            raw_u: vec![[0.0; NUM_BLADES]; period],
            raw_y: vec![[0.0; NUM_BLADES]; period],
            du: std::array::from_fn(|_| vec![0.0; len]),
            dy: std::array::from_fn(|_| vec![0.0; len]),
            pos: past,
            count: 0,
        }
    }

    /// Samples pushed so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    /// A full regressor is available (at least `P + p + 1` samples seen).
    pub fn is_warm(&self) -> bool {
        self.count > (self.period + self.past) as u64
    }

    /// Push one sample; returns whether the regressors are valid.
    pub fn push(&mut self, u: [f64; NUM_BLADES], y: [f64; NUM_BLADES]) -> bool {
        let slot = (self.count % self.period as u64) as usize;
        let have_period = self.count >= self.period as u64;
        let w = self.past + 1;
        self.pos = (self.pos + 1) % w;
        for l in 0..NUM_BLADES {
            let (du, dy) = if have_period { (u[l] - self.raw_u[slot][l], y[l] - self.raw_y[slot][l]) } else { (0.0, 0.0) };
            self.du[l][self.pos] = du;
            self.du[l][self.pos + w] = du;
            self.dy[l][self.pos] = dy;
            self.dy[l][self.pos + w] = dy;
        }
        self.raw_u[slot] = u;
        self.raw_y[slot] = y;
        self.count += 1;
        self.is_warm()
    }

    /// Regressor `[δu_{t−p..t−1}; δy_{t−p..t−1}]` of `blade` (0-based)
    /// written into `out` (length `2p`); returns the target `δy_t`.
    pub fn regressor(&self, blade: usize, out: &mut [f64]) -> f64 {
        let p = self.past;
        let w = p + 1;
        // Oldest of the last w entries sits right after the newest.
        let start = self.pos + 1;
        out[..p].copy_from_slice(&self.du[blade][start..start + p]);
        out[p..].copy_from_slice(&self.dy[blade][start..start + p]);
        self.dy[blade][start + w - 1]
    }

    /// Latest `δu_t` per blade.
    pub fn latest_du(&self) -> [f64; NUM_BLADES] {
        std::array::from_fn(|l| self.du[l][self.pos])
    }

    /// Owned per-blade regressors and targets, or `None` while warming up.
    pub fn delta_update(&mut self, u: [f64; NUM_BLADES], y: [f64; NUM_BLADES]) -> Option<([Vec<f64>; NUM_BLADES], [f64; NUM_BLADES])> {
        if !self.push(u, y) {
            return None;
        }
        let mut targets = [0.0; NUM_BLADES];
        let regs = std::array::from_fn(|l| {
            let mut r = vec![0.0; 2 * self.past];
            targets[l] = self.regressor(l, &mut r);
            r
        });
        Some((regs, targets))
    }
}

/// Per-blade Markov row tracked by QR-RLS.
#[derive(Debug, Clone)]
pub struct MarkovEstimate {
    rls: QrRls,
    past: usize,
    row: Vec<f64>,
    frozen: bool,
}

impl MarkovEstimate {
    pub fn new(past: usize, forgetting: f64) -> Result<Self, Error> {
        let rls = QrRls::new(2 * past, forgetting)?;
        Ok(MarkovEstimate { rls, past, row: vec![0.0; 2 * past], frozen: false })
    }

    pub fn rls(&self) -> &QrRls {
        &self.rls
    }

    /// Row as of the last [`refresh`](Self::refresh).
    pub fn row(&self) -> &[f64] {
        &self.row
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// One RLS step; returns the prediction error of the cached row.
    /// Frozen estimators ignore the data.
    pub fn identify_step(&mut self, regressor: &[f64], target: f64) -> Result<f64, NumericsError> {
        let pred: f64 = self.row.iter().zip(regressor).map(|(a, b)| a * b).sum();
        if !self.frozen {
            self.rls.update(regressor, target)?;
        }
        Ok(target - pred)
    }

    /// Recompute the cached row from the factor.
    pub fn refresh(&mut self) {
        self.row = self.rls.estimate();
    }

    /// Replace the row and re-seed the factor to `scale·I` around it.
    pub fn reseed(&mut self, row: &[f64], scale: f64) -> Result<(), NumericsError> {
        self.rls.reseed(scale, row)?;
        self.row = row.to_vec();
        Ok(())
    }

    /// `(hu, hy)` indexed by delay, `h[0] = 0`.
    pub fn impulse_terms(&self) -> (Vec<f64>, Vec<f64>) {
        markov_to_impulse(&self.row, self.past)
    }
}

/// Split a Markov row into input and output impulse terms indexed by delay.
pub fn markov_to_impulse(row: &[f64], past: usize) -> (Vec<f64>, Vec<f64>) {
    let mut hu = vec![0.0; past + 1];
    let mut hy = vec![0.0; past + 1];
    for m in 1..=past {
        hu[m] = row[past - m];
        hy[m] = row[2 * past - m];
    }
    (hu, hy)
}

/// 1P basis and its pseudo-inverse.
#[derive(Debug, Clone)]
pub struct Basis {
    pub phi: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
}

/// `P×2` matrix with columns `sin(2πk/P)` and `cos(2πk/P)`.
pub fn build_basis(period: usize) -> DMatrix<f64> {
    DMatrix::from_fn(period, 2, |k, c| {
        let a = 2.0 * PI * k as f64 / period as f64;
        if c == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

impl Basis {
    pub fn new(period: usize) -> Result<Self, Error> {
        if period < 4 {
            return Err(Error::Config("rotor period must be at least 4 samples".into()));
        }
        let phi = build_basis(period);
        let pinv = pseudo_inverse(&phi)?;
        Ok(Basis { phi, pinv })
    }

    pub fn period(&self) -> usize {
        self.phi.nrows()
    }
}

/// Period-to-period model of one blade.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub abar: DMatrix<f64>,
    pub bbar: DMatrix<f64>,
}

/// Lift the impulse terms of one blade to the projected 6-state system.
///
/// Within a period the output obeys `δY = Hu·δU + Hy·δY + Gu·δU⁻ + Gy·δY⁻`,
/// where the `H` are strictly lower-triangular Toeplitz matrices of the
/// impulse terms and the `G` carry the last `p` samples `δU⁻, δY⁻` of the
/// previous period (zero once the delay exceeds `p`). Solving for `δY`,
/// substituting `δU = φ·δθ`, `δ·⁻ ≈ φ_tail·δ·̄` and projecting with `φ⁺` gives
/// `Ĥ`, `Ψu`, `Ψy`.
pub fn build_lifted(hu: &[f64], hy: &[f64], basis: &Basis) -> LiftedSystem {
    let p = hu.len() - 1;
    let period = basis.period();
    let phi = &basis.phi;
    let tail = period - p;
    // Columns: Hu·φ | Gu·φ_tail | Gy·φ_tail
    let mut x = DMatrix::zeros(period, 6);
    for i in 0..period {
        for c in 0..2 {
            let mut h = 0.0;
            for m in 1..=p.min(i) {
                h += hu[m] * phi[(i - m, c)];
            }
            let (mut gu, mut gy) = (0.0, 0.0);
            for j in i..p {
                let delay = i + p - j;
                gu += hu[delay] * phi[(tail + j, c)];
                gy += hy[delay] * phi[(tail + j, c)];
            }
            x[(i, c)] = h;
            x[(i, 2 + c)] = gu;
            x[(i, 4 + c)] = gy;
        }
    }
    // (I − Hy)⁻¹ by forward substitution, column by column.
    for col in 0..6 {
        for i in 0..period {
            let mut acc = x[(i, col)];
            for m in 1..=p.min(i) {
                acc += hy[m] * x[(i - m, col)];
            }
            x[(i, col)] = acc;
        }
    }
    let proj = &basis.pinv * x;
    let hh = proj.columns(0, 2);
    let psi_u = proj.columns(2, 2);
    let psi_y = proj.columns(4, 2);

    let mut abar = DMatrix::zeros(6, 6);
    abar.view_mut((0, 0), (2, 2)).fill_with_identity();
    abar.view_mut((0, 2), (2, 2)).copy_from(&psi_u);
    abar.view_mut((0, 4), (2, 2)).copy_from(&psi_y);
    abar.view_mut((4, 2), (2, 2)).copy_from(&psi_u);
    abar.view_mut((4, 4), (2, 2)).copy_from(&psi_y);
    let mut bbar = DMatrix::zeros(6, 2);
    bbar.view_mut((0, 0), (2, 2)).copy_from(&hh);
    bbar.view_mut((2, 0), (2, 2)).fill_with_identity();
    bbar.view_mut((4, 0), (2, 2)).copy_from(&hh);
    LiftedSystem { abar, bbar }
}

/// LQR gain of the lifted system with `Q = q·I₆`, `R = r·I₂`.
pub fn update_gain(sys: &LiftedSystem, q_weight: f64, r_weight: f64) -> Result<DMatrix<f64>, NumericsError> {
    let q = DMatrix::identity(6, 6) * q_weight;
    let r = DMatrix::identity(2, 2) * r_weight;
    Ok(solve_dare(&sys.abar, &sys.bbar, &q, &r, DARE_TOL, DARE_MAX_ITER)?.k)
}

/// 1P law of one blade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitiveLaw {
    pub theta: [f64; 2],
    pub dtheta: [f64; 2],
    /// Projection of the last complete period, controller units.
    pub ybar: Option<[f64; 2]>,
    pub dybar: [f64; 2],
}

impl Default for RepetitiveLaw {
    fn default() -> Self {
        RepetitiveLaw { theta: [0.0; 2], dtheta: [0.0; 2], ybar: None, dybar: [0.0; 2] }
    }
}

impl RepetitiveLaw {
    /// Lifted state `[Ȳ; δθ; δȲ]` for a freshly measured projection.
    pub fn lifted_state(&self, ybar: [f64; 2]) -> [f64; 6] {
        let dybar = match self.ybar {
            Some(prev) => [ybar[0] - prev[0], ybar[1] - prev[1]],
            None => [0.0; 2],
        };
        [ybar[0], ybar[1], self.dtheta[0], self.dtheta[1], dybar[0], dybar[1]]
    }

    /// `θ_{j+1} = σθ_j − βK[Ȳ_j; δθ_j; δȲ_j]`, storing `δθ_{j+1}` and `Ȳ_j`.
    pub fn theta_update(&mut self, ybar: [f64; 2], gain: &DMatrix<f64>, sigma: f64, beta: f64) {
        let state = self.lifted_state(ybar);
        let kx = gain * DVector::from_column_slice(&state);
        let next = [sigma * self.theta[0] - beta * kx[0], sigma * self.theta[1] - beta * kx[1]];
        self.dtheta = [next[0] - self.theta[0], next[1] - self.theta[1]];
        self.dybar = [state[4], state[5]];
        self.ybar = Some(ybar);
        self.theta = next;
    }

    /// Record a projection without moving `θ`.
    pub fn observe(&mut self, ybar: [f64; 2]) {
        let s = self.lifted_state(ybar);
        self.dybar = [s[4], s[5]];
        self.ybar = Some(ybar);
        self.dtheta = [0.0; 2];
    }

    /// Pitch contribution `φ_k·θ` at phase index `k mod P`.
    pub fn output(&self, basis: &Basis, k_mod_p: usize) -> f64 {
        basis.phi[(k_mod_p, 0)] * self.theta[0] + basis.phi[(k_mod_p, 1)] * self.theta[1]
    }

    pub fn amplitude(&self) -> f64 {
        self.theta[0].hypot(self.theta[1])
    }
}

/// Per-blade binary ±A sequence, held for `clock` samples and shaped by a
/// first-order low-pass. The output is a convex combination of ±A, so it
/// never exceeds the amplitude.
#[derive(Debug, Clone)]
pub struct Prbs {
    amplitude: f64,
    clock: usize,
    pole: f64,
    level: [f64; NUM_BLADES],
    out: [f64; NUM_BLADES],
    tick: usize,
    rng: ChaCha8Rng,
}

impl Prbs {
    pub fn new(cfg: &PrbsConfig, ts: f64, rng: ChaCha8Rng) -> Self {
        Prbs {
            amplitude: cfg.amplitude,
            clock: cfg.clock.max(1),
            pole: (-2.0 * PI * cfg.cutoff_hz * ts).exp(),
            level: [0.0; NUM_BLADES],
            out: [0.0; NUM_BLADES],
            tick: 0,
            rng,
        }
    }

    pub fn seeded(cfg: &PrbsConfig, ts: f64, seed: u64) -> Self {
        Self::new(cfg, ts, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn step(&mut self) -> [f64; NUM_BLADES] {
        if self.tick % self.clock == 0 {
            for l in self.level.iter_mut() {
                *l = if self.rng.random::<bool>() { self.amplitude } else { -self.amplitude };
            }
        }
        self.tick += 1;
        for (o, l) in self.out.iter_mut().zip(&self.level) {
            *o = self.pole * *o + (1.0 - self.pole) * l;
        }
        self.out
    }
}

/// Things worth reporting that happened inside the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SprcEventKind {
    /// Riccati synthesis failed; the previous gain was kept.
    GainKept,
    /// RLS factor flagged degenerate at a period boundary.
    DegenerateFactor,
    /// Pretuned parameters switched in.
    Switched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprcEvent {
    pub k: u64,
    pub blade: usize,
    pub kind: SprcEventKind,
}

/// Per-sample output of [`SprcState::observe`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SprcSample {
    /// Prediction errors of the cached Markov rows, load units.
    pub ident_residuals: [f64; NUM_BLADES],
    /// `θ` was updated at the end of this sample.
    pub period_end: bool,
}

/// Complete controller state for the three blades.
#[derive(Debug, Clone)]
pub struct SprcState {
    cfg: SprcConfig,
    basis: Basis,
    buffers: DeltaBuffers,
    estimates: Vec<MarkovEstimate>,
    laws: [RepetitiveLaw; NUM_BLADES],
    gains: [Option<DMatrix<f64>>; NUM_BLADES],
    /// Lifted model each gain was synthesised from.
    gain_models: [Option<LiftedSystem>; NUM_BLADES],
    accum: [[f64; 2]; NUM_BLADES],
    /// Discard the projection of the period in progress.
    skip_period: bool,
    warm_periods: usize,
    events: Vec<SprcEvent>,
    regressor: Vec<f64>,
    k: u64,
}

impl SprcState {
    pub fn new(cfg: SprcConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let estimates = (0..NUM_BLADES).map(|_| MarkovEstimate::new(cfg.past, cfg.forgetting)).collect::<Result<_, _>>()?;
        Ok(SprcState {
            basis: Basis::new(cfg.period)?,
            buffers: DeltaBuffers::new(cfg.period, cfg.past),
            estimates,
            laws: Default::default(),
            gains: Default::default(),
            gain_models: Default::default(),
            accum: [[0.0; 2]; NUM_BLADES],
            skip_period: false,
            warm_periods: 0,
            events: Vec::new(),
            regressor: vec![0.0; 2 * cfg.past],
            k: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &SprcConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn laws(&self) -> &[RepetitiveLaw; NUM_BLADES] {
        &self.laws
    }

    pub fn thetas(&self) -> [[f64; 2]; NUM_BLADES] {
        std::array::from_fn(|l| self.laws[l].theta)
    }

    pub fn estimates(&self) -> &[MarkovEstimate] {
        &self.estimates
    }

    pub fn gain(&self, blade: usize) -> Option<&DMatrix<f64>> {
        self.gains[blade].as_ref()
    }

    /// Lifted model the current gain of `blade` was synthesised from.
    pub fn gain_model(&self, blade: usize) -> Option<&LiftedSystem> {
        self.gain_models[blade].as_ref()
    }

    pub fn events(&self) -> &[SprcEvent] {
        &self.events
    }

    pub fn buffers(&self) -> &DeltaBuffers {
        &self.buffers
    }

    /// Pitch contributions for the current sample.
    pub fn control_output(&self) -> [f64; NUM_BLADES] {
        let i = (self.k % self.cfg.period as u64) as usize;
        std::array::from_fn(|l| self.laws[l].output(&self.basis, i))
    }

    /// Current RLS estimate of the Markov row of `blade` (0-based).
    pub fn refreshed_row(&mut self, blade: usize) -> Vec<f64> {
        self.estimates[blade].refresh();
        self.estimates[blade].row().to_vec()
    }

    /// Stop adapting `blade` (0-based).
    pub fn freeze_blade(&mut self, blade: usize) {
        self.estimates[blade].freeze();
    }

    pub fn is_frozen(&self, blade: usize) -> bool {
        self.estimates[blade].is_frozen()
    }

    /// Replace `θ` and the Markov rows, re-seed the factors and discard the
    /// period in progress.
    pub fn warm_start(&mut self, rows: &[Vec<f64>], thetas: &[[f64; 2]]) -> Result<(), Error> {
        if rows.len() != NUM_BLADES || thetas.len() != NUM_BLADES {
            return Err(Error::Bank("warm start needs one row and one θ per blade".into()));
        }
        for l in 0..NUM_BLADES {
            self.estimates[l].reseed(&rows[l], self.cfg.reseed_scale)?;
            self.laws[l] = RepetitiveLaw { theta: thetas[l], ..RepetitiveLaw::default() };
            self.events.push(SprcEvent { k: self.k, blade: l + 1, kind: SprcEventKind::Switched });
        }
        self.skip_period = true;
        self.warm_periods = self.warm_periods.max(self.cfg.warmup_periods);
        self.resynthesize();
        Ok(())
    }

    /// Feed the physical pitch and measured load of the current sample.
    pub fn observe(&mut self, u: [f64; NUM_BLADES], y: [f64; NUM_BLADES]) -> Result<SprcSample, Error> {
        let scale = self.cfg.load_scale;
        let ys: [f64; NUM_BLADES] = std::array::from_fn(|l| y[l] * scale);
        let mut out = SprcSample::default();
        if self.buffers.push(u, ys) {
            for l in 0..NUM_BLADES {
                let target = self.buffers.regressor(l, &mut self.regressor);
                out.ident_residuals[l] = self.estimates[l].identify_step(&self.regressor, target)? / scale;
            }
        }
        let i = (self.k % self.cfg.period as u64) as usize;
        for l in 0..NUM_BLADES {
            self.accum[l][0] += self.basis.pinv[(0, i)] * ys[l];
            self.accum[l][1] += self.basis.pinv[(1, i)] * ys[l];
        }
        if i + 1 == self.cfg.period {
            self.end_of_period();
            out.period_end = true;
        }
        self.k += 1;
        Ok(out)
    }

    fn end_of_period(&mut self) {
        let ybars = self.accum;
        self.accum = [[0.0; 2]; NUM_BLADES];
        if self.buffers.is_warm() {
            self.warm_periods += 1;
        }
        if self.warm_periods >= self.cfg.warmup_periods {
            self.resynthesize();
        }
        if std::mem::take(&mut self.skip_period) {
            for law in self.laws.iter_mut() {
                law.ybar = None;
                law.dtheta = [0.0; 2];
            }
            return;
        }
        for l in 0..NUM_BLADES {
            if self.estimates[l].is_frozen() {
                continue;
            }
            match &self.gains[l] {
                Some(gain) => self.laws[l].theta_update(ybars[l], gain, self.cfg.sigma, self.cfg.beta),
                None => self.laws[l].observe(ybars[l]),
            }
        }
    }

    /// Refresh rows and recompute gains for every adapting blade.
    fn resynthesize(&mut self) {
        for l in 0..NUM_BLADES {
            if self.estimates[l].is_frozen() {
                continue;
            }
            self.estimates[l].refresh();
            if self.estimates[l].rls().is_degenerate() {
                self.events.push(SprcEvent { k: self.k, blade: l + 1, kind: SprcEventKind::DegenerateFactor });
            }
            let (hu, hy) = self.estimates[l].impulse_terms();
            let sys = build_lifted(&hu, &hy, &self.basis);
            match update_gain(&sys, self.cfg.q_weight, self.cfg.r_weight) {
                Ok(k) => {
                    self.gains[l] = Some(k);
                    self.gain_models[l] = Some(sys);
                }
                Err(_) => self.events.push(SprcEvent { k: self.k, blade: l + 1, kind: SprcEventKind::GainKept }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{psd_estimate, spectral_radius};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Scalar system in innovation form, `x⁺ = a x + b u + K e`,
    /// `y = x + d + e`; its predictor has pole `a − K`.
    struct Lti {
        a: f64,
        b: f64,
        k: f64,
        x: f64,
    }

    impl Lti {
        fn step(&mut self, u: f64, e: f64) -> f64 {
            let y = self.x + e;
            self.x = self.a * self.x + self.b * u + self.k * e;
            y
        }

        /// Predictor-form impulse terms `hu[m] = ã^{m−1} b`, `hy[m] = ã^{m−1} K`.
        fn impulse(&self, past: usize) -> (Vec<f64>, Vec<f64>) {
            let at = self.a - self.k;
            let mut hu = vec![0.0; past + 1];
            let mut hy = vec![0.0; past + 1];
            for m in 1..=past {
                hu[m] = at.powi(m as i32 - 1) * self.b;
                hy[m] = at.powi(m as i32 - 1) * self.k;
            }
            (hu, hy)
        }
    }

    fn test_lti() -> Lti {
        Lti { a: 0.95, b: 0.5, k: 0.1, x: 0.0 }
    }

    fn disturbance(k: usize, period: usize) -> f64 {
        4.0 * (2.0 * PI * k as f64 / period as f64 + 0.3).sin()
    }

    #[test]
    fn basis_quarter_period() {
        let phi = build_basis(4);
        let expect = [[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]];
        for (k, row) in expect.iter().enumerate() {
            for c in 0..2 {
                assert!((phi[(k, c)] - row[c]).abs() < 1e-15);
            }
        }
        let gram = phi.transpose() * &phi;
        assert!((gram - DMatrix::identity(2, 2) * 2.0).abs().max() < 1e-12);
        let pinv = pseudo_inverse(&phi).unwrap();
        assert!((pinv - phi.transpose() * 0.5).abs().max() < 1e-12);
    }

    #[test]
    fn basis_full_rotor() {
        let b = Basis::new(625).unwrap();
        assert!((&b.pinv * &b.phi - DMatrix::identity(2, 2)).abs().max() < 1e-10);
        let gram = b.phi.transpose() * &b.phi;
        assert!((gram - DMatrix::identity(2, 2) * 312.5).abs().max() < 1e-9);
    }

    #[test]
    fn periodic_signals_are_annihilated() {
        let (period, past) = (50, 10);
        let mut buf = DeltaBuffers::new(period, past);
        let mut r = vec![0.0; 2 * past];
        for k in 0..5 * period {
            let u = [(k % period) as f64, 2.0, -((k % period) as f64).sqrt()];
            let y = [disturbance(k, period); 3];
            if buf.push(u, y) {
                for l in 0..3 {
                    let t = buf.regressor(l, &mut r);
                    assert!(t.abs() < 1e-12 && r.iter().all(|v| v.abs() < 1e-12));
                }
            }
        }
        assert!(buf.is_warm());
    }

    #[test]
    fn cold_buffers_emit_nothing() {
        let mut buf = DeltaBuffers::new(20, 5);
        for k in 0..25 {
            assert!(buf.delta_update([k as f64; 3], [0.0; 3]).is_none());
        }
        assert!(buf.delta_update([1.0; 3], [0.0; 3]).is_some());
    }

    #[test]
    fn regressor_layout_is_time_ascending() {
        let (period, past) = (8, 3);
        let mut buf = DeltaBuffers::new(period, past);
        // u_k = k² gives δu_k = P(2k − P); y_k = −k gives δy_k = −P.
        let mut out = None;
        for k in 0..20u64 {
            let kf = k as f64;
            out = buf.delta_update([kf * kf; 3], [-kf; 3]);
        }
        let (regs, targets) = out.unwrap();
        let p = period as f64;
        let du = |k: f64| p * (2.0 * k - p);
        assert_eq!(regs[0][..3], [du(16.0), du(17.0), du(18.0)]);
        assert_eq!(regs[1][3..], [-p, -p, -p]);
        assert_eq!(targets[2], -p);
    }

    #[test]
    fn true_markov_row_leaves_white_residual() {
        // 0.85^120 keeps the truncation error far below the tolerance.
        let (period, past) = (300, 120);
        let mut sys = test_lti();
        let (hu, hy) = sys.impulse(past);
        let mut row = vec![0.0; 2 * past];
        for m in 1..=past {
            row[past - m] = hu[m];
            row[2 * past - m] = hy[m];
        }
        let mut buf = DeltaBuffers::new(period, past);
        let mut prbs = Prbs::seeded(&PrbsConfig::default(), 0.01, 3);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut es = vec![0.0; 5000];
        let mut r = vec![0.0; 2 * past];
        let mut res = Vec::new();
        for k in 0..5000 {
            let u = prbs.step()[0];
            es[k] = noise.sample(&mut rng);
            let y = sys.step(u, es[k]) + disturbance(k, period);
            if buf.push([u; 3], [y; 3]) {
                let t = buf.regressor(0, &mut r);
                let pred: f64 = row.iter().zip(&r).map(|(a, b)| a * b).sum();
                res.push((t - pred, es[k] - es[k - period]));
            }
        }
        for (got, want) in res {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    /// Feed `periods` rotor periods of PRBS-driven data from `sys` to an
    /// estimate with forgetting `lambda`; returns the estimate and the number
    /// of regression updates.
    fn identify(sys: &mut Lti, period: usize, past: usize, periods: usize, sigma: f64, lambda: f64) -> (MarkovEstimate, MarkovEstimate, usize) {
        let mut est = MarkovEstimate::new(past, lambda).unwrap();
        let mut batch = MarkovEstimate::new(past, 1.0).unwrap();
        let mut buf = DeltaBuffers::new(period, past);
        let mut prbs = Prbs::seeded(&PrbsConfig::default(), 0.01, 1);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut r = vec![0.0; 2 * past];
        let mut n = 0;
        for k in 0..periods * period {
            let u = prbs.step()[0];
            let y = sys.step(u, noise.sample(&mut rng)) + disturbance(k, period);
            if buf.push([u; 3], [y; 3]) {
                let t = buf.regressor(0, &mut r);
                est.identify_step(&r, t).unwrap();
                batch.identify_step(&r, t).unwrap();
                n += 1;
            }
        }
        est.refresh();
        batch.refresh();
        (est, batch, n)
    }

    #[test]
    fn identification_recovers_markov_parameters() {
        // With output feedback in the regressor, directions that trade
        // δy-terms against the plant response g_j = a^{j−1}·b are resolved
        // only by the innovations, with standard error ≈ 1/√N per lag
        // whatever the noise level. Each input term therefore carries an
        // error of order ‖g‖/√N; the leading term does not.
        let (period, past) = (625, 100);
        let mut sys = test_lti();
        let (hu, _) = sys.impulse(past);
        let (est, batch, n) = identify(&mut sys, period, past, 18, 0.01, 0.99999);
        assert!(n >= 10_000);
        let (ehu, _) = est.impulse_terms();
        assert!((ehu[1] - hu[1]).abs() <= 0.05 * hu[1].abs(), "{} vs {}", ehu[1], hu[1]);
        let g_norm = sys.b / (1.0 - sys.a * sys.a).sqrt();
        let bound = 5.0 * g_norm / (n as f64).sqrt();
        for m in 1..=past {
            assert!((ehu[m] - hu[m]).abs() <= bound, "delay {m}: {} vs {}", ehu[m], hu[m]);
        }
        let largest = hu[1].abs();
        for (a, b) in est.row().iter().zip(batch.row()) {
            assert!((a - b).abs() <= 0.01 * largest);
        }
    }

    #[test]
    fn identification_is_consistent() {
        // Long record, fast predictor: every entry of the Markov row with
        // magnitude ≥ 20 % of the largest within 5 %.
        let (period, past) = (625, 20);
        let mut sys = Lti { a: 0.5, b: 0.5, k: 0.2, x: 0.0 };
        let (hu, hy) = sys.impulse(past);
        let (est, _, _) = identify(&mut sys, period, past, 200, 0.05, 1.0);
        let (ehu, ehy) = est.impulse_terms();
        let largest = hu.iter().chain(&hy).fold(0.0f64, |a, v| a.max(v.abs()));
        let mut checked = 0;
        for m in 1..=past {
            for (e, t) in [(ehu[m], hu[m]), (ehy[m], hy[m])] {
                if t.abs() >= 0.2 * largest {
                    assert!((e - t).abs() <= 0.05 * t.abs(), "delay {m}: {e} vs {t}");
                    checked += 1;
                }
            }
        }
        assert!(checked >= 3);
    }

    #[test]
    fn zero_regressors_keep_the_estimate() {
        let mut est = MarkovEstimate::new(4, 0.99999).unwrap();
        est.reseed(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 1e-2).unwrap();
        for _ in 0..10_000 {
            est.identify_step(&[0.0; 8], 0.0).unwrap();
        }
        est.refresh();
        for (i, v) in est.row().iter().enumerate() {
            assert!((v - (i + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_markov_row_lifts_to_trivial_pattern() {
        let basis = Basis::new(625).unwrap();
        let sys = build_lifted(&[0.0; 101], &[0.0; 101], &basis);
        let mut a = DMatrix::zeros(6, 6);
        a.view_mut((0, 0), (2, 2)).fill_with_identity();
        let mut b = DMatrix::zeros(6, 2);
        b.view_mut((2, 0), (2, 2)).fill_with_identity();
        assert_eq!(sys.abar, a);
        assert_eq!(sys.bbar, b);
    }

    #[test]
    fn zero_markov_row_has_no_stabilizing_gain() {
        // The Ȳ integrator is unreachable when Ĥ vanishes, so no Riccati
        // solution exists and the controller keeps its previous gain.
        let basis = Basis::new(625).unwrap();
        let sys = build_lifted(&[0.0; 101], &[0.0; 101], &basis);
        assert!(update_gain(&sys, 1.0, 0.1).is_err());
    }

    #[test]
    fn middle_block_row_is_zero() {
        let basis = Basis::new(100).unwrap();
        let hu: Vec<f64> = (0..=20).map(|m| if m == 0 { 0.0 } else { 0.9f64.powi(m) }).collect();
        let hy: Vec<f64> = (0..=20).map(|m| if m == 0 { 0.0 } else { 0.1 * 0.8f64.powi(m) }).collect();
        let sys = build_lifted(&hu, &hy, &basis);
        assert!(sys.abar.rows(2, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lifted_model_predicts_next_period() {
        let (period, past) = (625, 100);
        let basis = Basis::new(period).unwrap();
        let mut sys = test_lti();
        let (hu, hy) = sys.impulse(past);
        let lifted = build_lifted(&hu, &hy, &basis);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let thetas: Vec<[f64; 2]> = (0..8).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let mut ybars = Vec::new();
        for (j, th) in thetas.iter().enumerate() {
            let mut acc = [0.0; 2];
            for i in 0..period {
                let u = basis.phi[(i, 0)] * th[0] + basis.phi[(i, 1)] * th[1];
                let y = sys.step(u, 0.0) + disturbance(j * period + i, period);
                acc[0] += basis.pinv[(0, i)] * y;
                acc[1] += basis.pinv[(1, i)] * y;
            }
            ybars.push(acc);
        }
        for j in 2..thetas.len() - 1 {
            let state = DVector::from_column_slice(&[
                ybars[j][0],
                ybars[j][1],
                thetas[j][0] - thetas[j - 1][0],
                thetas[j][1] - thetas[j - 1][1],
                ybars[j][0] - ybars[j - 1][0],
                ybars[j][1] - ybars[j - 1][1],
            ]);
            let dtheta = DVector::from_column_slice(&[thetas[j + 1][0] - thetas[j][0], thetas[j + 1][1] - thetas[j][1]]);
            let pred = &lifted.abar * state + &lifted.bbar * dtheta;
            let actual = DVector::from_column_slice(&ybars[j + 1]);
            let err = (pred.rows(0, 2) - &actual).norm();
            assert!(err <= 0.02 * actual.norm(), "period {j}: error {err}, |Ȳ| {}", actual.norm());
        }
    }

    #[test]
    fn gains_are_stabilizing() {
        let basis = Basis::new(625).unwrap();
        let (hu, hy) = test_lti().impulse(100);
        let sys = build_lifted(&hu, &hy, &basis);
        let k = update_gain(&sys, 1.0, 0.1).unwrap();
        assert!(spectral_radius(&(&sys.abar - &sys.bbar * &k)) < 1.0);
        let mut last = f64::INFINITY;
        for r in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let n = update_gain(&sys, 1.0, r).unwrap().norm();
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn theta_update_rules() {
        let mut law = RepetitiveLaw { theta: [1.0, -2.0], ..Default::default() };
        law.theta_update([3.0, 4.0], &DMatrix::zeros(2, 6), 1.0, 0.3);
        assert_eq!(law.theta, [1.0, -2.0]);
        let mut law = RepetitiveLaw { theta: [1.0, -2.0], ..Default::default() };
        for j in 1..=20 {
            law.theta_update([3.0, 4.0], &DMatrix::from_element(2, 6, 1.0), 0.5, 0.0);
            assert!((law.theta[0] - 0.5f64.powi(j)).abs() < 1e-15);
        }
    }

    #[test]
    fn output_follows_basis() {
        let basis = Basis::new(4).unwrap();
        let law = RepetitiveLaw { theta: [1.0, 0.0], ..Default::default() };
        let out: Vec<f64> = (0..4).map(|i| law.output(&basis, i)).collect();
        for (o, e) in out.iter().zip([0.0, 1.0, 0.0, -1.0]) {
            assert!((o - e).abs() < 1e-15);
        }
        let zero = RepetitiveLaw::default();
        assert!((0..4).all(|i| zero.output(&basis, i) == 0.0));
    }

    #[test]
    fn prbs_is_bounded_and_flat() {
        let cfg = PrbsConfig::default();
        let mut prbs = Prbs::seeded(&cfg, 0.01, 17);
        let mut x = Vec::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            let v = prbs.step();
            assert!(v.iter().all(|s| s.abs() <= 3.0));
            x.push(v[0]);
        }
        let psd = psd_estimate(&x, 100.0, 2500).unwrap();
        let band_mean = |f: f64| {
            let v: Vec<f64> = psd.freqs.iter().zip(&psd.power).filter(|(fr, _)| (**fr - f).abs() <= 0.1).map(|(_, p)| *p).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let db = |p: f64| 10.0 * p.log10();
        let low = band_mean(0.2);
        for f in [0.5, 1.0, 1.5, 2.0] {
            assert!((db(band_mean(f)) - db(low)).abs() < 6.0, "{f} Hz: {} dB vs {} dB", db(band_mean(f)), db(low));
        }
        let mut zero = Prbs::seeded(&PrbsConfig { amplitude: 0.0, ..cfg }, 0.01, 1);
        assert!((0..1000).all(|_| zero.step() == [0.0; 3]));
    }

    #[test]
    fn control_output_is_periodic_between_updates() {
        let cfg = SprcConfig { period: 40, past: 5, ..Default::default() };
        let mut s = SprcState::new(cfg).unwrap();
        s.laws[0].theta = [0.7, -0.2];
        s.laws[2].theta = [-1.1, 0.4];
        let mut outs = Vec::new();
        for _ in 0..40 {
            outs.push(s.control_output());
            s.k += 1;
        }
        for i in 0..40 {
            assert_eq!(outs[i], s.control_output());
            s.k += 1;
        }
        let amp = (0..40).map(|i| outs[i][0].abs()).fold(0.0, f64::max);
        assert!((amp - s.laws[0].amplitude()).abs() < 1e-2);
    }

    #[test]
    fn stuck_input_gives_zero_input_difference() {
        let mut buf = DeltaBuffers::new(30, 5);
        for k in 0..200u64 {
            let stuck = if k >= 50 { 10.0 } else { (k as f64).sin() };
            buf.push([(k as f64).cos(), 0.0, stuck], [0.0; 3]);
            if k >= 50 + 30 {
                assert_eq!(buf.latest_du()[2], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn delta_annihilates_any_periodic_signal(vals in proptest::collection::vec(-100.0f64..100.0, 12), past in 1usize..11) {
            let period = vals.len();
            let mut buf = DeltaBuffers::new(period, past);
            let mut r = vec![0.0; 2 * past];
            for k in 0..6 * period {
                let v = vals[k % period];
                if buf.push([v, -v, 2.0 * v], [v * v, v, -v]) {
                    for l in 0..3 {
                        let t = buf.regressor(l, &mut r);
                        prop_assert!(t.abs() < 1e-12);
                        prop_assert!(r.iter().all(|x| x.abs() < 1e-12));
                    }
                }
            }
        }

        #[test]
        fn output_amplitude_is_theta_norm(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let basis = Basis::new(360).unwrap();
            let law = RepetitiveLaw { theta: [a, b], ..Default::default() };
            let peak = (0..360).map(|i| law.output(&basis, i).abs()).fold(0.0, f64::max);
            prop_assert!((peak - law.amplitude()).abs() <= 1e-3 * law.amplitude().max(1e-9) + 1e-12);
        }

        #[test]
        fn prbs_never_exceeds_amplitude(seed in 0u64..1000, amp in 0.0f64..10.0, clock in 1usize..20) {
            let mut prbs = Prbs::seeded(&PrbsConfig { amplitude: amp, clock, cutoff_hz: 2.0 }, 0.01, seed);
            for _ in 0..5000 {
                prop_assert!(prbs.step().iter().all(|v| v.abs() <= amp));
            }
        }
    }
}
