use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Scale of the initial triangular factor, `R_0 = RLS_INIT_SCALE * I`.
pub const RLS_INIT_SCALE: f64 = 1e-4;

/// Ratio below which a diagonal entry of the factor is considered degenerate.
const DEGENERATE_RATIO: f64 = 1e-12;

/// Exponentially weighted least squares solved in square-root (QR) form.
///
/// The estimator keeps an upper-triangular factor `R` and a transformed
/// right-hand side `z` such that
///
/// ```text
/// RᵀR = Σ λ^(k-i) x_i x_iᵀ + λ^k R_0ᵀR_0,     Rᵀz = Σ λ^(k-i) x_i y_i
/// ```
///
/// Each update scales the previous factor by `√λ`, appends the new row
/// `[xᵀ | y]` and re-triangularizes with Givens rotations. The estimate is
/// recovered on demand by back substitution, `R ξᵀ = z`.
///
/// `R` is stored densely in row-major order; only the upper triangle is
/// touched so each rotation sweeps a contiguous slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrRls {
    dim: usize,
    forgetting: f64,
    sqrt_forgetting: f64,
    factor: Vec<f64>,
    rhs: Vec<f64>,
    updates: u64,
    scratch: Vec<f64>,
}

impl QrRls {
    /// Fresh estimator with `R = RLS_INIT_SCALE·I`, `z = 0` (estimate zero).
    pub fn new(dim: usize, forgetting: f64) -> Result<Self, NumericsError> {
        Self::with_prior(dim, forgetting, RLS_INIT_SCALE, &vec![0.0; dim])
    }

    /// Estimator whose factor is `scale·I` and whose estimate equals `prior`.
    pub fn with_prior(
        dim: usize,
        forgetting: f64,
        scale: f64,
        prior: &[f64],
    ) -> Result<Self, NumericsError> {
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(NumericsError::Forgetting(forgetting));
        }
        if dim == 0 {
            return Err(NumericsError::InvalidParameter("regressor dimension must be positive".into()));
        }
        let mut est = QrRls {
            dim,
            forgetting,
            sqrt_forgetting: forgetting.sqrt(),
            factor: vec![0.0; dim * dim],
            rhs: vec![0.0; dim],
            updates: 0,
            scratch: vec![0.0; dim],
        };
        est.reseed(scale, prior)?;
        Ok(est)
    }

    /// Replace the factor with `scale·I` and the rhs so that the estimate
    /// becomes `prior`. The update counter is kept.
    pub fn reseed(&mut self, scale: f64, prior: &[f64]) -> Result<(), NumericsError> {
        if prior.len() != self.dim {
            return Err(NumericsError::Dimension { expected: self.dim, got: prior.len() });
        }
        if !(scale > 0.0) {
            return Err(NumericsError::InvalidParameter("factor scale must be positive".into()));
        }
        let n = self.dim;
        self.factor.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            self.factor[i * n + i] = scale;
            self.rhs[i] = scale * prior[i];
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forgetting(&self) -> f64 {
        self.forgetting
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Upper-triangular factor as a dense row-major slice.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn transformed_rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// One rank-1 update with exponential forgetting.
    pub fn update(&mut self, regressor: &[f64], observation: f64) -> Result<(), NumericsError> {
        let n = self.dim;
        if regressor.len() != n {
            return Err(NumericsError::Dimension { expected: n, got: regressor.len() });
        }
        let sl = self.sqrt_forgetting;
        let row = &mut self.scratch;
        row.copy_from_slice(regressor);
        let mut y = observation;

        for i in 0..n {
            let base = i * n;
            let a = sl * self.factor[base + i];
            let b = row[i];
            let r = a.hypot(b);
            let (c, s) = if r > 0.0 { (a / r, b / r) } else { (1.0, 0.0) };
            self.factor[base + i] = r;
            row[i] = 0.0;
            // Scaling by √λ is folded into the rotation of the old row.
            let (cs, ss) = (c * sl, s * sl);
            let rrow = &mut self.factor[base + i + 1..base + n];
            let xrow = &mut row[i + 1..n];
            for (rij, xj) in rrow.iter_mut().zip(xrow.iter_mut()) {
                let old = *rij;
                *rij = cs * old + s * *xj;
                *xj = -ss * old + c * *xj;
            }
            let zi = self.rhs[i];
            self.rhs[i] = cs * zi + s * y;
            y = -ss * zi + c * y;
        }
        self.updates += 1;
        Ok(())
    }

    /// Solve `R ξᵀ = z` by back substitution.
    pub fn estimate(&self) -> Vec<f64> {
        let n = self.dim;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let base = i * n;
            let mut acc = self.rhs[i];
            for j in i + 1..n {
                acc -= self.factor[base + j] * x[j];
            }
            let d = self.factor[base + i];
            x[i] = if d != 0.0 { acc / d } else { 0.0 };
        }
        x
    }

    /// Prediction `ξ·x` with the current estimate.
    pub fn predict(&self, regressor: &[f64]) -> f64 {
        self.estimate().iter().zip(regressor).map(|(a, b)| a * b).sum()
    }

    /// True when some diagonal entry of the factor has collapsed below
    /// `1e-12` of the largest one.
    pub fn is_degenerate(&self) -> bool {
        let n = self.dim;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = self.factor[i * n + i].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        hi == 0.0 || lo < DEGENERATE_RATIO * hi
    }
}
