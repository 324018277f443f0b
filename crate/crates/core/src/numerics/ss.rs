use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Discrete-time state-space model `x⁺ = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct StateSpaceModel {
    pub A: DMatrix<f64>,
    pub B: DMatrix<f64>,
    pub C: DMatrix<f64>,
    pub D: DMatrix<f64>,
    pub ts: f64,
}

impl StateSpaceModel {
    #[allow(non_snake_case)]
    pub fn new(A: DMatrix<f64>, B: DMatrix<f64>, C: DMatrix<f64>, D: DMatrix<f64>, ts: f64) -> Result<Self, NumericsError> {
        let n = A.nrows();
        if !A.is_square() {
            return Err(NumericsError::Dimension { expected: n, got: A.ncols() });
        }
        if B.nrows() != n {
            return Err(NumericsError::Dimension { expected: n, got: B.nrows() });
        }
        if C.ncols() != n {
            return Err(NumericsError::Dimension { expected: n, got: C.ncols() });
        }
        if D.shape() != (C.nrows(), B.ncols()) {
            return Err(NumericsError::Dimension { expected: C.nrows(), got: D.nrows() });
        }
        Ok(StateSpaceModel { A, B, C, D, ts })
    }

    pub fn states(&self) -> usize {
        self.A.nrows()
    }

    /// Steady-state gain `C(I − A)⁻¹B + D`.
    pub fn dc_gain(&self) -> Option<DMatrix<f64>> {
        let n = self.states();
        let m = DMatrix::identity(n, n) - &self.A;
        Some(&self.C * m.lu().solve(&self.B)? + &self.D)
    }
}

/// Zero-order-hold discretization of a continuous `(A, B)` pair via the
/// block matrix exponential `exp([[A, B], [0, 0]]·Ts)`.
pub fn discretize_zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut blk = DMatrix::zeros(n + m, n + m);
    blk.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    blk.view_mut((0, n), (n, m)).copy_from(&(b * ts));
    let e = blk.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// ZOH model of the pitch actuator `(bs + 1)/(a²s² + bs + 1)` with
/// `a = 1/ω`, `b = 2β/ω`.
///
/// Uses the observable canonical realization, so `C = [1 0]` and the first
/// state is the actuator output itself.
pub fn discretize_second_order(omega: f64, damping: f64, ts: f64) -> Result<StateSpaceModel, NumericsError> {
    if !(omega > 0.0) {
        return Err(NumericsError::InvalidParameter(format!("omega must be positive, got {omega}")));
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(NumericsError::InvalidParameter(format!("damping must lie in (0, 1), got {damping}")));
    }
    if !(ts > 0.0) {
        return Err(NumericsError::InvalidParameter(format!("sample time must be positive, got {ts}")));
    }
    // (2βω s + ω²) / (s² + 2βω s + ω²)
    let a1 = 2.0 * damping * omega;
    let a0 = omega * omega;
    let ac = DMatrix::from_row_slice(2, 2, &[-a1, 1.0, -a0, 0.0]);
    let bc = DMatrix::from_row_slice(2, 1, &[a1, a0]);
    let (ad, bd) = discretize_zoh(&ac, &bc, ts);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let d = DMatrix::zeros(1, 1);
    StateSpaceModel::new(ad, bd, c, d, ts)
}
