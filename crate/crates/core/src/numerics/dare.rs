use nalgebra::DMatrix;

use super::{spectral_radius, NumericsError};

pub const DARE_TOL: f64 = 1e-9;
pub const DARE_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    /// Optimal state feedback, `u = -K x`.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of the last fixed-point increment.
    pub residual: f64,
    /// Spectral radius of `A - B K`.
    pub closed_loop_radius: f64,
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let at = a.transpose();
    let bt = b.transpose();
    let pa = p * a;
    let s = r + &bt * p * b;
    let k = s.cholesky()?.solve(&(&bt * &pa));
    let next = q + &at * &pa - &at * p * b * &k;
    // Keep the iterate exactly symmetric.
    let sym = (&next + next.transpose()) * 0.5;
    Some((sym, k))
}

/// Discrete algebraic Riccati equation by fixed-point iteration from `P₀ = Q`:
///
/// ```text
/// P = Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA,     K = (R + BᵀPB)⁻¹ BᵀPA
/// ```
///
/// Convergence is declared when `‖P_{i+1} − P_i‖_F < tol · max(1, ‖P_i‖_F)`.
/// The returned gain is checked to make `A − BK` Schur stable.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DareSolution, NumericsError> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() {
        return Err(NumericsError::Dimension { expected: n, got: a.ncols() });
    }
    if b.nrows() != n {
        return Err(NumericsError::Dimension { expected: n, got: b.nrows() });
    }
    if q.shape() != (n, n) {
        return Err(NumericsError::Dimension { expected: n, got: q.nrows() });
    }
    if r.shape() != (m, m) {
        return Err(NumericsError::Dimension { expected: m, got: r.nrows() });
    }
    let sym_tol = 1e-12 * (1.0 + r.abs().max());
    if (r - r.transpose()).abs().max() > sym_tol || r.clone().cholesky().is_none() {
        return Err(NumericsError::IndefiniteR);
    }
    let qsym_tol = 1e-12 * (1.0 + q.abs().max());
    if (q - q.transpose()).abs().max() > qsym_tol
        || q.clone().symmetric_eigen().eigenvalues.iter().any(|&l| l < -qsym_tol)
    {
        return Err(NumericsError::IndefiniteQ);
    }

    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let (next, k) = riccati_map(a, b, q, r, &p).ok_or(NumericsError::IndefiniteR)?;
        residual = (&next - &p).norm();
        let scale = p.norm().max(1.0);
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual < tol * scale {
            // Gain consistent with the converged P.
            let (_, k_final) = riccati_map(a, b, q, r, &p).unwrap_or((p.clone(), k));
            let rho = spectral_radius(&(a - b * &k_final));
            if rho >= 1.0 {
                return Err(NumericsError::NotStabilizing(rho));
            }
            return Ok(DareSolution { p, k: k_final, iterations: it, residual, closed_loop_radius: rho });
        }
    }
    Err(NumericsError::DareNonConvergence { iterations: max_iter, residual })
}

/// `‖P − (Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA)‖_F`.
pub fn riccati_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Some((next, _)) => (next - p).norm(),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_zero_dynamics() {
        let sol = solve_dare(&s(0.0), &s(1.0), &s(1.0), &s(1.0), DARE_TOL, DARE_MAX_ITER).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(sol.k[(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn scalar_integrator_golden_ratio() {
        let sol = solve_dare(&s(1.0), &s(1.0), &s(1.0), &s(1.0), DARE_TOL, DARE_MAX_ITER).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - phi).abs() < 1e-9);
        // K = P/(1+P) = 1/φ
        assert!((sol.k[(0, 0)] - (phi - 1.0)).abs() < 1e-9);
        assert!(riccati_residual(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &sol.p) < 1e-9);
    }

    #[test]
    fn rejects_indefinite_r() {
        let err = solve_dare(&s(1.0), &s(1.0), &s(1.0), &s(-1.0), DARE_TOL, DARE_MAX_ITER).unwrap_err();
        assert_eq!(err, NumericsError::IndefiniteR);
    }

    #[test]
    fn uncontrollable_unstable_mode_does_not_converge() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let err = solve_dare(&a, &b, &DMatrix::identity(2, 2), &s(1.0), DARE_TOL, 500).unwrap_err();
        assert!(matches!(err, NumericsError::DareNonConvergence { .. }));
    }

    #[test]
    fn larger_r_gives_smaller_gain() {
        let (a, b, q) = (s(1.2), s(1.0), s(1.0));
        let mut last = f64::INFINITY;
        for r in [0.1, 0.2, 0.4, 0.8, 1.6, 3.2] {
            let k = solve_dare(&a, &b, &q, &s(r), DARE_TOL, DARE_MAX_ITER).unwrap().k[(0, 0)];
            assert!(k < last);
            last = k;
        }
    }

    proptest! {
        #[test]
        fn solution_is_symmetric_and_stabilizing(vals in proptest::collection::vec(-1.2f64..1.2, 9), bv in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let a = DMatrix::from_row_slice(3, 3, &vals);
            let mut b = DMatrix::from_row_slice(3, 1, &bv);
            b[(2, 0)] += 1.5;
            let q = DMatrix::identity(3, 3);
            let r = s(0.5);
            if let Ok(sol) = solve_dare(&a, &b, &q, &r, DARE_TOL, DARE_MAX_ITER) {
                prop_assert!((&sol.p - sol.p.transpose()).abs().max() < 1e-10);
                prop_assert!(sol.closed_loop_radius < 1.0);
                let res = riccati_residual(&a, &b, &q, &r, &sol.p);
                prop_assert!(res < 1e-9 * sol.p.norm().max(1.0) * 10.0);
            }
        }
    }
}
