use nalgebra::DMatrix;

use super::NumericsError;

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn mat_power(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..k {
        out = &out * m;
    }
    out
}

/// Moore-Penrose pseudo-inverse of a full-column-rank matrix, `(MᵀM)⁻¹Mᵀ`.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    if m.ncols() == 0 || m.nrows() < m.ncols() {
        return Err(NumericsError::RankDeficient);
    }
    let gram = m.transpose() * m;
    let eig = gram.clone().symmetric_eigen();
    let hi = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(NumericsError::RankDeficient);
    }
    let chol = gram.cholesky().ok_or(NumericsError::RankDeficient)?;
    Ok(chol.solve(&m.transpose()))
}
