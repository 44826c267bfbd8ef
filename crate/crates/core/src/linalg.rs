//! Small dense helpers shared by the solver, the filter and validation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::LinalgError;

/// Relative tolerance used for symmetry checks on user input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Eigenvalue floor (relative to the spectral radius) for semidefiniteness.
const PSD_TOLERANCE: f64 = 1e-12;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= rel_tol * max_abs(m).max(1.0)
}

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).min()
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if m.is_empty() {
        return true;
    }
    let ev = eigenvalues(m);
    let scale = ev.amax().max(f64::MIN_POSITIVE);
    ev.min() >= -PSD_TOLERANCE * scale.max(1.0)
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    if m.is_empty() {
        return false;
    }
    let ev = eigenvalues(m);
    ev.min() > 0.0 && ev.min() > PSD_TOLERANCE * ev.amax()
}

/// `v' M v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// Symmetric square root of a PSD matrix; negative round-off eigenvalues
/// are clamped to zero so singular covariances are allowed.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `tol` times the largest eigenvalue magnitude are
/// treated as zero. Inputs that are asymmetric beyond `tol` (relative to the
/// largest entry) are rejected.
pub fn pseudoinverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let asym = asymmetry(m);
    if asym > tol * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(LinalgError::NotSymmetric {
            tol,
            asymmetry: asym,
        });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let largest = eig.eigenvalues.amax();
    if largest == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let cutoff = tol * largest;
    let inverted = eig
        .eigenvalues
        .map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inverted) * eig.eigenvectors.transpose())
}
