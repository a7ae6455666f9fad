//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Replace `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Eigenvalues of the symmetric-definite pencil `a v = lambda b v`, ascending.
///
/// `b` must be positive definite. The pencil is reduced by congruence with the
/// Cholesky factor `b = L L^T` to the standard problem `L^-1 a L^-T`.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::Dimension(format!(
            "pencil shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut bs = b.clone();
    symmetrize(&mut bs);
    let chol = bs
        .cholesky()
        .ok_or_else(|| Error::Degenerate("right-hand matrix of pencil is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.ncols()))
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let reduced = &linv * a * linv.transpose();
    Ok(sym_eigenvalues(&reduced))
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `x^T m x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// Cholesky solve of `s z = rhs` with a condition-number guard on the SPD matrix `s`.
pub fn spd_solve(s: &DMatrix<f64>, rhs: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let ev = sym_eigenvalues(s);
    let (lo, hi) = match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Ok(DMatrix::zeros(0, rhs.ncols())),
    };
    if !(lo > 0.0) || hi / lo > max_condition {
        return Err(Error::Numeric(format!(
            "ill-conditioned SPD system (eigenvalues in [{lo:.3e}, {hi:.3e}])"
        )));
    }
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::Numeric("Cholesky factorization failed".into()))?;
    Ok(chol.solve(rhs))
}
