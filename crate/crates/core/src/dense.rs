//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative cutoff on `|R_kk| / max |R_ii|` below which a least-squares
/// problem is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// Outcome of a dense least-squares solve.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DMatrix<f64>,
    /// The minimum-norm fallback was taken.
    pub rank_deficient: bool,
}

/// Solves `min ||A X - B||_F` column by column with a reduced QR.
///
/// When the triangular factor has a diagonal entry below
/// `RANK_TOL * max|R_ii|` the problem is re-solved through a truncated SVD,
/// which yields the minimum-norm solution.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> LstsqSolution {
    let (m, n) = a.shape();
    if n == 0 {
        return LstsqSolution { x: DMatrix::zeros(0, b.ncols()), rank_deficient: false };
    }
    if m >= n {
        let qr = a.clone().qr();
        let r = qr.r();
        let rmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let full_rank = rmax > 0.0 && (0..n).all(|i| r[(i, i)].abs() > RANK_TOL * rmax);
        if full_rank {
            let mut qtb = b.clone();
            qr.q_tr_mul(&mut qtb);
            let rhs = qtb.rows(0, n).into_owned();
            if let Some(x) = r.solve_upper_triangular(&rhs) {
                return LstsqSolution { x, rank_deficient: false };
            }
        }
    }
    LstsqSolution { x: min_norm_svd(a, b), rank_deficient: true }
}

fn min_norm_svd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (RANK_TOL * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| DMatrix::zeros(a.ncols(), b.ncols()))
}

/// Vector right-hand-side convenience wrapper around [`lstsq`].
pub fn lstsq_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let sol = lstsq(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
    (sol.x.column(0).into_owned(), sol.rank_deficient)
}

/// Inverse of a symmetric matrix through its eigendecomposition.
///
/// Eigenvalues with `|lambda| <= tol * max|lambda|` are dropped (pseudo-
/// inverse); the returned flag is set when that happens.
pub fn symmetric_pinv(a: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, bool) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), false);
    }
    let eig = a.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let mut truncated = false;
    let inv_vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            if l.abs() <= tol * lmax || l == 0.0 {
                truncated = true;
                0.0
            } else {
                1.0 / l
            }
        })
        .collect();
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, s) in inv_vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    let mut inv = scaled * v.transpose();
    // exact symmetry of the stored inverse
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    (inv, truncated)
}

/// 2-norm condition number of a symmetric matrix.
pub fn symmetric_condition(a: &DMatrix<f64>) -> f64 {
    let eig = a.symmetric_eigenvalues();
    let max = eig.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let min = eig.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min);
    max / min
}

/// 2-norm condition number of a general square matrix.
pub fn condition(a: &DMatrix<f64>) -> f64 {
    let s = a.singular_values();
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_overdetermined_matches_normal_equations() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0, 2.0, 4.0]);
        let (x, flag) = lstsq_vec(&a, &b);
        assert!(!flag);
        let normal = (a.transpose() * &a).lu().solve(&(a.transpose() * &b)).unwrap();
        assert!((x - normal).norm() < 1e-12);
    }

    #[test]
    fn lstsq_rank_deficient_is_min_norm() {
        // two identical columns: min-norm solution splits the weight evenly
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_column_slice(&[2.0, 0.0, 0.0]);
        let (x, flag) = lstsq_vec(&a, &b);
        assert!(flag);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_of_spd_is_inverse() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let (inv, flag) = symmetric_pinv(&a, 1e-12);
        assert!(!flag);
        assert!((&a * inv - DMatrix::identity(3, 3)).norm() < 1e-12);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, flag) = symmetric_pinv(&sing, 1e-12);
        assert!(flag);
        assert!((&sing * &p * &sing - &sing).norm() < 1e-12);
    }
}
