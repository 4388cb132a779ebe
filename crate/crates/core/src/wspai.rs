//! Wavelet sparse approximate inverses.
//!
//! Notation: `W` is the synthesis matrix whose columns are the wavelets, so
//! [`WaveletBasis::forward_nd`] computes `Wᵀ x` and
//! [`WaveletBasis::inverse_nd`] computes `W y`.
//!
//! * Block-diagonal (Chan–Tang–Wan): `Ã = Wᵀ A W`, and `M̃` minimizes
//!   `||Ã M̃ - I||_F` over block-diagonal matrices. The preconditioner is
//!   `W M̃ Wᵀ`.
//! * Implicit (Hawkins–Chen): `M` has the sparsity of `W` and minimizes
//!   `||Wᵀ A M - I||_F = ||A M - W||_F`. Each column is a small dense
//!   least-squares problem on the rows touched by `A[:, J_j]` and `w_j`, so
//!   neither `Wᵀ A` nor any other dense `n x n` product is formed.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::dense::lstsq;
use crate::error::{Error, Result};
use crate::par;
use crate::sparse::{CsrMatrix, SparseSymMatrix};
use crate::wavelet::WaveletBasis;

fn check_basis(a: &SparseSymMatrix, basis: &WaveletBasis) -> Result<()> {
    if basis.total_len() != a.n() {
        return Err(Error::DimensionMismatch { expected: a.n(), got: basis.total_len() });
    }
    Ok(())
}

fn dense_column(basis: &WaveletBasis, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; basis.total_len()];
    for (i, x) in basis.column(j) {
        v[i] = x;
    }
    v
}

/// Block layout for the block-diagonal preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CtwBlocks {
    /// Blocks of `n / 2^L` coefficients, aligned with the dyadic bands.
    #[default]
    Bands,
    /// Uniform blocks of the given size (the last one may be smaller).
    Uniform(usize),
}

impl CtwBlocks {
    fn ranges(self, n: usize, levels: usize) -> Result<Vec<Range<usize>>> {
        let size = match self {
            CtwBlocks::Bands => (n >> levels.min(usize::BITS as usize - 1)).max(1),
            CtwBlocks::Uniform(0) => return Err(Error::Config("block size must be positive".into())),
            CtwBlocks::Uniform(s) => s.min(n),
        };
        Ok((0..n).step_by(size).map(|s| s..(s + size).min(n)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct CtwPreconditioner {
    basis: WaveletBasis,
    blocks: Vec<Range<usize>>,
    block_inverses: Vec<DMatrix<f64>>,
    residual_fro: f64,
    flags: Vec<String>,
}

/// Builds the block-diagonal wavelet SPAI.
pub fn build_ctw(a: &SparseSymMatrix, basis: &WaveletBasis, blocks: CtwBlocks) -> Result<CtwPreconditioner> {
    check_basis(a, basis)?;
    let n = a.n();
    let ranges = blocks.ranges(n, basis.levels())?;
    let solved = par::map_collect(&ranges, |range| -> Result<(DMatrix<f64>, f64, bool)> {
        let width = range.len();
        let mut at = DMatrix::zeros(n, width);
        for (p, j) in range.clone().enumerate() {
            let mut col = a.matvec(&dense_column(basis, j))?;
            basis.forward_nd_in_place(&mut col)?;
            at.column_mut(p).copy_from_slice(&col);
        }
        let mut target = DMatrix::zeros(n, width);
        for (p, j) in range.clone().enumerate() {
            target[(j, p)] = 1.0;
        }
        let sol = lstsq(&at, &target);
        let resid = (&at * &sol.x - &target).norm_squared();
        Ok((sol.x, resid, sol.rank_deficient))
    });
    let mut block_inverses = Vec::with_capacity(ranges.len());
    let mut residual_sq = 0.0;
    let mut deficient = 0usize;
    for r in solved {
        let (m, res, def) = r?;
        block_inverses.push(m);
        residual_sq += res;
        deficient += def as usize;
    }
    let mut flags = Vec::new();
    if deficient > 0 {
        flags.push(format!("ctw_rank_deficient_blocks={deficient}"));
    }
    Ok(CtwPreconditioner { basis: basis.clone(), blocks: ranges, block_inverses, residual_fro: residual_sq.sqrt(), flags })
}

impl CtwPreconditioner {
    pub fn dim(&self) -> usize {
        self.basis.total_len()
    }

    pub fn basis(&self) -> &WaveletBasis {
        &self.basis
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// Diagonal block `b` of `M̃` (wavelet coordinates).
    pub fn block(&self, b: usize) -> &DMatrix<f64> {
        &self.block_inverses[b]
    }

    /// `||Ã M̃ - I||_F` at construction.
    pub fn residual_fro(&self) -> f64 {
        self.residual_fro
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    /// `W M̃ Wᵀ r`.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        let y = self.basis.forward_nd(r)?;
        let mut z = vec![0.0; y.len()];
        for (range, m) in self.blocks.iter().zip(&self.block_inverses) {
            let ys = &y[range.clone()];
            for (p, zi) in z[range.clone()].iter_mut().enumerate() {
                *zi = (0..ys.len()).map(|q| m[(p, q)] * ys[q]).sum();
            }
        }
        self.basis.inverse_nd_in_place(&mut z)?;
        Ok(z)
    }
}

/// One column of the implicit SPAI: the dense local least-squares problem.
#[derive(Debug, Clone)]
pub struct HcColumnProblem {
    /// Pattern `J_j` (support of column `j` of `W`).
    pub pattern: Vec<usize>,
    /// Rows of the local problem.
    pub rows: Vec<usize>,
    /// `A[rows, pattern]`.
    pub matrix: DMatrix<f64>,
    /// `w_j[rows]`.
    pub rhs: DMatrix<f64>,
}

/// Assembles the local problem for column `j`.
pub fn hc_column_problem(a: &SparseSymMatrix, basis: &WaveletBasis, j: usize) -> HcColumnProblem {
    let w = basis.column(j);
    let pattern: Vec<usize> = w.iter().map(|&(i, _)| i).collect();
    let mut rows: Vec<usize> = pattern.iter().flat_map(|&c| a.row(c).0.iter().copied()).chain(pattern.iter().copied()).collect();
    rows.sort_unstable();
    rows.dedup();
    let mut matrix = DMatrix::zeros(rows.len(), pattern.len());
    for (q, &c) in pattern.iter().enumerate() {
        let (cols, vals) = a.row(c);
        for (&r, &v) in cols.iter().zip(vals) {
            let p = rows.binary_search(&r).expect("row collected above");
            matrix[(p, q)] = v;
        }
    }
    let mut rhs = DMatrix::zeros(rows.len(), 1);
    for &(i, v) in &w {
        let p = rows.binary_search(&i).expect("pattern rows collected above");
        rhs[(p, 0)] = v;
    }
    HcColumnProblem { pattern, rows, matrix, rhs }
}

#[derive(Debug, Clone)]
pub struct HcPreconditioner {
    basis: WaveletBasis,
    /// `M` in row-major form.
    m: CsrMatrix,
    columns: Vec<Vec<(usize, f64)>>,
    residual_fro: f64,
    flags: Vec<String>,
}

/// Builds the implicit wavelet SPAI, one independent least-squares problem
/// per column.
pub fn build_hc(a: &SparseSymMatrix, basis: &WaveletBasis) -> Result<HcPreconditioner> {
    check_basis(a, basis)?;
    let n = a.n();
    let solved = par::map_range(n, |j| {
        let prob = hc_column_problem(a, basis, j);
        let sol = lstsq(&prob.matrix, &prob.rhs);
        let resid = (&prob.matrix * &sol.x - &prob.rhs).norm_squared();
        let col: Vec<(usize, f64)> = prob.pattern.iter().zip(sol.x.column(0).iter()).map(|(&i, &v)| (i, v)).collect();
        (col, resid, sol.rank_deficient)
    });
    let mut columns = Vec::with_capacity(n);
    let mut residual_sq = 0.0;
    let mut deficient = 0usize;
    for (col, res, def) in solved {
        columns.push(col);
        residual_sq += res;
        deficient += def as usize;
    }
    let m = CsrMatrix::from_triplets(
        n,
        n,
        columns.iter().enumerate().flat_map(|(j, col)| col.iter().map(move |&(i, v)| (i, j, v))),
    );
    let mut flags = Vec::new();
    if deficient > 0 {
        flags.push(format!("hc_rank_deficient_columns={deficient}"));
    }
    Ok(HcPreconditioner { basis: basis.clone(), m, columns, residual_fro: residual_sq.sqrt(), flags })
}

impl HcPreconditioner {
    pub fn dim(&self) -> usize {
        self.basis.total_len()
    }

    pub fn basis(&self) -> &WaveletBasis {
        &self.basis
    }

    /// Column `j` of `M` on its pattern.
    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    /// `||Wᵀ A M - I||_F` at construction.
    pub fn residual_fro(&self) -> f64 {
        self.residual_fro
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    /// `M v`.
    pub fn apply_m(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.m.matvec(v)
    }

    /// `Wᵀ v`, the left transform of the iterated system.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.basis.forward_nd(v)
    }

    /// `M Wᵀ r`, the approximate inverse of `A` implied by `Wᵀ A M ≈ I`.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.apply_m(&self.transform(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::condition;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64, density: f64) -> SparseSymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        let mut rowsum = vec![0.0; n];
        for i in 0..n {
            for j in 0..i {
                if rng.gen::<f64>() < density {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    t.push((i, j, v));
                    t.push((j, i, v));
                    rowsum[i] += v.abs();
                    rowsum[j] += v.abs();
                }
            }
        }
        for (i, s) in rowsum.iter().enumerate() {
            t.push((i, i, s + 0.5 + rng.gen::<f64>()));
        }
        SparseSymMatrix::from_triplets(n, t).unwrap()
    }

    fn dense_operator(n: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            m.column_mut(j).copy_from_slice(&f(&e));
        }
        m
    }

    #[test]
    fn ctw_identity_is_identity() {
        let a = SparseSymMatrix::identity(16);
        let basis = WaveletBasis::daubechies(4, 2, 1, 16).unwrap();
        for blocks in [CtwBlocks::Bands, CtwBlocks::Uniform(3), CtwBlocks::Uniform(16)] {
            let p = build_ctw(&a, &basis, blocks).unwrap();
            for b in 0..p.blocks().len() {
                let blk = p.block(b);
                let err = (blk - DMatrix::identity(blk.nrows(), blk.ncols())).norm();
                assert!(err < 1e-12);
            }
            let r: Vec<f64> = (0..16).map(|i| i as f64 - 3.0).collect();
            let y = p.apply(&r).unwrap();
            assert!(y.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn ctw_full_block_is_exact_inverse() {
        let d: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let a = SparseSymMatrix::diagonal(&d);
        let basis = WaveletBasis::daubechies(2, 1, 1, 8).unwrap();
        let p = build_ctw(&a, &basis, CtwBlocks::Uniform(8)).unwrap();
        let w = dense_operator(8, |e| basis.inverse(e).unwrap());
        let at = w.transpose() * a.to_dense() * &w;
        let inv = at.try_inverse().unwrap();
        assert!((p.block(0) - inv).norm() < 1e-10);
    }

    #[test]
    fn ctw_residual_non_increasing_in_block_size() {
        let a = random_spd(32, 17, 0.3);
        let basis = WaveletBasis::daubechies(4, 3, 1, 32).unwrap();
        let mut prev = f64::INFINITY;
        for bs in [1usize, 2, 4, 8, 16, 32] {
            let p = build_ctw(&a, &basis, CtwBlocks::Uniform(bs)).unwrap();
            assert!(p.residual_fro() <= prev * (1.0 + 1e-12), "bs={bs}");
            prev = p.residual_fro();
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn hc_identity_recovers_w() {
        let a = SparseSymMatrix::identity(32);
        let basis = WaveletBasis::daubechies(4, 3, 1, 32).unwrap();
        let p = build_hc(&a, &basis).unwrap();
        assert!(p.residual_fro() < 1e-10);
        let r: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let y = p.apply(&r).unwrap();
        assert!(y.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-10));
        let scaled = build_hc(&a.scaled(4.0), &basis).unwrap();
        for j in 0..32 {
            for (&(i, v), &(i2, v2)) in p.column(j).iter().zip(scaled.column(j)) {
                assert_eq!(i, i2);
                assert!((v / 4.0 - v2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hc_pattern_containment_and_optimality() {
        let a = random_spd(64, 5, 0.08);
        let basis = WaveletBasis::daubechies(4, 3, 1, 64).unwrap();
        let p = build_hc(&a, &basis).unwrap();
        let dense = a.to_dense();
        for j in 0..64 {
            let support = basis.column_support(j);
            let col = p.column(j);
            assert!(col.iter().all(|&(i, _)| support.contains(i)));
            // residual A m - w_j must be orthogonal to every column in the pattern
            let mut resid = vec![0.0; 64];
            for &(c, v) in col {
                for r in 0..64 {
                    resid[r] += dense[(r, c)] * v;
                }
            }
            for (i, v) in basis.column(j) {
                resid[i] -= v;
            }
            for &(c, _) in col {
                let ip: f64 = (0..64).map(|r| dense[(r, c)] * resid[r]).sum();
                let scale = (0..64).map(|r| dense[(r, c)].powi(2)).sum::<f64>().sqrt();
                assert!(ip.abs() <= 1e-10 * scale.max(1.0), "j={j} c={c}: {ip}");
            }
        }
    }

    #[test]
    fn hc_more_levels_fits_better() {
        let a = random_spd(64, 9, 0.1);
        let l1 = build_hc(&a, &WaveletBasis::daubechies(2, 1, 1, 64).unwrap()).unwrap();
        let l3 = build_hc(&a, &WaveletBasis::daubechies(2, 3, 1, 64).unwrap()).unwrap();
        assert!(l3.residual_fro() < l1.residual_fro(), "{} vs {}", l3.residual_fro(), l1.residual_fro());
        // a pure diagonal scaling in the wavelet basis does worse than the fitted M
        let basis = WaveletBasis::daubechies(2, 3, 1, 64).unwrap();
        let w = dense_operator(64, |e| basis.inverse(e).unwrap());
        let dense = a.to_dense();
        let wta = w.transpose() * &dense;
        let guess = &w * DMatrix::from_diagonal(&(w.transpose() * &dense * &w).diagonal().map(|d| 1.0 / d));
        let guess_res = (&wta * guess - DMatrix::identity(64, 64)).norm();
        assert!(l3.residual_fro() < guess_res);
    }

    #[test]
    fn preconditioners_are_linear_and_improve_conditioning() {
        let a = random_spd(16, 21, 0.4);
        let basis = WaveletBasis::daubechies(2, 2, 1, 16).unwrap();
        let ctw = build_ctw(&a, &basis, CtwBlocks::Uniform(4)).unwrap();
        let hc = build_hc(&a, &basis).unwrap();
        let dense = a.to_dense();
        let kappa = condition(&dense);
        let r1: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos()).collect();
        let r2: Vec<f64> = (0..16).map(|i| (i as f64 * 1.7).sin()).collect();
        let mix: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let ctw_apply = |r: &[f64]| ctw.apply(r).unwrap();
        let hc_apply = |r: &[f64]| hc.apply(r).unwrap();
        #[allow(clippy::type_complexity)]
        let ops: [&dyn Fn(&[f64]) -> Vec<f64>; 2] = [&ctw_apply, &hc_apply];
        for apply in ops {
            let lhs = apply(&mix);
            let (p1, p2) = (apply(&r1), apply(&r2));
            for i in 0..16 {
                assert!((lhs[i] - (2.0 * p1[i] - 0.5 * p2[i])).abs() < 1e-12);
            }
            let p = dense_operator(16, |r| apply(r));
            assert!(condition(&(p * &dense)) <= kappa);
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = SparseSymMatrix::identity(10);
        let basis = WaveletBasis::daubechies(2, 1, 1, 8).unwrap();
        assert!(build_ctw(&a, &basis, CtwBlocks::Bands).is_err());
        assert!(build_hc(&a, &basis).is_err());
    }
}
