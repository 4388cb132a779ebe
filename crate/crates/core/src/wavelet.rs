//! Periodized Daubechies wavelet transforms in factored form.
//!
//! The `L`-level transform is `Wᵀ = W_Lᵀ ⋯ W_1ᵀ`. Factor `W_kᵀ` acts on the
//! leading `a = len / 2^(k-1)` coefficients: the first `a/2` outputs are the
//! stride-2 circulant rows built from `h`, the next `a/2` from `g`, and the
//! tail passes through unchanged. After `L` levels the scaling coefficients
//! occupy the leading `len / 2^L` slots followed by detail bands from
//! coarsest to finest.
//!
//! Multi-dimensional signals are column-stacked (`x` fastest) and the 1D
//! transform is applied along every axis, giving `(W ⊗ W)ᵀ` in 2D and
//! `(W ⊗ W ⊗ W)ᵀ` in 3D.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, IndexSet};

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

#[allow(clippy::excessive_precision)]
const DB4: [f64; 4] = [
    0.482_962_913_144_534_143_37,
    0.836_516_303_737_807_905_58,
    0.224_143_868_042_013_381_03,
    -0.129_409_522_551_260_381_17,
];

#[allow(clippy::excessive_precision)]
const DB6: [f64; 6] = [
    0.332_670_552_950_082_616,
    0.806_891_509_311_092_576_49,
    0.459_877_502_118_491_570_1,
    -0.135_011_020_010_254_588_7,
    -0.085_441_273_882_026_661_693,
    0.035_226_291_885_709_536_603,
];

#[allow(clippy::excessive_precision)]
const DB8: [f64; 8] = [
    0.230_377_813_308_896_500_86,
    0.714_846_570_552_915_647_09,
    0.630_880_767_929_858_907_88,
    -0.027_983_769_416_859_854_211,
    -0.187_034_811_719_093_084_08,
    0.030_841_381_835_560_763_627,
    0.032_883_011_666_885_199_735,
    -0.010_597_401_785_069_032_105,
];

pub const DEFAULT_TAPS: usize = 4;
pub const DEFAULT_LEVELS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    h: Vec<f64>,
    g: Vec<f64>,
    levels: usize,
    dims: usize,
    len: usize,
}

/// Largest `s` with `len = p * 2^s`.
pub fn max_levels(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        len.trailing_zeros() as usize
    }
}

impl WaveletBasis {
    /// Daubechies filter with `taps` in {2, 4, 6, 8} (2 is Haar).
    pub fn daubechies(taps: usize, levels: usize, dims: usize, len_per_dim: usize) -> Result<Self> {
        let h: Vec<f64> = match taps {
            2 => HAAR.to_vec(),
            4 => DB4.to_vec(),
            6 => DB6.to_vec(),
            8 => DB8.to_vec(),
            _ => return Err(Error::Wavelet(format!("unsupported tap count {taps} (use 2, 4, 6 or 8)"))),
        };
        Self::from_filter(h, levels, dims, len_per_dim)
    }

    /// Builds from an arbitrary orthonormal filter; `g` is its quadrature
    /// mirror `g_k = (-1)^k h_{m-1-k}`.
    pub fn from_filter(h: Vec<f64>, levels: usize, dims: usize, len_per_dim: usize) -> Result<Self> {
        if h.is_empty() || !h.len().is_multiple_of(2) {
            return Err(Error::Wavelet("filter length must be even and non-zero".into()));
        }
        if !(1..=3).contains(&dims) {
            return Err(Error::Wavelet(format!("dims must be 1, 2 or 3, got {dims}")));
        }
        if len_per_dim == 0 {
            return Err(Error::Wavelet("signal length must be positive".into()));
        }
        let s = max_levels(len_per_dim);
        if levels > s {
            return Err(Error::Wavelet(format!(
                "{levels} levels requested but length {len_per_dim} only admits {s}"
            )));
        }
        let m = h.len();
        let g = (0..m).map(|k| if k % 2 == 0 { h[m - 1 - k] } else { -h[m - 1 - k] }).collect();
        Ok(Self { h, g, levels, dims, len: len_per_dim })
    }

    pub fn taps_h(&self) -> &[f64] {
        &self.h
    }

    pub fn taps_g(&self) -> &[f64] {
        &self.g
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len_per_dim(&self) -> usize {
        self.len
    }

    /// Length of the full (possibly multi-dimensional) signal.
    pub fn total_len(&self) -> usize {
        self.len.pow(self.dims as u32)
    }

    /// Same filter and levels, different geometry.
    pub fn with_geometry(&self, dims: usize, len_per_dim: usize) -> Result<Self> {
        Self::from_filter(self.h.clone(), self.levels, dims, len_per_dim)
    }

    fn check_level(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.levels {
            return Err(Error::Wavelet(format!("factor {k} outside 1..={}", self.levels)));
        }
        Ok(self.len >> (k - 1))
    }

    /// `W_kᵀ` as a sparse `len x len` matrix.
    pub fn analysis_factor(&self, k: usize) -> Result<CsrMatrix> {
        let a = self.check_level(k)?;
        let half = a / 2;
        let mut t = Vec::with_capacity(a * self.h.len() + self.len - a);
        for r in 0..half {
            for (tap, (&hv, &gv)) in self.h.iter().zip(&self.g).enumerate() {
                let c = (2 * r + tap) % a;
                t.push((r, c, hv));
                t.push((half + r, c, gv));
            }
        }
        for i in a..self.len {
            t.push((i, i, 1.0));
        }
        Ok(CsrMatrix::from_triplets(self.len, self.len, t))
    }

    /// `W_k`, the transpose of [`Self::analysis_factor`].
    pub fn build_factor(&self, k: usize) -> Result<CsrMatrix> {
        let wt = self.analysis_factor(k)?;
        let mut t = Vec::with_capacity(wt.nnz());
        for i in 0..wt.nrows() {
            let (c, v) = wt.row(i);
            t.extend(c.iter().zip(v).map(|(&j, &x)| (j, i, x)));
        }
        Ok(CsrMatrix::from_triplets(self.len, self.len, t))
    }

    fn forward_step(&self, x: &mut [f64], a: usize, buf: &mut Vec<f64>) {
        let half = a / 2;
        buf.clear();
        buf.resize(a, 0.0);
        for r in 0..half {
            let (mut lo, mut hi) = (0.0, 0.0);
            for (tap, (&hv, &gv)) in self.h.iter().zip(&self.g).enumerate() {
                let xv = x[(2 * r + tap) % a];
                lo += hv * xv;
                hi += gv * xv;
            }
            buf[r] = lo;
            buf[half + r] = hi;
        }
        x[..a].copy_from_slice(buf);
    }

    fn inverse_step(&self, y: &mut [f64], a: usize, buf: &mut Vec<f64>) {
        let half = a / 2;
        buf.clear();
        buf.resize(a, 0.0);
        for r in 0..half {
            let (lo, hi) = (y[r], y[half + r]);
            for (tap, (&hv, &gv)) in self.h.iter().zip(&self.g).enumerate() {
                buf[(2 * r + tap) % a] += hv * lo + gv * hi;
            }
        }
        y[..a].copy_from_slice(buf);
    }

    fn forward_line(&self, x: &mut [f64], buf: &mut Vec<f64>) {
        for k in 1..=self.levels {
            self.forward_step(x, self.len >> (k - 1), buf);
        }
    }

    fn inverse_line(&self, y: &mut [f64], buf: &mut Vec<f64>) {
        for k in (1..=self.levels).rev() {
            self.inverse_step(y, self.len >> (k - 1), buf);
        }
    }

    /// One-dimensional `Wᵀ x` for a signal of length `len_per_dim`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), self.len)?;
        let mut y = x.to_vec();
        self.forward_line(&mut y, &mut Vec::new());
        Ok(y)
    }

    /// One-dimensional `W y`.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len(), self.len)?;
        let mut x = y.to_vec();
        self.inverse_line(&mut x, &mut Vec::new());
        Ok(x)
    }

    /// `Wᵀ x` along every axis of a column-stacked `dims`-dimensional signal.
    pub fn forward_nd(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = x.to_vec();
        self.forward_nd_in_place(&mut y)?;
        Ok(y)
    }

    pub fn inverse_nd(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut x = y.to_vec();
        self.inverse_nd_in_place(&mut x)?;
        Ok(x)
    }

    pub fn forward_nd_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check_len(x.len(), self.total_len())?;
        self.along_axes(x, true);
        Ok(())
    }

    pub fn inverse_nd_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check_len(x.len(), self.total_len())?;
        self.along_axes(x, false);
        Ok(())
    }

    fn along_axes(&self, x: &mut [f64], forward: bool) {
        if self.levels == 0 {
            return;
        }
        let n = self.len;
        let mut line = vec![0.0; n];
        let mut buf = Vec::with_capacity(n);
        for axis in 0..self.dims {
            let stride = n.pow(axis as u32);
            let block = stride * n;
            for outer in (0..x.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (t, l) in line.iter_mut().enumerate() {
                        *l = x[base + t * stride];
                    }
                    if forward {
                        self.forward_line(&mut line, &mut buf);
                    } else {
                        self.inverse_line(&mut line, &mut buf);
                    }
                    for (t, l) in line.iter().enumerate() {
                        x[base + t * stride] = *l;
                    }
                }
            }
        }
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(Error::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    /// Column `j` of the one-dimensional `W`, i.e. `W_1 ⋯ W_L e_j`, as sorted
    /// `(row, value)` pairs. Entries that exist structurally are kept even if
    /// they cancel to zero.
    pub fn column_1d(&self, j: usize) -> Vec<(usize, f64)> {
        let mut v: BTreeMap<usize, f64> = BTreeMap::new();
        v.insert(j, 1.0);
        for k in (1..=self.levels).rev() {
            let a = self.len >> (k - 1);
            let half = a / 2;
            let mut next: BTreeMap<usize, f64> = BTreeMap::new();
            for (&p, &val) in &v {
                if p >= a {
                    *next.entry(p).or_insert(0.0) += val;
                    continue;
                }
                let (r, taps) = if p < half { (p, &self.h) } else { (p - half, &self.g) };
                for (tap, &c) in taps.iter().enumerate() {
                    *next.entry((2 * r + tap) % a).or_insert(0.0) += c * val;
                }
            }
            v = next;
        }
        v.into_iter().collect()
    }

    /// Column `j` of the full `W` (Kronecker product over the axes).
    pub fn column(&self, j: usize) -> Vec<(usize, f64)> {
        let n = self.len;
        let mut acc: Vec<(usize, f64)> = vec![(0, 1.0)];
        let mut rem = j;
        let mut stride = 1;
        for _ in 0..self.dims {
            let jd = rem % n;
            rem /= n;
            let col = self.column_1d(jd);
            let mut next = Vec::with_capacity(acc.len() * col.len());
            for &(i, v) in &col {
                for &(base, w) in &acc {
                    next.push((base + i * stride, w * v));
                }
            }
            acc = next;
            stride *= n;
        }
        acc.sort_unstable_by_key(|&(i, _)| i);
        acc
    }

    /// Structural sparsity pattern of column `j` of `W`.
    pub fn column_support(&self, j: usize) -> IndexSet {
        IndexSet::from_vec_unchecked(self.column(j).into_iter().map(|(i, _)| i).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    /// Dense `W` as the explicit product `W_1 W_2 ⋯ W_L`.
    fn dense_w(b: &WaveletBasis) -> DMatrix<f64> {
        let mut w = DMatrix::identity(b.len_per_dim(), b.len_per_dim());
        for k in 1..=b.levels() {
            w *= b.build_factor(k).unwrap().to_dense();
        }
        w
    }

    fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.kronecker(b)
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn filters_orthonormal() {
        for taps in [2, 4, 6, 8] {
            let b = WaveletBasis::daubechies(taps, 0, 1, 1).unwrap();
            let h = b.taps_h();
            let g = b.taps_g();
            let m = h.len();
            assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            for t in 1..m / 2 {
                let s: f64 = (0..m - 2 * t).map(|k| h[k] * h[k + 2 * t]).sum();
                assert!(s.abs() < 1e-12, "taps={taps} shift={t}: {s}");
            }
            let cross: f64 = h.iter().zip(g).map(|(a, b)| a * b).sum();
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn haar_first_factor_layout() {
        let b = WaveletBasis::daubechies(2, 1, 1, 4).unwrap();
        let wt = b.analysis_factor(1).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[S, S, 0.0, 0.0, 0.0, 0.0, S, S, S, -S, 0.0, 0.0, 0.0, 0.0, S, -S],
        );
        assert!((wt - expect).norm() < 1e-15);
    }

    #[test]
    fn factors_orthogonal_with_identity_tail() {
        for taps in [2, 4, 6, 8] {
            for &n in &[8usize, 32, 256] {
                let levels = max_levels(n).min(8);
                let b = WaveletBasis::daubechies(taps, levels, 1, n).unwrap();
                for k in 1..=levels {
                    let w = b.build_factor(k).unwrap().to_dense();
                    let err = (w.transpose() * &w - DMatrix::identity(n, n)).norm();
                    assert!(err < 1e-12, "taps={taps} n={n} k={k}: {err}");
                }
            }
        }
        let b = WaveletBasis::daubechies(4, 2, 1, 8).unwrap();
        let w2 = b.analysis_factor(2).unwrap().to_dense();
        assert_eq!(w2.view((4, 4), (4, 4)).into_owned(), DMatrix::identity(4, 4));
    }

    #[test]
    fn factor_index_errors() {
        let b = WaveletBasis::daubechies(4, 2, 1, 8).unwrap();
        assert!(b.build_factor(0).is_err());
        assert!(b.build_factor(3).is_err());
        assert!(WaveletBasis::daubechies(4, 4, 1, 8).is_err());
        assert!(WaveletBasis::daubechies(5, 1, 1, 8).is_err());
    }

    #[test]
    fn haar_forward_ones() {
        let b = WaveletBasis::daubechies(2, 1, 1, 4).unwrap();
        let y = b.forward(&[1.0; 4]).unwrap();
        let r2 = 2f64.sqrt();
        for (a, e) in y.iter().zip([r2, r2, 0.0, 0.0]) {
            assert!((a - e).abs() < 1e-15);
        }
        let x = b.inverse(&y).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn factored_matches_dense_product() {
        for taps in [2, 4, 6, 8] {
            for &n in &[2usize, 4, 8, 16, 48, 64] {
                let levels = max_levels(n);
                let b = WaveletBasis::daubechies(taps, levels, 1, n).unwrap();
                let w = dense_w(&b);
                let x = random_vec(n, n as u64 + taps as u64);
                let y = b.forward(&x).unwrap();
                let oracle = w.transpose() * nalgebra::DVector::from_column_slice(&x);
                for (a, e) in y.iter().zip(oracle.iter()) {
                    assert!((a - e).abs() < 1e-13, "taps={taps} n={n}");
                }
                let back = b.inverse(&y).unwrap();
                let oracle_back = &w * nalgebra::DVector::from_column_slice(&y);
                for (a, e) in back.iter().zip(oracle_back.iter()) {
                    assert!((a - e).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn haar_2d_ones() {
        let b = WaveletBasis::daubechies(2, 1, 2, 2).unwrap();
        let y = b.forward_nd(&[1.0; 4]).unwrap();
        for (a, e) in y.iter().zip([2.0, 0.0, 0.0, 0.0]) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn nd_matches_kronecker_oracle() {
        for taps in [2, 4] {
            for &n in &[2usize, 4, 8, 16] {
                let levels = max_levels(n);
                let b2 = WaveletBasis::daubechies(taps, levels, 2, n).unwrap();
                let w = dense_w(&b2);
                let k2 = kron(&w, &w);
                let x = random_vec(n * n, 5);
                let y = b2.forward_nd(&x).unwrap();
                let oracle = k2.transpose() * nalgebra::DVector::from_column_slice(&x);
                assert!(y.iter().zip(oracle.iter()).all(|(a, e)| (a - e).abs() < 1e-12));
                if n <= 8 {
                    let b3 = b2.with_geometry(3, n).unwrap();
                    let k3 = kron(&k2, &w);
                    let x3 = random_vec(n * n * n, 9);
                    let y3 = b3.forward_nd(&x3).unwrap();
                    let o3 = k3.transpose() * nalgebra::DVector::from_column_slice(&x3);
                    assert!(y3.iter().zip(o3.iter()).all(|(a, e)| (a - e).abs() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn nd_length_check() {
        let b = WaveletBasis::daubechies(2, 1, 2, 4).unwrap();
        assert!(b.forward_nd(&[0.0; 15]).is_err());
    }

    #[test]
    fn columns_match_dense_w() {
        let b = WaveletBasis::daubechies(4, 3, 1, 16).unwrap();
        let w = dense_w(&b);
        for j in 0..16 {
            let col = b.column_1d(j);
            let mut dense = [0.0; 16];
            for &(i, v) in &col {
                dense[i] = v;
            }
            for i in 0..16 {
                assert!((dense[i] - w[(i, j)]).abs() < 1e-14);
                if w[(i, j)].abs() > 1e-14 {
                    assert!(col.iter().any(|&(r, _)| r == i));
                }
            }
        }
        let b2 = b.with_geometry(2, 16).unwrap();
        let k2 = kron(&w, &w);
        for j in [0usize, 17, 100, 255] {
            for (i, v) in b2.column(j) {
                assert!((v - k2[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn column_support_examples() {
        let b = WaveletBasis::daubechies(2, 1, 1, 4).unwrap();
        assert_eq!(b.column_support(0).as_slice(), &[0, 1]);
        let b0 = WaveletBasis::daubechies(4, 0, 1, 16).unwrap();
        assert_eq!(b0.column_support(5).as_slice(), &[5]);
    }

    #[test]
    fn support_grows_with_levels() {
        for j in 0..32 {
            let mut prev = 0;
            for levels in 0..=5 {
                let b = WaveletBasis::daubechies(4, levels, 1, 32).unwrap();
                let s = b.column_support(j).len();
                assert!(s >= prev, "j={j} L={levels}");
                prev = s;
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn round_trip_and_isometry(log_n in 1usize..12, levels in 0usize..=8, dims in 1usize..=3, seed in 0u64..1000, taps_i in 0usize..4) {
            let taps = [2, 4, 6, 8][taps_i];
            let per_dim_log = match dims { 1 => log_n, 2 => log_n.min(6), _ => log_n.min(4) };
            let n = 1usize << per_dim_log;
            let levels = levels.min(per_dim_log);
            let b = WaveletBasis::daubechies(taps, levels, dims, n).unwrap();
            let x = random_vec(b.total_len(), seed);
            let y = b.forward_nd(&x).unwrap();
            let back = b.inverse_nd(&y).unwrap();
            let nx = norm(&x);
            proptest::prop_assert!((norm(&y) - nx).abs() <= 1e-12 * nx);
            let diff: Vec<f64> = back.iter().zip(&x).map(|(a, b)| a - b).collect();
            proptest::prop_assert!(norm(&diff) <= 1e-12 * nx);
        }
    }
}
