//! Symmetric sparse storage and the kernels every other module leans on.

mod market;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

pub use market::{read_matrix_market, read_matrix_market_str, write_matrix_market, MarketMatrix};

/// Ordered list of distinct indices into `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Validates distinctness and bounds against `n`.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::IndexOutOfBounds { index: i, n });
            }
            if seen[i] {
                return Err(Error::InvalidIndexSet(format!("duplicate index {i}")));
            }
            seen[i] = true;
        }
        Ok(Self(indices))
    }

    /// `{0, 1, ..., n-1}`.
    pub fn full(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub(crate) fn from_vec_unchecked(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(s: IndexSet) -> Self {
        s.0
    }
}

/// Symmetric matrix in CSR form with both triangles stored.
///
/// Column indices are strictly increasing within each row, explicit zeros
/// are never stored, and every stored `(i, j, v)` has a stored `(j, i, v)`
/// with the identical value.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    n: usize,
    row_starts: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Builds from triplets, summing duplicates and dropping exact zeros.
    /// Fails unless the summed entries are exactly symmetric.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let rows = accumulate(n, triplets)?;
        let m = Self::from_rows(n, rows);
        m.check_symmetric()?;
        Ok(m)
    }

    /// Builds `(A + Aᵀ) / 2` from possibly non-symmetric triplets.
    pub fn from_triplets_symmetrized(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let rows = accumulate(n, triplets)?;
        let mut sym: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (i, row) in rows.iter().enumerate() {
            for (&j, &v) in row {
                let mirrored = rows[j].get(&i).copied().unwrap_or(0.0);
                // a + b and b + a round identically, so both triangles agree.
                let s = 0.5 * (v + mirrored);
                sym[i].insert(j, s);
                sym[j].insert(i, s);
            }
        }
        for row in sym.iter_mut() {
            row.retain(|_, v| *v != 0.0);
        }
        Ok(Self::from_rows(n, sym))
    }

    /// Builds from a dense matrix; entries must be exactly symmetric.
    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
        }
        let n = a.nrows();
        let trips = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (i, j, a[(i, j)]));
        Self::from_triplets(n, trips.collect::<Vec<_>>())
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut row_starts = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        row_starts.push(0);
        for (i, &v) in d.iter().enumerate() {
            if v != 0.0 {
                col_indices.push(i);
                values.push(v);
            }
            row_starts.push(col_indices.len());
        }
        Self { n, row_starts, col_indices, values }
    }

    fn from_rows(n: usize, rows: Vec<BTreeMap<usize, f64>>) -> Self {
        let nnz = rows.iter().map(BTreeMap::len).sum();
        let mut row_starts = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_starts.push(0);
        for row in rows {
            for (j, v) in row {
                col_indices.push(j);
                values.push(v);
            }
            row_starts.push(col_indices.len());
        }
        Self { n, row_starts, col_indices, values }
    }

    fn check_symmetric(&self) -> Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if self.get(j, i) != v {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_starts(&self) -> &[usize] {
        &self.row_starts
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row `i`, which by symmetry is also column `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_starts[i], self.row_starts[i + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Iterates stored `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// `y = A v`, accumulating each row in ascending column order.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(v, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, v: &[f64], y: &mut [f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: v.len() });
        }
        if y.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: y.len() });
        }
        par::fill_indexed(y, |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).fold(0.0, |acc, (&j, &a)| acc + a * v[j])
        });
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `|cols| x |cols|` matrix of column inner products `<a_i, a_j>`.
    pub fn gram_columns(&self, cols: &IndexSet) -> DMatrix<f64> {
        let k = cols.len();
        let mut local = vec![usize::MAX; self.n];
        for (p, c) in cols.iter().enumerate() {
            local[c] = p;
        }
        // Rows touching any selected column are the union of the selected
        // columns' supports (the matrix is symmetric).
        let mut touched = vec![false; self.n];
        let mut rows = Vec::new();
        for c in cols.iter() {
            for &r in self.row(c).0 {
                if !touched[r] {
                    touched[r] = true;
                    rows.push(r);
                }
            }
        }
        rows.sort_unstable();
        let mut g = DMatrix::zeros(k, k);
        let mut hits: Vec<(usize, f64)> = Vec::new();
        for r in rows {
            hits.clear();
            let (rc, rv) = self.row(r);
            for (&j, &v) in rc.iter().zip(rv) {
                if local[j] != usize::MAX {
                    hits.push((local[j], v));
                }
            }
            for &(p, vp) in &hits {
                for &(q, vq) in &hits {
                    g[(p, q)] += vp * vq;
                }
            }
        }
        g
    }

    /// Principal submatrix `A[kept, kept]`, renumbered in `kept` order.
    pub fn principal_submatrix(&self, kept: &IndexSet) -> Self {
        let mut local = vec![usize::MAX; self.n];
        for (p, i) in kept.iter().enumerate() {
            local[i] = p;
        }
        let m = kept.len();
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
        for (p, i) in kept.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if local[j] != usize::MAX {
                    rows[p].insert(local[j], v);
                }
            }
        }
        Self::from_rows(m, rows)
    }

    /// `P A Pᵀ` where row `i` of the result is row `perm[i]` of `A`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let set = IndexSet::new(perm.to_vec(), self.n)?;
        if set.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: set.len() });
        }
        Ok(self.principal_submatrix(&set))
    }

    /// `c * A`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        if c == 0.0 {
            return Self::from_rows(self.n, vec![BTreeMap::new(); self.n]);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            a[(i, j)] = v;
        }
        a
    }
}

fn accumulate(
    n: usize,
    triplets: impl IntoIterator<Item = (usize, usize, f64)>,
) -> Result<Vec<BTreeMap<usize, f64>>> {
    if n == 0 {
        return Err(Error::Config("matrix dimension must be at least 1".into()));
    }
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for (i, j, v) in triplets {
        if i >= n {
            return Err(Error::IndexOutOfBounds { index: i, n });
        }
        if j >= n {
            return Err(Error::IndexOutOfBounds { index: j, n });
        }
        *rows[i].entry(j).or_insert(0.0) += v;
    }
    for row in rows.iter_mut() {
        row.retain(|_, v| *v != 0.0);
    }
    Ok(rows)
}

/// General (non-symmetric) CSR matrix, used for wavelet factors.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_starts: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries; keeps exact zeros out.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nrows];
        for (i, j, v) in triplets {
            *rows[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_starts = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (j, v) in row {
                if v != 0.0 {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_starts.push(col_indices.len());
        }
        Self { nrows, ncols, row_starts, col_indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_starts[i], self.row_starts[i + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.ncols {
            return Err(Error::DimensionMismatch { expected: self.ncols, got: v.len() });
        }
        Ok((0..self.nrows)
            .map(|i| {
                let (c, x) = self.row(i);
                c.iter().zip(x).map(|(&j, &a)| a * v[j]).sum()
            })
            .collect())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, x) = self.row(i);
            for (&j, &v) in c.iter().zip(x) {
                a[(i, j)] = v;
            }
        }
        a
    }
}

/// Size `p * 2^s` with `s = floor(log2 n)` and `p = floor(n / 2^s)`.
pub fn pow2_trim_size(n: usize) -> usize {
    assert!(n >= 1);
    let s = usize::BITS - 1 - n.leading_zeros();
    let p = n >> s;
    p << s
}

/// Drops a seeded uniformly random set of rows/columns so the dimension
/// becomes [`pow2_trim_size`]. Kept indices stay in their original order.
pub fn trim_to_pow2(a: &SparseSymMatrix, seed: u64) -> (SparseSymMatrix, IndexSet) {
    let n = a.n();
    let target = pow2_trim_size(n);
    if target == n {
        return (a.clone(), IndexSet::full(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop = vec![false; n];
    for i in index::sample(&mut rng, n, n - target) {
        drop[i] = true;
    }
    let kept = IndexSet((0..n).filter(|&i| !drop[i]).collect());
    (a.principal_submatrix(&kept), kept)
}
