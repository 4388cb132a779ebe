//! Multiresolution matrix factorization.
//!
//! `A ≈ Q_1ᵀ ⋯ Q_Lᵀ H Q_L ⋯ Q_1` with sparse orthogonal rotations `Q_ℓ` and
//! a core-diagonal `H` (dense on the final active set `S_L`, diagonal
//! elsewhere). The factorization is computed greedily: pick a random active
//! index, pair it with the active column of largest absolute cosine
//! similarity, annihilate their coupling with a Jacobi rotation, and retire
//! whichever of the two rotated rows has the smaller off-diagonal mass as a
//! wavelet. The squared off-diagonal entries dropped from retired rows add up
//! exactly to `||A - QᵀHQ||_F²`, which is tracked as `recorded_error_sq`.
//!
//! The blocked variant ([`pmmf`]) proceeds in stages: cluster the active
//! columns, run the greedy loop independently inside each cluster (on rayon
//! when the `parallel` feature is enabled), then replay every cluster's
//! rotations on the shared sparse working matrix. Each cluster draws from
//! its own seeded generator, so results do not depend on the worker count.

mod cluster;
mod format;

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::symmetric_pinv;
use crate::error::{Error, Result};
use crate::par;
use crate::sparse::{IndexSet, SparseSymMatrix};

pub use cluster::{cluster_columns, GramAccess, MatrixColumns};

/// Parameters of the blocked factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct PmmfConfig {
    /// Rotation order; only Givens rotations (`k = 2`) are produced.
    pub k: usize,
    /// Fraction of each cluster's active columns retired per stage.
    pub wavelet_fraction: f64,
    /// Stop once the active set is no larger than this.
    pub target_core: usize,
    /// Cluster size cap.
    pub max_block: usize,
    pub stages_cap: usize,
    pub seed: u64,
}

impl Default for PmmfConfig {
    fn default() -> Self {
        Self { k: 2, wavelet_fraction: 0.5, target_core: 100, max_block: 2000, stages_cap: 100, seed: 0 }
    }
}

impl PmmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelet_fraction > 0.0 && self.wavelet_fraction < 1.0) {
            return Err(Error::Config(format!("wavelet_fraction must lie in (0, 1), got {}", self.wavelet_fraction)));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("rotation order must be at least 2, got {}", self.k)));
        }
        if self.k != 2 {
            return Err(Error::Config(format!("only k = 2 (Givens) rotations are implemented, got {}", self.k)));
        }
        if self.max_block < 2 {
            return Err(Error::Config("max_block must be at least 2".into()));
        }
        if self.stages_cap == 0 {
            return Err(Error::Config("stages_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Orthogonal matrix that differs from the identity only on `indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct KPointRotation {
    pub indices: Vec<usize>,
    /// `k x k` block, row-major.
    pub block: Vec<f64>,
    /// Greedy level, or stage number for the blocked factorization.
    pub level: usize,
}

impl KPointRotation {
    /// `[Q]_{ii} = c, [Q]_{ij} = -s, [Q]_{ji} = s, [Q]_{jj} = c`.
    pub fn givens(i: usize, j: usize, c: f64, s: f64, level: usize) -> Self {
        Self { indices: vec![i, j], block: vec![c, -s, s, c], level }
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    /// `v <- Q v`.
    pub fn apply(&self, v: &mut [f64]) {
        let k = self.k();
        if k == 2 {
            let (i, j) = (self.indices[0], self.indices[1]);
            let (a, b) = (v[i], v[j]);
            v[i] = self.block[0] * a + self.block[1] * b;
            v[j] = self.block[2] * a + self.block[3] * b;
            return;
        }
        let x: Vec<f64> = self.indices.iter().map(|&i| v[i]).collect();
        for (r, &i) in self.indices.iter().enumerate() {
            v[i] = (0..k).map(|c| self.block[r * k + c] * x[c]).sum();
        }
    }

    /// `v <- Qᵀ v`.
    pub fn apply_transpose(&self, v: &mut [f64]) {
        let k = self.k();
        if k == 2 {
            let (i, j) = (self.indices[0], self.indices[1]);
            let (a, b) = (v[i], v[j]);
            v[i] = self.block[0] * a + self.block[2] * b;
            v[j] = self.block[1] * a + self.block[3] * b;
            return;
        }
        let x: Vec<f64> = self.indices.iter().map(|&i| v[i]).collect();
        for (c, &i) in self.indices.iter().enumerate() {
            v[i] = (0..k).map(|r| self.block[r * k + c] * x[r]).sum();
        }
    }

    /// `||blockᵀ block - I||_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let k = self.k();
        let b = DMatrix::from_row_slice(k, k, &self.block);
        (b.transpose() * &b - DMatrix::identity(k, k)).norm()
    }
}

/// An index leaving the active set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retirement {
    pub index: usize,
    /// Number of rotations applied before this index was retired; no later
    /// rotation touches it.
    pub after_rotations: usize,
    pub stage: usize,
}

/// `H`: dense on `core_indices`, diagonal on the retired indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreDiagonal {
    pub core_indices: IndexSet,
    pub core: DMatrix<f64>,
    /// `(index, H_ii)` for every retired index, in retirement order.
    pub diagonal: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmfFactorization {
    pub n: usize,
    /// `Q_1, Q_2, …` in application order.
    pub rotations: Vec<KPointRotation>,
    pub retirements: Vec<Retirement>,
    /// Rotation count at the end of each stage.
    pub stage_ends: Vec<usize>,
    pub h: CoreDiagonal,
    /// Sum of squared off-diagonal entries dropped into `H`, both triangles.
    pub recorded_error_sq: f64,
    pub flags: Vec<String>,
}

impl MmfFactorization {
    /// Active-set sizes `δ_0 = n ≥ δ_1 ≥ …`, one entry per retirement.
    pub fn schedule(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.retirements.len() + 1);
        out.push(self.n);
        for (t, _) in self.retirements.iter().enumerate() {
            out.push(self.n - t - 1);
        }
        out
    }

    /// `v <- Q v = Q_L ⋯ Q_1 v`.
    pub fn rotate(&self, v: &mut [f64]) {
        for r in &self.rotations {
            r.apply(v);
        }
    }

    /// `v <- Qᵀ v`.
    pub fn rotate_back(&self, v: &mut [f64]) {
        for r in self.rotations.iter().rev() {
            r.apply_transpose(v);
        }
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: len });
        }
        Ok(())
    }

    /// `Qᵀ H Q v`.
    pub fn apply_factored(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v.len())?;
        let mut y = v.to_vec();
        self.rotate(&mut y);
        let core_idx = self.h.core_indices.as_slice();
        let xc: Vec<f64> = core_idx.iter().map(|&i| y[i]).collect();
        for (p, &i) in core_idx.iter().enumerate() {
            y[i] = (0..xc.len()).map(|q| self.h.core[(p, q)] * xc[q]).sum();
        }
        for &(i, d) in &self.h.diagonal {
            y[i] *= d;
        }
        self.rotate_back(&mut y);
        Ok(y)
    }

    /// Dense `Qᵀ H Q` (testing and small problems only).
    pub fn reconstruct_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.apply_factored(&e).expect("dimension matches");
            out.column_mut(j).copy_from_slice(&col);
        }
        out
    }

    /// Dense `Q = Q_L ⋯ Q_1`.
    pub fn dense_q(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut q = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.rotate(&mut e);
            q.column_mut(j).copy_from_slice(&e);
        }
        q
    }

    pub fn core_size(&self) -> usize {
        self.h.core_indices.len()
    }

    pub fn to_text(&self) -> String {
        format::write(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        format::read(text)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_text(&text)
    }
}

/// Givens rotation chosen for a pair of local indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Givens {
    pub i: usize,
    pub j: usize,
    pub cos: f64,
    pub sin: f64,
}

/// Result of [`find_rotation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationChoice {
    /// `None` when no partner has positive cosine similarity, or the Jacobi
    /// angle is zero.
    pub rotation: Option<Givens>,
    pub partner: Option<usize>,
    pub wavelet: usize,
    /// Squared off-diagonal norm of the wavelet row after rotation
    /// (one triangle), including coupling outside the block as seen
    /// through the Gram matrix.
    pub error_contribution: f64,
}

/// Angle in `(-π/4, π/4]` that zeroes the `(p, q)` entry of
/// `Q [[app, apq], [apq, aqq]] Qᵀ`.
pub fn jacobi_angle(app: f64, apq: f64, aqq: f64) -> f64 {
    if apq == 0.0 {
        return 0.0;
    }
    let mut theta = 0.5 * (2.0 * apq).atan2(aqq - app);
    let quarter = std::f64::consts::FRAC_PI_4;
    if theta > quarter {
        theta -= 2.0 * quarter;
    } else if theta <= -quarter {
        theta += 2.0 * quarter;
    }
    theta
}

/// Chooses the partner, rotation and wavelet for `i1`.
///
/// `working` is the symmetric block being factored (all local indices,
/// active or not), `gram` its column Gram matrix over the full row set, and
/// `active` the local indices still eligible.
pub fn find_rotation(working: &DMatrix<f64>, gram: &DMatrix<f64>, active: &[usize], i1: usize) -> RotationChoice {
    let g11 = gram[(i1, i1)];
    let mut partner: Option<(usize, f64)> = None;
    if g11 > 0.0 {
        for &j in active {
            if j == i1 {
                continue;
            }
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let cos = gram[(i1, j)].abs() / (g11 * gjj).sqrt();
            if cos > 0.0 && partner.is_none_or(|(_, best)| cos > best) {
                partner = Some((j, cos));
            }
        }
    }
    let Some((i2, _)) = partner else {
        let row: Vec<f64> = working.row(i1).iter().copied().collect();
        let off = off_norm_sq(&row, gram[(i1, i1)], active, i1, None);
        return RotationChoice { rotation: None, partner: None, wavelet: i1, error_contribution: off };
    };

    let theta = jacobi_angle(working[(i1, i1)], working[(i1, i2)], working[(i2, i2)]);
    let (s, c) = theta.sin_cos();
    let n = working.nrows();
    let mut r1 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    for k in 0..n {
        let (a, b) = (working[(i1, k)], working[(i2, k)]);
        r1[k] = c * a - s * b;
        r2[k] = s * a + c * b;
    }
    // rotated rows still need the column rotation on the pair entries
    let (a11, a12, a22) = (working[(i1, i1)], working[(i1, i2)], working[(i2, i2)]);
    r1[i1] = c * c * a11 - 2.0 * c * s * a12 + s * s * a22;
    r2[i2] = s * s * a11 + 2.0 * c * s * a12 + c * c * a22;
    r1[i2] = 0.0;
    r2[i1] = 0.0;
    let rotated_gram = |p: usize| -> f64 {
        // diagonal of Q G Qᵀ at the pair
        let (g11, g12, g22) = (gram[(i1, i1)], gram[(i1, i2)], gram[(i2, i2)]);
        if p == i1 {
            c * c * g11 - 2.0 * c * s * g12 + s * s * g22
        } else {
            s * s * g11 + 2.0 * c * s * g12 + c * c * g22
        }
    };
    let off1 = off_norm_sq(&r1, rotated_gram(i1), active, i1, Some(i2));
    let off2 = off_norm_sq(&r2, rotated_gram(i2), active, i2, Some(i1));
    // exact ties (common on stencil matrices) retire the larger |diagonal|
    let tie = (off1 - off2).abs() <= 1e-12 * off1.max(off2);
    let pick_second = if tie { r2[i2].abs() > r1[i1].abs() } else { off2 < off1 };
    let (wavelet, error_contribution) = if pick_second { (i2, off2) } else { (i1, off1) };
    let rotation = (s != 0.0).then_some(Givens { i: i1, j: i2, cos: c, sin: s });
    RotationChoice { rotation, partner: Some(i2), wavelet, error_contribution }
}

/// Off-diagonal mass of `row` over active columns (minus `p` and `exclude`),
/// plus whatever part of its Gram norm lies outside the block.
fn off_norm_sq(row: &[f64], gram_pp: f64, active: &[usize], p: usize, exclude: Option<usize>) -> f64 {
    let in_block_total: f64 = row.iter().map(|v| v * v).sum();
    let outside = (gram_pp - in_block_total).max(0.0);
    let inside: f64 = active
        .iter()
        .filter(|&&k| k != p && Some(k) != exclude)
        .map(|&k| row[k] * row[k])
        .sum();
    inside + outside
}

/// Rotates rows/columns `i, j` of a dense symmetric matrix: `M <- Q M Qᵀ`.
fn rotate_dense(m: &mut DMatrix<f64>, g: &Givens) {
    let n = m.nrows();
    let (i, j, c, s) = (g.i, g.j, g.cos, g.sin);
    for k in 0..n {
        let (a, b) = (m[(i, k)], m[(j, k)]);
        m[(i, k)] = c * a - s * b;
        m[(j, k)] = s * a + c * b;
    }
    for k in 0..n {
        let (a, b) = (m[(k, i)], m[(k, j)]);
        m[(k, i)] = c * a - s * b;
        m[(k, j)] = s * a + c * b;
    }
}

/// Outcome of factoring one cluster (local indices).
struct ClusterOutcome {
    rotations: Vec<Givens>,
    /// `(local index, local rotations applied before retirement)`.
    retired: Vec<(usize, usize)>,
}

fn factor_cluster(mut block: DMatrix<f64>, mut gram: DMatrix<f64>, quota: usize, rng: &mut ChaCha8Rng) -> ClusterOutcome {
    let b = block.nrows();
    let mut active: Vec<usize> = (0..b).collect();
    let mut rotations = Vec::new();
    let mut retired = Vec::with_capacity(quota);
    for _ in 0..quota.min(b) {
        let i1 = active[rng.gen_range(0..active.len())];
        let choice = find_rotation(&block, &gram, &active, i1);
        if let Some(g) = choice.rotation {
            rotate_dense(&mut block, &g);
            rotate_dense(&mut gram, &g);
            // annihilated by construction
            block[(g.i, g.j)] = 0.0;
            block[(g.j, g.i)] = 0.0;
            rotations.push(g);
        }
        retired.push((choice.wavelet, rotations.len()));
        active.retain(|&k| k != choice.wavelet);
    }
    ClusterOutcome { rotations, retired }
}

/// Symmetric sparse working matrix over global indices; only active rows
/// and columns are stored.
pub(crate) struct Working {
    rows: Vec<Vec<(usize, f64)>>,
    active: Vec<bool>,
}

impl Working {
    fn new(a: &SparseSymMatrix) -> Self {
        let rows = (0..a.n())
            .map(|i| {
                let (c, v) = a.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        Self { rows, active: vec![true; a.n()] }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.rows[i];
        match row.binary_search_by_key(&j, |&(c, _)| c) {
            Ok(p) => row[p].1,
            Err(_) => 0.0,
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&j, |&(c, _)| c) {
            Ok(p) => row[p].1 = v,
            Err(p) => {
                if v != 0.0 {
                    row.insert(p, (j, v));
                }
            }
        }
    }

    /// `A <- Q A Qᵀ` for a Givens rotation on global indices.
    fn rotate(&mut self, i: usize, j: usize, c: f64, s: f64) {
        let ri = std::mem::take(&mut self.rows[i]);
        let rj = std::mem::take(&mut self.rows[j]);
        let (aii, aij, ajj) = (lookup(&ri, i), lookup(&ri, j), lookup(&rj, j));
        let mut new_i = Vec::with_capacity(ri.len() + rj.len());
        let mut new_j = Vec::with_capacity(ri.len() + rj.len());
        let (mut p, mut q) = (0, 0);
        loop {
            let ci = ri.get(p).map(|e| e.0);
            let cj = rj.get(q).map(|e| e.0);
            let (k, a, b) = match (ci, cj) {
                (None, None) => break,
                (Some(x), None) => {
                    p += 1;
                    (x, ri[p - 1].1, 0.0)
                }
                (None, Some(y)) => {
                    q += 1;
                    (y, 0.0, rj[q - 1].1)
                }
                (Some(x), Some(y)) => match x.cmp(&y) {
                    Ordering::Less => {
                        p += 1;
                        (x, ri[p - 1].1, 0.0)
                    }
                    Ordering::Greater => {
                        q += 1;
                        (y, 0.0, rj[q - 1].1)
                    }
                    Ordering::Equal => {
                        p += 1;
                        q += 1;
                        (x, ri[p - 1].1, rj[q - 1].1)
                    }
                },
            };
            if k == i || k == j {
                continue;
            }
            new_i.push((k, c * a - s * b));
            new_j.push((k, s * a + c * b));
        }
        let nii = c * c * aii - 2.0 * c * s * aij + s * s * ajj;
        let njj = s * s * aii + 2.0 * c * s * aij + c * c * ajj;
        let nij = c * s * (aii - ajj) + (c * c - s * s) * aij;
        insert_sorted(&mut new_i, i, nii);
        insert_sorted(&mut new_i, j, nij);
        insert_sorted(&mut new_j, i, nij);
        insert_sorted(&mut new_j, j, njj);
        for &(k, v) in &new_i {
            if k != i && k != j {
                self.set(k, i, v);
            }
        }
        for &(k, v) in &new_j {
            if k != i && k != j {
                self.set(k, j, v);
            }
        }
        self.rows[i] = new_i;
        self.rows[j] = new_j;
    }

    /// Drops `retiring` from the active set and returns the off-diagonal
    /// mass removed (both triangles) plus the retired diagonal values.
    fn retire(&mut self, retiring: &[usize]) -> (f64, Vec<f64>) {
        let mut mark = vec![false; self.rows.len()];
        for &w in retiring {
            mark[w] = true;
        }
        let mut removed = 0.0;
        let mut diag = Vec::with_capacity(retiring.len());
        for &w in retiring {
            for &(k, v) in &self.rows[w] {
                if k == w {
                    continue;
                }
                // pairs between two retiring indices are met from both rows
                removed += if mark[k] { v * v } else { 2.0 * v * v };
            }
            diag.push(self.get(w, w));
        }
        let mut touched = vec![false; self.rows.len()];
        for &w in retiring {
            for &(k, _) in &self.rows[w] {
                touched[k] = true;
            }
        }
        for &w in retiring {
            self.rows[w].clear();
            self.active[w] = false;
        }
        for (k, row) in self.rows.iter_mut().enumerate() {
            if touched[k] && !mark[k] {
                row.retain(|&(c, _)| !mark[c]);
            }
        }
        (removed, diag)
    }

    fn dense_block(&self, idx: &[usize]) -> DMatrix<f64> {
        let mut local = vec![usize::MAX; self.rows.len()];
        for (p, &g) in idx.iter().enumerate() {
            local[g] = p;
        }
        let mut m = DMatrix::zeros(idx.len(), idx.len());
        for (p, &g) in idx.iter().enumerate() {
            for &(k, v) in &self.rows[g] {
                if local[k] != usize::MAX {
                    m[(p, local[k])] = v;
                }
            }
        }
        m
    }

    /// Gram matrix of columns `idx` over all active rows.
    fn gram_block(&self, idx: &[usize]) -> DMatrix<f64> {
        let mut local = vec![usize::MAX; self.rows.len()];
        for (p, &g) in idx.iter().enumerate() {
            local[g] = p;
        }
        let mut seen = vec![false; self.rows.len()];
        let mut rows = Vec::new();
        for &g in idx {
            for &(r, _) in &self.rows[g] {
                if !seen[r] {
                    seen[r] = true;
                    rows.push(r);
                }
            }
        }
        rows.sort_unstable();
        let mut gram = DMatrix::zeros(idx.len(), idx.len());
        let mut hits = Vec::new();
        for r in rows {
            hits.clear();
            hits.extend(self.rows[r].iter().filter(|(k, _)| local[*k] != usize::MAX).map(|&(k, v)| (local[k], v)));
            for &(p, vp) in &hits {
                for &(q, vq) in &hits {
                    gram[(p, q)] += vp * vq;
                }
            }
        }
        gram
    }

    fn active_indices(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.active[i]).collect()
    }
}

fn lookup(row: &[(usize, f64)], j: usize) -> f64 {
    match row.binary_search_by_key(&j, |&(c, _)| c) {
        Ok(p) => row[p].1,
        Err(_) => 0.0,
    }
}

fn insert_sorted(row: &mut Vec<(usize, f64)>, j: usize, v: f64) {
    match row.binary_search_by_key(&j, |&(c, _)| c) {
        Ok(p) => row[p].1 = v,
        Err(p) => row.insert(p, (j, v)),
    }
}

impl GramAccess for Working {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn column_norm_sq(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, v)| v * v).sum()
    }

    fn column_entries(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cluster_rng(seed: u64, stage: usize, cluster: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(seed) ^ stage as u64) ^ cluster as u64))
}

/// Per-cluster retirement quotas: `ceil(fraction * |B|)`, scaled down when
/// the total would push the active set below `target_core`.
fn quotas(sizes: &[usize], fraction: f64, budget: usize) -> Vec<usize> {
    let mut q: Vec<usize> = sizes.iter().map(|&s| ((fraction * s as f64).ceil() as usize).min(s)).collect();
    let total: usize = q.iter().sum();
    if total <= budget {
        return q;
    }
    let all: usize = sizes.iter().sum();
    for (qi, &s) in q.iter_mut().zip(sizes) {
        *qi = budget * s / all;
    }
    let mut left = budget - q.iter().sum::<usize>();
    for (qi, &s) in q.iter_mut().zip(sizes) {
        if left == 0 {
            break;
        }
        if *qi < s {
            *qi += 1;
            left -= 1;
        }
    }
    q
}

struct Builder {
    n: usize,
    working: Working,
    rotations: Vec<KPointRotation>,
    retirements: Vec<Retirement>,
    diagonal: Vec<(usize, f64)>,
    stage_ends: Vec<usize>,
    error_sq: f64,
    flags: Vec<String>,
}

impl Builder {
    fn new(a: &SparseSymMatrix) -> Self {
        Self {
            n: a.n(),
            working: Working::new(a),
            rotations: Vec::new(),
            retirements: Vec::new(),
            diagonal: Vec::new(),
            stage_ends: Vec::new(),
            error_sq: 0.0,
            flags: Vec::new(),
        }
    }

    /// Runs one stage over the given clusters; returns the number retired.
    fn stage(&mut self, stage: usize, clusters: &[Vec<usize>], quota: &[usize], seed: u64, per_level: bool) -> usize {
        let working = &self.working;
        let jobs: Vec<(usize, &Vec<usize>, usize)> =
            clusters.iter().zip(quota).enumerate().map(|(c, (idx, &q))| (c, idx, q)).collect();
        let outcomes = par::map_collect(&jobs, |&(c, idx, q)| {
            if q == 0 {
                return ClusterOutcome { rotations: Vec::new(), retired: Vec::new() };
            }
            let block = working.dense_block(idx);
            let gram = working.gram_block(idx);
            let mut rng = cluster_rng(seed, stage, c);
            factor_cluster(block, gram, q, &mut rng)
        });

        let mut retiring = Vec::new();
        for (idx, out) in clusters.iter().zip(outcomes) {
            let base = self.rotations.len();
            let mut level_of = Vec::with_capacity(out.rotations.len());
            // greedy levels count retirements; blocked levels are stages
            let mut next = 0;
            for (t, _) in out.rotations.iter().enumerate() {
                while next < out.retired.len() && out.retired[next].1 <= t {
                    next += 1;
                }
                level_of.push(if per_level { self.retirements.len() + next + 1 } else { stage });
            }
            for (g, level) in out.rotations.iter().zip(level_of) {
                let (gi, gj) = (idx[g.i], idx[g.j]);
                self.working.rotate(gi, gj, g.cos, g.sin);
                self.rotations.push(KPointRotation::givens(gi, gj, g.cos, g.sin, level));
            }
            for &(w, after) in &out.retired {
                self.retirements.push(Retirement { index: idx[w], after_rotations: base + after, stage });
                retiring.push(idx[w]);
            }
        }
        let (removed, diag) = self.working.retire(&retiring);
        self.error_sq += removed;
        self.diagonal.extend(retiring.iter().copied().zip(diag));
        self.stage_ends.push(self.rotations.len());
        retiring.len()
    }

    fn finish(self) -> MmfFactorization {
        let core_idx = self.working.active_indices();
        let core = self.working.dense_block(&core_idx);
        MmfFactorization {
            n: self.n,
            rotations: self.rotations,
            retirements: self.retirements,
            stage_ends: self.stage_ends,
            h: CoreDiagonal { core_indices: IndexSet::from_vec_unchecked(core_idx), core, diagonal: self.diagonal },
            recorded_error_sq: self.error_sq,
            flags: self.flags,
        }
    }
}

/// Single-stream greedy MMF: `levels` retirements, one per level
/// (`δ_ℓ = n - ℓ`), stopping early at `config.target_core`. The whole
/// matrix is factored as one dense block, so this is meant for moderate `n`.
pub fn greedy_mmf(a: &SparseSymMatrix, levels: usize, config: &PmmfConfig) -> Result<MmfFactorization> {
    config.validate()?;
    let n = a.n();
    let mut b = Builder::new(a);
    let quota = levels.min(n.saturating_sub(config.target_core));
    if quota > 0 {
        b.stage(1, &[(0..n).collect()], &[quota], config.seed, true);
    }
    Ok(b.finish())
}

/// Blocked, staged MMF.
pub fn pmmf(a: &SparseSymMatrix, config: &PmmfConfig) -> Result<MmfFactorization> {
    config.validate()?;
    let mut b = Builder::new(a);
    let mut stage = 0;
    loop {
        let active = b.working.active_indices();
        if active.len() <= config.target_core {
            break;
        }
        if stage >= config.stages_cap {
            b.flags.push("pmmf_stage_cap_reached".into());
            break;
        }
        stage += 1;
        let clusters = cluster_columns(&b.working, &active, config.max_block, splitmix(config.seed ^ stage as u64));
        let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
        let q = quotas(&sizes, config.wavelet_fraction, active.len() - config.target_core);
        let retired = b.stage(stage, &clusters, &q, config.seed, false);
        if retired == 0 {
            b.flags.push("pmmf_stalled".into());
            break;
        }
    }
    Ok(b.finish())
}

/// Threshold factor for tiny diagonal entries of `H`: `1e-12 * max |H_ii|`.
pub const DIAG_EPS: f64 = 1e-12;

/// The factored approximate inverse `Qᵀ H⁻¹ Q`.
#[derive(Debug, Clone)]
pub struct MmfPreconditioner {
    factorization: MmfFactorization,
    core_inverse: DMatrix<f64>,
    diag_inverse: Vec<(usize, f64)>,
    flags: Vec<String>,
}

impl MmfPreconditioner {
    /// Inverts `H`: the core through a symmetric eigendecomposition
    /// (pseudo-inverse if singular), the diagonal elementwise with tiny
    /// entries clamped to a sign-preserving `ε_H`.
    pub fn new(factorization: MmfFactorization) -> Self {
        let mut flags = factorization.flags.clone();
        let h = &factorization.h;
        let hmax = h
            .diagonal
            .iter()
            .map(|&(_, d)| d.abs())
            .chain((0..h.core.nrows()).map(|i| h.core[(i, i)].abs()))
            .fold(0.0, f64::max);
        let eps = (DIAG_EPS * hmax).max(f64::MIN_POSITIVE);
        let mut clamped = 0usize;
        let diag_inverse = h
            .diagonal
            .iter()
            .map(|&(i, d)| {
                let d = if d.abs() < eps {
                    clamped += 1;
                    if d < 0.0 {
                        -eps
                    } else {
                        eps
                    }
                } else {
                    d
                };
                (i, 1.0 / d)
            })
            .collect();
        if clamped > 0 {
            flags.push(format!("mmf_diagonal_clamped={clamped}"));
        }
        let (core_inverse, truncated) = symmetric_pinv(&h.core, DIAG_EPS);
        if truncated {
            flags.push("mmf_core_pseudo_inverse".into());
        }
        Self { factorization, core_inverse, diag_inverse, flags }
    }

    pub fn factorization(&self) -> &MmfFactorization {
        &self.factorization
    }

    pub fn dim(&self) -> usize {
        self.factorization.n
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    /// `Qᵀ H⁻¹ Q v`.
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        let f = &self.factorization;
        f.check_dim(v.len())?;
        let mut y = v.to_vec();
        f.rotate(&mut y);
        let core_idx = f.h.core_indices.as_slice();
        let xc: Vec<f64> = core_idx.iter().map(|&i| y[i]).collect();
        for (p, &i) in core_idx.iter().enumerate() {
            y[i] = (0..xc.len()).map(|q| self.core_inverse[(p, q)] * xc[q]).sum();
        }
        for &(i, d) in &self.diag_inverse {
            y[i] *= d;
        }
        f.rotate_back(&mut y);
        Ok(y)
    }

    /// Alias of [`Self::apply_inverse`], the preconditioner action.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply_inverse(v)
    }

    pub fn apply_factored(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.factorization.apply_factored(v)
    }
}

#[cfg(test)]
mod tests;
