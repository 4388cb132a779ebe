//! Column clustering by region growing over the Gram graph.
//!
//! Two columns are adjacent when they share a nonzero row. Growth from a
//! seed always absorbs the unassigned neighbour with the largest absolute
//! cosine similarity to any current member, until the cluster reaches
//! `max_block`. Columns that end up alone are pooled into shared clusters.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::sparse::SparseSymMatrix;

/// Read access to the sparse columns of a symmetric matrix.
pub trait GramAccess {
    fn dim(&self) -> usize;
    fn column_norm_sq(&self, i: usize) -> f64;
    /// Nonzero `(row, value)` pairs of column `i`, sorted by row.
    fn column_entries(&self, i: usize) -> &[(usize, f64)];
}

/// Adapter exposing a [`SparseSymMatrix`] through [`GramAccess`].
pub struct MatrixColumns {
    cols: Vec<Vec<(usize, f64)>>,
}

impl MatrixColumns {
    pub fn new(a: &SparseSymMatrix) -> Self {
        let cols = (0..a.n())
            .map(|i| {
                let (c, v) = a.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        Self { cols }
    }
}

impl GramAccess for MatrixColumns {
    fn dim(&self) -> usize {
        self.cols.len()
    }

    fn column_norm_sq(&self, i: usize) -> f64 {
        self.cols[i].iter().map(|(_, v)| v * v).sum()
    }

    fn column_entries(&self, i: usize) -> &[(usize, f64)] {
        &self.cols[i]
    }
}

#[derive(PartialEq)]
struct Candidate {
    score: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // max score first, then smallest index
        self.score.total_cmp(&other.score).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Partitions `active` into clusters of at most `max_block` columns.
///
/// Each returned cluster is sorted; the partition is a deterministic
/// function of the matrix, `active`, `max_block` and `seed`.
pub fn cluster_columns<G: GramAccess + ?Sized>(g: &G, active: &[usize], max_block: usize, seed: u64) -> Vec<Vec<usize>> {
    let max_block = max_block.max(1);
    if active.len() <= max_block {
        let mut all = active.to_vec();
        all.sort_unstable();
        return vec![all];
    }
    let n = g.dim();
    let mut eligible = vec![false; n];
    for &i in active {
        eligible[i] = true;
    }
    let norms: Vec<f64> = (0..n).map(|i| if eligible[i] { g.column_norm_sq(i) } else { 0.0 }).collect();

    let mut order = active.to_vec();
    order.sort_unstable();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut acc = vec![0.0; n];
    let mut touched = Vec::new();
    let mut clusters = Vec::new();
    let mut singletons = Vec::new();
    let mut heap = BinaryHeap::new();
    for &start in &order {
        if !eligible[start] {
            continue;
        }
        eligible[start] = false;
        let mut cluster = vec![start];
        heap.clear();
        push_neighbours(g, start, &norms, &eligible, &mut acc, &mut touched, &mut heap);
        while cluster.len() < max_block {
            let Some(Candidate { index, .. }) = heap.pop() else { break };
            if !eligible[index] {
                continue;
            }
            eligible[index] = false;
            cluster.push(index);
            push_neighbours(g, index, &norms, &eligible, &mut acc, &mut touched, &mut heap);
        }
        if cluster.len() == 1 {
            singletons.push(start);
        } else {
            cluster.sort_unstable();
            clusters.push(cluster);
        }
    }
    singletons.sort_unstable();
    for chunk in singletons.chunks(max_block) {
        clusters.push(chunk.to_vec());
    }
    clusters
}

fn push_neighbours<G: GramAccess + ?Sized>(
    g: &G,
    u: usize,
    norms: &[f64],
    eligible: &[bool],
    acc: &mut [f64],
    touched: &mut Vec<usize>,
    heap: &mut BinaryHeap<Candidate>,
) {
    if norms[u] <= 0.0 {
        return;
    }
    for &(r, aru) in g.column_entries(u) {
        for &(v, arv) in g.column_entries(r) {
            if v == u || !eligible[v] {
                continue;
            }
            if acc[v] == 0.0 {
                touched.push(v);
            }
            acc[v] += aru * arv;
        }
    }
    for &v in touched.iter() {
        let dot = acc[v];
        acc[v] = 0.0;
        if norms[v] > 0.0 && dot != 0.0 {
            heap.push(Candidate { score: dot.abs() / (norms[u] * norms[v]).sqrt(), index: v });
        }
    }
    touched.clear();
}
