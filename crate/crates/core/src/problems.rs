//! Finite-difference model problems on regular meshes with homogeneous
//! Dirichlet boundaries.
//!
//! Unknowns live on the `m` interior points per axis, `h = 1/(m+1)`,
//! ordered lexicographically with `x` fastest. Matrices are the literal
//! central-difference operators, so the Laplacians are negative definite.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sparse::SparseSymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lap1d,
    Lap2d,
    Lap3d,
    Disc2d,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Lap1d, ModelKind::Lap2d, ModelKind::Lap3d, ModelKind::Disc2d];

    /// Spatial dimension of the underlying PDE.
    pub fn dims(self) -> usize {
        match self {
            ModelKind::Lap1d => 1,
            ModelKind::Lap2d | ModelKind::Disc2d => 2,
            ModelKind::Lap3d => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lap1d => "lap1d",
            ModelKind::Lap2d => "lap2d",
            ModelKind::Lap3d => "lap3d",
            ModelKind::Disc2d => "disc2d",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lap1d" => Ok(ModelKind::Lap1d),
            "lap2d" => Ok(ModelKind::Lap2d),
            "lap3d" => Ok(ModelKind::Lap3d),
            "disc2d" => Ok(ModelKind::Disc2d),
            other => Err(Error::Config(format!("unknown model problem `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelProblem {
    pub kind: ModelKind,
    /// Interior mesh points per dimension.
    pub m: usize,
    pub matrix: SparseSymMatrix,
    /// Right-hand side sampled from the PDE source term.
    pub rhs: Vec<f64>,
}

impl ModelProblem {
    pub fn build(kind: ModelKind, m: usize) -> Result<Self> {
        match kind {
            ModelKind::Lap1d => build_lap1d(m),
            ModelKind::Lap2d => build_lap2d(m),
            ModelKind::Lap3d => build_lap3d(m),
            ModelKind::Disc2d => build_disc2d(m),
        }
    }

    pub fn mesh_width(&self) -> f64 {
        1.0 / (self.m as f64 + 1.0)
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Config("mesh must have at least one interior point".into()));
    }
    Ok(())
}

/// Grid coordinate of interior node `i` (0-based), i.e. `(i+1) h`.
fn node(i: usize, m: usize) -> f64 {
    (i + 1) as f64 / (m + 1) as f64
}

/// `u_xx = e^x / (1 + x^2)` on `[0, 1]`.
pub fn build_lap1d(m: usize) -> Result<ModelProblem> {
    check_m(m)?;
    let inv_h2 = ((m + 1) * (m + 1)) as f64;
    let mut t = Vec::with_capacity(3 * m);
    for i in 0..m {
        if i > 0 {
            t.push((i, i - 1, inv_h2));
        }
        t.push((i, i, -2.0 * inv_h2));
        if i + 1 < m {
            t.push((i, i + 1, inv_h2));
        }
    }
    let rhs = (0..m)
        .map(|i| {
            let x = node(i, m);
            x.exp() / (1.0 + x * x)
        })
        .collect();
    Ok(ModelProblem { kind: ModelKind::Lap1d, m, matrix: SparseSymMatrix::from_triplets(m, t)?, rhs })
}

/// `u_xx + u_yy = -100 x^2` on the unit square, five-point stencil.
pub fn build_lap2d(m: usize) -> Result<ModelProblem> {
    check_m(m)?;
    let inv_h2 = ((m + 1) * (m + 1)) as f64;
    let idx = |i: usize, j: usize| i + m * j;
    let mut t = Vec::with_capacity(5 * m * m);
    for j in 0..m {
        for i in 0..m {
            let r = idx(i, j);
            t.push((r, r, -4.0 * inv_h2));
            if i > 0 {
                t.push((r, idx(i - 1, j), inv_h2));
            }
            if i + 1 < m {
                t.push((r, idx(i + 1, j), inv_h2));
            }
            if j > 0 {
                t.push((r, idx(i, j - 1), inv_h2));
            }
            if j + 1 < m {
                t.push((r, idx(i, j + 1), inv_h2));
            }
        }
    }
    let mut rhs = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..m {
            let x = node(i, m);
            rhs[idx(i, j)] = -100.0 * x * x;
        }
    }
    Ok(ModelProblem { kind: ModelKind::Lap2d, m, matrix: SparseSymMatrix::from_triplets(m * m, t)?, rhs })
}

/// `u_xx + u_yy + u_zz = -100 x^2` on the unit cube, seven-point stencil.
pub fn build_lap3d(m: usize) -> Result<ModelProblem> {
    check_m(m)?;
    let inv_h2 = ((m + 1) * (m + 1)) as f64;
    let idx = |i: usize, j: usize, k: usize| i + m * (j + m * k);
    let n = m * m * m;
    let mut t = Vec::with_capacity(7 * n);
    let mut rhs = vec![0.0; n];
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let r = idx(i, j, k);
                t.push((r, r, -6.0 * inv_h2));
                if i > 0 {
                    t.push((r, idx(i - 1, j, k), inv_h2));
                }
                if i + 1 < m {
                    t.push((r, idx(i + 1, j, k), inv_h2));
                }
                if j > 0 {
                    t.push((r, idx(i, j - 1, k), inv_h2));
                }
                if j + 1 < m {
                    t.push((r, idx(i, j + 1, k), inv_h2));
                }
                if k > 0 {
                    t.push((r, idx(i, j, k - 1), inv_h2));
                }
                if k + 1 < m {
                    t.push((r, idx(i, j, k + 1), inv_h2));
                }
                let x = node(i, m);
                rhs[r] = -100.0 * x * x;
            }
        }
    }
    Ok(ModelProblem { kind: ModelKind::Lap3d, m, matrix: SparseSymMatrix::from_triplets(n, t)?, rhs })
}

/// Piecewise coefficient of the discontinuous problem. Intervals are
/// closed and the first matching case wins.
pub fn disc_coefficient(x: f64, y: f64) -> f64 {
    if (0.0..=0.5).contains(&x) && (0.5..=1.0).contains(&y) {
        1e-3
    } else if (0.5..=1.0).contains(&x) && (0.0..=0.5).contains(&y) {
        1e3
    } else {
        1.0
    }
}

/// `(a u_x)_x + (b u_y)_y = sin(pi x y)` with `a = b` piecewise constant.
///
/// Flux coefficients are sampled pointwise at edge midpoints. Midpoints are
/// computed from integer half-steps so the two rows sharing an edge see the
/// same bits and the matrix is exactly symmetric.
pub fn build_disc2d(m: usize) -> Result<ModelProblem> {
    check_m(m)?;
    let inv_h2 = ((m + 1) * (m + 1)) as f64;
    let denom = (2 * (m + 1)) as f64;
    // half-step coordinate: grid line g (0..=m+1) sits at 2g / (2(m+1))
    let half = |twice: usize| twice as f64 / denom;
    let idx = |i: usize, j: usize| i + m * j;
    let mut t = Vec::with_capacity(5 * m * m);
    let mut rhs = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..m {
            // grid indices including the boundary: interior node i -> gi = i + 1
            let (gi, gj) = (i + 1, j + 1);
            let (x, y) = (half(2 * gi), half(2 * gj));
            let west = disc_coefficient(half(2 * gi - 1), y);
            let east = disc_coefficient(half(2 * gi + 1), y);
            let south = disc_coefficient(x, half(2 * gj - 1));
            let north = disc_coefficient(x, half(2 * gj + 1));
            let r = idx(i, j);
            t.push((r, r, -(west + east + south + north) * inv_h2));
            if i > 0 {
                t.push((r, idx(i - 1, j), west * inv_h2));
            }
            if i + 1 < m {
                t.push((r, idx(i + 1, j), east * inv_h2));
            }
            if j > 0 {
                t.push((r, idx(i, j - 1), south * inv_h2));
            }
            if j + 1 < m {
                t.push((r, idx(i, j + 1), north * inv_h2));
            }
            rhs[r] = (PI * x * y).sin();
        }
    }
    Ok(ModelProblem { kind: ModelKind::Disc2d, m, matrix: SparseSymMatrix::from_triplets(m * m, t)?, rhs })
}
