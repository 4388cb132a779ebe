//! Full GMRES (modified Gram-Schmidt Arnoldi, Givens-reduced Hessenberg)
//! and the preconditioned solve driver.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::mmf::MmfPreconditioner;
use crate::sparse::SparseSymMatrix;
use crate::wspai::{CtwPreconditioner, HcPreconditioner};

/// A square linear map applied matrix-free.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for SparseSymMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y).expect("operator dimension checked by caller");
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    /// Relative residual target on the iterated system.
    pub tol: f64,
    pub max_iter: usize,
    /// Krylov dimension before restarting; `None` runs full GMRES.
    pub restart: Option<usize>,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000, restart: None }
    }
}

impl GmresConfig {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, restart: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Relative residual estimate of the iterated system; entry 0 is the
    /// initial residual, so the length is `iterations + 1`.
    pub residual_history: Vec<f64>,
    /// `||A x - b|| / ||b||` recomputed on the original system.
    pub true_relative_residual: f64,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub flags: Vec<String>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `op x = rhs` with (optionally restarted) GMRES starting from `x0`
/// (zero when `None`).
pub fn gmres(
    op: &dyn LinearOperator,
    rhs: &[f64],
    x0: Option<&[f64]>,
    cfg: &GmresConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
    }
    if cfg.tol.is_nan() || cfg.tol <= 0.0 {
        return Err(Error::Config(format!("tolerance must be positive, got {}", cfg.tol)));
    }
    let start = Instant::now();
    let mut x = match x0 {
        Some(v) if v.len() != n => return Err(Error::DimensionMismatch { expected: n, got: v.len() }),
        Some(v) => v.to_vec(),
        None => vec![0.0; n],
    };
    let mut report = SolveReport::default();
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        report.converged = true;
        report.residual_history.push(0.0);
        report.solve_seconds = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }

    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let residual = |x: &[f64], r: &mut Vec<f64>, w: &mut Vec<f64>| {
        op.apply(x, w);
        for i in 0..n {
            r[i] = rhs[i] - w[i];
        }
        norm(r)
    };
    let mut beta = residual(&x, &mut r, &mut w);
    report.residual_history.push(beta / bnorm);
    if beta / bnorm <= cfg.tol {
        report.converged = true;
    }

    let mut total = 0usize;
    while !report.converged && total < cfg.max_iter {
        let m = cfg.restart.unwrap_or(cfg.max_iter).min(cfg.max_iter - total).max(1);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        // Hessenberg columns, already rotated into upper-triangular form
        let mut hess: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<f64> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut breakdown = false;

        for j in 0..m {
            op.apply(&basis[j], &mut w);
            let wnorm0 = norm(&w);
            let mut h = vec![0.0; j + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i] = hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
            let hnext = norm(&w);
            h[j + 1] = hnext;
            for i in 0..j {
                let (a, b) = (h[i], h[i + 1]);
                h[i] = cs[i] * a + sn[i] * b;
                h[i + 1] = -sn[i] * a + cs[i] * b;
            }
            let (a, b) = (h[j], h[j + 1]);
            let rho = a.hypot(b);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, b / rho) };
            cs.push(c);
            sn.push(s);
            h[j] = rho;
            h[j + 1] = 0.0;
            g[j + 1] = -s * g[j];
            g[j] *= c;
            hess.push(h);
            total += 1;

            let rel = g[j + 1].abs() / bnorm;
            report.residual_history.push(rel);
            if rel <= cfg.tol {
                report.converged = true;
            }
            if !report.converged && hnext <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE) {
                breakdown = true;
            }
            if report.converged || breakdown || total >= cfg.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }

        // back substitution for the Krylov coefficients
        let k = hess.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (l, yl) in y.iter().enumerate().skip(i + 1) {
                s -= hess[l][i] * yl;
            }
            y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
        }
        for (yi, v) in y.iter().zip(&basis) {
            for (xk, vk) in x.iter_mut().zip(v) {
                *xk += yi * vk;
            }
        }
        if breakdown {
            report.flags.push("arnoldi_breakdown".into());
            break;
        }
        if !report.converged && total < cfg.max_iter {
            beta = residual(&x, &mut r, &mut w);
            if let Some(last) = report.residual_history.last_mut() {
                *last = beta / bnorm;
            }
            if beta / bnorm <= cfg.tol {
                report.converged = true;
            }
        }
    }

    report.iterations = total;
    let rn = residual(&x, &mut r, &mut w);
    report.true_relative_residual = rn / bnorm;
    report.solve_seconds = start.elapsed().as_secs_f64();
    Ok((x, report))
}

/// Preconditioner choices for [`solve_preconditioned`].
#[derive(Debug, Clone)]
pub enum Preconditioner {
    None,
    Ctw(CtwPreconditioner),
    Hc(HcPreconditioner),
    Mmf(MmfPreconditioner),
}

impl Preconditioner {
    pub fn name(&self) -> &'static str {
        match self {
            Preconditioner::None => "none",
            Preconditioner::Ctw(_) => "ctw",
            Preconditioner::Hc(_) => "hc",
            Preconditioner::Mmf(_) => "mmf",
        }
    }

    fn flags(&self) -> Vec<String> {
        match self {
            Preconditioner::None => Vec::new(),
            Preconditioner::Ctw(p) => p.flags().to_vec(),
            Preconditioner::Hc(p) => p.flags().to_vec(),
            Preconditioner::Mmf(p) => p.flags().to_vec(),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Preconditioner::None => None,
            Preconditioner::Ctw(p) => Some(p.dim()),
            Preconditioner::Hc(p) => Some(p.dim()),
            Preconditioner::Mmf(p) => Some(p.dim()),
        }
    }
}

/// Solves `A x = b` with the chosen preconditioner.
///
/// `none`: GMRES on `A x = b`. `ctw` / `mmf`: left preconditioning,
/// `P A x = P b`. `hc`: `Wᵀ A M y = Wᵀ b` followed by `x = M y`.
/// The report's `true_relative_residual` is always measured on `A x = b`.
pub fn solve_preconditioned(
    a: &SparseSymMatrix,
    b: &[f64],
    precond: &Preconditioner,
    cfg: &GmresConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.n();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if let Some(d) = precond.dim() {
        if d != n {
            return Err(Error::DimensionMismatch { expected: n, got: d });
        }
    }
    let start = Instant::now();
    let (x, mut report) = match precond {
        Preconditioner::None => gmres(a, b, None, cfg)?,
        Preconditioner::Ctw(p) => {
            let op = left_preconditioned(a, |r| p.apply(r));
            gmres(&op, &p.apply(b)?, None, cfg)?
        }
        Preconditioner::Mmf(p) => {
            let op = left_preconditioned(a, |r| p.apply(r));
            gmres(&op, &p.apply(b)?, None, cfg)?
        }
        Preconditioner::Hc(p) => {
            let op = FnOperator::new(n, |v: &[f64], out: &mut [f64]| {
                let mv = p.apply_m(v).expect("dimension checked");
                let amv = a.matvec(&mv).expect("dimension checked");
                out.copy_from_slice(&p.transform(&amv).expect("dimension checked"));
            });
            let (y, rep) = gmres(&op, &p.transform(b)?, None, cfg)?;
            (p.apply_m(&y)?, rep)
        }
    };
    let ax = a.matvec(&x)?;
    let bnorm = norm(b);
    let rnorm = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    report.true_relative_residual = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
    report.solve_seconds = start.elapsed().as_secs_f64();
    let mut flags = precond.flags();
    flags.append(&mut report.flags);
    report.flags = flags;
    Ok((x, report))
}

fn left_preconditioned<'a, P>(a: &'a SparseSymMatrix, p: P) -> impl LinearOperator + 'a
where
    P: Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a,
{
    FnOperator::new(a.n(), move |v: &[f64], out: &mut [f64]| {
        let av = a.matvec(v).expect("dimension checked");
        out.copy_from_slice(&p(&av).expect("dimension checked"));
    })
}
