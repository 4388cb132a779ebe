//! Experiment runner behind the `mmf-bench` binary.
//!
//! Output layout under the output directory:
//!
//! | file | contents | deterministic |
//! |------|----------|---------------|
//! | `results.csv` | one line per (dataset, method): iterations, convergence, true residual, flags | yes |
//! | `residuals/<dataset>__<method>.csv` | `iteration,relative_residual`, `iterations + 1` lines | yes |
//! | `timings.csv` | setup / solve / total seconds and the best-method mark | no |
//! | `table.txt` | aligned iteration and timing tables, best method starred | no |
//! | `<dataset>.mmf` | serialized factorization (only with `save_factorization`) | yes |
//!
//! `results.csv` columns: `dataset,n,nnz,shown,method,iterations,converged,iterations_run,true_relative_residual,flags`.
//! A run that hits the iteration cap leaves `iterations` empty and carries
//! the `dnc` flag; `flags` is `;`-separated.
//!
//! `timings.csv` columns: `dataset,method,setup_seconds,solve_seconds,total_seconds,best`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::krylov::{solve_preconditioned, GmresConfig, Preconditioner};
use crate::mmf::{pmmf, MmfPreconditioner, PmmfConfig};
use crate::problems::{ModelKind, ModelProblem};
use crate::sparse::{read_matrix_market, trim_to_pow2, SparseSymMatrix};
use crate::wavelet::{max_levels, WaveletBasis, DEFAULT_LEVELS, DEFAULT_TAPS};
use crate::wspai::{build_ctw, build_hc, CtwBlocks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    None,
    Ctw,
    Hc,
    Mmf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Ctw, Method::Hc, Method::Mmf];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Ctw => "ctw",
            Method::Hc => "hc",
            Method::Mmf => "mmf",
        }
    }

    pub fn uses_wavelets(self) -> bool {
        matches!(self, Method::Ctw | Method::Hc)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preconditioner `{s}` (expected none, ctw, hc or mmf)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Model { kind: ModelKind, m: usize },
    MatrixMarket(PathBuf),
}

impl Source {
    pub fn dataset_name(&self) -> String {
        match self {
            Source::Model { kind, m } => format!("{kind}_m{m}"),
            Source::MatrixMarket(p) => {
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "matrix".into())
            }
        }
    }
}

/// How many dimensions the wavelet transform treats the unknowns as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletDims {
    /// Same dimension as the underlying PDE (1D for Matrix Market inputs).
    MatchProblem,
    OneD,
}

/// Solver and preconditioner parameters shared by a family of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub tol: f64,
    pub maxit: usize,
    pub taps: usize,
    pub levels: usize,
    pub wavelet_dims: WaveletDims,
    pub methods: Vec<Method>,
    pub pmmf: PmmfConfig,
}

impl Protocol {
    pub fn wavelet_dims_for(&self, kind: ModelKind) -> usize {
        match self.wavelet_dims {
            WaveletDims::MatchProblem => kind.dims(),
            WaveletDims::OneD => 1,
        }
    }
}

/// `(model problems, off-the-shelf matrices)`.
pub fn default_protocols() -> (Protocol, Protocol) {
    let model = Protocol {
        tol: 1e-8,
        maxit: 1000,
        taps: DEFAULT_TAPS,
        levels: DEFAULT_LEVELS,
        wavelet_dims: WaveletDims::MatchProblem,
        methods: Method::ALL.to_vec(),
        pmmf: PmmfConfig::default(),
    };
    let ufl = Protocol {
        tol: 1e-4,
        maxit: 500,
        wavelet_dims: WaveletDims::OneD,
        methods: vec![Method::None, Method::Hc, Method::Mmf],
        ..model.clone()
    };
    (model, ufl)
}

/// Default grid size per model problem (`n` between roughly 700 and 1000).
pub fn default_model_size(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Lap1d => 1023,
        ModelKind::Lap2d | ModelKind::Disc2d => 31,
        ModelKind::Lap3d => 9,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: Source,
    pub methods: Vec<Method>,
    pub tol: f64,
    pub maxit: usize,
    pub taps: usize,
    pub levels: usize,
    pub wavelet_dims: WaveletDims,
    /// CTW block size; `None` uses one block per wavelet band.
    pub block_size: Option<usize>,
    pub pmmf: PmmfConfig,
    pub rhs_seed: u64,
    pub trim_seed: u64,
    pub save_factorization: bool,
}

impl ExperimentConfig {
    /// Config for `source` under its default protocol.
    pub fn for_source(source: Source) -> Self {
        let (model, ufl) = default_protocols();
        let p = match source {
            Source::Model { .. } => model,
            Source::MatrixMarket(_) => ufl,
        };
        Self {
            source,
            methods: p.methods,
            tol: p.tol,
            maxit: p.maxit,
            taps: p.taps,
            levels: p.levels,
            wavelet_dims: p.wavelet_dims,
            block_size: None,
            pmmf: p.pmmf,
            rhs_seed: 0,
            trim_seed: 0,
            save_factorization: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.maxit == 0 {
            return Err(Error::Config("maxit must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no preconditioner selected".into()));
        }
        if self.block_size == Some(0) {
            return Err(Error::Config("block size must be positive".into()));
        }
        self.pmmf.validate()
    }
}

/// Outcome of one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// `None` when the run did not converge within the cap.
    pub iterations: Option<usize>,
    pub iterations_run: usize,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
    pub total_seconds: f64,
    pub true_relative_residual: f64,
    pub flags: Vec<String>,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub n: usize,
    pub nnz: usize,
    /// At least one method converged.
    pub shown: bool,
    pub methods: Vec<MethodResult>,
}

impl ResultRow {
    pub fn get(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Fewest iterations among converged methods, ties to the smaller total
    /// time, then to method order.
    pub fn best(&self) -> Option<Method> {
        self.methods
            .iter()
            .filter_map(|r| r.iterations.map(|it| (it, r.total_seconds, r.method)))
            .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
            .map(|t| t.2)
    }
}

/// The system an experiment solves, after loading and optional trimming.
pub struct PreparedSystem {
    pub dataset: String,
    pub matrix: SparseSymMatrix,
    pub rhs: Vec<f64>,
    pub wavelet_dims: usize,
    pub len_per_dim: usize,
    pub flags: Vec<String>,
}

/// Standard normal right-hand side.
pub fn random_rhs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn prepare(config: &ExperimentConfig) -> Result<PreparedSystem> {
    let mut flags = Vec::new();
    let dataset = config.source.dataset_name();
    let (matrix, dims, len) = match &config.source {
        Source::Model { kind, m } => {
            let p = ModelProblem::build(*kind, *m)?;
            let dims = match config.wavelet_dims {
                WaveletDims::MatchProblem => kind.dims(),
                WaveletDims::OneD => 1,
            };
            let len = if dims == 1 { p.matrix.n() } else { *m };
            (p.matrix, dims, len)
        }
        Source::MatrixMarket(path) => {
            let mm = read_matrix_market(path)?;
            if mm.symmetrized {
                flags.push("symmetrized".to_string());
            }
            let mut a = mm.matrix;
            if config.methods.iter().any(|m| m.uses_wavelets()) {
                let (t, _) = trim_to_pow2(&a, config.trim_seed);
                if t.n() != a.n() {
                    flags.push(format!("trimmed={}->{}", a.n(), t.n()));
                }
                a = t;
            }
            let n = a.n();
            (a, 1, n)
        }
    };
    let rhs = random_rhs(matrix.n(), config.rhs_seed);
    Ok(PreparedSystem { dataset, matrix, rhs, wavelet_dims: dims, len_per_dim: len, flags })
}

fn wavelet_basis(config: &ExperimentConfig, sys: &PreparedSystem, flags: &mut Vec<String>) -> Result<WaveletBasis> {
    let cap = max_levels(sys.len_per_dim);
    let levels = if config.levels > cap {
        flags.push(format!("levels_clamped={}->{}", config.levels, cap));
        cap
    } else {
        config.levels
    };
    WaveletBasis::daubechies(config.taps, levels, sys.wavelet_dims, sys.len_per_dim)
}

/// Builds one preconditioner; returns it with its build flags.
pub fn build_preconditioner(
    method: Method,
    config: &ExperimentConfig,
    sys: &PreparedSystem,
) -> Result<(Preconditioner, Vec<String>)> {
    let mut flags = Vec::new();
    let pc = match method {
        Method::None => Preconditioner::None,
        Method::Ctw => {
            let basis = wavelet_basis(config, sys, &mut flags)?;
            let blocks = config.block_size.map_or(CtwBlocks::Bands, CtwBlocks::Uniform);
            Preconditioner::Ctw(build_ctw(&sys.matrix, &basis, blocks)?)
        }
        Method::Hc => {
            let basis = wavelet_basis(config, sys, &mut flags)?;
            Preconditioner::Hc(build_hc(&sys.matrix, &basis)?)
        }
        Method::Mmf => Preconditioner::Mmf(MmfPreconditioner::new(pmmf(&sys.matrix, &config.pmmf)?)),
    };
    Ok((pc, flags))
}

/// Runs every selected method on the configured system.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultRow> {
    config.validate()?;
    let sys = prepare(config)?;
    let gmres_cfg = GmresConfig::new(config.tol, config.maxit);
    let mut methods = Vec::with_capacity(config.methods.len());
    let mut order = config.methods.clone();
    order.sort();
    order.dedup();
    for method in order {
        let start = Instant::now();
        let (pc, mut flags) = build_preconditioner(method, config, &sys)?;
        let setup_seconds = start.elapsed().as_secs_f64();
        let (_, report) = solve_preconditioned(&sys.matrix, &sys.rhs, &pc, &gmres_cfg)?;
        flags.splice(0..0, sys.flags.iter().cloned());
        flags.extend(report.flags.iter().cloned());
        if !report.converged {
            flags.push("dnc".into());
        }
        methods.push(MethodResult {
            method,
            iterations: report.converged.then_some(report.iterations),
            iterations_run: report.iterations,
            setup_seconds,
            solve_seconds: report.solve_seconds,
            total_seconds: setup_seconds + report.solve_seconds,
            true_relative_residual: report.true_relative_residual,
            flags,
            residual_history: report.residual_history,
        });
    }
    let shown = methods.iter().any(|m| m.iterations.is_some());
    Ok(ResultRow { dataset: sys.dataset, n: sys.matrix.n(), nnz: sys.matrix.nnz(), shown, methods })
}

pub const RESULTS_HEADER: &str =
    "dataset,n,nnz,shown,method,iterations,converged,iterations_run,true_relative_residual,flags";
pub const TIMINGS_HEADER: &str = "dataset,method,setup_seconds,solve_seconds,total_seconds,best";

/// Rendered tables for a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub results_csv: String,
    pub timings_csv: String,
    pub text: String,
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 fields")
}

pub fn emit_tables(rows: &[ResultRow]) -> Tables {
    let mut results = format!("{RESULTS_HEADER}\n");
    let mut timings = format!("{TIMINGS_HEADER}\n");
    for row in rows {
        let best = row.best();
        for r in &row.methods {
            results.push_str(&csv_line(&[
                row.dataset.clone(),
                row.n.to_string(),
                row.nnz.to_string(),
                row.shown.to_string(),
                r.method.to_string(),
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                r.iterations.is_some().to_string(),
                r.iterations_run.to_string(),
                format!("{:e}", r.true_relative_residual),
                r.flags.join(";"),
            ]));
            timings.push_str(&csv_line(&[
                row.dataset.clone(),
                r.method.to_string(),
                format!("{:.6}", r.setup_seconds),
                format!("{:.6}", r.solve_seconds),
                format!("{:.6}", r.total_seconds),
                (best == Some(r.method)).to_string(),
            ]));
        }
    }
    Tables { results_csv: results, timings_csv: timings, text: text_table(rows) }
}

fn text_table(rows: &[ResultRow]) -> String {
    let mut methods: Vec<Method> = rows.iter().flat_map(|r| r.methods.iter().map(|m| m.method)).collect();
    methods.sort();
    methods.dedup();
    let mut out = String::new();
    for (title, timing) in [("Iterations", false), ("Total seconds (setup + solve)", true)] {
        let mut grid = vec![{
            let mut h = vec!["dataset".to_string(), "n".to_string()];
            h.extend(methods.iter().map(|m| m.to_string()));
            h
        }];
        for row in rows {
            let best = row.best();
            let mut line = vec![row.dataset.clone(), row.n.to_string()];
            for &m in &methods {
                let cell = match row.get(m) {
                    None => "-".to_string(),
                    Some(r) if timing => format!("{:.3}", r.total_seconds),
                    Some(r) => r.iterations.map_or_else(|| "DNC".to_string(), |i| i.to_string()),
                };
                let mark = if best == Some(m) { "*" } else { "" };
                line.push(format!("{cell}{mark}"));
            }
            grid.push(line);
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|c| grid.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
        out.push_str(title);
        out.push('\n');
        for line in &grid {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("* best: fewest iterations, ties broken by total time\n");
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Residual-history CSV for one method.
pub fn residual_csv(history: &[f64]) -> String {
    let mut out = String::from("iteration,relative_residual\n");
    for (i, r) in history.iter().enumerate() {
        out.push_str(&format!("{i},{r:e}\n"));
    }
    out
}

/// Writes every output file for `rows` under `dir`.
pub fn write_outputs(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    let res_dir = dir.join("residuals");
    fs::create_dir_all(&res_dir).map_err(io_err(&res_dir))?;
    let t = emit_tables(rows);
    write_file(&dir.join("results.csv"), &t.results_csv)?;
    write_file(&dir.join("timings.csv"), &t.timings_csv)?;
    write_file(&dir.join("table.txt"), &t.text)?;
    for row in rows {
        for r in &row.methods {
            let p = res_dir.join(format!("{}__{}.csv", row.dataset, r.method));
            write_file(&p, &residual_csv(&r.residual_history))?;
        }
    }
    Ok(())
}

/// Runs the experiment and, if requested, stores its factorization.
pub fn run_and_save(config: &ExperimentConfig, out: &Path) -> Result<ResultRow> {
    let row = run_experiment(config)?;
    if config.save_factorization && config.methods.contains(&Method::Mmf) {
        fs::create_dir_all(out).map_err(io_err(out))?;
        let sys = prepare(config)?;
        let f = pmmf(&sys.matrix, &config.pmmf)?;
        f.save(out.join(format!("{}.mmf", sys.dataset)))?;
    }
    Ok(row)
}

/// Reloads rows (without residual histories) from `results.csv` and
/// `timings.csv` in `dir`.
pub fn read_rows(dir: &Path) -> Result<Vec<ResultRow>> {
    let results = dir.join("results.csv");
    let timings = dir.join("timings.csv");
    let mut rows: Vec<ResultRow> = Vec::new();
    let mut rdr = csv::Reader::from_path(&results).map_err(|e| csv_err(&results, e))?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&results, e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::Format(format!("{}: bad {what} `{}`", results.display(), rec.as_slice()));
        let dataset = field(0).to_string();
        let method: Method = field(4).parse()?;
        let result = MethodResult {
            method,
            iterations: if field(5).is_empty() { None } else { Some(field(5).parse().map_err(|_| bad("iterations"))?) },
            iterations_run: field(7).parse().map_err(|_| bad("iterations_run"))?,
            setup_seconds: 0.0,
            solve_seconds: 0.0,
            total_seconds: 0.0,
            true_relative_residual: field(8).parse().map_err(|_| bad("residual"))?,
            flags: field(9).split(';').filter(|s| !s.is_empty()).map(str::to_string).collect(),
            residual_history: Vec::new(),
        };
        match rows.iter_mut().find(|r| r.dataset == dataset) {
            Some(row) => row.methods.push(result),
            None => rows.push(ResultRow {
                dataset,
                n: field(1).parse().map_err(|_| bad("n"))?,
                nnz: field(2).parse().map_err(|_| bad("nnz"))?,
                shown: field(3) == "true",
                methods: vec![result],
            }),
        }
    }
    if timings.exists() {
        let mut rdr = csv::Reader::from_path(&timings).map_err(|e| csv_err(&timings, e))?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(&timings, e))?;
            let method: Method = rec.get(1).unwrap_or("").parse()?;
            let secs = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(0.0);
            if let Some(r) = rows
                .iter_mut()
                .find(|r| r.dataset == rec.get(0).unwrap_or(""))
                .and_then(|row| row.methods.iter_mut().find(|m| m.method == method))
            {
                r.setup_seconds = secs(2);
                r.solve_seconds = secs(3);
                r.total_seconds = secs(4);
            }
        }
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}
