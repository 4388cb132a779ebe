//! Command-line driver for the preconditioner experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmf_precond::bench::{
    default_model_size, emit_tables, read_rows, run_and_save, write_outputs, ExperimentConfig, Method, ResultRow,
    Source,
};
use mmf_precond::problems::ModelKind;
use mmf_precond::{par, Error, Result};

#[derive(Parser)]
#[command(name = "mmf-bench", version, about = "MMF and wavelet SPAI preconditioner benchmarks")]
struct Cli {
    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long, env = "MMFPREC_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Solve {
        /// Model problem: lap1d, lap2d, lap3d or disc2d.
        #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
        problem: Option<ModelKind>,
        /// Matrix Market file.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Interior grid points per dimension.
        #[arg(long)]
        m: Option<usize>,
        #[command(flatten)]
        opts: Options,
    },
    /// Run a list of experiments into one set of tables.
    Sweep {
        /// Model problems (repeatable); defaults to all four when no matrix is given.
        #[arg(long)]
        problem: Vec<ModelKind>,
        /// Matrix Market files (repeatable).
        #[arg(long)]
        matrix: Vec<PathBuf>,
        /// Grid sizes: one for all problems, or one per `--problem`.
        #[arg(long)]
        m: Vec<usize>,
        #[command(flatten)]
        opts: Options,
    },
    /// Merge `results.csv` / `timings.csv` from earlier runs into one table.
    Tables {
        /// Directories written by `solve` or `sweep`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory
        #[arg(long, default_value = "tables")]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Options {
    /// Preconditioners to run (repeatable): none, ctw, hc, mmf.
    #[arg(long = "precond")]
    precond: Vec<Method>,
    /// GMRES relative residual tolerance (protocol default if omitted)
    #[arg(long)]
    tol: Option<f64>,
    /// GMRES iteration cap (protocol default if omitted)
    #[arg(long)]
    maxit: Option<usize>,
    /// Daubechies filter length (2, 4, 6 or 8).
    #[arg(long)]
    taps: Option<usize>,
    /// Wavelet levels (clamped to what the size allows).
    #[arg(long)]
    levels: Option<usize>,
    /// Uniform CTW block size instead of one block per band.
    #[arg(long)]
    block_size: Option<usize>,
    /// MMF core size.
    #[arg(long)]
    core: Option<usize>,
    /// MMF cluster size cap.
    #[arg(long)]
    max_block: Option<usize>,
    /// Fraction of active columns retired per MMF stage.
    #[arg(long)]
    wavelet_fraction: Option<f64>,
    /// Seed of the random right-hand side
    #[arg(long, default_value_t = 0)]
    rhs_seed: u64,
    /// Seed used when trimming a Matrix Market input to a dyadic size
    #[arg(long, default_value_t = 0)]
    trim_seed: u64,
    /// Seed of the MMF pivot and clustering choices.
    #[arg(long, default_value_t = 0)]
    mmf_seed: u64,
    /// Also write the MMF factorization as `<dataset>.mmf`.
    #[arg(long)]
    save_factorization: bool,
    /// Output directory
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl Options {
    fn config(&self, source: Source) -> ExperimentConfig {
        let mut c = ExperimentConfig::for_source(source);
        if !self.precond.is_empty() {
            c.methods = self.precond.clone();
        }
        c.tol = self.tol.unwrap_or(c.tol);
        c.maxit = self.maxit.unwrap_or(c.maxit);
        c.taps = self.taps.unwrap_or(c.taps);
        c.levels = self.levels.unwrap_or(c.levels);
        c.block_size = self.block_size.or(c.block_size);
        c.pmmf.target_core = self.core.unwrap_or(c.pmmf.target_core);
        c.pmmf.max_block = self.max_block.unwrap_or(c.pmmf.max_block);
        c.pmmf.wavelet_fraction = self.wavelet_fraction.unwrap_or(c.pmmf.wavelet_fraction);
        c.pmmf.seed = self.mmf_seed;
        c.rhs_seed = self.rhs_seed;
        c.trim_seed = self.trim_seed;
        c.save_factorization = self.save_factorization;
        c
    }
}

fn run_all(sources: Vec<Source>, opts: &Options) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::with_capacity(sources.len());
    for s in sources {
        let row = run_and_save(&opts.config(s), &opts.out)?;
        eprintln!("finished {}", row.dataset);
        rows.push(row);
    }
    write_outputs(&opts.out, &rows)?;
    print!("{}", emit_tables(&rows).text);
    Ok(rows)
}

fn sweep_sources(problem: &[ModelKind], m: &[usize], matrix: &[PathBuf]) -> Result<Vec<Source>> {
    let kinds = if problem.is_empty() && matrix.is_empty() { ModelKind::ALL.to_vec() } else { problem.to_vec() };
    let sizes: Vec<usize> = match m.len() {
        0 => kinds.iter().map(|&k| default_model_size(k)).collect(),
        1 => vec![m[0]; kinds.len()],
        l if l == kinds.len() => m.to_vec(),
        l => return Err(Error::Config(format!("{l} values of --m for {} problems", kinds.len()))),
    };
    let mut out: Vec<Source> = kinds.into_iter().zip(sizes).map(|(kind, m)| Source::Model { kind, m }).collect();
    out.extend(matrix.iter().cloned().map(Source::MatrixMarket));
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { problem, matrix, m, opts } => {
            let source = match (problem, matrix) {
                (Some(kind), _) => Source::Model { kind, m: m.unwrap_or_else(|| default_model_size(kind)) },
                (None, Some(path)) => Source::MatrixMarket(path),
                (None, None) => return Err(Error::Config("either --problem or --matrix is required".into())),
            };
            run_all(vec![source], &opts)?;
        }
        Command::Sweep { problem, matrix, m, opts } => {
            run_all(sweep_sources(&problem, &m, &matrix)?, &opts)?;
        }
        Command::Tables { inputs, out } => {
            let mut rows = Vec::new();
            for dir in &inputs {
                rows.extend(read_rows(dir)?);
            }
            std::fs::create_dir_all(&out).map_err(|source| Error::Io { path: out.clone(), source })?;
            let t = emit_tables(&rows);
            for (name, text) in [("results.csv", &t.results_csv), ("timings.csv", &t.timings_csv), ("table.txt", &t.text)] {
                let p = out.join(name);
                std::fs::write(&p, text).map_err(|source| Error::Io { path: p.clone(), source })?;
            }
            print!("{}", t.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match threads {
        Some(0) => Err(Error::Config("thread count must be positive".into())),
        Some(t) => par::with_threads(t, || run(cli)),
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
