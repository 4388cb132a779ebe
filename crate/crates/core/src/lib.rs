//! Multiresolution matrix factorization (MMF) preconditioning for symmetric
//! linear systems, together with the classical wavelet sparse approximate
//! inverse preconditioners (block-diagonal and implicit) and a full GMRES
//! solver used to compare them.
//!
//! Module map:
//!
//! - [`sparse`]: symmetric CSR storage, kernels and Matrix Market I/O.
//! - [`problems`]: finite-difference model problems.
//! - [`wavelet`]: Daubechies filter banks and factored wavelet transforms.
//! - [`wspai`]: wavelet sparse approximate inverses.
//! - [`mmf`]: greedy MMF, blocked parallel MMF and the factored inverse.
//! - [`krylov`]: GMRES and the preconditioned solve driver.
//! - [`bench`]: the experiment runner behind the `mmf-bench` CLI.
//!
//! With the default `parallel` feature the independent batches (cluster
//! factorizations, per-column least squares, per-block solves) run on rayon;
//! without it the same code paths run sequentially and produce identical bits.

pub mod bench;
pub mod dense;
pub mod error;
pub mod krylov;
pub mod mmf;
pub mod par;
pub mod problems;
pub mod sparse;
pub mod wavelet;
pub mod wspai;

pub use error::{Error, Result};
pub use krylov::{gmres, solve_preconditioned, GmresConfig, LinearOperator, SolveReport};
pub use mmf::{greedy_mmf, pmmf, MmfFactorization, MmfPreconditioner, PmmfConfig};
pub use sparse::{IndexSet, SparseSymMatrix};
pub use wavelet::WaveletBasis;
