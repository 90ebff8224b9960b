//! Split-and-parallelize (SaP) linear solver.
//!
//! A sparse system is reordered for a heavy diagonal ([`db`]) and a small
//! bandwidth ([`cm`]), optionally truncated ([`sparse::drop_off`]), assembled
//! into a dense banded matrix ([`banded`]), split into independent diagonal
//! blocks and factored without pivoting. The block factors drive either a
//! truncated-SPIKE (coupled) or a block-Jacobi (decoupled) preconditioner
//! ([`spike`]) inside BiCGStab(l) or CG ([`krylov`]).
//!
//! [`pipeline::solve_sparse`] runs the whole chain; [`io`] handles Matrix
//! Market files, the manufactured-solution benchmark and report records.

pub mod banded;
pub mod cm;
pub mod db;
mod dense;
pub mod error;
pub mod gallery;
pub mod io;
pub mod krylov;
pub mod pipeline;
pub mod real;
pub mod sparse;
pub mod spike;

pub use banded::{BandedMatrix, BlockFactors, FactorMode, PartitionLayout, SolveVariant};
pub use dense::DenseMatrix;
pub use error::{Result, SapError};
pub use krylov::{KrylovMethod, KrylovOptions, LinearOperator, SolveStats, Termination};
pub use pipeline::{solve_sparse, PipelineConfig, PipelineReport, Timings};
pub use real::Real;
pub use sparse::SparseMatrix;
pub use spike::{CouplingBlocks, PrecondKind, SpikePreconditioner, SpikeSet};
