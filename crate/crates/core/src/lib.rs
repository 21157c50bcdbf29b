//! Batched KSVD dictionary learning.
//!
//! Learns a unit-norm dictionary `D` and k-sparse codes `X` with `Y ≈ DX`.
//! Sparse coding uses Matching Pursuit over a cached Gram matrix; atom
//! updates use the top eigenpair of `E Eᵀ` found by Lanczos, `w` atoms at a
//! time; training streams over mini-batches of samples. Matryoshka training
//! fits nested atom groups to successive residuals.

pub mod bench;
pub mod config;
pub mod driver;
pub mod eigen;
pub mod encoder;
pub mod error;
pub mod io;
pub mod matrix;
pub mod matryoshka;
pub mod metrics;
pub mod reference;
pub mod seed;
pub mod sparse;
pub mod strategy;
pub mod updater;

pub use config::TrainingConfig;
pub use driver::{fit, initialize_dictionary, DataSource, FitResult, Trainer};
pub use error::{Error, Result};
pub use io::Precision;
pub use matrix::{normalize_columns, DenseMatrix, Dictionary, Parallelism};
pub use sparse::SparseCodeMatrix;
pub use strategy::{IterationStrategy, Registry};
