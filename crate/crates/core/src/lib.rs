//! Pareto optimality gradient matching (POGM) for multi-domain training.
//!
//! The crate is layered bottom-up:
//! - [`paramvec`]: flat parameter vectors and their arithmetic;
//! - [`model`]: small MLPs with exact backpropagation;
//! - [`domains`]: seeded synthetic domain-shift datasets and samplers;
//! - [`trainer`]: per-domain inner SGD producing gradient trajectories;
//! - [`meta`]: the simplex-constrained surrogate solve, hypersphere
//!   composition, and the POGM / Fish / trajectory-ERM round updates;
//! - [`diagnostics`]: gradient-geometry measurements;
//! - [`runner`]: configs, seeded experiment runs, sweeps, and comparisons.

pub mod acceptance;
pub mod diagnostics;
pub mod domains;
pub mod error;
pub mod matrix;
pub mod meta;
pub mod model;
pub mod paramvec;
pub mod rng;
pub mod runner;
pub mod simplex;
pub mod trainer;

pub use error::{PogmError, Result};
pub use matrix::Matrix;
pub use paramvec::ParamVector;
