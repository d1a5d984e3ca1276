//! Experiment orchestration: configs, seeded runs, sweeps and comparisons.

pub mod compare;
pub mod config;
pub mod output;
pub mod run;
pub mod sweep;

pub use compare::{compare, Comparison};
pub use config::{Algo, ExperimentConfig, KlMode, Selection, Task};
pub use run::{run, run_seed, RunOutput, RunRecord};
pub use sweep::{sweep, Axis, SweepRow};
