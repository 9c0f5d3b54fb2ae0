//! Synthetic problems and the stability / noise / timing experiments run on
//! them.

mod evaluation;
mod experiments;
mod report;
mod synthetic;

pub use evaluation::{evaluate_reconstruction, SequenceErrors};
pub use experiments::{
    run_model_selection_experiment, run_noise_experiment, run_stability_experiment,
    run_timing_experiment, spearman, trial_seed,
};
pub use report::{emit_report, read_csv, Chart, ExperimentReport};
pub use synthetic::{
    generate_problem, generate_rotation_pair, generate_sequence, SequenceConfig, SyntheticConfig,
    SyntheticProblem, SyntheticSequence,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
    #[error("generated tracks are invalid: {0}")]
    Tracks(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
