//! Experiment specs, Monte Carlo ensembles, checks and outputs.

pub mod checks;
pub mod cli;
pub mod ensemble;
pub mod output;
pub mod presets;
pub mod scaling;
pub mod spec;

pub use ensemble::{run_ensemble, weak_error, EnsembleStats, WeakErrorReport};
pub use spec::{load_spec, Experiment, ExperimentSpec};
