//! Parameter inference for the loss model.

mod config;
mod evaluator;
mod lhs;
mod nqs;
mod objective;
pub(crate) mod optim;

pub use config::{ChinInitRanges, FitConfig, InitRanges};
pub use lhs::latin_hypercube;
pub(crate) use nqs::run_starts;
pub use nqs::{
    bootstrap_ci, filter_small_batch, fit_nqs, s_grid_around, select_s, select_s_with,
    BootstrapResult, FitReport, InitOutcome, SSelection,
};
pub use objective::{
    huber, huber_slope, nqs_objective, nqs_objective_with, ObjectiveKind, ObjectiveValue, Scoring,
    DEFAULT_HUBER_DELTA, DEFAULT_PENALTY,
};
