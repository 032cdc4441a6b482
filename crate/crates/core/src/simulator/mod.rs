//! Monte Carlo ground truth and synthetic datasets.

mod dataset;
mod monte_carlo;
mod recurrence;

pub use dataset::{
    concat, design_runs, generate_synthetic_dataset, generate_synthetic_dataset_with, BatchRule,
    DatasetDesign, GeneratedDataset, GeneratorOptions,
};
pub use monte_carlo::{
    simulate_layernorm_run, simulate_run, simulate_trial_state, Feedback, SimConfig, SimResult,
};
pub use recurrence::{moment_recurrence, MomentTrace, StepRule};
