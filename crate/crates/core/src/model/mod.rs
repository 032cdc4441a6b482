//! The noisy quadratic system loss model.

mod loss;
mod params;
mod schedule;

pub use loss::{
    appx_error, bias_bound_ratio, bias_error, nqs_gradient, nqs_loss, nqs_terms, var_error,
    LossTerms, PreparedRun,
};
pub use params::{index, LayerNormConfig, LrSchedule, NqsParams, RunConfig, N_PARAMS};
pub use schedule::{
    expected_weight_norm_sq, layernorm_schedule, log_spaced_segments, nqs_loss_layernorm,
    nqs_loss_scheduled, ScheduleSegment, ScheduleTrace,
};
