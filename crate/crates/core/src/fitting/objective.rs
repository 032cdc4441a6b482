use serde::{Deserialize, Serialize};

use crate::data::ScalingDataset;
use crate::error::{Error, Result};
use crate::model::{nqs_loss, NqsParams};

pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;
pub const DEFAULT_PENALTY: f64 = 1e6;

/// Quadratic within `delta` of zero, linear outside.
pub fn huber(x: f64, y: f64, delta: f64) -> f64 {
    let d = (x - y).abs();
    if d <= delta {
        0.5 * d * d
    } else {
        delta * (d - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `x`.
pub fn huber_slope(x: f64, y: f64, delta: f64) -> f64 {
    (x - y).clamp(-delta, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    #[default]
    Huber,
    Squared,
}

/// How per-record log residuals are scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scoring {
    pub kind: ObjectiveKind,
    pub delta: f64,
    /// Contribution of a record whose prediction is unusable.
    pub penalty: f64,
}

impl Default for Scoring {
    fn default() -> Self {
        Scoring {
            kind: ObjectiveKind::Huber,
            delta: DEFAULT_HUBER_DELTA,
            penalty: DEFAULT_PENALTY,
        }
    }
}

impl Scoring {
    pub fn huber(delta: f64) -> Self {
        Scoring {
            delta,
            ..Scoring::default()
        }
    }

    pub fn score(&self, residual: f64) -> f64 {
        match self.kind {
            ObjectiveKind::Huber => huber(residual, 0.0, self.delta),
            ObjectiveKind::Squared => residual * residual,
        }
    }

    pub fn slope(&self, residual: f64) -> f64 {
        match self.kind {
            ObjectiveKind::Huber => huber_slope(residual, 0.0, self.delta),
            ObjectiveKind::Squared => 2.0 * residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Ids of records that received the penalty.
    pub penalized: Vec<usize>,
}

/// Mean score of `log prediction − log observed` over `data`.
pub fn nqs_objective_with(
    theta: &NqsParams,
    data: &ScalingDataset,
    scoring: &Scoring,
) -> Result<ObjectiveValue> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "objective over an empty dataset".into(),
        ));
    }
    let mut total = 0.0;
    let mut penalized = Vec::new();
    for r in &data.records {
        match nqs_loss(theta, &r.run) {
            Ok(pred) if pred > 0.0 && pred.is_finite() => {
                total += scoring.score(pred.ln() - r.loss.ln())
            }
            Ok(_) | Err(Error::Unstable { .. }) | Err(Error::NonFinite { .. }) => {
                total += scoring.penalty;
                penalized.push(r.id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ObjectiveValue {
        value: total / data.len() as f64,
        penalized,
    })
}

/// Mean Huber-on-log error of `theta` over `data`.
pub fn nqs_objective(theta: &NqsParams, data: &ScalingDataset, delta: f64) -> Result<f64> {
    Ok(nqs_objective_with(theta, data, &Scoring::huber(delta))?.value)
}
