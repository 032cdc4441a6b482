//! Grid search for the best `(N, B, K)` under resource constraints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chinchilla::{chin_loss_real, ChinParams};
use crate::error::{Error, Result};
use crate::model::{nqs_loss_layernorm, LayerNormConfig, NqsParams, PreparedRun, RunConfig};
use crate::numerics::SumRule;

/// Something that predicts the final loss of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossModel {
    Nqs {
        theta: NqsParams,
        layernorm: Option<LayerNormConfig>,
    },
    /// Two-term baseline evaluated at `D = B·K·seq_len`.
    Chinchilla { params: ChinParams },
}

impl LossModel {
    pub fn loss(&self, run: &RunConfig) -> Result<f64> {
        match self {
            LossModel::Nqs {
                theta,
                layernorm: None,
            } => PreparedRun::new(*run, &SumRule::default())?.loss(theta),
            LossModel::Nqs {
                theta,
                layernorm: Some(ln),
            } => nqs_loss_layernorm(theta, ln, run),
            LossModel::Chinchilla { params } => {
                Ok(chin_loss_real(params, run.n_params as f64, run.tokens()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimeRule {
    /// `T = N·K`.
    #[default]
    ParamsTimesSteps,
    /// `T = K`.
    Steps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// Bound on `6·N·B·K·seq_len`.
    pub compute_max: f64,
    pub time_max: Option<f64>,
    #[serde(default)]
    pub time_rule: TimeRule,
    /// Bound on `B·N`.
    pub memory_max: Option<f64>,
    /// Bound on `B·K·seq_len`.
    pub data_max: Option<f64>,
    pub seq_len: u64,
}

impl ConstraintSet {
    pub fn compute_only(compute_max: f64, seq_len: u64) -> Self {
        ConstraintSet {
            compute_max,
            time_max: None,
            time_rule: TimeRule::default(),
            memory_max: None,
            data_max: None,
            seq_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compute_max > 0.0) || self.seq_len == 0 {
            return Err(Error::InvalidArgument(
                "compute_max and seq_len must be positive".into(),
            ));
        }
        for (name, v) in [
            ("time_max", self.time_max),
            ("memory_max", self.memory_max),
            ("data_max", self.data_max),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "{name} must be positive, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn time(&self, run: &RunConfig) -> f64 {
        match self.time_rule {
            TimeRule::ParamsTimesSteps => run.n_params as f64 * run.steps as f64,
            TimeRule::Steps => run.steps as f64,
        }
    }

    /// Names of the constraints `run` violates.
    pub fn violations(&self, run: &RunConfig, check_compute: bool) -> Vec<&'static str> {
        let mut out = Vec::new();
        if check_compute && run.compute() > self.compute_max {
            out.push("compute");
        }
        if self.time_max.is_some_and(|t| self.time(run) > t) {
            out.push("time");
        }
        if self
            .memory_max
            .is_some_and(|m| run.batch as f64 * run.n_params as f64 > m)
        {
            out.push("memory");
        }
        if self.data_max.is_some_and(|d| run.tokens() > d) {
            out.push("data");
        }
        out
    }

    pub fn admits(&self, run: &RunConfig) -> bool {
        self.violations(run, true).is_empty()
    }
}

/// Candidate values per axis, ascending and distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_params: Vec<u64>,
    pub batch: Vec<u64>,
    pub steps: Vec<u64>,
}

/// Integers `round(10^{i/per_decade})` in `[lo, hi]`, deduplicated.
pub fn log_axis(lo: u64, hi: u64, per_decade: u32) -> Result<Vec<u64>> {
    if lo == 0 || hi < lo || per_decade == 0 {
        return Err(Error::InvalidArgument(format!(
            "bad axis [{lo}, {hi}] with {per_decade} points per decade"
        )));
    }
    let start = ((lo as f64).log10() * per_decade as f64).floor() as i64;
    let end = ((hi as f64).log10() * per_decade as f64).ceil() as i64;
    let mut out: Vec<u64> = (start..=end)
        .map(|i| 10f64.powf(i as f64 / per_decade as f64).round() as u64)
        .filter(|&v| v >= lo && v <= hi)
        .collect();
    out.push(lo);
    out.push(hi);
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

impl GridSpec {
    pub fn new(mut n_params: Vec<u64>, mut batch: Vec<u64>, mut steps: Vec<u64>) -> Result<Self> {
        for axis in [&mut n_params, &mut batch, &mut steps] {
            axis.sort_unstable();
            axis.dedup();
            if axis.is_empty() || axis[0] == 0 {
                return Err(Error::InvalidArgument(
                    "grid axes must be nonempty and positive".into(),
                ));
            }
        }
        Ok(GridSpec {
            n_params,
            batch,
            steps,
        })
    }

    pub fn log_spaced(
        n: (u64, u64),
        b: (u64, u64),
        k: (u64, u64),
        per_decade: u32,
    ) -> Result<Self> {
        Self::new(
            log_axis(n.0, n.1, per_decade)?,
            log_axis(b.0, b.1, per_decade)?,
            log_axis(k.0, k.1, per_decade)?,
        )
    }

    pub fn len(&self) -> usize {
        self.n_params.len() * self.batch.len() * self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub run: RunConfig,
    pub loss: f64,
    /// Feasible grid points with a usable prediction.
    pub feasible: usize,
}

fn better(a: &(RunConfig, f64), b: &(RunConfig, f64)) -> bool {
    a.1 < b.1
        || (a.1 == b.1
            && (a.0.n_params, a.0.batch, a.0.steps) < (b.0.n_params, b.0.batch, b.0.steps))
}

/// Explains why no grid point is feasible.
fn binding(cons: &ConstraintSet, grid: &GridSpec) -> String {
    let smallest = RunConfig {
        n_params: grid.n_params[0],
        batch: grid.batch[0],
        steps: grid.steps[0],
        seq_len: cons.seq_len,
    };
    let alone = cons.violations(&smallest, true);
    if !alone.is_empty() {
        return format!(
            "{} (violated even by the smallest grid point N = {}, B = {}, K = {})",
            alone.join(", "),
            smallest.n_params,
            smallest.batch,
            smallest.steps
        );
    }
    "no grid point satisfies the constraints jointly".into()
}

/// Lowest predicted loss over the feasible grid points. Ties go to smaller
/// `N`, then `B`, then `K`.
pub fn constrained_search(
    model: &LossModel,
    cons: &ConstraintSet,
    grid: &GridSpec,
) -> Result<SearchResult> {
    cons.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let per_n: Vec<Result<(Option<(RunConfig, f64)>, usize)>> = grid
        .n_params
        .par_iter()
        .map(|&n| {
            let mut best: Option<(RunConfig, f64)> = None;
            let mut count = 0;
            let quadrature = match model {
                LossModel::Nqs {
                    layernorm: None, ..
                } => Some(SumRule::default().quadrature(n)),
                _ => None,
            };
            for &b in &grid.batch {
                for &k in &grid.steps {
                    let run = RunConfig {
                        n_params: n,
                        batch: b,
                        steps: k,
                        seq_len: cons.seq_len,
                    };
                    if !cons.admits(&run) {
                        continue;
                    }
                    let loss = match (&quadrature, model) {
                        (Some(q), LossModel::Nqs { theta, .. }) => PreparedRun {
                            run,
                            quadrature: q.clone(),
                        }
                        .loss(theta),
                        _ => model.loss(&run),
                    };
                    let loss = match loss {
                        Ok(l) if l.is_finite() => l,
                        Ok(_) | Err(Error::Unstable { .. }) | Err(Error::NonFinite { .. }) => {
                            continue
                        }
                        Err(e) => return Err(e),
                    };
                    count += 1;
                    let cand = (run, loss);
                    if best.as_ref().is_none_or(|b| better(&cand, b)) {
                        best = Some(cand);
                    }
                }
            }
            Ok((best, count))
        })
        .collect();
    let mut best: Option<(RunConfig, f64)> = None;
    let mut feasible = 0;
    for r in per_n {
        let (cand, count) = r?;
        feasible += count;
        if let Some(c) = cand {
            if best.as_ref().is_none_or(|b| better(&c, b)) {
                best = Some(c);
            }
        }
    }
    match best {
        Some((run, loss)) => Ok(SearchResult {
            run,
            loss,
            feasible,
        }),
        None => Err(Error::Infeasible(binding(cons, grid))),
    }
}

/// How a slice picks the batch size for each model size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceBatch {
    Fixed(u64),
    /// Best of the listed batch sizes for each `N`.
    Best(Vec<u64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub n_params: u64,
    pub batch: u64,
    pub steps: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoflopSlice {
    pub compute: f64,
    /// Sorted by `n_params`.
    pub rows: Vec<SliceRow>,
    pub notes: Vec<String>,
}

impl IsoflopSlice {
    /// Row with the lowest loss, smallest `N` on ties.
    pub fn minimum(&self) -> Option<&SliceRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&SliceRow>, r| match best {
                Some(b) if b.loss <= r.loss => Some(b),
                _ => Some(r),
            })
    }
}

/// Loss along `6·N·B·K·seq_len = compute` for each `N` in `n_grid`, with
/// `K = round(compute / (6·N·B·seq_len))`.
pub fn isoflop_slice(
    model: &LossModel,
    compute: f64,
    cons: &ConstraintSet,
    n_grid: &[u64],
    batch: &SliceBatch,
) -> Result<IsoflopSlice> {
    if !(compute > 0.0) {
        return Err(Error::InvalidArgument(
            "slice compute must be positive".into(),
        ));
    }
    cons.validate()?;
    let batches: Vec<u64> = match batch {
        SliceBatch::Fixed(b) => vec![*b],
        SliceBatch::Best(bs) => bs.clone(),
    };
    if batches.is_empty() || batches.contains(&0) {
        return Err(Error::InvalidArgument(
            "slice batch sizes must be positive".into(),
        ));
    }
    let mut ns = n_grid.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for n in ns {
        if n == 0 {
            continue;
        }
        let mut best: Option<SliceRow> = None;
        for &b in &batches {
            let k = (compute / (6.0 * n as f64 * b as f64 * cons.seq_len as f64)).round();
            if k < 1.0 {
                continue;
            }
            let run = RunConfig {
                n_params: n,
                batch: b,
                steps: k as u64,
                seq_len: cons.seq_len,
            };
            if !cons.violations(&run, false).is_empty() {
                continue;
            }
            let loss = match model.loss(&run) {
                Ok(l) if l.is_finite() => l,
                Ok(_) | Err(Error::Unstable { .. }) | Err(Error::NonFinite { .. }) => continue,
                Err(e) => return Err(e),
            };
            if best.is_none_or(|r| loss < r.loss) {
                best = Some(SliceRow {
                    n_params: n,
                    batch: b,
                    steps: run.steps,
                    loss,
                });
            }
        }
        match best {
            Some(r) => rows.push(r),
            None => notes.push(format!("N = {n}: no feasible batch size and step count")),
        }
    }
    Ok(IsoflopSlice {
        compute,
        rows,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> LossModel {
        LossModel::Nqs {
            theta: NqsParams::new(1.5, 20.0, 0.8, 0.6, 1.3, 3.0, 1.2).unwrap(),
            layernorm: None,
        }
    }

    #[test]
    fn axis_is_log_spaced() {
        let a = log_axis(1, 100, 2).unwrap();
        assert_eq!(a, vec![1, 3, 10, 32, 100]);
        assert!(log_axis(0, 5, 2).is_err());
    }

    #[test]
    fn single_feasible_point() {
        let grid = GridSpec::new(vec![100, 1000], vec![4], vec![10, 100]).unwrap();
        let cons = ConstraintSet::compute_only(6.0 * 100.0 * 4.0 * 10.0 * 8.0, 8);
        let r = constrained_search(&model(), &cons, &grid).unwrap();
        assert_eq!(
            (r.run.n_params, r.run.batch, r.run.steps, r.feasible),
            (100, 4, 10, 1)
        );
    }

    #[test]
    fn infeasible_names_the_constraint() {
        let grid = GridSpec::new(vec![100], vec![4], vec![10]).unwrap();
        let mut cons = ConstraintSet::compute_only(1e12, 8);
        cons.memory_max = Some(10.0);
        match constrained_search(&model(), &cons, &grid) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("memory")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slice_losses_are_direct_evaluations() {
        let cons = ConstraintSet::compute_only(1e15, 64);
        let s = isoflop_slice(
            &model(),
            1e15,
            &cons,
            &[1 << 12, 1 << 16, 1 << 20],
            &SliceBatch::Fixed(32),
        )
        .unwrap();
        for r in &s.rows {
            let run = RunConfig::new(r.n_params, r.batch, r.steps, 64).unwrap();
            assert_eq!(
                r.loss,
                crate::model::nqs_loss(
                    &NqsParams::new(1.5, 20.0, 0.8, 0.6, 1.3, 3.0, 1.2).unwrap(),
                    &run
                )
                .unwrap()
            );
        }
    }
}
