//! Synthetic scaling datasets shaped like IsoFLOPs sweeps and batch/step planes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Record, ScalingDataset, TAG_BK_PLANE, TAG_HOLDOUT, TAG_ISOFLOP, TAG_TRAIN};
use crate::error::{Error, Result};
use crate::model::{nqs_loss, nqs_loss_layernorm, LayerNormConfig, NqsParams, RunConfig};

/// How an IsoFLOPs run splits its tokens into batch size and steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchRule {
    Fixed(u64),
    /// `B = 2^round(log2(coefficient · D^exponent))`, at least 1.
    TokenPower {
        coefficient: f64,
        exponent: f64,
    },
}

impl BatchRule {
    pub fn batch(&self, tokens: f64) -> u64 {
        match *self {
            BatchRule::Fixed(b) => b,
            BatchRule::TokenPower {
                coefficient,
                exponent,
            } => {
                let raw = coefficient * tokens.powf(exponent);
                2f64.powi(raw.log2().round().max(0.0) as i32) as u64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetDesign {
    /// Level `j` has compute `base_compute · 4^j`; its models are
    /// `n_start · 2^j · n_factor^i` for `i < models_per_level`.
    IsoFlops {
        base_compute: f64,
        levels: usize,
        models_per_level: usize,
        n_start: u64,
        n_factor: f64,
        batch_rule: BatchRule,
        seq_len: u64,
        /// Levels at or above this index are tagged as held out.
        holdout_from_level: Option<usize>,
    },
    /// For each model size, level `j` has `base_tokens · 4^j` tokens spent
    /// at every listed batch size.
    IsoTokens {
        n_params: Vec<u64>,
        base_tokens: u64,
        levels: usize,
        batches: Vec<u64>,
        seq_len: u64,
        holdout_from_level: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDataset {
    pub dataset: ScalingDataset,
    /// Configurations left out, with the reason.
    pub skipped: Vec<String>,
}

/// Options for [`generate_synthetic_dataset_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeneratorOptions {
    /// Evaluate losses with weight-norm feedback.
    pub layernorm: Option<LayerNormConfig>,
}

fn split_tag(level: usize, holdout_from: Option<usize>) -> &'static str {
    match holdout_from {
        Some(h) if level >= h => TAG_HOLDOUT,
        _ => TAG_TRAIN,
    }
}

/// Runs of the design, with their tags, before losses are attached.
pub fn design_runs(design: &DatasetDesign) -> Result<(Vec<(RunConfig, Vec<String>)>, Vec<String>)> {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    match design {
        DatasetDesign::IsoFlops {
            base_compute,
            levels,
            models_per_level,
            n_start,
            n_factor,
            batch_rule,
            seq_len,
            holdout_from_level,
        } => {
            if !(*base_compute > 0.0) || *n_start == 0 || !(*n_factor > 1.0) || *seq_len == 0 {
                return Err(Error::InvalidArgument(
                    "IsoFLOPs design needs positive compute, sizes and n_factor > 1".into(),
                ));
            }
            for j in 0..*levels {
                let compute = base_compute * 4f64.powi(j as i32);
                for i in 0..*models_per_level {
                    let n = (*n_start as f64 * 2f64.powi(j as i32) * n_factor.powi(i as i32))
                        .round() as u64;
                    let tokens = compute / (6.0 * n as f64);
                    let b = batch_rule.batch(tokens);
                    let k = (tokens / (b as f64 * *seq_len as f64)).round();
                    if k < 1.0 || b == 0 {
                        skipped.push(format!(
                            "level {j}: N = {n} leaves fewer than one step at B = {b}"
                        ));
                        continue;
                    }
                    runs.push((
                        RunConfig::new(n, b, k as u64, *seq_len)?,
                        vec![
                            TAG_ISOFLOP.to_string(),
                            format!("level={j}"),
                            split_tag(j, *holdout_from_level).to_string(),
                        ],
                    ));
                }
            }
        }
        DatasetDesign::IsoTokens {
            n_params,
            base_tokens,
            levels,
            batches,
            seq_len,
            holdout_from_level,
        } => {
            if *base_tokens == 0 || *seq_len == 0 || batches.contains(&0) || n_params.contains(&0) {
                return Err(Error::InvalidArgument(
                    "IsoTokens design needs positive sizes".into(),
                ));
            }
            for &n in n_params {
                for j in 0..*levels {
                    let tokens = base_tokens
                        .checked_mul(4u64.pow(j as u32))
                        .ok_or_else(|| Error::InvalidArgument("token budget overflows".into()))?;
                    for &b in batches {
                        let per_step = b * seq_len;
                        if tokens % per_step != 0 {
                            skipped.push(format!("N = {n}, level {j}: {tokens} tokens not divisible by B·seq_len = {per_step}"));
                            continue;
                        }
                        runs.push((
                            RunConfig::new(n, b, tokens / per_step, *seq_len)?,
                            vec![
                                TAG_BK_PLANE.to_string(),
                                format!("level={j}"),
                                split_tag(j, *holdout_from_level).to_string(),
                            ],
                        ));
                    }
                }
            }
        }
    }
    Ok((runs, skipped))
}

/// Dataset whose losses are the model's predictions times `exp(ε)`,
/// `ε ~ Normal(0, noise_sd)`.
pub fn generate_synthetic_dataset_with(
    theta: &NqsParams,
    design: &DatasetDesign,
    noise_sd: f64,
    seed: u64,
    options: &GeneratorOptions,
) -> Result<GeneratedDataset> {
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_sd must be nonnegative, got {noise_sd}"
        )));
    }
    let (runs, skipped) = design_runs(design)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut records = Vec::with_capacity(runs.len());
    for (id, (run, tags)) in runs.into_iter().enumerate() {
        let clean = match &options.layernorm {
            Some(ln) => nqs_loss_layernorm(theta, ln, &run)?,
            None => nqs_loss(theta, &run)?,
        };
        let loss = if noise_sd > 0.0 {
            clean * noise.sample(&mut rng).exp()
        } else {
            clean
        };
        records.push(Record::new(id, run, loss).with_tags(tags));
    }
    Ok(GeneratedDataset {
        dataset: ScalingDataset::new(records)?,
        skipped,
    })
}

pub fn generate_synthetic_dataset(
    theta: &NqsParams,
    design: &DatasetDesign,
    noise_sd: f64,
    seed: u64,
) -> Result<GeneratedDataset> {
    generate_synthetic_dataset_with(theta, design, noise_sd, seed, &GeneratorOptions::default())
}

/// Appends `extra` after `base`, renumbering record ids.
pub fn concat(base: ScalingDataset, extra: ScalingDataset) -> ScalingDataset {
    let mut records = base.records;
    records.extend(extra.records);
    ScalingDataset {
        records,
        extra_columns: base.extra_columns,
    }
    .renumbered()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> NqsParams {
        NqsParams::new(1.5, 20.0, 1.0, 0.9, 1.2, 4.0, 1.2).unwrap()
    }

    fn isoflops(levels: usize) -> DatasetDesign {
        DatasetDesign::IsoFlops {
            base_compute: 6.0 * 2f64.powi(30),
            levels,
            models_per_level: 4,
            n_start: 1 << 10,
            n_factor: 2.0,
            batch_rule: BatchRule::Fixed(16),
            seq_len: 64,
            holdout_from_level: None,
        }
    }

    #[test]
    fn isoflop_levels_quadruple() {
        let g = generate_synthetic_dataset(&theta(), &isoflops(9), 0.0, 1).unwrap();
        assert!(g.skipped.is_empty());
        let c: Vec<f64> = g.dataset.records.iter().map(|r| r.run.compute()).collect();
        let max = c.iter().cloned().fold(0.0, f64::max);
        let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(max / min, 4f64.powi(8));
    }

    #[test]
    fn noiseless_losses_are_exact() {
        let g = generate_synthetic_dataset(&theta(), &isoflops(2), 0.0, 1).unwrap();
        for r in &g.dataset.records {
            assert_eq!(r.loss, nqs_loss(&theta(), &r.run).unwrap());
        }
    }

    #[test]
    fn isotokens_share_tokens_per_level() {
        let design = DatasetDesign::IsoTokens {
            n_params: vec![1 << 20],
            base_tokens: 1 << 20,
            levels: 3,
            batches: vec![8, 16, 32, 64],
            seq_len: 128,
            holdout_from_level: Some(2),
        };
        let g = generate_synthetic_dataset(&theta(), &design, 0.01, 5).unwrap();
        assert_eq!(g.dataset.len(), 12);
        for j in 0..3 {
            let tag = format!("level={j}");
            let level = g.dataset.with_tag(&tag);
            assert!(level
                .records
                .iter()
                .all(|r| r.run.tokens() == level.records[0].run.tokens()));
        }
        assert_eq!(g.dataset.holdout().len(), 4);
    }
}
