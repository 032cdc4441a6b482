//! Observed training runs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RunConfig;

pub const TAG_TRAIN: &str = "train";
pub const TAG_HOLDOUT: &str = "holdout";
pub const TAG_ISOFLOP: &str = "isoflop";
pub const TAG_BK_PLANE: &str = "bk-plane";

/// One observed run and its final loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Position in the source dataset, kept through filtering and resampling.
    pub id: usize,
    pub run: RunConfig,
    pub loss: f64,
    pub tags: BTreeSet<String>,
    /// Values of columns this crate does not interpret, in dataset column order.
    #[serde(default)]
    pub extra: Vec<String>,
}

impl Record {
    pub fn new(id: usize, run: RunConfig, loss: f64) -> Self {
        Record {
            id,
            run,
            loss,
            tags: BTreeSet::new(),
            extra: Vec::new(),
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags.extend(tags.into_iter().map(Into::into));
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn validate(&self) -> Result<()> {
        self.run
            .validate()
            .map_err(|e| Error::Data(format!("record {}: {e}", self.id)))?;
        if self.run.steps == 0 {
            return Err(Error::Data(format!(
                "record {}: steps must be positive",
                self.id
            )));
        }
        if !self.loss.is_finite() || self.loss <= 0.0 {
            return Err(Error::Data(format!(
                "record {}: loss must be positive and finite, got {}",
                self.id, self.loss
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingDataset {
    pub records: Vec<Record>,
    /// Names of the uninterpreted columns carried in [`Record::extra`].
    #[serde(default)]
    pub extra_columns: Vec<String>,
}

impl ScalingDataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let data = ScalingDataset {
            records,
            extra_columns: Vec::new(),
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            r.validate()?;
            if r.extra.len() != self.extra_columns.len() {
                return Err(Error::Data(format!(
                    "record {}: {} extra values for {} extra columns",
                    r.id,
                    r.extra.len(),
                    self.extra_columns.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records satisfying `keep`, with the same extra columns.
    pub fn subset(&self, keep: impl Fn(&Record) -> bool) -> ScalingDataset {
        ScalingDataset {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            extra_columns: self.extra_columns.clone(),
        }
    }

    pub fn with_tag(&self, tag: &str) -> ScalingDataset {
        self.subset(|r| r.has_tag(tag))
    }

    pub fn without_tag(&self, tag: &str) -> ScalingDataset {
        self.subset(|r| !r.has_tag(tag))
    }

    /// Records not tagged as held out.
    pub fn training(&self) -> ScalingDataset {
        self.without_tag(TAG_HOLDOUT)
    }

    pub fn holdout(&self) -> ScalingDataset {
        self.with_tag(TAG_HOLDOUT)
    }

    /// Renumbers record ids to their positions.
    pub fn renumbered(mut self) -> Self {
        for (i, r) in self.records.iter_mut().enumerate() {
            r.id = i;
        }
        self
    }
}
