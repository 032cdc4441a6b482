//! Dataset CSV files and TOML report files.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chinchilla::{chin_loss_real, ChinFit, ChinParams};
use crate::data::{Record, ScalingDataset};
use crate::error::{Error, Result};
use crate::fitting::{FitConfig, FitReport};
use crate::model::{nqs_loss, nqs_loss_layernorm, LayerNormConfig, NqsParams, RunConfig};

pub const REQUIRED_COLUMNS: [&str; 5] = ["n_params", "batch", "steps", "seq_len", "loss"];
pub const TAGS_COLUMN: &str = "tags";
pub const REPORT_FORMAT: u32 = 1;

fn cell_error(row: usize, column: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("row {row}, column {column}: {msg}"))
}

/// Reads a dataset; rows are numbered from 1 after the header.
pub fn read_dataset(reader: impl Read) -> Result<ScalingDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let mut required = [0usize; 5];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = find(name).ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
    }
    let tags_col = find(TAGS_COLUMN);
    let extra_cols: Vec<usize> = (0..header.len())
        .filter(|i| !required.contains(i) && Some(*i) != tags_col)
        .collect();

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse(format!("row {row_no}: {e}")))?;
        let get = |col: usize| row.get(col).unwrap_or("");
        let int = |k: usize| -> Result<u64> {
            let name = REQUIRED_COLUMNS[k];
            let v: u64 = get(required[k])
                .parse()
                .map_err(|e| cell_error(row_no, name, e))?;
            if v == 0 {
                return Err(cell_error(row_no, name, "must be positive"));
            }
            Ok(v)
        };
        let run = RunConfig {
            n_params: int(0)?,
            batch: int(1)?,
            steps: int(2)?,
            seq_len: int(3)?,
        };
        let loss: f64 = get(required[4])
            .parse()
            .map_err(|e| cell_error(row_no, "loss", e))?;
        if !loss.is_finite() || loss <= 0.0 {
            return Err(cell_error(
                row_no,
                "loss",
                format!("must be positive and finite, got {loss}"),
            ));
        }
        let tags: BTreeSet<String> = match tags_col {
            Some(c) => get(c)
                .split(';')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect(),
            None => BTreeSet::new(),
        };
        records.push(Record {
            id: i,
            run,
            loss,
            tags,
            extra: extra_cols.iter().map(|&c| get(c).to_string()).collect(),
        });
    }
    let data = ScalingDataset {
        records,
        extra_columns: extra_cols.iter().map(|&c| header[c].clone()).collect(),
    };
    data.validate()?;
    Ok(data)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<ScalingDataset> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(file)
}

/// Reads run configurations from a file with columns `n_params`, `batch`,
/// `steps`, `seq_len`; other columns are ignored.
pub fn read_runs(reader: impl Read) -> Result<Vec<RunConfig>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .clone();
    let mut cols = [0usize; 4];
    for (slot, name) in cols.iter_mut().zip(&REQUIRED_COLUMNS[..4]) {
        *slot = header
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
    }
    let mut runs = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Parse(format!("row {row_no}: {e}")))?;
        let mut v = [0u64; 4];
        for k in 0..4 {
            v[k] = row
                .get(cols[k])
                .unwrap_or("")
                .parse()
                .map_err(|e| cell_error(row_no, REQUIRED_COLUMNS[k], e))?;
        }
        let run = RunConfig {
            n_params: v[0],
            batch: v[1],
            steps: v[2],
            seq_len: v[3],
        };
        run.validate()
            .map_err(|e| Error::Parse(format!("row {row_no}: {e}")))?;
        runs.push(run);
    }
    Ok(runs)
}

pub fn load_runs(path: impl AsRef<Path>) -> Result<Vec<RunConfig>> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_runs(file)
}

pub fn write_dataset(data: &ScalingDataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.push(TAGS_COLUMN);
    header.extend(data.extra_columns.iter().map(String::as_str));
    w.write_record(&header).map_err(csv_err)?;
    for r in &data.records {
        let mut row = vec![
            r.run.n_params.to_string(),
            r.run.batch.to_string(),
            r.run.steps.to_string(),
            r.run.seq_len.to_string(),
            r.loss.to_string(),
            r.tags.iter().cloned().collect::<Vec<_>>().join(";"),
        ];
        row.extend(r.extra.iter().cloned());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(data: &ScalingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_dataset(data, file)
}

/// Reads any TOML document, such as a fit configuration or dataset design.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {}", path.display(), e.message())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NqsSection {
    pub theta: NqsParams,
    pub objective: f64,
    pub selected_s: Option<f64>,
    /// Weight-norm settings used for predictions when `selected_s` is set.
    pub layernorm: Option<LayerNormConfig>,
    pub n_records: usize,
    #[serde(default)]
    pub filter_removed: Vec<usize>,
    #[serde(default)]
    pub per_init_objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChinSection {
    pub params: ChinParams,
    pub objective: f64,
}

/// Everything needed to reproduce a fit's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: u32,
    pub tool_version: String,
    pub seed: u64,
    pub nqs: Option<NqsSection>,
    pub chinchilla: Option<ChinSection>,
    pub fit_config: Option<FitConfig>,
}

impl ReportFile {
    pub fn new(seed: u64) -> Self {
        ReportFile {
            format: REPORT_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            nqs: None,
            chinchilla: None,
            fit_config: None,
        }
    }

    pub fn with_nqs(mut self, fit: &FitReport, layernorm: Option<LayerNormConfig>) -> Self {
        self.nqs = Some(NqsSection {
            theta: fit.best_theta,
            objective: fit.best_objective,
            selected_s: fit.selected_s,
            layernorm,
            n_records: fit.n_records,
            filter_removed: fit.filter_removed.clone(),
            per_init_objective: fit.per_init.iter().map(|o| o.objective).collect(),
        });
        self
    }

    pub fn with_chinchilla(mut self, fit: &ChinFit) -> Self {
        self.chinchilla = Some(ChinSection {
            params: fit.params,
            objective: fit.objective,
        });
        self
    }

    /// Loss predicted by the fitted loss model, with weight-norm feedback
    /// when an initial norm was selected.
    pub fn nqs_prediction(&self, run: &RunConfig) -> Result<f64> {
        let nqs = self
            .nqs
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("report has no loss-model fit".into()))?;
        match (&nqs.layernorm, nqs.selected_s) {
            (Some(ln), Some(s)) => {
                nqs_loss_layernorm(&nqs.theta, &LayerNormConfig { s, ..*ln }, run)
            }
            _ => nqs_loss(&nqs.theta, run),
        }
    }

    pub fn chin_prediction(&self, run: &RunConfig) -> Result<f64> {
        let chin = self
            .chinchilla
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("report has no baseline fit".into()))?;
        Ok(chin_loss_real(
            &chin.params,
            run.n_params as f64,
            run.tokens(),
        ))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Io(format!("report serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let r: ReportFile =
            toml::from_str(text).map_err(|e| Error::Parse(format!("report: {e}")))?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Parse(format!(
                "unsupported report format {}",
                r.format
            )));
        }
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "n_params,batch,steps,seq_len,loss,tags,note\n\
                          1000,8,100,128,3.25,train;isoflop,a\n\
                          2000,8,100,128,3.1,holdout,b\n\
                          4000,16,50,128,2.95,,\"c,d\"\n";

    #[test]
    fn reads_and_round_trips() {
        let d = read_dataset(SAMPLE.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.extra_columns, vec!["note"]);
        assert_eq!(d.records[2].extra, vec!["c,d"]);
        assert!(d.records[0].has_tag("isoflop"));
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn errors_name_row_and_column() {
        let bad = "n_params,batch,steps,seq_len,loss\n10,1,1,1,2.0\n10,1,1,1,-1\n";
        let msg = read_dataset(bad.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("loss"), "{msg}");
        let bad = "n_params,batch,steps,seq_len,loss\n10,x,1,1,2.0\n";
        let msg = read_dataset(bad.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("row 1") && msg.contains("batch"), "{msg}");
        let bad = "n_params,batch,seq_len,loss\n10,1,1,2.0\n";
        assert!(read_dataset(bad.as_bytes())
            .unwrap_err()
            .to_string()
            .contains("steps"));
    }

    #[test]
    fn report_round_trip_is_exact() {
        let mut r = ReportFile::new(7);
        r.nqs = Some(NqsSection {
            theta: NqsParams::new(1.123456789012345, 3.6, 0.59, 0.93, 1.5, 4.3, 0.1 + 0.2).unwrap(),
            objective: 1.234e-7,
            selected_s: Some(0.4),
            layernorm: Some(LayerNormConfig::new(0.4)),
            n_records: 40,
            filter_removed: vec![3, 5],
            per_init_objective: vec![1.0, 2.5e-9],
        });
        r.fit_config = Some(FitConfig::default());
        let back = ReportFile::from_toml(&r.to_toml().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
