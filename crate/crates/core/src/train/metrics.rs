//! Per-epoch metrics as JSON lines (`metrics-v1`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "metrics-v1";

/// Magnitude above which an evaluated weight counts as large.
pub const LARGE_WEIGHT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ppl: f64,
    pub valid_loss: f64,
    pub valid_ppl: f64,
    pub lr: f64,
    pub averaging_active: bool,
    /// Epoch at which averaging was triggered, if it has been.
    pub trigger_epoch: Option<usize>,
    /// Pruning rate of the connectivity update that followed this epoch.
    pub prune_rate: f64,
    /// Weights removed (and regrown) by that update.
    pub rewired: usize,
    pub total_nnz: usize,
    /// Per LSTM layer, nnz over both weight matrices.
    pub layer_nnz: Vec<usize>,
    /// Per LSTM layer, sparsity of the eight gate blocks.
    pub gate_sparsity: Vec<Vec<f64>>,
    /// Per sparse tensor, evaluated weights with magnitude above
    /// [`LARGE_WEIGHT_THRESHOLD`].
    pub large_weights: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates or truncates `path`.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(MetricsWriter {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if r.schema != METRICS_SCHEMA {
            return Err(Error::Format(format!("unsupported metrics schema {:?}", r.schema)));
        }
        out.push(r);
    }
    Ok(out)
}
