//! Metrics rows and run manifests.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use nib_core::dataset::{Dataset, Split};
use nib_core::model::ArchSpec;
use nib_core::trainer::{EpochMetrics, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Header of `metrics.csv` and `sweep_summary.csv`, in column order.
pub const METRICS_HEADER: [&str; 12] = [
    "run_id",
    "beta",
    "epoch",
    "split",
    "mi_xm_bits",
    "iym_lower_bits",
    "ce_bits",
    "accuracy",
    "sigma",
    "eta",
    "lr",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub beta: f64,
    pub epoch: usize,
    pub split: Split,
    pub mi_xm_bits: f64,
    pub iym_lower_bits: f64,
    pub ce_bits: f64,
    pub accuracy: f64,
    pub sigma: f64,
    pub eta: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn new(run_id: &str, beta: f64, m: &EpochMetrics, wall_ms: u64) -> Self {
        Self {
            run_id: run_id.to_owned(),
            beta,
            epoch: m.epoch,
            split: m.split,
            mi_xm_bits: m.mi_xm_bits,
            iym_lower_bits: m.iym_lower_bits,
            ce_bits: m.ce_bits,
            accuracy: m.accuracy,
            sigma: m.sigma,
            eta: m.eta,
            lr: m.lr,
            wall_ms,
        }
    }
}

/// Streams rows to a CSV file, flushing after each one.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRecord) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetChecksum {
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    /// SHA-256 over the inputs as f64 LE followed by the labels as u64 LE.
    pub sha256: String,
}

impl DatasetChecksum {
    pub fn of(dataset: &Dataset) -> Self {
        let mut h = Sha256::new();
        for v in dataset.inputs().data() {
            h.update(v.to_le_bytes());
        }
        for &y in dataset.labels() {
            h.update((y as u64).to_le_bytes());
        }
        Self {
            split: dataset.split(),
            rows: dataset.len(),
            cols: dataset.input_dim(),
            sha256: hex::encode(h.finalize()),
        }
    }
}

/// Everything needed to repeat a run: `config.seed` is the seed the trainer
/// used, `seed` the one given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub arch: ArchSpec,
    pub datasets: Vec<DatasetChecksum>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_reader(f)?)
    }
}

pub fn version_string() -> String {
    format!("nib {}", env!("CARGO_PKG_VERSION"))
}
