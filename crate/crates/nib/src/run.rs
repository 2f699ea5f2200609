//! Single runs, β sweeps and bottleneck scatter export.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nib_core::dataset::{subsample_indices, Dataset};
use nib_core::model::ArchSpec;
use nib_core::net::ParamStore;
use nib_core::trainer::{clean_codes, fit, FitResult, TrainConfig};
use sha2::{Digest, Sha256};

use crate::params_file::write_params;
use crate::report::{version_string, DatasetChecksum, MetricsRecord, MetricsWriter, RunManifest};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.nibp";
pub const SUMMARY_FILE: &str = "sweep_summary.csv";

/// Trainer seed for a given command-line seed and β: `seed + h(β)` with
/// `h` the first eight bytes of SHA-256 over β's bit pattern.
pub fn beta_seed(seed: u64, beta: f64) -> u64 {
    let digest = Sha256::digest(beta.to_bits().to_le_bytes());
    seed.wrapping_add(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

pub fn run_id_for(beta: f64) -> String {
    format!("beta_{beta}")
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub arch: ArchSpec,
    /// `cfg.beta` selects β; `cfg.seed` is replaced by [`beta_seed`].
    pub cfg: TrainConfig,
    pub out_dir: PathBuf,
    /// Write measured wall time; otherwise `wall_ms` is 0 so output is reproducible.
    pub timing: bool,
    pub quiet: bool,
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub fit: FitResult,
    pub manifest: RunManifest,
}

impl RunOutput {
    /// Final-epoch rows, one per split.
    pub fn final_rows(&self) -> Vec<MetricsRecord> {
        let last = self.records.iter().map(|r| r.epoch).max().unwrap_or(0);
        self.records.iter().filter(|r| r.epoch == last).cloned().collect()
    }
}

/// Trains one model and writes metrics, manifest and final parameters into `opts.out_dir`.
pub fn run_single(train: &Dataset, test: &Dataset, opts: &RunOptions) -> Result<RunOutput> {
    let mut cfg = opts.cfg.clone();
    let base_seed = cfg.seed;
    cfg.seed = beta_seed(base_seed, cfg.beta);
    cfg.validate()?;
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    let run_id = run_id_for(cfg.beta);
    let manifest = RunManifest {
        run_id: run_id.clone(),
        version: version_string(),
        seed: base_seed,
        config: cfg.clone(),
        arch: opts.arch.clone(),
        datasets: vec![DatasetChecksum::of(train), DatasetChecksum::of(test)],
    };
    manifest.write(&opts.out_dir.join(MANIFEST_FILE))?;

    let mut writer = MetricsWriter::create(&opts.out_dir.join(METRICS_FILE))?;
    let start = Instant::now();
    let mut records = Vec::new();
    let mut write_err = None;
    let fit = fit(train, test, &opts.arch, &cfg, |m| {
        let wall = if opts.timing { start.elapsed().as_millis() as u64 } else { 0 };
        let row = MetricsRecord::new(&run_id, cfg.beta, m, wall);
        if !opts.quiet {
            eprintln!(
                "[{run_id}] epoch {:>3} {:<5} I(X;M) {:.3}  I(Y;M) >= {:.3}  acc {:.4}  sigma {:.4}  eta {:.4}",
                row.epoch, row.split, row.mi_xm_bits, row.iym_lower_bits, row.accuracy, row.sigma, row.eta
            );
        }
        if write_err.is_none() {
            write_err = writer.write(&row).err();
        }
        records.push(row);
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    write_params(&opts.out_dir.join(PARAMS_FILE), &fit.params)?;
    Ok(RunOutput { records, fit, manifest })
}

/// Runs each β in turn under `out_dir/beta_<β>/` and writes the final rows of
/// every completed run to `out_dir/sweep_summary.csv`. A failing run stops
/// the sweep after the summary of the runs before it has been written.
pub fn run_sweep(betas: &[f64], train: &Dataset, test: &Dataset, opts: &RunOptions) -> Result<Vec<RunOutput>> {
    if betas.is_empty() {
        bail!("sweep needs at least one beta");
    }
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    let mut summary = MetricsWriter::create(&opts.out_dir.join(SUMMARY_FILE))?;
    let mut outputs = Vec::new();
    for &beta in betas {
        let member = RunOptions {
            cfg: TrainConfig { beta, ..opts.cfg.clone() },
            out_dir: opts.out_dir.join(run_id_for(beta)),
            ..opts.clone()
        };
        let out = run_single(train, test, &member).with_context(|| format!("sweep member beta={beta} failed"))?;
        for row in out.final_rows() {
            summary.write(&row)?;
        }
        outputs.push(out);
    }
    Ok(outputs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub x1: f64,
    pub x2: f64,
    pub label: usize,
}

/// Clean 2-D bottleneck codes for a stratified sample of `n_points` rows.
pub fn export_scatter(params: &ParamStore, dataset: &Dataset, n_points: usize, seed: u64) -> Result<Vec<ScatterPoint>> {
    let arch = ArchSpec::from_params(params)?;
    if arch.bottleneck_dim != 2 {
        bail!(
            "scatter export needs a 2-D bottleneck to plot codes directly, but these parameters have d = {}",
            arch.bottleneck_dim
        );
    }
    if arch.input_dim != dataset.input_dim() {
        bail!("parameters expect {} inputs, dataset has {}", arch.input_dim, dataset.input_dim());
    }
    let model = arch.build()?;
    let idx = subsample_indices(dataset.labels(), dataset.class_count(), n_points, seed, true)?;
    let sample = dataset.select(&idx);
    let codes = clean_codes(&model, params, sample.inputs())?;
    Ok(codes.iter_rows().zip(sample.labels()).map(|(c, &label)| ScatterPoint { x1: c[0], x2: c[1], label }).collect())
}

pub fn write_scatter(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["x1", "x2", "label"])?;
    for p in points {
        w.write_record([p.x1.to_string(), p.x2.to_string(), p.label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
