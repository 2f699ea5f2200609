//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use nib_core::dataset::{make_synthetic, subsample, Dataset, Split, SyntheticKind, SyntheticSpec};
use nib_core::kernel_mi::BandwidthConfig;
use nib_core::model::ArchSpec;
use nib_core::trainer::{Compression, TrainConfig};
use nib_core::Tensor2;

use crate::idx::{load_mnist_split, mnist_paths, write_idx};
use crate::params_file::read_params;
use crate::run::{export_scatter, run_single, run_sweep, write_scatter, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "nib", version, about = "Train nonlinear information bottleneck models on IDX datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a single model and write metrics.csv, manifest.json and params.nibp.
    Train {
        #[arg(long, value_parser = parse_beta, default_value_t = 0.0)]
        beta: f64,
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Train one model per β and write sweep_summary.csv.
    Sweep {
        #[arg(long, value_delimiter = ',', value_parser = parse_beta, default_value = "0,0.05,0.1,0.2,0.4,0.8")]
        betas: Vec<f64>,
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Write clean 2-D bottleneck codes of a trained model as x1,x2,label.
    Scatter {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value = "data/mnist")]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 1000)]
        n_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scatter.csv")]
        out: PathBuf,
    },
    /// Write a synthetic clustered dataset as MNIST-named IDX files.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        train_per_class: usize,
        #[arg(long, default_value_t = 5)]
        test_per_class: usize,
        /// Image side length; inputs have side² pixels.
        #[arg(long, default_value_t = 28)]
        side: usize,
        /// Cluster spread relative to the centre spacing.
        #[arg(long, default_value_t = 0.1)]
        jitter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub nsgd: usize,
    #[arg(long, default_value_t = 1000)]
    pub nmi: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.6)]
    pub lr_drop: f64,
    #[arg(long, default_value_t = 10)]
    pub lr_every: usize,
    /// Encoder hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "800,800")]
    pub arch: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub bottleneck_dim: usize,
    /// Decoder hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "800")]
    pub decoder: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub sigma_init_scale: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eta_floor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace the kernel MI term by the variational KL bound.
    #[arg(long)]
    pub vib_baseline: bool,
    #[arg(long, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Stratified training subsample size (all rows when absent).
    #[arg(long)]
    pub train_n: Option<usize>,
    /// Stratified test subsample size (all rows when absent).
    #[arg(long)]
    pub test_n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Record wall-clock milliseconds instead of 0.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub quiet: bool,
}

fn parse_beta(s: &str) -> std::result::Result<f64, String> {
    let b: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&b) {
        Ok(b)
    } else {
        Err(format!("beta must lie in [0, 1], got {b}"))
    }
}

impl TrainArgs {
    pub fn arch(&self, input_dim: usize, classes: usize) -> ArchSpec {
        ArchSpec {
            input_dim,
            encoder_hidden: self.arch.clone(),
            bottleneck_dim: self.bottleneck_dim,
            decoder_hidden: self.decoder.clone(),
            classes,
        }
    }

    pub fn config(&self, beta: f64) -> TrainConfig {
        TrainConfig {
            beta,
            epochs: self.epochs,
            n_sgd: self.nsgd,
            n_mi: self.nmi,
            lr0: self.lr,
            lr_drop: self.lr_drop,
            lr_every: self.lr_every,
            seed: self.seed,
            eval_every: self.eval_every,
            compression: if self.vib_baseline { Compression::VibBaseline } else { Compression::Kernel },
            sigma_init_scale: self.sigma_init_scale,
            bandwidth: BandwidthConfig::with_floor(self.eta_floor),
            ..TrainConfig::default()
        }
    }

    /// Loads both splits and applies the requested subsampling.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let take = |split: Split, n: Option<usize>, salt: u64| -> Result<Dataset> {
            let full = load_mnist_split(&self.data_dir, split)?;
            match n {
                Some(n) => Ok(subsample(&full, n, self.seed ^ salt, true)?),
                None => Ok(full),
            }
        };
        Ok((take(Split::Train, self.train_n, 0)?, take(Split::Test, self.test_n, 1)?))
    }

    fn options(&self, beta: f64, train: &Dataset) -> RunOptions {
        RunOptions {
            arch: self.arch(train.input_dim(), train.class_count()),
            cfg: self.config(beta),
            out_dir: self.out_dir.clone(),
            timing: self.timing,
            quiet: self.quiet,
        }
    }
}

/// Writes train and test IDX files of `classes` separated clusters scaled into `[0, 1]`.
pub fn write_synthetic(
    out_dir: &Path,
    classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    side: usize,
    jitter: f64,
    seed: u64,
) -> Result<()> {
    let per = train_per_class + test_per_class;
    let spec = SyntheticSpec {
        kind: SyntheticKind::LabeledGaussianBlobs,
        jitter,
        ..SyntheticSpec::clusters(classes, side * side, 1.0, per, seed)
    };
    let data = make_synthetic(&spec)?.dataset;
    let x = data.inputs().data();
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let scaled = Tensor2::from_vec(data.len(), data.input_dim(), x.iter().map(|v| (v - lo) / span).collect())?;
    let data = Dataset::new(scaled, data.labels().to_vec(), Split::Train, classes)?;
    // Rows are grouped by cluster; the first rows of each cluster go to train.
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|i| i % per < train_per_class);
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    for (split, idx) in [(Split::Train, train_idx), (Split::Test, test_idx)] {
        let (images, labels) = mnist_paths(out_dir, split);
        write_idx(&data.select(&idx), side, side, &images, &labels)?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { beta, common } => {
            let (train, test) = common.load()?;
            let out = run_single(&train, &test, &common.options(beta, &train))?;
            for r in out.final_rows() {
                println!(
                    "{} {}: I(X;M) {:.4} bits, I(Y;M) >= {:.4} bits, accuracy {:.4}",
                    r.run_id, r.split, r.mi_xm_bits, r.iym_lower_bits, r.accuracy
                );
            }
        }
        Command::Sweep { betas, common } => {
            let (train, test) = common.load()?;
            let outs = run_sweep(&betas, &train, &test, &common.options(0.0, &train))?;
            for r in outs.iter().flat_map(|o| o.final_rows()) {
                println!(
                    "{} {}: I(X;M) {:.4} bits, I(Y;M) >= {:.4} bits, accuracy {:.4}",
                    r.run_id, r.split, r.mi_xm_bits, r.iym_lower_bits, r.accuracy
                );
            }
        }
        Command::Scatter { params, data_dir, split, n_points, seed, out } => {
            let params = read_params(&params)?;
            let data = load_mnist_split(&data_dir, split.into())?;
            let points = export_scatter(&params, &data, n_points, seed)?;
            write_scatter(&out, &points)?;
        }
        Command::Synth { out_dir, classes, train_per_class, test_per_class, side, jitter, seed } => {
            write_synthetic(&out_dir, classes, train_per_class, test_per_class, side, jitter, seed)?;
        }
    }
    Ok(())
}
