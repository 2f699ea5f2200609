//! Loss assembly: decoder cross-entropy, compression term, and the reporting
//! bound `I(Y;M) ≥ H(Y) - CE`.
//!
//! The optimised quantity is in nats; every reported component is in bits.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, data_err, precondition_err, Result};
use crate::math::{self, LN_2};
use crate::net::{Activations, Network, ParamStore};
use crate::tensor::Tensor2;

/// Empirical marginal of the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub class_count: usize,
    pub probs: Vec<f64>,
    pub entropy_y_bits: f64,
}

impl LabelDistribution {
    pub fn from_labels(labels: &[usize], class_count: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(data_err!("cannot take the label entropy of an empty set"));
        }
        let mut counts = vec![0usize; class_count];
        for &y in labels {
            *counts.get_mut(y).ok_or_else(|| data_err!("label {y} outside [0, {class_count})"))? += 1;
        }
        let n = labels.len() as f64;
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let entropy_y_bits = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * math::log2(p)).sum();
        Ok(Self { class_count, probs, entropy_y_bits })
    }
}

/// Decoder cross-entropy on one batch.
#[derive(Debug, Clone)]
pub struct CeTerm {
    pub ce_bits: f64,
    pub ce_nats: f64,
    /// Fraction of rows whose most likely class is the label.
    pub accuracy: f64,
    /// `∂CE_nats/∂bottleneck` (present when computed with gradients).
    pub grad_bottleneck: Option<Tensor2>,
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(data_err!("{} labels for {} rows", labels.len(), rows));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(data_err!("label {y} outside [0, {classes})"));
    }
    Ok(())
}

fn nll_and_accuracy(acts: &Activations, labels: &[usize]) -> (f64, f64) {
    let logp = acts.output();
    let mut nll = 0.0;
    let mut correct = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = logp.row(i);
        nll -= row[y];
        let arg = row
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0;
        correct += usize::from(arg == y);
    }
    let n = labels.len() as f64;
    (nll / n, correct as f64 / n)
}

/// Mean negative log-probability of `labels` under the decoder, without gradients.
pub fn decoder_ce_eval(
    decoder: &Network,
    params: &ParamStore,
    bottleneck: &Tensor2,
    labels: &[usize],
) -> Result<CeTerm> {
    check_labels(labels, bottleneck.rows(), decoder.output_dim())?;
    let acts = decoder.forward(params, bottleneck)?;
    let (ce_nats, accuracy) = nll_and_accuracy(&acts, labels);
    Ok(CeTerm { ce_bits: ce_nats / LN_2, ce_nats, accuracy, grad_bottleneck: None })
}

/// Mean cross-entropy of `labels`, accumulating `∂CE_nats/∂φ` into `params`
/// and returning `∂CE_nats/∂bottleneck` in the result.
pub fn decoder_ce(
    decoder: &Network,
    params: &mut ParamStore,
    bottleneck: &Tensor2,
    labels: &[usize],
) -> Result<CeTerm> {
    check_labels(labels, bottleneck.rows(), decoder.output_dim())?;
    let acts = decoder.forward(params, bottleneck)?;
    let (ce_nats, accuracy) = nll_and_accuracy(&acts, labels);
    let n = labels.len() as f64;
    let mut g = Tensor2::zeros(labels.len(), decoder.output_dim());
    for (i, &y) in labels.iter().enumerate() {
        g[(i, y)] = -1.0 / n;
    }
    let grad_bottleneck = decoder.backward(params, &acts, &g)?;
    Ok(CeTerm { ce_bits: ce_nats / LN_2, ce_nats, accuracy, grad_bottleneck: Some(grad_bottleneck) })
}

/// Components of the optimised bound for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    /// `β·compression + CE`, in nats.
    pub total: f64,
    pub ce_bits: f64,
    /// The compression term in bits (kernel bound, or the variational KL when that baseline is active).
    pub mi_bits: f64,
    pub beta: f64,
    pub iym_lower_bits: f64,
}

pub fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(config_err!("beta must lie in [0, 1], got {beta}"));
    }
    Ok(())
}

pub fn total_loss(ce_bits: f64, mi_bits: f64, beta: f64, entropy_y_bits: f64) -> Result<LossBreakdown> {
    check_beta(beta)?;
    Ok(LossBreakdown {
        total: (beta * mi_bits + ce_bits) * LN_2,
        ce_bits,
        mi_bits,
        beta,
        iym_lower_bits: entropy_y_bits - ce_bits,
    })
}

/// `H(Y) - CE`, reported unclipped.
pub fn iym_lower_bound(ce_bits: f64, labels: &LabelDistribution) -> f64 {
    labels.entropy_y_bits - ce_bits
}

/// Closed-form `D(N(f, σ²I) ‖ N(0, I))` averaged over the batch, with gradients.
#[derive(Debug, Clone)]
pub struct VibTerm {
    pub bits: f64,
    /// `∂bits/∂codes`.
    pub grad_codes: Tensor2,
    /// `∂bits/∂ln σ`.
    pub grad_log_sigma: f64,
}

pub fn vib_compression_term(codes: &Tensor2, log_sigma: f64) -> Result<VibTerm> {
    if !log_sigma.is_finite() {
        return Err(precondition_err!("log_sigma must be finite"));
    }
    let n = codes.rows();
    if n == 0 {
        return Err(precondition_err!("empty code batch"));
    }
    let d = codes.cols() as f64;
    let s2 = math::exp(2.0 * log_sigma);
    let sq: f64 = codes.data().iter().map(|f| f * f).sum();
    // per sample: ½ Σ_k (σ² + f_k² - 1 - ln σ²)
    let nats = 0.5 * (d * (s2 - 1.0 - 2.0 * log_sigma) + sq / n as f64);
    let mut grad = codes.clone();
    grad.scale(1.0 / (n as f64 * LN_2));
    let grad_log_sigma = d * (s2 - 1.0) / LN_2;
    Ok(VibTerm { bits: nats / LN_2, grad_codes: grad, grad_log_sigma })
}
