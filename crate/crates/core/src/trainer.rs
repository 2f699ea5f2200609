//! Training loop for the kernel-bounded information bottleneck.
//!
//! Every step draws two independent minibatches from the training set: one of
//! `n_sgd` rows for the cross-entropy gradient and one of `n_mi` rows for the
//! compression gradient. On the MI batch the mixture width `η` is refit with
//! the parameters frozen, then the kernel bound and its gradient are taken with
//! that `η` held constant. The compression gradient reaches only the encoder
//! (and `ln σ`). One Adam update is applied per step.
//!
//! Randomness comes from independent ChaCha streams of the run seed (weights,
//! SGD batches, MI batches, noise, evaluation subsets), so switching the
//! compression term off does not perturb the batches or the noise.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::dataset::{subsample_indices, Dataset, Split};
use crate::encoder::{self, NoiseMode};
use crate::error::{config_err, Error, NonFiniteSnapshot, Result};
use crate::kernel_mi::{self, BandwidthConfig};
use crate::math::LN_2;
use crate::model::{ArchSpec, Model};
use crate::net::{Fnv, ParamStore, Probe};
use crate::objective::{self, LabelDistribution, LossBreakdown};
use crate::tensor::Tensor2;

/// What plays the role of `I(X;M)` in the optimised loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Compression {
    /// Pairwise-distance kernel bound on the MI batch.
    #[default]
    Kernel,
    /// `D(P(M|X) ‖ N(0, I))` on the SGD batch.
    VibBaseline,
    /// No compression term and no MI-batch work at all.
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub beta: f64,
    pub epochs: usize,
    pub n_sgd: usize,
    pub n_mi: usize,
    pub lr0: f64,
    /// Fraction removed from the learning rate every `lr_every` epochs.
    pub lr_drop: f64,
    pub lr_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub eval_every: usize,
    pub compression: Compression,
    /// Initial `σ` relative to the RMS of the initial codes.
    pub sigma_init_scale: f64,
    pub bandwidth: BandwidthConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.0,
            epochs: 200,
            n_sgd: 128,
            n_mi: 1000,
            lr0: 0.001,
            lr_drop: 0.6,
            lr_every: 10,
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 1,
            compression: Compression::Kernel,
            sigma_init_scale: 0.1,
            bandwidth: BandwidthConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        objective::check_beta(self.beta)?;
        if self.n_mi < 2 {
            return Err(config_err!("n_mi must be at least 2"));
        }
        if self.n_sgd < 1 {
            return Err(config_err!("n_sgd must be at least 1"));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(config_err!("learning rate must be finite and non-negative"));
        }
        if !(self.lr_drop >= 0.0 && self.lr_drop < 1.0) {
            return Err(config_err!("lr_drop must lie in [0, 1)"));
        }
        if self.lr_every == 0 || self.eval_every == 0 {
            return Err(config_err!("lr_every and eval_every must be positive"));
        }
        if !(self.sigma_init_scale > 0.0) {
            return Err(config_err!("sigma_init_scale must be positive"));
        }
        self.bandwidth.validate()
    }
}

/// `lr0 · (1 - lr_drop)^⌊epoch / lr_every⌋`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let drops = (epoch / cfg.lr_every) as i32;
    let keep = 1.0 - cfg.lr_drop;
    let mut lr = cfg.lr0;
    for _ in 0..drops {
        lr *= keep;
    }
    lr
}

/// Two independent uniform subsets of `0..n`, each drawn without replacement.
pub fn sample_minibatches<R: RngCore + ?Sized>(
    n: usize,
    n_sgd: usize,
    n_mi: usize,
    sgd_rng: &mut R,
    mi_rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < n_sgd.max(n_mi) {
        return Err(config_err!("dataset has {n} rows, minibatches need {}", n_sgd.max(n_mi)));
    }
    let sgd = index::sample(sgd_rng, n, n_sgd).into_vec();
    let mi = index::sample(mi_rng, n, n_mi).into_vec();
    Ok((sgd, mi))
}

/// Everything random about one step, fixed up front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub step: u64,
    pub sgd: Vec<usize>,
    pub mi: Vec<usize>,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    /// Width fitted on the MI batch (0 when no kernel work was done).
    pub eta: f64,
    pub sigma: f64,
}

/// Fills `params` grads with the gradient of the step loss without updating.
pub fn step_gradients(
    model: &Model,
    params: &mut ParamStore,
    data: &Dataset,
    plan: &StepPlan,
    cfg: &TrainConfig,
    labels: &LabelDistribution,
) -> Result<StepReport> {
    step_gradients_with_eta(model, params, data, plan, cfg, labels, None)
}

/// As [`step_gradients`], but with the kernel width fixed to `eta` when given
/// instead of refitting it on the MI batch. With fixed `eta` and the plan's
/// noise seed the loss is a deterministic function of the parameters.
pub fn step_gradients_with_eta(
    model: &Model,
    params: &mut ParamStore,
    data: &Dataset,
    plan: &StepPlan,
    cfg: &TrainConfig,
    labels: &LabelDistribution,
    fixed_eta: Option<f64>,
) -> Result<StepReport> {
    params.zero_grads();
    let beta = cfg.beta;
    let sigma = params.sigma()?;

    // η on the MI batch with all weights frozen, then β·∂Î/∂θ through the encoder.
    let mut eta = 0.0;
    let mut mi_bits = 0.0;
    if cfg.compression == Compression::Kernel {
        let x_mi = data.inputs().select_rows(&plan.mi);
        let acts = model.encoder.forward(params, &x_mi)?;
        let codes = acts.output();
        let dists = kernel_mi::pairwise_sq_dists(codes)?;
        eta = match fixed_eta {
            Some(e) => e,
            None => kernel_mi::loo_bandwidth(&dists, codes.cols(), &cfg.bandwidth)?,
        };
        if beta > 0.0 {
            let est = kernel_mi::mi_upper_bound_grad(&dists, codes, codes.cols(), eta, sigma)?;
            mi_bits = est.value_bits;
            let mut g = est.grad_codes;
            g.scale(beta * LN_2);
            model.encoder.backward_params(params, &acts, &g)?;
            params.add_log_sigma_grad(beta * LN_2 * est.grad_log_sigma)?;
        } else {
            mi_bits = kernel_mi::mi_upper_bound(&dists, codes.cols(), eta, sigma)?;
        }
    }

    // Cross-entropy on the SGD batch with one noise sample per input.
    let x_sgd = data.inputs().select_rows(&plan.sgd);
    let y_sgd = data.labels_at(&plan.sgd);
    let enc = encoder::encode(&model.encoder, params, &x_sgd, NoiseMode::TrainNoisy, plan.noise_seed)?;
    let ce = objective::decoder_ce(&model.decoder, params, &enc.bottleneck, &y_sgd)?;
    let grad_m = ce.grad_bottleneck.as_ref().expect("decoder_ce returns a gradient");
    let mut grad_codes = encoder::reparam_backward(&enc, grad_m, params)?;
    if cfg.compression == Compression::VibBaseline {
        let vib = objective::vib_compression_term(&enc.codes, params.log_sigma()?)?;
        mi_bits = vib.bits;
        if beta > 0.0 {
            grad_codes.axpy(beta * LN_2, &vib.grad_codes);
            params.add_log_sigma_grad(beta * LN_2 * vib.grad_log_sigma)?;
        }
    }
    model.encoder.backward_params(params, &enc.activations, &grad_codes)?;

    let loss = objective::total_loss(ce.ce_bits, mi_bits, beta, labels.entropy_y_bits)?;
    let grads_finite = params.iter().all(|p| p.grad.all_finite());
    if !loss.total.is_finite() || !grads_finite {
        return Err(Error::NonFinite(alloc::boxed::Box::new(NonFiniteSnapshot {
            step: plan.step,
            eta,
            sigma,
            ce_nats: ce.ce_nats,
            mi_bits,
            sgd_indices: plan.sgd.clone(),
            mi_indices: plan.mi.clone(),
            params: params.clone(),
        })));
    }
    Ok(StepReport { loss, eta, sigma })
}

/// Step loss (nats) at fixed `eta` with the plan's frozen noise, plus the relu
/// pattern of every network pass involved, for use with [`crate::net::gradient_check`].
#[allow(clippy::too_many_arguments)]
pub fn frozen_loss_probe(
    model: &Model,
    params: &ParamStore,
    data: &Dataset,
    plan: &StepPlan,
    cfg: &TrainConfig,
    labels: &LabelDistribution,
    eta: f64,
    kink_margin: f64,
) -> Result<Probe> {
    let mut scratch = params.clone();
    let report = step_gradients_with_eta(model, &mut scratch, data, plan, cfg, labels, Some(eta))?;
    let mut h = Fnv::new();
    if cfg.compression == Compression::Kernel {
        let acts = model.encoder.forward(params, &data.inputs().select_rows(&plan.mi))?;
        h.write_u64(acts.kink_signature(&model.encoder, kink_margin));
    }
    let enc = encoder::encode(
        &model.encoder,
        params,
        &data.inputs().select_rows(&plan.sgd),
        NoiseMode::TrainNoisy,
        plan.noise_seed,
    )?;
    h.write_u64(enc.activations.kink_signature(&model.encoder, kink_margin));
    let dec = model.decoder.forward(params, &enc.bottleneck)?;
    h.write_u64(dec.kink_signature(&model.decoder, kink_margin));
    Ok(Probe { loss: report.loss.total, kink_signature: h.finish() })
}

/// One optimisation step: gradients for `plan`, then one Adam update at `lr`.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &Model,
    params: &mut ParamStore,
    adam: &mut AdamState,
    data: &Dataset,
    plan: &StepPlan,
    cfg: &TrainConfig,
    labels: &LabelDistribution,
    lr: f64,
) -> Result<StepReport> {
    let report = step_gradients(model, params, data, plan, cfg, labels)?;
    adam.update(params, lr)?;
    Ok(report)
}

/// One evaluation row for one split.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub mi_xm_bits: f64,
    pub iym_lower_bits: f64,
    pub ce_bits: f64,
    pub accuracy: f64,
    pub sigma: f64,
    pub eta: f64,
    pub lr: f64,
}

const EVAL_CHUNK: usize = 1000;

mod stream {
    pub const INIT: u64 = 1;
    pub const SGD: u64 = 2;
    pub const MI: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const EVAL: u64 = 5;
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fixed evaluation context for one split.
#[derive(Debug, Clone)]
struct EvalSet<'a> {
    data: &'a Dataset,
    labels: LabelDistribution,
    mi_idx: Vec<usize>,
    noise_seed: u64,
}

impl<'a> EvalSet<'a> {
    fn new(data: &'a Dataset, n_mi: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = n_mi.min(data.len());
        let mi_idx = subsample_indices(data.labels(), data.class_count(), n, rng.next_u64(), false)?;
        Ok(Self {
            data,
            labels: LabelDistribution::from_labels(data.labels(), data.class_count())?,
            mi_idx,
            noise_seed: rng.next_u64(),
        })
    }

    fn evaluate(
        &self,
        model: &Model,
        params: &ParamStore,
        cfg: &TrainConfig,
        epoch: usize,
        lr: f64,
    ) -> Result<EpochMetrics> {
        let sigma = params.sigma()?;
        let x_mi = self.data.inputs().select_rows(&self.mi_idx);
        let codes = model.encoder.forward(params, &x_mi)?.output().clone();
        let dists = kernel_mi::pairwise_sq_dists(&codes)?;
        let eta = kernel_mi::loo_bandwidth(&dists, codes.cols(), &cfg.bandwidth)?;
        let mi_xm_bits = kernel_mi::mi_upper_bound(&dists, codes.cols(), eta, sigma)?;

        let n = self.data.len();
        let mut nll_bits = 0.0;
        let mut correct = 0.0;
        for (chunk_no, start) in (0..n).step_by(EVAL_CHUNK).enumerate() {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let x = self.data.inputs().select_rows(&idx);
            let seed = self.noise_seed.wrapping_add(chunk_no as u64);
            let enc = encoder::encode(&model.encoder, params, &x, NoiseMode::TrainNoisy, seed)?;
            let ce = objective::decoder_ce_eval(&model.decoder, params, &enc.bottleneck, &self.data.labels_at(&idx))?;
            nll_bits += ce.ce_bits * idx.len() as f64;
            correct += ce.accuracy * idx.len() as f64;
        }
        let ce_bits = nll_bits / n as f64;
        Ok(EpochMetrics {
            epoch,
            split: self.data.split(),
            mi_xm_bits,
            iym_lower_bits: objective::iym_lower_bound(ce_bits, &self.labels),
            ce_bits,
            accuracy: correct / n as f64,
            sigma,
            eta,
            lr,
        })
    }
}

/// Stateful trainer over one training set.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    model: Model,
    cfg: TrainConfig,
    data: &'a Dataset,
    labels: LabelDistribution,
    params: ParamStore,
    adam: AdamState,
    sgd_rng: ChaCha8Rng,
    mi_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    step: u64,
}

impl<'a> Trainer<'a> {
    /// Initialises weights from the run seed and sets `σ` from a warm-up batch.
    pub fn new(data: &'a Dataset, arch: &ArchSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.input_dim() != arch.input_dim || data.class_count() != arch.classes {
            return Err(config_err!(
                "dataset ({} inputs, {} classes) does not fit the architecture ({} inputs, {} classes)",
                data.input_dim(),
                data.class_count(),
                arch.input_dim,
                arch.classes
            ));
        }
        let needed = if cfg.compression == Compression::Kernel { cfg.n_sgd.max(cfg.n_mi) } else { cfg.n_sgd };
        if data.len() < needed {
            return Err(config_err!("training set has {} rows, minibatches need {needed}", data.len()));
        }
        let model = arch.build()?;
        let mut init_rng = rng_stream(cfg.seed, stream::INIT);
        let mut params = model.init_params(init_rng.next_u64())?;
        let warm = index::sample(&mut init_rng, data.len(), cfg.n_sgd).into_vec();
        encoder::init_log_sigma(&model.encoder, &mut params, &data.inputs().select_rows(&warm), cfg.sigma_init_scale)?;
        let adam = AdamState::new(&params, cfg.adam);
        Ok(Self {
            labels: LabelDistribution::from_labels(data.labels(), data.class_count())?,
            model,
            data,
            params,
            adam,
            sgd_rng: rng_stream(cfg.seed, stream::SGD),
            mi_rng: rng_stream(cfg.seed, stream::MI),
            noise_rng: rng_stream(cfg.seed, stream::NOISE),
            cfg,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn label_distribution(&self) -> &LabelDistribution {
        &self.labels
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.cfg.n_sgd)
    }

    /// Draws the batches and noise seed of the next step.
    pub fn plan_step(&mut self) -> Result<StepPlan> {
        let n = self.data.len();
        let sgd = index::sample(&mut self.sgd_rng, n, self.cfg.n_sgd).into_vec();
        let mi = if self.cfg.compression == Compression::Kernel {
            index::sample(&mut self.mi_rng, n, self.cfg.n_mi).into_vec()
        } else {
            Vec::new()
        };
        let plan = StepPlan { step: self.step, sgd, mi, noise_seed: self.noise_rng.random() };
        Ok(plan)
    }

    pub fn step(&mut self, lr: f64) -> Result<StepReport> {
        let plan = self.plan_step()?;
        self.step_planned(&plan, lr)
    }

    /// Applies one update for an explicitly given plan.
    pub fn step_planned(&mut self, plan: &StepPlan, lr: f64) -> Result<StepReport> {
        let report =
            train_step(&self.model, &mut self.params, &mut self.adam, self.data, plan, &self.cfg, &self.labels, lr)?;
        self.step += 1;
        Ok(report)
    }
}

/// Metrics history and final parameters of a run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub metrics: Vec<EpochMetrics>,
    pub params: ParamStore,
    pub arch: ArchSpec,
}

/// Runs `epochs · ⌈N / n_sgd⌉` steps, evaluating both splits before training,
/// every `eval_every` epochs, and after the last epoch. `on_eval` sees each
/// row as it is produced.
pub fn fit(
    train: &Dataset,
    test: &Dataset,
    arch: &ArchSpec,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&EpochMetrics),
) -> Result<FitResult> {
    if train.input_dim() != test.input_dim() || train.class_count() != test.class_count() {
        return Err(config_err!("train and test sets disagree on input width or label alphabet"));
    }
    let mut trainer = Trainer::new(train, arch, cfg.clone())?;
    let mut eval_rng = rng_stream(cfg.seed, stream::EVAL);
    let evals = [EvalSet::new(train, cfg.n_mi, &mut eval_rng)?, EvalSet::new(test, cfg.n_mi, &mut eval_rng)?];
    let model = trainer.model().clone();
    let mut metrics = Vec::new();
    let mut record = |epoch: usize, lr: f64, params: &ParamStore, metrics: &mut Vec<EpochMetrics>| -> Result<()> {
        for e in &evals {
            let row = e.evaluate(&model, params, cfg, epoch, lr)?;
            on_eval(&row);
            metrics.push(row);
        }
        Ok(())
    };
    record(0, lr_schedule(0, cfg), trainer.params(), &mut metrics)?;
    let steps = trainer.steps_per_epoch();
    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch - 1, cfg);
        for _ in 0..steps {
            trainer.step(lr)?;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            record(epoch, lr, trainer.params(), &mut metrics)?;
        }
    }
    Ok(FitResult { metrics, params: trainer.into_params(), arch: arch.clone() })
}

/// Evaluates an arbitrary parameter set on one split the way [`fit`] does.
pub fn evaluate_split(
    model: &Model,
    params: &ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    let mut rng = rng_stream(cfg.seed, stream::EVAL);
    let set = EvalSet::new(data, cfg.n_mi, &mut rng)?;
    set.evaluate(model, params, cfg, epoch, lr_schedule(epoch, cfg))
}

/// Clean bottleneck codes for every row of `inputs`.
pub fn clean_codes(model: &Model, params: &ParamStore, inputs: &Tensor2) -> Result<Tensor2> {
    Ok(model.encoder.forward(params, inputs)?.output().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig { epochs: 1, n_sgd: 8, n_mi: 10, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(0, &c), 0.001);
        assert!((lr_schedule(10, &c) - 0.0004).abs() < 1e-18);
        assert!((lr_schedule(25, &c) - 0.00016).abs() < 1e-18);
        assert!((lr_schedule(9, &c) - 0.001).abs() < 1e-18);
    }

    #[test]
    fn rejects_beta_outside_unit_interval() {
        let c = TrainConfig { beta: 1.5, ..cfg() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig { n_mi: 1, ..cfg() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn minibatch_sampling() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        let (mut sgd, mi) = sample_minibatches(12, 12, 5, &mut a, &mut b).unwrap();
        sgd.sort_unstable();
        assert_eq!(sgd, (0..12).collect::<Vec<_>>());
        let mut uniq = mi.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);
        assert!(sample_minibatches(4, 5, 2, &mut a, &mut b).is_err());

        let again =
            sample_minibatches(12, 3, 5, &mut ChaCha8Rng::seed_from_u64(7), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let twice =
            sample_minibatches(12, 3, 5, &mut ChaCha8Rng::seed_from_u64(7), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(again, twice);
    }

    #[test]
    fn single_draw_frequencies_are_uniform() {
        // 10^4 draws of one item from 10; each count ~ Binomial(10^4, 0.1).
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            let (s, _) = sample_minibatches(10, 1, 2, &mut a, &mut b).unwrap();
            counts[s[0]] += 1;
        }
        let sd = (10_000.0f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 3.0 * sd, "{counts:?}");
        }
    }
}
