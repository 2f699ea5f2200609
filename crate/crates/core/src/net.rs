//! Reverse-mode differentiation for feed-forward stacks.
//!
//! A [`Network`] is a chain of [`LayerSpec`]s whose trainable tensors live in a
//! shared [`ParamStore`] under `"{prefix}.{layer}.weight"` / `".bias"` names.
//! [`Network::forward`] keeps every intermediate activation so that
//! [`Network::backward`] can apply the chain rule for an arbitrary terminal
//! gradient, which is how the MI estimator's gradient is injected into the
//! encoder.
//!
//! Affine layers compute `y = x·W + b` with `W` stored `fan_in x fan_out`.
//! The softmax-cross-entropy head emits row-wise log-probabilities; the
//! negative log-likelihood itself is taken by the caller.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, invariant_err, Result};
use crate::math;
use crate::tensor::{gemm, Tensor2};

/// Name of the scalar parameter holding `ln σ` for the bottleneck noise.
pub const LOG_SIGMA: &str = "log_sigma";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LayerKind {
    Affine,
    Relu,
    /// Identity; marks a linear output (the bottleneck's pre-noise layer).
    LinearOutput,
    /// Row-wise log-softmax, paired with a cross-entropy loss downstream.
    SoftmaxCe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerSpec {
    pub fn affine(fan_in: usize, fan_out: usize) -> Self {
        Self { kind: LayerKind::Affine, fan_in, fan_out }
    }

    pub fn elementwise(kind: LayerKind, width: usize) -> Self {
        Self { kind, fan_in: width, fan_out: width }
    }
}

/// One trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
}

/// Flat, ordered collection of named parameters shared by encoder and decoder.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter with a zeroed gradient. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(config_err!("duplicate parameter name {name:?}"));
        }
        let (r, c) = value.shape();
        self.entries.push(Param { name, value, grad: Tensor2::zeros(r, c) });
        Ok(self.entries.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn param(&self, index: usize) -> &Param {
        &self.entries[index]
    }

    pub fn param_mut(&mut self, index: usize) -> &mut Param {
        &mut self.entries[index]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> core::slice::IterMut<'_, Param> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    fn log_sigma_param(&self) -> Result<&Param> {
        self.get(LOG_SIGMA).ok_or_else(|| config_err!("parameter store has no {LOG_SIGMA}"))
    }

    pub fn log_sigma(&self) -> Result<f64> {
        Ok(self.log_sigma_param()?.value.data()[0])
    }

    pub fn sigma(&self) -> Result<f64> {
        Ok(math::exp(self.log_sigma()?))
    }

    pub fn set_log_sigma(&mut self, value: f64) -> Result<()> {
        let p = self.get_mut(LOG_SIGMA).ok_or_else(|| config_err!("parameter store has no {LOG_SIGMA}"))?;
        p.value.data_mut()[0] = value;
        Ok(())
    }

    pub fn add_log_sigma_grad(&mut self, value: f64) -> Result<()> {
        let p = self.get_mut(LOG_SIGMA).ok_or_else(|| config_err!("parameter store has no {LOG_SIGMA}"))?;
        p.grad.data_mut()[0] += value;
        Ok(())
    }

    /// Checks name uniqueness, gradient shapes, and that `log_sigma` is a single scalar.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|q| q.name == p.name) {
                return Err(invariant_err!("duplicate parameter {:?}", p.name));
            }
            if p.grad.shape() != p.value.shape() {
                return Err(invariant_err!("gradient shape mismatch for {:?}", p.name));
            }
        }
        let ls = self.log_sigma_param()?;
        if ls.value.shape() != (1, 1) {
            return Err(invariant_err!("{LOG_SIGMA} must be 1x1"));
        }
        Ok(())
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum InitScheme {
    /// `U(-a, a)` with `a = sqrt(3 / fan_in)`, i.e. variance `1 / fan_in`.
    #[default]
    ScaledUniform,
}

/// Allocates parameters for every affine layer of `nets` plus `log_sigma` (set to 0).
///
/// Weights are drawn from `scheme`; biases start at zero.
pub fn init_params(nets: &[&Network], seed: u64, scheme: InitScheme) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for net in nets {
        for (idx, layer) in net.layers.iter().enumerate() {
            if layer.kind != LayerKind::Affine {
                continue;
            }
            let mut w = Tensor2::zeros(layer.fan_in, layer.fan_out);
            match scheme {
                InitScheme::ScaledUniform => {
                    let a = math::sqrt(3.0 / layer.fan_in as f64);
                    for v in w.data_mut() {
                        *v = rng.random_range(-a..a);
                    }
                }
            }
            store.insert(net.weight_name(idx), w)?;
            store.insert(net.bias_name(idx), Tensor2::zeros(1, layer.fan_out))?;
        }
    }
    store.insert(LOG_SIGMA, Tensor2::zeros(1, 1))?;
    Ok(store)
}

/// Output of [`Network::forward`]: the input followed by every layer's output.
#[derive(Debug, Clone)]
pub struct Activations {
    values: Vec<Tensor2>,
}

impl Activations {
    pub fn input(&self) -> &Tensor2 {
        &self.values[0]
    }

    pub fn output(&self) -> &Tensor2 {
        self.values.last().expect("activations always hold the input")
    }

    /// Input to layer `k` (so `layer_input(0)` is the batch).
    pub fn layer_input(&self, k: usize) -> &Tensor2 {
        &self.values[k]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Hash of the relu activation pattern with a third "near kink" state for
    /// pre-activations within `margin` of zero. Two parameter settings with
    /// equal signatures sit in the same smooth region of the network.
    pub fn kink_signature(&self, net: &Network, margin: f64) -> u64 {
        let mut h = Fnv::new();
        for (k, layer) in net.layers.iter().enumerate() {
            if layer.kind != LayerKind::Relu {
                continue;
            }
            for &z in self.values[k].data() {
                let state = if z.abs() < margin {
                    1u8
                } else if z > 0.0 {
                    2
                } else {
                    0
                };
                h.write(state);
            }
        }
        h.finish()
    }
}

/// 64-bit FNV-1a, used for activation-pattern signatures.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, byte: u8) {
        self.0 ^= byte as u64;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }

    pub fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.write(b);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

/// A validated chain of layers whose parameters are looked up by name prefix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Network {
    prefix: String,
    layers: Vec<LayerSpec>,
}

impl Network {
    pub fn new(prefix: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let prefix = prefix.into();
        if layers.is_empty() {
            return Err(config_err!("network {prefix:?} has no layers"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.fan_in == 0 || l.fan_out == 0 {
                return Err(config_err!("{prefix} layer {k} has a zero dimension"));
            }
            if l.kind != LayerKind::Affine && l.fan_in != l.fan_out {
                return Err(config_err!(
                    "{prefix} layer {k} ({:?}) must keep its width, got {} -> {}",
                    l.kind,
                    l.fan_in,
                    l.fan_out
                ));
            }
            if k > 0 && layers[k - 1].fan_out != l.fan_in {
                return Err(config_err!(
                    "{prefix} layer {k} expects fan_in {}, previous layer emits {}",
                    l.fan_in,
                    layers[k - 1].fan_out
                ));
            }
            if l.kind == LayerKind::SoftmaxCe && k + 1 != layers.len() {
                return Err(config_err!("{prefix} layer {k}: softmax-ce must be the last layer"));
            }
        }
        Ok(Self { prefix, layers })
    }

    /// Affine+relu hidden stack followed by an affine layer and `head`
    /// (`LinearOutput` or `SoftmaxCe`).
    pub fn mlp(prefix: &str, input: usize, hidden: &[usize], output: usize, head: LayerKind) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(LayerSpec::affine(width, h));
            layers.push(LayerSpec::elementwise(LayerKind::Relu, h));
            width = h;
        }
        layers.push(LayerSpec::affine(width, output));
        layers.push(LayerSpec::elementwise(head, output));
        Self::new(prefix, layers)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{}.weight", self.prefix, layer)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{}.bias", self.prefix, layer)
    }

    fn affine_params(&self, params: &ParamStore, layer: usize) -> Result<(usize, usize)> {
        let l = &self.layers[layer];
        let wi = params
            .index_of(&self.weight_name(layer))
            .ok_or_else(|| config_err!("missing parameter {}", self.weight_name(layer)))?;
        let bi = params
            .index_of(&self.bias_name(layer))
            .ok_or_else(|| config_err!("missing parameter {}", self.bias_name(layer)))?;
        if params.param(wi).value.shape() != (l.fan_in, l.fan_out) || params.param(bi).value.shape() != (1, l.fan_out) {
            return Err(config_err!(
                "{} layer {layer}: parameter shapes do not match {}x{}",
                self.prefix,
                l.fan_in,
                l.fan_out
            ));
        }
        Ok((wi, bi))
    }

    pub fn forward(&self, params: &ParamStore, batch: &Tensor2) -> Result<Activations> {
        if batch.cols() != self.input_dim() {
            return Err(config_err!(
                "{} layer 0 expects {} input columns, batch has {}",
                self.prefix,
                self.input_dim(),
                batch.cols()
            ));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(batch.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let x = &values[k];
            let y = match layer.kind {
                LayerKind::Affine => {
                    let (wi, bi) = self.affine_params(params, k)?;
                    let w = &params.param(wi).value;
                    let b = params.param(bi).value.data();
                    let mut y = Tensor2::zeros(x.rows(), layer.fan_out);
                    for r in 0..y.rows() {
                        y.row_mut(r).copy_from_slice(b);
                    }
                    gemm(1.0, x, false, w, false, 1.0, &mut y);
                    y
                }
                LayerKind::Relu => {
                    let mut y = x.clone();
                    y.map_inplace(|v| if v > 0.0 { v } else { 0.0 });
                    y
                }
                LayerKind::LinearOutput => x.clone(),
                LayerKind::SoftmaxCe => {
                    let mut y = x.clone();
                    for r in 0..y.rows() {
                        let row = y.row_mut(r);
                        let lse = math::log_sum_exp(row);
                        row.iter_mut().for_each(|v| *v -= lse);
                    }
                    y
                }
            };
            values.push(y);
        }
        Ok(Activations { values })
    }

    /// Accumulates parameter gradients for `output_grad = ∂L/∂(final activation)`
    /// and returns `∂L/∂(input batch)`.
    pub fn backward(&self, params: &mut ParamStore, acts: &Activations, output_grad: &Tensor2) -> Result<Tensor2> {
        Ok(self.backward_impl(params, acts, output_grad, true)?.expect("input gradient requested"))
    }

    /// As [`Network::backward`] but skips the input gradient of the first layer.
    pub fn backward_params(&self, params: &mut ParamStore, acts: &Activations, output_grad: &Tensor2) -> Result<()> {
        self.backward_impl(params, acts, output_grad, false).map(|_| ())
    }

    fn backward_impl(
        &self,
        params: &mut ParamStore,
        acts: &Activations,
        output_grad: &Tensor2,
        want_input_grad: bool,
    ) -> Result<Option<Tensor2>> {
        if acts.values.len() != self.layers.len() + 1 {
            return Err(invariant_err!(
                "{}: {} activations for {} layers",
                self.prefix,
                acts.values.len(),
                self.layers.len()
            ));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            let (r, c) = acts.values[k + 1].shape();
            if c != layer.fan_out || acts.values[k].cols() != layer.fan_in || r != acts.values[0].rows() {
                return Err(invariant_err!("{}: activation {k} does not match the layer chain", self.prefix));
            }
        }
        if output_grad.shape() != acts.output().shape() {
            return Err(invariant_err!(
                "{}: output gradient {:?} vs activation {:?}",
                self.prefix,
                output_grad.shape(),
                acts.output().shape()
            ));
        }

        let mut grad = output_grad.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = self.layers[k];
            match layer.kind {
                LayerKind::Affine => {
                    let (wi, bi) = self.affine_params(params, k)?;
                    let x = &acts.values[k];
                    {
                        let wp = params.param_mut(wi);
                        gemm(1.0, x, true, &grad, false, 1.0, &mut wp.grad);
                    }
                    {
                        let bp = params.param_mut(bi);
                        let gb = bp.grad.data_mut();
                        for row in grad.iter_rows() {
                            for (g, v) in gb.iter_mut().zip(row) {
                                *g += v;
                            }
                        }
                    }
                    if k == 0 && !want_input_grad {
                        return Ok(None);
                    }
                    let w = &params.param(wi).value;
                    let mut gx = Tensor2::zeros(grad.rows(), layer.fan_in);
                    gemm(1.0, &grad, false, w, true, 0.0, &mut gx);
                    grad = gx;
                }
                LayerKind::Relu => {
                    let pre = &acts.values[k];
                    for (g, &z) in grad.data_mut().iter_mut().zip(pre.data()) {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                LayerKind::LinearOutput => {}
                LayerKind::SoftmaxCe => {
                    let logp = &acts.values[k + 1];
                    for r in 0..grad.rows() {
                        let lp = logp.row(r);
                        let g = grad.row_mut(r);
                        let total: f64 = g.iter().sum();
                        for (gj, &l) in g.iter_mut().zip(lp) {
                            *gj -= math::exp(l) * total;
                        }
                    }
                }
            }
        }
        Ok(Some(grad))
    }
}

/// Outcome of one loss evaluation inside a gradient check.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub loss: f64,
    /// Combined [`Activations::kink_signature`] of every relu in the loss.
    pub kink_signature: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Added to `max(|analytic|, |numeric|)` in the relative-error denominator.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, abs_floor: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crosses a relu kink and were left out.
    pub kink_excluded: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    pub fn excluded(&self) -> usize {
        self.entries.iter().map(|e| e.kink_excluded).sum()
    }
}

/// Compares the gradients already stored in `params` against central finite
/// differences of `eval`.
///
/// A coordinate is excluded when the relu pattern at `θ ± step` differs from
/// the pattern at `θ`, since the loss is not differentiable across that kink.
pub fn gradient_check(
    params: &ParamStore,
    mut eval: impl FnMut(&ParamStore) -> Result<Probe>,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let base = eval(params)?;
    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut check =
            ParamCheck { name: params.param(pi).name.to_string(), max_rel_err: 0.0, checked: 0, kink_excluded: 0 };
        for ci in 0..params.param(pi).value.len() {
            let orig = params.param(pi).value.data()[ci];
            work.param_mut(pi).value.data_mut()[ci] = orig + cfg.step;
            let plus = eval(&work)?;
            work.param_mut(pi).value.data_mut()[ci] = orig - cfg.step;
            let minus = eval(&work)?;
            work.param_mut(pi).value.data_mut()[ci] = orig;
            if plus.kink_signature != base.kink_signature || minus.kink_signature != base.kink_signature {
                check.kink_excluded += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.step);
            let analytic = params.param(pi).grad.data()[ci];
            let rel = (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + cfg.abs_floor);
            check.max_rel_err = check.max_rel_err.max(rel);
            check.checked += 1;
        }
        entries.push(check);
    }
    Ok(GradCheckReport { tolerance: cfg.tolerance, entries })
}
