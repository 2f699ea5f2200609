//! Stochastic encoder `m = f(x) + σ ε`, `ε ~ N(0, I)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, invariant_err, Result};
use crate::math;
use crate::net::{Activations, Network, ParamStore};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Add seeded Gaussian noise scaled by the current `σ`.
    TrainNoisy,
    /// Return the deterministic codes unchanged.
    EvalClean,
}

/// Codes, noisy bottleneck samples, and what is needed to backpropagate through them.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub codes: Tensor2,
    pub bottleneck: Tensor2,
    /// Standard-normal draws, present in `TrainNoisy` mode.
    pub noise: Option<Tensor2>,
    pub sigma: f64,
    pub noise_seed: u64,
    pub activations: Activations,
}

/// Standard-normal matrix reproducible from `seed`.
pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Tensor2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor2::zeros(rows, cols);
    for v in t.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    t
}

pub fn encode(
    net: &Network,
    params: &ParamStore,
    batch: &Tensor2,
    mode: NoiseMode,
    seed: u64,
) -> Result<EncoderOutput> {
    let sigma = params.sigma()?;
    let activations = net.forward(params, batch)?;
    let codes = activations.output().clone();
    let (bottleneck, noise) = match mode {
        NoiseMode::EvalClean => (codes.clone(), None),
        NoiseMode::TrainNoisy => {
            let eps = standard_normal(codes.rows(), codes.cols(), seed);
            let mut m = codes.clone();
            m.axpy(sigma, &eps);
            (m, Some(eps))
        }
    };
    Ok(EncoderOutput { codes, bottleneck, noise, sigma, noise_seed: seed, activations })
}

/// Maps `∂L/∂m` to `∂L/∂f(x)` (the identity) and accumulates `∂L/∂ln σ = Σ σ ε ∂L/∂m`.
pub fn reparam_backward(out: &EncoderOutput, grad_bottleneck: &Tensor2, params: &mut ParamStore) -> Result<Tensor2> {
    if grad_bottleneck.shape() != out.bottleneck.shape() {
        return Err(invariant_err!(
            "bottleneck gradient {:?} vs samples {:?}",
            grad_bottleneck.shape(),
            out.bottleneck.shape()
        ));
    }
    if let Some(eps) = &out.noise {
        let g: f64 = eps.data().iter().zip(grad_bottleneck.data()).map(|(e, g)| e * g).sum();
        params.add_log_sigma_grad(out.sigma * g)?;
    }
    Ok(grad_bottleneck.clone())
}

/// Root-mean-square of the clean codes of `batch`.
pub fn code_rms(net: &Network, params: &ParamStore, batch: &Tensor2) -> Result<f64> {
    let acts = net.forward(params, batch)?;
    let c = acts.output();
    if c.is_empty() {
        return Err(config_err!("warm-up batch is empty"));
    }
    Ok(math::sqrt(c.data().iter().map(|v| v * v).sum::<f64>() / c.len() as f64))
}

/// Sets `σ = scale · rms(f(warmup))`, so the initial noise is small relative to the codes.
pub fn init_log_sigma(net: &Network, params: &mut ParamStore, warmup: &Tensor2, scale: f64) -> Result<f64> {
    let rms = code_rms(net, params, warmup)?;
    if !(rms > 0.0) || !(scale > 0.0) {
        return Err(config_err!("cannot initialise sigma from rms {rms} and scale {scale}"));
    }
    let ls = math::ln(scale * rms);
    params.set_log_sigma(ls)?;
    Ok(ls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, InitScheme, LayerKind};

    fn setup() -> (Network, ParamStore, Tensor2) {
        let net = Network::mlp("enc", 3, &[5], 2, LayerKind::LinearOutput).unwrap();
        let p = init_params(&[&net], 4, InitScheme::ScaledUniform).unwrap();
        let x = Tensor2::from_rows(&[[0.1, 0.5, -0.3], [1.0, -1.0, 0.2], [0.0, 0.3, 0.9]]);
        (net, p, x)
    }

    #[test]
    fn vanishing_sigma_leaves_codes() {
        let (net, mut p, x) = setup();
        p.set_log_sigma(-40.0).unwrap();
        let out = encode(&net, &p, &x, NoiseMode::TrainNoisy, 1).unwrap();
        assert!(out.bottleneck.max_abs_diff(&out.codes) < 1e-12);
    }

    #[test]
    fn clean_mode_is_exact() {
        let (net, p, x) = setup();
        let out = encode(&net, &p, &x, NoiseMode::EvalClean, 1).unwrap();
        assert_eq!(out.bottleneck, out.codes);
        assert!(out.noise.is_none());
    }

    #[test]
    fn frozen_noise_is_deterministic() {
        let (net, p, x) = setup();
        let a = encode(&net, &p, &x, NoiseMode::TrainNoisy, 17).unwrap();
        let b = encode(&net, &p, &x, NoiseMode::TrainNoisy, 17).unwrap();
        let c = encode(&net, &p, &x, NoiseMode::TrainNoisy, 18).unwrap();
        assert_eq!(a.bottleneck, b.bottleneck);
        assert_ne!(a.bottleneck, c.bottleneck);
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let (net, mut p, _) = setup();
        p.set_log_sigma(math::ln(0.3)).unwrap();
        let n = 100_000;
        let x = Tensor2::filled(n, 3, 0.4);
        let out = encode(&net, &p, &x, NoiseMode::TrainNoisy, 5).unwrap();
        for k in 0..2 {
            let diffs: alloc::vec::Vec<f64> = (0..n).map(|i| out.bottleneck[(i, k)] - out.codes[(i, k)]).collect();
            let mean = diffs.iter().sum::<f64>() / n as f64;
            let var = diffs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            assert!((var - 0.09).abs() < 0.02 * 0.09, "dim {k}: var {var}");
        }
    }

    #[test]
    fn reparam_passes_gradient_and_scores_sigma() {
        let (net, mut p, x) = setup();
        p.set_log_sigma(math::ln(0.5)).unwrap();
        let out = encode(&net, &p, &x, NoiseMode::TrainNoisy, 3).unwrap();
        let zero = reparam_backward(&out, &Tensor2::zeros(3, 2), &mut p).unwrap();
        assert!(zero.data().iter().all(|&g| g == 0.0));
        assert_eq!(p.get(crate::net::LOG_SIGMA).unwrap().grad.data()[0], 0.0);

        let ones = Tensor2::filled(3, 2, 1.0);
        let g = reparam_backward(&out, &ones, &mut p).unwrap();
        assert_eq!(g, ones);
        let eps_sum = out.noise.as_ref().unwrap().sum();
        let got = p.get(crate::net::LOG_SIGMA).unwrap().grad.data()[0];
        assert!((got - 0.5 * eps_sum).abs() < 1e-12);
    }

    #[test]
    fn sigma_init_is_relative_to_code_scale() {
        let (net, mut p, x) = setup();
        let rms = code_rms(&net, &p, &x).unwrap();
        init_log_sigma(&net, &mut p, &x, 0.1).unwrap();
        assert!((p.sigma().unwrap() - 0.1 * rms).abs() < 1e-12);
    }
}
