//! Pairwise-distance kernel bound on `I(X;M)`.
//!
//! The codes `f(x_i)` of a batch are treated as the centres of a Gaussian
//! mixture with per-component variance `η²`. Adding the encoder noise `σ²`
//! makes the bottleneck distribution a mixture with variance `η² + σ²`, and
//! the pairwise-distance upper bound on the entropy of that mixture, minus the
//! Gaussian conditional entropy, gives
//!
//! ```text
//! Î = -(1/N) Σ_i ln[(1/N) Σ_j exp(-D_ij / (2(η²+σ²)))] - (d/2) ln(σ² / (η²+σ²))
//! ```
//!
//! with `D_ij = ‖f(x_i) - f(x_j)‖²`. Everything here is evaluated in nats and
//! converted to bits on the way out.
//!
//! The mixture width `η` is the maximiser of the leave-one-out log likelihood
//! of the codes, found by [`loo_bandwidth`]. Gradients are taken with `η`
//! held fixed.

use alloc::vec::Vec;

use crate::error::{invariant_err, precondition_err, Result};
use crate::math::{self, LN_2};
use crate::tensor::Tensor2;

/// Search settings for the leave-one-out bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BandwidthConfig {
    /// Lower clamp on the returned bandwidth, in code-space units.
    pub eta_floor: f64,
    /// Search interval for `ln s`.
    pub log_s_range: (f64, f64),
    /// Points of the bracketing grid scanned before golden-section refinement.
    pub coarse_points: usize,
    /// Maximum golden-section iterations.
    pub max_iters: usize,
    /// Golden-section stops once the bracket in `ln s` is narrower than this.
    pub log_s_tol: f64,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            eta_floor: 1e-3,
            log_s_range: (math::ln(1e-3), math::ln(1e3)),
            coarse_points: 32,
            max_iters: 60,
            log_s_tol: 1e-6,
        }
    }
}

impl BandwidthConfig {
    pub fn with_floor(eta_floor: f64) -> Self {
        Self { eta_floor, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.log_s_range;
        if !(lo < hi) {
            return Err(precondition_err!("bandwidth range must satisfy low < high"));
        }
        if !(self.eta_floor > 0.0) {
            return Err(precondition_err!("eta_floor must be positive"));
        }
        if self.coarse_points < 3 {
            return Err(precondition_err!("bandwidth grid needs at least 3 points"));
        }
        Ok(())
    }
}

/// Value and gradients of the bound for one batch of codes.
#[derive(Debug, Clone, PartialEq)]
pub struct MIEstimate {
    pub value_bits: f64,
    pub eta: f64,
    pub sigma: f64,
    /// `∂Î/∂codes` (bits per unit code), `η` held fixed.
    pub grad_codes: Tensor2,
    /// `∂Î/∂ln σ` (bits), `η` held fixed.
    pub grad_log_sigma: f64,
}

/// Squared Euclidean distances between all rows of `codes`.
pub fn pairwise_sq_dists(codes: &Tensor2) -> Result<Tensor2> {
    if !codes.all_finite() {
        return Err(invariant_err!("codes contain non-finite values"));
    }
    let n = codes.rows();
    let mut out = Tensor2::zeros(n, n);
    for i in 0..n {
        let ci = codes.row(i);
        for j in (i + 1)..n {
            let cj = codes.row(j);
            let d: f64 = ci.iter().zip(cj).map(|(a, b)| (a - b) * (a - b)).sum();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Leave-one-out log likelihood of the codes under a Gaussian kernel of
/// width `s`, prepared once per distance matrix and evaluated for many `s`.
///
/// Each row keeps its off-diagonal distances sorted and shifted by the row
/// minimum, so the inner sum is stable and can stop once the remaining
/// terms fall below `e^-40` of the leading one.
#[derive(Debug, Clone)]
pub struct LooObjective {
    n: usize,
    d: usize,
    row_min: Vec<f64>,
    shifted: Vec<Vec<f64>>,
}

const LOO_CUTOFF: f64 = 40.0;

impl LooObjective {
    pub fn new(dists: &Tensor2, d: usize) -> Result<Self> {
        let n = dists.rows();
        if n < 2 {
            return Err(precondition_err!("bandwidth selection needs n >= 2, got {n}"));
        }
        if dists.cols() != n {
            return Err(precondition_err!("distance matrix must be square"));
        }
        let mut row_min = Vec::with_capacity(n);
        let mut shifted = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dists[(i, j)]).collect();
            row.sort_unstable_by(f64::total_cmp);
            let m = row[0];
            row.iter_mut().for_each(|v| *v -= m);
            row_min.push(m);
            shifted.push(row);
        }
        Ok(Self { n, d, row_min, shifted })
    }

    /// True when every off-diagonal distance is zero.
    pub fn is_degenerate(&self) -> bool {
        self.shifted.iter().zip(&self.row_min).all(|(r, &m)| m == 0.0 && r.last() == Some(&0.0))
    }

    /// Objective at kernel width `s = exp(log_s)`, in nats.
    pub fn eval_log_s(&self, log_s: f64) -> f64 {
        let s2 = math::exp(2.0 * log_s);
        let inv = 1.0 / (2.0 * s2);
        let mut total = 0.0;
        for (row, &m) in self.shifted.iter().zip(&self.row_min) {
            let mut acc = 0.0;
            for &dv in row {
                let a = dv * inv;
                if a > LOO_CUTOFF {
                    break;
                }
                acc += math::exp(-a);
            }
            total += -m * inv + math::ln(acc);
        }
        let n = self.n as f64;
        total - n * math::ln(n - 1.0) - n * (self.d as f64 / 2.0) * math::ln(2.0 * core::f64::consts::PI * s2)
    }

    /// Upper bound on [`LooObjective::eval_log_s`] from `exp(-D/2s²) ≤ 1`:
    /// `-N (d/2) ln(2πs²)`, strictly decreasing in `s`.
    pub fn upper_bound_log_s(&self, log_s: f64) -> f64 {
        let n = self.n as f64;
        -n * (self.d as f64 / 2.0) * (math::ln(2.0 * core::f64::consts::PI) + 2.0 * log_s)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.eval_log_s(math::ln(s))
    }
}

/// Kernel width maximising the leave-one-out log likelihood of the codes.
///
/// Scans `cfg.coarse_points` log-spaced widths from small to large, then
/// refines around the best one by golden-section search in `ln s`. The scan
/// stops early once [`LooObjective::upper_bound_log_s`] drops below the best
/// value seen, which cannot change the selected grid point. The result is clamped below by
/// `cfg.eta_floor`; a batch of identical codes returns the floor directly.
pub fn loo_bandwidth(dists: &Tensor2, d: usize, cfg: &BandwidthConfig) -> Result<f64> {
    cfg.validate()?;
    let obj = LooObjective::new(dists, d)?;
    if obj.is_degenerate() {
        return Ok(cfg.eta_floor);
    }
    let (lo, hi) = cfg.log_s_range;
    let lo = lo.max(math::ln(cfg.eta_floor).min(hi));
    let k = cfg.coarse_points;
    let step = (hi - lo) / (k - 1) as f64;
    let grid = |i: usize| lo + step * i as f64;

    let mut best_t = lo;
    let mut best_f = f64::NEG_INFINITY;
    let mut best_i = 0;
    for i in 0..k {
        let t = grid(i);
        if obj.upper_bound_log_s(t) < best_f {
            // The bound decreases in s, so no later grid point can win either.
            break;
        }
        let f = obj.eval_log_s(t);
        if f > best_f {
            best_f = f;
            best_t = t;
            best_i = i;
        }
    }

    let mut a = grid(best_i.saturating_sub(1));
    let mut b = grid((best_i + 1).min(k - 1));
    let inv_phi = (math::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let mut fc = obj.eval_log_s(c);
    let mut fe = obj.eval_log_s(e);
    for _ in 0..cfg.max_iters {
        if (b - a).abs() < cfg.log_s_tol {
            break;
        }
        if fc > fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = obj.eval_log_s(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = obj.eval_log_s(e);
        }
    }
    for (t, f) in [(c, fc), (e, fe)] {
        if f > best_f {
            best_f = f;
            best_t = t;
        }
    }
    if best_t <= math::ln(cfg.eta_floor) {
        return Ok(cfg.eta_floor);
    }
    Ok(math::exp(best_t).max(cfg.eta_floor))
}

fn check_widths(eta: f64, sigma: f64) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(precondition_err!("eta must be finite and non-negative, got {eta}"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(precondition_err!("sigma must be finite and positive, got {sigma}"));
    }
    Ok(())
}

/// Row-wise `ln Σ_j exp(-D_ij / (2v))`. The diagonal term is `exp(0) = 1`,
/// so it is the row maximum and no shift is needed.
fn row_log_sums(dists: &Tensor2, v: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * v);
    dists.iter_rows().map(|row| math::ln(row.iter().map(|&dv| math::exp(-dv * inv)).sum::<f64>())).collect()
}

fn bound_nats(row_lse: &[f64], d: usize, eta: f64, sigma: f64) -> f64 {
    let n = row_lse.len() as f64;
    let s2 = sigma * sigma;
    let first = math::ln(n) - row_lse.iter().sum::<f64>() / n;
    // -(d/2) ln(σ²/v) = (d/2) ln(1 + η²/σ²)
    let second = (d as f64 / 2.0) * math::ln_1p(eta * eta / s2);
    first.max(0.0) + second
}

/// The kernel upper bound `Î` in bits.
pub fn mi_upper_bound(dists: &Tensor2, d: usize, eta: f64, sigma: f64) -> Result<f64> {
    check_widths(eta, sigma)?;
    if dists.rows() == 0 || dists.rows() != dists.cols() {
        return Err(precondition_err!("distance matrix must be square and non-empty"));
    }
    let v = eta * eta + sigma * sigma;
    let lse = row_log_sums(dists, v);
    Ok(math::nats_to_bits(bound_nats(&lse, d, eta, sigma)))
}

/// `Î` with its gradients with respect to the codes and `ln σ`.
pub fn mi_upper_bound_grad(dists: &Tensor2, codes: &Tensor2, d: usize, eta: f64, sigma: f64) -> Result<MIEstimate> {
    check_widths(eta, sigma)?;
    let n = codes.rows();
    if n == 0 || dists.shape() != (n, n) || codes.cols() != d {
        return Err(precondition_err!(
            "distances {:?} and codes {:?} disagree (d = {d})",
            dists.shape(),
            codes.shape()
        ));
    }
    let s2 = sigma * sigma;
    let v = eta * eta + s2;
    let inv = 1.0 / (2.0 * v);
    let nf = n as f64;

    // w_ij = softmax_j(-D_ij / 2v), row-normalised kernel weights.
    let mut w = Tensor2::zeros(n, n);
    let mut lse = Vec::with_capacity(n);
    let mut weighted_dist = 0.0;
    for i in 0..n {
        let drow = dists.row(i);
        let wrow = w.row_mut(i);
        let mut z = 0.0;
        for (wv, &dv) in wrow.iter_mut().zip(drow) {
            *wv = math::exp(-dv * inv);
            z += *wv;
        }
        lse.push(math::ln(z));
        let rz = 1.0 / z;
        for (wv, &dv) in wrow.iter_mut().zip(drow) {
            *wv *= rz;
            weighted_dist += *wv * dv;
        }
    }
    let value_nats = bound_nats(&lse, d, eta, sigma);

    // ∂Î/∂c_i = (1 / (N v)) Σ_j (w_ij + w_ji)(c_i - c_j)
    let mut sym = w.clone();
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] += w[(j, i)];
        }
    }
    let scale = 1.0 / (nf * v);
    let mut grad = Tensor2::zeros(n, d);
    for i in 0..n {
        let ci = codes.row(i);
        let srow = sym.row(i);
        let gi = grad.row_mut(i);
        for (j, &sij) in srow.iter().enumerate() {
            if j == i {
                continue;
            }
            for ((g, &a), &b) in gi.iter_mut().zip(ci).zip(codes.row(j)) {
                *g += sij * (a - b);
            }
        }
        gi.iter_mut().for_each(|g| *g *= scale);
    }
    grad.scale(1.0 / LN_2);

    // v depends on σ via dv/d(ln σ) = 2σ²; the second term contributes -d η²/v.
    let d_first_dv = -weighted_dist / (nf * 2.0 * v * v);
    let grad_log_sigma_nats = d_first_dv * 2.0 * s2 - (d as f64) * eta * eta / v;

    if !grad.all_finite() || !grad_log_sigma_nats.is_finite() || !value_nats.is_finite() {
        return Err(invariant_err!("kernel bound produced non-finite values (eta={eta}, sigma={sigma})"));
    }
    Ok(MIEstimate {
        value_bits: math::nats_to_bits(value_nats),
        eta,
        sigma,
        grad_codes: grad,
        grad_log_sigma: grad_log_sigma_nats / LN_2,
    })
}

/// Fits `η` on `codes` and returns the bound with its gradients.
pub fn estimate(codes: &Tensor2, sigma: f64, cfg: &BandwidthConfig) -> Result<MIEstimate> {
    let dists = pairwise_sq_dists(codes)?;
    let eta = loo_bandwidth(&dists, codes.cols(), cfg)?;
    mi_upper_bound_grad(&dists, codes, codes.cols(), eta, sigma)
}

/// Differential entropy of `N(μ, σ² I_d)` in bits: `(d/2) log₂(2πeσ²)`.
pub fn gaussian_cond_entropy(d: usize, sigma: f64) -> f64 {
    (d as f64 / 2.0) * math::log2(2.0 * core::f64::consts::PI * core::f64::consts::E * sigma * sigma)
}
