//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 5–7 train on a stratified MNIST subset read from `NIB_MNIST_DIR`
//! (default `data/mnist` at the workspace root) and report FAIL when the
//! files are missing.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nib::idx::load_mnist_split;
use nib::run::{run_single, RunOptions, RunOutput};
use nib_core::dataset::{make_synthetic, subsample, Dataset, Split, SyntheticKind, SyntheticSpec};
use nib_core::kernel_mi::{self, BandwidthConfig, LooObjective};
use nib_core::model::ArchSpec;
use nib_core::net::{gradient_check, GradCheckConfig};
use nib_core::objective::vib_compression_term;
use nib_core::trainer::{clean_codes, frozen_loss_probe, step_gradients, Compression, TrainConfig, Trainer};
use nib_core::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GRAD_REL_TOL: f64 = 1e-4;
const CLUSTER_MI_TOL_BITS: f64 = 0.05;
const QUADRATURE_SLACK_BITS: f64 = 1e-3;
const BANDWIDTH_REL_TOL: f64 = 0.005;
const BANDWIDTH_GRID_POINTS: usize = 10_000;
const MIN_TEST_ACCURACY: f64 = 0.95;
const MIN_TEST_IYM_BITS: f64 = 3.0;
const TREND_SLACK: f64 = 0.05;
const MIN_COMPRESSION_GAP_BITS: f64 = 2.0;
const CLUSTER_RATIO_FACTOR: f64 = 0.5;
const IDENTITY_STEPS: usize = 100;
const VIB_REL_TOL: f64 = 0.01;
const VIB_MC_SAMPLES: usize = 1_000_000;

const TRAIN_N: usize = 10_000;
const TEST_N: usize = 2_000;
const EPOCHS: usize = 20;
const SEED: u64 = 1;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn report(id: usize, name: &str, limit: Duration, run: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = run();
    let took = start.elapsed();
    let in_time = took < limit;
    let ok = v.passed && in_time;
    println!(
        "[{}] criterion {id} {name} ({:.1}s, limit {}s{})",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", exceeded" }
    );
    println!("    {}", v.detail);
    ok
}

fn gradient_fidelity() -> Verdict {
    let spec = SyntheticSpec {
        kind: SyntheticKind::LabeledGaussianBlobs,
        jitter: 0.3,
        sizes: Some(vec![7, 7, 6]),
        ..SyntheticSpec::clusters(3, 6, 1.0, 0, 5)
    };
    let data = make_synthetic(&spec).unwrap().dataset;
    let arch =
        ArchSpec { input_dim: 6, encoder_hidden: vec![8, 8], bottleneck_dim: 3, decoder_hidden: vec![8], classes: 3 };
    let cfg = TrainConfig { beta: 0.5, n_sgd: 20, n_mi: 20, seed: 11, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&data, &arch, cfg.clone()).unwrap();
    let plan = trainer.plan_step().unwrap();
    let model = trainer.model().clone();
    let labels = trainer.label_distribution().clone();
    let mut params = trainer.params().clone();
    let eta = step_gradients(&model, &mut params, &data, &plan, &cfg, &labels).unwrap().eta;
    let check = gradient_check(
        &params,
        |p| frozen_loss_probe(&model, p, &data, &plan, &cfg, &labels, eta, 1e-6),
        GradCheckConfig { tolerance: GRAD_REL_TOL, ..GradCheckConfig::default() },
    )
    .unwrap();
    let checked: usize = check.entries.iter().map(|e| e.checked).sum();
    let worst = check.entries.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).unwrap();
    verdict(
        check.passed() && checked > 0,
        format!(
            "max rel err {:.2e} (< {GRAD_REL_TOL:.0e}) worst in {}; {checked} coordinates checked, {} at relu kinks excluded",
            check.max_rel_err(),
            worst.name,
            check.excluded()
        ),
    )
}

fn cluster_exactness() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [4usize, 10] {
        let spec = SyntheticSpec { jitter: 0.0, ..SyntheticSpec::clusters(k, 2, 100.0, 25, 3) };
        let synth = make_synthetic(&spec).unwrap();
        let codes = synth.dataset.inputs();
        let cfg = BandwidthConfig::default();
        let dists = kernel_mi::pairwise_sq_dists(codes).unwrap();
        let eta = kernel_mi::loo_bandwidth(&dists, 2, &cfg).unwrap();
        let ihat = kernel_mi::mi_upper_bound(&dists, 2, eta, 0.1).unwrap();
        let want = (k as f64).log2();
        let good = eta == cfg.eta_floor && (ihat - want).abs() < CLUSTER_MI_TOL_BITS;
        ok &= good;
        parts.push(format!("k={k}: I={ihat:.5} vs {want:.5} (eta={eta:e})"));
    }
    verdict(ok, format!("{} ; tolerance {CLUSTER_MI_TOL_BITS} bits", parts.join(", ")))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

/// Exact `I(X;M)` in bits for the 1-D mixture, by quadrature of its entropy.
fn quadrature_mi_bits(centers: &[f64], eta: f64, sigma: f64) -> f64 {
    let v = eta * eta + sigma * sigma;
    let norm = 1.0 / (centers.len() as f64 * (2.0 * std::f64::consts::PI * v).sqrt());
    let integrand = |m: f64| {
        let p = centers.iter().map(|c| (-(m - c) * (m - c) / (2.0 * v)).exp()).sum::<f64>() * norm;
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    };
    let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - 12.0 * v.sqrt();
    let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 12.0 * v.sqrt();
    let pieces = 64 * centers.len();
    let h: f64 = (0..pieces)
        .map(|k| {
            let a = lo + (hi - lo) * k as f64 / pieces as f64;
            simpson(&integrand, a, a + (hi - lo) / pieces as f64, 1e-12)
        })
        .sum();
    let h_cond = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
    (h - h_cond) / std::f64::consts::LN_2
}

fn upper_bound_property() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let n = rng.random_range(5..=50);
        let scale = rng.random_range(0.1..5.0);
        let centers: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let sigma = rng.random_range(0.01..1.0);
        let dists = kernel_mi::pairwise_sq_dists(&Tensor2::from_vec(n, 1, centers.clone()).unwrap()).unwrap();
        let eta = kernel_mi::loo_bandwidth(&dists, 1, &BandwidthConfig::default()).unwrap();
        let ihat = kernel_mi::mi_upper_bound(&dists, 1, eta, sigma).unwrap();
        worst = worst.min(ihat - quadrature_mi_bits(&centers, eta, sigma));
    }
    verdict(
        worst >= -QUADRATURE_SLACK_BITS,
        format!("min over 20 configs of I_hat - I_true = {worst:.3e} bits (>= -{QUADRATURE_SLACK_BITS:e})"),
    )
}

fn bandwidth_vs_grid() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = BandwidthConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let scale = rng.random_range(0.1..10.0);
        let codes = Tensor2::from_vec(
            50,
            2,
            (0..100)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect(),
        )
        .unwrap();
        let dists = kernel_mi::pairwise_sq_dists(&codes).unwrap();
        let eta = kernel_mi::loo_bandwidth(&dists, 2, &cfg).unwrap();
        let obj = LooObjective::new(&dists, 2).unwrap();
        let (lo, hi) = cfg.log_s_range;
        let best = (0..BANDWIDTH_GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (BANDWIDTH_GRID_POINTS - 1) as f64)
            .map(|t| (obj.eval_log_s(t), t))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1
            .exp();
        worst = worst.max((eta - best).abs() / best);
    }
    verdict(
        worst < BANDWIDTH_REL_TOL,
        format!("max relative gap to 10^4-point grid argmax {worst:.2e} (< {BANDWIDTH_REL_TOL})"),
    )
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("NIB_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_subset() -> Result<(Dataset, Dataset), String> {
    let dir = mnist_dir();
    let load = |split| load_mnist_split(&dir, split).map_err(|e| format!("MNIST unavailable ({e}); set NIB_MNIST_DIR"));
    let train = subsample(&load(Split::Train)?, TRAIN_N, SEED, true).map_err(|e| e.to_string())?;
    let test = subsample(&load(Split::Test)?, TEST_N, SEED + 1, true).map_err(|e| e.to_string())?;
    Ok((train, test))
}

fn train_mnist(train: &Dataset, test: &Dataset, bottleneck: usize, beta: f64) -> RunOutput {
    let out_dir = std::env::temp_dir().join(format!("nib-acceptance-d{bottleneck}-beta{beta}"));
    let opts = RunOptions {
        arch: ArchSpec { encoder_hidden: vec![256, 256], ..ArchSpec::mnist(bottleneck) },
        cfg: TrainConfig { beta, epochs: EPOCHS, seed: SEED, eval_every: 5, ..TrainConfig::default() },
        out_dir,
        timing: true,
        quiet: true,
    };
    let out = run_single(train, test, &opts).expect("training run");
    let _ = std::fs::remove_dir_all(&opts.out_dir);
    out
}

fn final_row(out: &RunOutput, split: Split) -> nib::report::MetricsRecord {
    out.final_rows().into_iter().find(|r| r.split == split).unwrap()
}

/// Within-class sum of squares over total sum of squares of the clean codes.
fn within_class_ratio(out: &RunOutput, data: &Dataset) -> f64 {
    let model = out.fit.arch.build().unwrap();
    let codes = clean_codes(&model, &out.fit.params, data.inputs()).unwrap();
    let d = codes.cols();
    let mean_of = |rows: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; d];
        rows.iter().for_each(|&r| m.iter_mut().zip(codes.row(r)).for_each(|(a, b)| *a += b));
        m.iter_mut().for_each(|a| *a /= rows.len() as f64);
        m
    };
    let ss = |rows: &[usize], m: &[f64]| -> f64 {
        rows.iter().map(|&r| codes.row(r).iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum()
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let total = ss(&all, &mean_of(&all));
    let within: f64 = (0..data.class_count())
        .map(|c| {
            let rows: Vec<usize> = all.iter().copied().filter(|&r| data.labels()[r] == c).collect();
            if rows.is_empty() {
                0.0
            } else {
                ss(&rows, &mean_of(&rows))
            }
        })
        .sum();
    within / total
}

fn reduction_identity() -> Verdict {
    let spec = SyntheticSpec {
        kind: SyntheticKind::LabeledGaussianBlobs,
        jitter: 0.2,
        ..SyntheticSpec::clusters(5, 12, 1.0, 60, 8)
    };
    let data = make_synthetic(&spec).unwrap().dataset;
    let arch = ArchSpec {
        input_dim: 12,
        encoder_hidden: vec![32, 32],
        bottleneck_dim: 4,
        decoder_hidden: vec![32],
        classes: 5,
    };
    let make = |compression| {
        Trainer::new(
            &data,
            &arch,
            TrainConfig { beta: 0.0, n_sgd: 32, n_mi: 100, seed: 21, compression, ..TrainConfig::default() },
        )
        .unwrap()
    };
    let (mut with_mi, mut without) = (make(Compression::Kernel), make(Compression::Disabled));
    let mut first_diff = None;
    for step in 0..IDENTITY_STEPS {
        with_mi.step(0.001).unwrap();
        without.step(0.001).unwrap();
        if first_diff.is_none() && with_mi.params() != without.params() {
            first_diff = Some(step);
        }
    }
    let moved = with_mi.params() != make(Compression::Kernel).params();
    verdict(
        first_diff.is_none() && moved,
        match first_diff {
            None => format!("{IDENTITY_STEPS} steps bit-identical with the kernel term at beta=0 and with it disabled"),
            Some(s) => format!("trajectories diverge at step {s}"),
        },
    )
}

fn vib_vs_monte_carlo() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let n = rng.random_range(3..10);
        let d = rng.random_range(2..6);
        let codes = Tensor2::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let log_sigma: f64 = rng.random_range(-1.5..0.7);
        let sigma = log_sigma.exp();
        let closed = vib_compression_term(&codes, log_sigma).unwrap().bits;
        let mut acc = 0.0;
        for s in 0..VIB_MC_SAMPLES {
            let f = codes.row(s % n);
            let mut l = 0.0;
            for &fk in f {
                let e: f64 = StandardNormal.sample(&mut rng);
                let m = fk + sigma * e;
                // log N(m; f, σ²) − log N(m; 0, 1)
                l += -0.5 * e * e - log_sigma + 0.5 * m * m;
            }
            acc += l;
        }
        let mc = acc / VIB_MC_SAMPLES as f64 / std::f64::consts::LN_2;
        worst = worst.max((closed - mc).abs() / closed.abs());
    }
    verdict(
        worst < VIB_REL_TOL,
        format!("max relative gap closed form vs 10^6-sample MC over 5 configs {worst:.2e} (< {VIB_REL_TOL})"),
    )
}

fn main() {
    let mut results = vec![
        report(1, "gradient fidelity", Duration::from_secs(10), gradient_fidelity),
        report(2, "estimator exactness on separated clusters", Duration::from_secs(1), cluster_exactness),
        report(3, "upper bound vs quadrature", Duration::from_secs(30), upper_bound_property),
        report(4, "bandwidth vs grid oracle", Duration::from_secs(10), bandwidth_vs_grid),
    ];

    match mnist_subset() {
        Ok((train, test)) => {
            let mut base = None;
            results.push(report(5, "beta=0 supervised baseline", Duration::from_secs(15 * 60), || {
                let out = train_mnist(&train, &test, 20, 0.0);
                let r = final_row(&out, Split::Test);
                let v = verdict(
                    r.accuracy >= MIN_TEST_ACCURACY && r.iym_lower_bits >= MIN_TEST_IYM_BITS,
                    format!(
                        "test accuracy {:.4} (>= {MIN_TEST_ACCURACY}), test I(Y;M) lower bound {:.4} bits (>= {MIN_TEST_IYM_BITS})",
                        r.accuracy, r.iym_lower_bits
                    ),
                );
                base = Some(out);
                v
            }));
            let base = base.expect("baseline run");
            let base_secs = final_row(&base, Split::Train).wall_ms as f64 / 1000.0;
            results.push(report(6, "trade-off trend", Duration::from_secs(60 * 60) - Duration::from_secs_f64(base_secs), || {
                let mut mi = vec![(0.0, final_row(&base, Split::Train).mi_xm_bits)];
                for beta in [0.1, 0.4, 0.8] {
                    mi.push((beta, final_row(&train_mnist(&train, &test, 20, beta), Split::Train).mi_xm_bits));
                }
                let monotone = mi.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + TREND_SLACK));
                let gap = mi[0].1 - mi[3].1;
                verdict(
                    monotone && gap >= MIN_COMPRESSION_GAP_BITS,
                    format!(
                        "final train I(X;M) by beta: {}; gap beta 0 to 0.8 = {gap:.2} bits (>= {MIN_COMPRESSION_GAP_BITS}), slack {TREND_SLACK}",
                        mi.iter().map(|(b, v)| format!("{b}: {v:.2}")).collect::<Vec<_>>().join(", ")
                    ),
                )
            }));
            results.push(report(7, "2-D clustering proxy", Duration::from_secs(30 * 60), || {
                let r0 = within_class_ratio(&train_mnist(&train, &test, 2, 0.0), &train);
                let r4 = within_class_ratio(&train_mnist(&train, &test, 2, 0.4), &train);
                verdict(
                    r4 < CLUSTER_RATIO_FACTOR * r0,
                    format!("within-class / total variance of clean codes: beta=0.4 {r4:.4} vs beta=0 {r0:.4} (need < {CLUSTER_RATIO_FACTOR}x)"),
                )
            }));
        }
        Err(why) => {
            for (id, name) in [(5, "beta=0 supervised baseline"), (6, "trade-off trend"), (7, "2-D clustering proxy")] {
                println!("[FAIL] criterion {id} {name}: not evaluated\n    {why}");
                results.push(false);
            }
        }
    }

    results.push(report(8, "reduction identity", Duration::from_secs(60), reduction_identity));
    results.push(report(9, "VIB term vs Monte Carlo", Duration::from_secs(30), vib_vs_monte_carlo));

    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
