//! In-memory labelled datasets, stratified subsampling, and synthetic generators.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, data_err, precondition_err, Result};
use crate::math;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl core::fmt::Display for Split {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inputs (one sample per row) with integer labels in `[0, class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor2,
    labels: Vec<usize>,
    split: Split,
    class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor2, labels: Vec<usize>, split: Split, class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(data_err!("{} input rows but {} labels", inputs.rows(), labels.len()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= class_count) {
            return Err(data_err!("label {y} outside [0, {class_count})"));
        }
        if !inputs.all_finite() {
            return Err(data_err!("inputs contain non-finite values"));
        }
        Ok(Self { inputs, labels, split, class_count })
    }

    pub fn inputs(&self) -> &Tensor2 {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Rows and labels at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
            class_count: self.class_count,
        }
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Indices of an `n`-element random subsample. Stratified mode gives every
/// class its proportional share rounded by largest remainder, so per-class
/// counts are within one sample of exact proportionality.
pub fn subsample_indices(
    labels: &[usize],
    class_count: usize,
    n: usize,
    seed: u64,
    stratified: bool,
) -> Result<Vec<usize>> {
    let total = labels.len();
    if n > total {
        return Err(precondition_err!("cannot draw {n} samples from {total}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if !stratified {
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        return Ok(idx);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &y) in labels.iter().enumerate() {
        by_class.get_mut(y).ok_or_else(|| data_err!("label {y} outside [0, {class_count})"))?.push(i);
    }
    let mut quota: Vec<usize> = by_class.iter().map(|c| c.len() * n / total.max(1)).collect();
    let mut remainders: Vec<(usize, usize)> =
        by_class.iter().enumerate().map(|(k, c)| ((c.len() * n) % total.max(1), k)).collect();
    // Largest remainder first; ties broken by class id for determinism.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = n - quota.iter().sum::<usize>();
    for &(_, k) in &remainders {
        if missing == 0 {
            break;
        }
        if quota[k] < by_class[k].len() {
            quota[k] += 1;
            missing -= 1;
        }
    }
    let mut idx = Vec::with_capacity(n);
    for (members, q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        idx.extend_from_slice(&members[..*q]);
    }
    idx.shuffle(&mut rng);
    Ok(idx)
}

pub fn subsample(dataset: &Dataset, n: usize, seed: u64, stratified: bool) -> Result<Dataset> {
    let idx = subsample_indices(dataset.labels(), dataset.class_count(), n, seed, stratified)?;
    Ok(dataset.select(&idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SyntheticKind {
    /// Tight clusters (jitter ≪ separation); code-space MI equals the label entropy.
    SeparatedClusters,
    /// Isotropic Gaussian blobs with standard deviation `jitter`.
    LabeledGaussianBlobs,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub k: usize,
    pub d_in: usize,
    pub separation: f64,
    pub per_cluster_n: usize,
    /// Per-cluster sizes; overrides `per_cluster_n` when present.
    pub sizes: Option<Vec<usize>>,
    pub jitter: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn clusters(k: usize, d_in: usize, separation: f64, per_cluster_n: usize, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::SeparatedClusters,
            k,
            d_in,
            separation,
            per_cluster_n,
            sizes: None,
            jitter: 1e-3,
            seed,
        }
    }

    fn cluster_sizes(&self) -> Vec<usize> {
        self.sizes.clone().unwrap_or_else(|| vec![self.per_cluster_n; self.k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownQuantities {
    pub label_entropy_bits: f64,
    /// `I(cluster; point)` for perfectly separated clusters: the entropy of the cluster sizes.
    pub cluster_mi_bits: f64,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub centers: Tensor2,
    pub known: KnownQuantities,
}

/// Generates `k` clusters whose centres are at least `separation` apart.
///
/// Centre `c` sits at `c · separation` along the first axis with uniform
/// offsets in the remaining axes, which cannot bring two centres closer than
/// their first-axis gap.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.k < 2 {
        return Err(config_err!("synthetic data needs k >= 2"));
    }
    if !(spec.separation > 0.0) || spec.d_in == 0 {
        return Err(config_err!("synthetic data needs separation > 0 and d_in >= 1"));
    }
    let sizes = spec.cluster_sizes();
    if sizes.len() != spec.k || sizes.contains(&0) {
        return Err(config_err!("need {} non-empty cluster sizes", spec.k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centers = Tensor2::zeros(spec.k, spec.d_in);
    for c in 0..spec.k {
        let row = centers.row_mut(c);
        row[0] = c as f64 * spec.separation;
        for v in row.iter_mut().skip(1) {
            *v = rng.random_range(0.0..spec.separation);
        }
    }
    let total: usize = sizes.iter().sum();
    let mut inputs = Tensor2::zeros(total, spec.d_in);
    let mut labels = Vec::with_capacity(total);
    let mut r = 0;
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let row = inputs.row_mut(r);
            for (v, &m) in row.iter_mut().zip(centers.row(c)) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = m + spec.jitter * z;
            }
            labels.push(c);
            r += 1;
        }
    }
    let entropy: f64 = sizes
        .iter()
        .map(|&s| {
            let p = s as f64 / total as f64;
            -p * math::log2(p)
        })
        .sum();
    let dataset = Dataset::new(inputs, labels, Split::Train, spec.k)?;
    Ok(Synthetic { dataset, centers, known: KnownQuantities { label_entropy_bits: entropy, cluster_mi_bits: entropy } })
}
