//! Federated dataset synthesis and non-IID partitioning.
//!
//! Two sources are supported: a LEAF-style synthetic federation where every
//! client has its own generating linear model, and a pooled Gaussian-blob
//! classification set split across clients by per-class Dirichlet
//! proportions (or evenly, per class, for the IID scheme).
//!
//! Every client's samples are shuffled and split 8:2 into train and test.
//! The test side takes `max(1, floor(0.2 n))` samples and the rest go to
//! train.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use crate::math;
use crate::models::Batch;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

pub const POWERLAW_EXPONENT: f64 = 1.5;
pub const POWERLAW_MIN_SAMPLES: usize = 20;
pub const POWERLAW_MAX_SAMPLES: usize = 1000;
pub const MAX_PARTITION_RETRIES: usize = 100;
/// Smallest local partition that still yields one train and one test sample.
pub const MIN_CLIENT_SAMPLES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Batch,
    pub test: Batch,
}

impl ClientDataset {
    /// Train sample count; the client's aggregation weight.
    pub fn size(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    SyntheticPowerLaw { alpha_s: f64, beta_s: f64 },
    Dirichlet { beta: f64 },
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid("num_clients must be at least 1"));
        }
        match self.scheme {
            PartitionScheme::Dirichlet { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::invalid("dirichlet beta must be positive"))
            }
            PartitionScheme::SyntheticPowerLaw { alpha_s, beta_s }
                if !(alpha_s >= 0.0 && beta_s >= 0.0) =>
            {
                Err(Error::invalid("synthetic alpha_s and beta_s must be non-negative"))
            }
            _ => Ok(()),
        }
    }
}

/// Number of test samples for a local partition of `n` samples.
pub fn test_count(n: usize) -> usize {
    usize::max(1, n / 5)
}

/// Shuffles `local` and splits it 8:2 into a client dataset.
pub fn split_train_test(client_id: usize, local: &Batch, rng: &mut StreamRng) -> Result<ClientDataset> {
    let n = local.len();
    if n < MIN_CLIENT_SAMPLES {
        return Err(Error::Partition(alloc::format!(
            "client {client_id} has {n} samples, need at least {MIN_CLIENT_SAMPLES}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_test = test_count(n);
    let (test_idx, train_idx) = order.split_at(n_test);
    Ok(ClientDataset {
        client_id,
        train: local.select(train_idx),
        test: local.select(test_idx),
    })
}

/// Zipf rank sizes `clamp(round(max · r^-1.5), min, max)` for ranks
/// `1..=num_clients`, with ranks dealt to clients by a seeded permutation.
pub fn powerlaw_sizes(num_clients: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut ranks: Vec<usize> = (1..=num_clients).collect();
    ranks.shuffle(rng);
    ranks
        .into_iter()
        .map(|r| {
            let raw = POWERLAW_MAX_SAMPLES as f64 * math::powf(r as f64, -POWERLAW_EXPONENT);
            (libm::round(raw) as usize).clamp(POWERLAW_MIN_SAMPLES, POWERLAW_MAX_SAMPLES)
        })
        .collect()
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("standard deviation is finite and non-negative")
}

/// LEAF-style synthetic federation.
///
/// Per client `k`: `u_k ~ N(0, alpha_s)`, `B_k ~ N(0, beta_s)`, generating
/// weights and biases `~ N(u_k, 1)`, feature mean `v_k ~ N(B_k, 1)`, inputs
/// `x ~ N(v_k, diag(j^-1.2))` and labels `argmax(W_k x + b_k)`. The second
/// argument of `N` is a standard deviation.
pub fn gen_synthetic(
    num_clients: usize,
    input_dim: usize,
    num_classes: usize,
    alpha_s: f64,
    beta_s: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients must be at least 1"));
    }
    if input_dim < 2 || num_classes < 2 {
        return Err(Error::invalid("input_dim and num_classes must be at least 2"));
    }
    if !(alpha_s >= 0.0 && beta_s >= 0.0 && alpha_s.is_finite() && beta_s.is_finite()) {
        return Err(Error::invalid("alpha_s and beta_s must be finite and non-negative"));
    }
    let mut rng = rng::from_seed(seed);
    let sizes = powerlaw_sizes(num_clients, &mut rng);
    let feature_std: Vec<f64> = (1..=input_dim)
        .map(|j| math::sqrt(math::powf(j as f64, -1.2)))
        .collect();

    let mut clients = Vec::with_capacity(num_clients);
    for (k, &n) in sizes.iter().enumerate() {
        let u_k = normal(0.0, alpha_s).sample(&mut rng);
        let b_k = normal(0.0, beta_s).sample(&mut rng);
        let w_dist = normal(u_k, 1.0);
        let weights: Vec<f64> = (0..num_classes * input_dim).map(|_| w_dist.sample(&mut rng)).collect();
        let bias: Vec<f64> = (0..num_classes).map(|_| w_dist.sample(&mut rng)).collect();
        let mean_dist = normal(b_k, 1.0);
        let mean: Vec<f64> = (0..input_dim).map(|_| mean_dist.sample(&mut rng)).collect();

        let mut local = Batch::empty(input_dim);
        let mut x = vec![0.0; input_dim];
        for _ in 0..n {
            for j in 0..input_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[j] = mean[j] + feature_std[j] * z;
            }
            let mut best = 0;
            let mut best_logit = f64::NEG_INFINITY;
            for c in 0..num_classes {
                let row = &weights[c * input_dim..(c + 1) * input_dim];
                let logit = bias[c] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
                if logit > best_logit {
                    best_logit = logit;
                    best = c;
                }
            }
            local.push(&x, best);
        }
        clients.push(split_train_test(k, &local, &mut rng)?);
    }
    Ok(clients)
}

/// Gaussian-blob pool: balanced labels, class `c` centred at `scale · e_c`,
/// unit covariance.
pub fn gen_blobs(n: usize, input_dim: usize, num_classes: usize, scale: f64, seed: u64) -> Result<Batch> {
    if num_classes < 2 || input_dim < num_classes {
        return Err(Error::invalid("blobs need num_classes >= 2 and input_dim >= num_classes"));
    }
    if n == 0 {
        return Err(Error::invalid("pool size must be positive"));
    }
    let mut rng = rng::from_seed(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let mut inputs = Vec::with_capacity(n * input_dim);
    for &y in &labels {
        for j in 0..input_dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            inputs.push(if j == y { scale + z } else { z });
        }
    }
    Batch::new(inputs, input_dim, labels)
}

fn num_classes_of(pool: &Batch) -> usize {
    pool.labels().iter().copied().max().map_or(0, |m| m + 1)
}

fn class_indices(pool: &Batch, num_classes: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in pool.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for idx in by_class.iter_mut() {
        idx.shuffle(rng);
    }
    by_class
}

/// Sample from `Dir(beta · 1_k)` via normalized Gamma draws.
pub fn sample_dirichlet(k: usize, beta: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(beta, 1.0).map_err(|_| Error::invalid("dirichlet beta must be positive"))?;
    for _ in 0..MAX_PARTITION_RETRIES {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
    Err(Error::Partition("dirichlet draw underflowed".into()))
}

/// Splits `indices` into `proportions.len()` consecutive chunks with
/// boundaries at `floor(cumsum(p) · n)`.
fn split_by_proportions(indices: &[usize], proportions: &[f64], out: &mut [Vec<usize>]) {
    let n = indices.len();
    let mut start = 0;
    let mut cum = 0.0;
    for (k, p) in proportions.iter().enumerate() {
        cum += p;
        let end = if k + 1 == proportions.len() {
            n
        } else {
            usize::min(n, math::floor(cum * n as f64) as usize).max(start)
        };
        out[k].extend_from_slice(&indices[start..end]);
        start = end;
    }
}

/// Pool-index assignment for the Dirichlet scheme. Each class's samples are
/// split across clients by a fresh `Dir(beta)` draw; the whole assignment is
/// redrawn while any client holds fewer than [`MIN_CLIENT_SAMPLES`].
pub fn assign_dirichlet(pool: &Batch, num_clients: usize, beta: f64, rng: &mut StreamRng) -> Result<Vec<Vec<usize>>> {
    let num_classes = num_classes_of(pool);
    let by_class = class_indices(pool, num_classes, rng);
    for _ in 0..MAX_PARTITION_RETRIES {
        let mut assignment = vec![Vec::new(); num_clients];
        for idx in &by_class {
            let p = sample_dirichlet(num_clients, beta, rng)?;
            split_by_proportions(idx, &p, &mut assignment);
        }
        if assignment.iter().all(|a| a.len() >= MIN_CLIENT_SAMPLES) {
            return Ok(assignment);
        }
    }
    Err(Error::Partition(alloc::format!(
        "could not give all {num_clients} clients {MIN_CLIENT_SAMPLES}+ samples after {MAX_PARTITION_RETRIES} retries"
    )))
}

/// IID assignment: every class is dealt to clients in equal proportions.
pub fn assign_iid(pool: &Batch, num_clients: usize, rng: &mut StreamRng) -> Result<Vec<Vec<usize>>> {
    let num_classes = num_classes_of(pool);
    let by_class = class_indices(pool, num_classes, rng);
    let p = vec![1.0 / num_clients as f64; num_clients];
    let mut assignment = vec![Vec::new(); num_clients];
    for idx in &by_class {
        split_by_proportions(idx, &p, &mut assignment);
    }
    if assignment.iter().any(|a| a.len() < MIN_CLIENT_SAMPLES) {
        return Err(Error::Partition("pool too small for an iid split".into()));
    }
    Ok(assignment)
}

fn materialize(pool: &Batch, assignment: &[Vec<usize>], rng: &mut StreamRng) -> Result<Vec<ClientDataset>> {
    assignment
        .iter()
        .enumerate()
        .map(|(k, idx)| split_train_test(k, &pool.select(idx), rng))
        .collect()
}

fn check_pool(pool: &Batch, num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients must be at least 1"));
    }
    if pool.len() < num_clients * MIN_CLIENT_SAMPLES {
        return Err(Error::Partition("pool has fewer samples than clients need".into()));
    }
    Ok(())
}

pub fn partition_dirichlet(pool: &Batch, num_clients: usize, beta: f64, seed: u64) -> Result<Vec<ClientDataset>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid("dirichlet beta must be positive"));
    }
    check_pool(pool, num_clients)?;
    let mut rng = rng::from_seed(seed);
    let assignment = assign_dirichlet(pool, num_clients, beta, &mut rng)?;
    materialize(pool, &assignment, &mut rng)
}

pub fn partition_iid(pool: &Batch, num_clients: usize, seed: u64) -> Result<Vec<ClientDataset>> {
    check_pool(pool, num_clients)?;
    let mut rng = rng::from_seed(seed);
    let assignment = assign_iid(pool, num_clients, &mut rng)?;
    materialize(pool, &assignment, &mut rng)
}

/// Total-variation distance between two label histograms.
pub fn label_tv_distance(a: &[usize], b: &[usize]) -> f64 {
    let na: usize = a.iter().sum();
    let nb: usize = b.iter().sum();
    if na == 0 || nb == 0 {
        return 1.0;
    }
    let len = usize::max(a.len(), b.len());
    let mut tv = 0.0;
    for c in 0..len {
        let pa = a.get(c).copied().unwrap_or(0) as f64 / na as f64;
        let pb = b.get(c).copied().unwrap_or(0) as f64 / nb as f64;
        tv += math::abs(pa - pb);
    }
    0.5 * tv
}

/// Fraction of a client's samples held by its `top` most frequent labels.
pub fn top_label_mass(counts: &[usize], top: usize) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.iter().take(top).sum::<usize>() as f64 / total as f64
}
