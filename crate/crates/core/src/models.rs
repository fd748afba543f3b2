//! Linear-softmax and one-hidden-layer ReLU classifiers with exact
//! cross-entropy gradients.
//!
//! Parameters are flat. The linear model stores `W` (classes × inputs,
//! row-major) followed by `b`. The MLP stores `W1` (hidden × inputs), `b1`,
//! `W2` (classes × hidden), `b2`.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::math;
use crate::numerics::ParamVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LinearSoftmax,
    Mlp { hidden_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            input_dim,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp { hidden_dim },
            input_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("input_dim and num_classes must be positive"));
        }
        if let ModelKind::Mlp { hidden_dim: 0 } = self.kind {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LinearSoftmax => c * d + c,
            ModelKind::Mlp { hidden_dim: h } => h * d + h + c * h + c,
        }
    }

    /// Uniform(−s, s) initialization with `s = 1/√input_dim`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let s = 1.0 / math::sqrt(self.input_dim as f64);
        let values = (0..self.num_params())
            .map(|_| rng.random_range(-s..=s))
            .collect();
        ParamVector::from_trusted(values)
    }
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    input_dim: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, input_dim: usize, labels: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if inputs.len() != labels.len() * input_dim {
            return Err(Error::Shape {
                expected: labels.len() * input_dim,
                found: inputs.len(),
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch inputs"));
        }
        Ok(Self {
            inputs,
            input_dim,
            labels,
        })
    }

    pub fn empty(input_dim: usize) -> Self {
        Self {
            inputs: Vec::new(),
            input_dim,
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub(crate) fn push(&mut self, row: &[f64], label: usize) {
        debug_assert_eq!(row.len(), self.input_dim);
        self.inputs.extend_from_slice(row);
        self.labels.push(label);
    }

    /// New batch holding the given rows in the given order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let mut out = Batch::empty(self.input_dim);
        out.inputs.reserve(idx.len() * self.input_dim);
        for &i in idx {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    pub fn concat(parts: &[&Batch]) -> Result<Batch> {
        let dim = parts.first().ok_or(Error::Empty("batch list"))?.input_dim;
        let mut out = Batch::empty(dim);
        for p in parts {
            if p.input_dim != dim {
                return Err(Error::Shape {
                    expected: dim,
                    found: p.input_dim,
                });
            }
            out.inputs.extend_from_slice(&p.inputs);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    pub fn label_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &y in &self.labels {
            if y < num_classes {
                counts[y] += 1;
            }
        }
        counts
    }
}

fn check(spec: &ModelSpec, params: &[f64], batch: &Batch) -> Result<()> {
    spec.validate()?;
    if params.len() != spec.num_params() {
        return Err(Error::Shape {
            expected: spec.num_params(),
            found: params.len(),
        });
    }
    if batch.input_dim != spec.input_dim {
        return Err(Error::Shape {
            expected: spec.input_dim,
            found: batch.input_dim,
        });
    }
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= spec.num_classes) {
        return Err(Error::invalid(alloc::format!(
            "label {y} out of range for {} classes",
            spec.num_classes
        )));
    }
    Ok(())
}

/// Forward pass for one row; writes logits and (for the MLP) hidden
/// pre-activations into the scratch buffers.
fn forward_row(spec: &ModelSpec, p: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
    let (d, c) = (spec.input_dim, spec.num_classes);
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let (w, b) = p.split_at(c * d);
            for k in 0..c {
                let row = &w[k * d..(k + 1) * d];
                let mut z = b[k];
                for j in 0..d {
                    z += row[j] * x[j];
                }
                logits[k] = z;
            }
        }
        ModelKind::Mlp { hidden_dim: h } => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            for u in 0..h {
                let row = &w1[u * d..(u + 1) * d];
                let mut z = b1[u];
                for j in 0..d {
                    z += row[j] * x[j];
                }
                hidden[u] = z;
            }
            for k in 0..c {
                let row = &w2[k * h..(k + 1) * h];
                let mut z = b2[k];
                for u in 0..h {
                    z += row[u] * relu(hidden[u]);
                }
                logits[k] = z;
            }
        }
    }
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Turns logits into probabilities in place and returns `-log p[label]`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = math::exp(*z - max);
        sum += *z;
    }
    let label_shifted = math::ln(logits[label]);
    for z in logits.iter_mut() {
        *z /= sum;
    }
    math::ln(sum) - label_shifted
}

fn scratch(spec: &ModelSpec) -> (Vec<f64>, Vec<f64>) {
    let h = match spec.kind {
        ModelKind::Mlp { hidden_dim } => hidden_dim,
        ModelKind::LinearSoftmax => 0,
    };
    (vec![0.0; h], vec![0.0; spec.num_classes])
}

/// Mean cross-entropy and, when `grad` is given, its exact gradient
/// accumulated into `grad` (overwritten). Rows are taken from `idx` when
/// present, else the whole batch.
pub(crate) fn evaluate(
    spec: &ModelSpec,
    params: &[f64],
    batch: &Batch,
    idx: Option<&[usize]>,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let (d, c) = (spec.input_dim, spec.num_classes);
    let n = idx.map_or(batch.len(), <[usize]>::len);
    let inv_n = 1.0 / n as f64;
    let (mut hidden, mut logits) = scratch(spec);
    let mut dhidden = vec![0.0; hidden.len()];
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut total = 0.0;
    for r in 0..n {
        let i = idx.map_or(r, |ix| ix[r]);
        let x = batch.row(i);
        let y = batch.labels[i];
        forward_row(spec, params, x, &mut hidden, &mut logits);
        total += softmax_xent(&mut logits, y);
        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        // logits now hold probabilities; turn them into dL/dlogits.
        logits[y] -= 1.0;
        for z in logits.iter_mut() {
            *z *= inv_n;
        }
        match spec.kind {
            ModelKind::LinearSoftmax => {
                let (gw, gb) = g.split_at_mut(c * d);
                for k in 0..c {
                    let dk = logits[k];
                    let row = &mut gw[k * d..(k + 1) * d];
                    for j in 0..d {
                        row[j] += dk * x[j];
                    }
                    gb[k] += dk;
                }
            }
            ModelKind::Mlp { hidden_dim: h } => {
                let w2 = &params[h * d + h..h * d + h + c * h];
                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                dhidden.fill(0.0);
                for k in 0..c {
                    let dk = logits[k];
                    let grow = &mut gw2[k * h..(k + 1) * h];
                    let wrow = &w2[k * h..(k + 1) * h];
                    for u in 0..h {
                        grow[u] += dk * relu(hidden[u]);
                        dhidden[u] += dk * wrow[u];
                    }
                    gb2[k] += dk;
                }
                for u in 0..h {
                    if hidden[u] <= 0.0 {
                        continue;
                    }
                    let du = dhidden[u];
                    let row = &mut gw1[u * d..(u + 1) * d];
                    for j in 0..d {
                        row[j] += du * x[j];
                    }
                    gb1[u] += du;
                }
            }
        }
    }
    total * inv_n
}

pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    check(spec, params.as_slice(), batch)?;
    let l = evaluate(spec, params.as_slice(), batch, None, None);
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

pub fn loss_and_grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
    check(spec, params.as_slice(), batch)?;
    let mut g = vec![0.0; params.dim()];
    let l = evaluate(spec, params.as_slice(), batch, None, Some(&mut g));
    if !l.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((l, ParamVector::new(g)?))
}

/// Predicted classes; ties resolve to the lowest class index.
pub fn predict(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<usize>> {
    spec.validate()?;
    if params.dim() != spec.num_params() {
        return Err(Error::Shape {
            expected: spec.num_params(),
            found: params.dim(),
        });
    }
    if batch.input_dim != spec.input_dim {
        return Err(Error::Shape {
            expected: spec.input_dim,
            found: batch.input_dim,
        });
    }
    let (mut hidden, mut logits) = scratch(spec);
    Ok((0..batch.len())
        .map(|i| {
            forward_row(spec, params.as_slice(), batch.row(i), &mut hidden, &mut logits);
            let mut best = 0;
            for k in 1..logits.len() {
                if logits[k] > logits[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let preds = predict(spec, params, batch)?;
    let hits = preds
        .iter()
        .zip(batch.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_batch(rng: &mut impl Rng, n: usize, d: usize, c: usize) -> Batch {
        let inputs = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        Batch::new(inputs, d, labels).unwrap()
    }

    fn random_params(rng: &mut impl Rng, spec: &ModelSpec, s: f64) -> ParamVector {
        ParamVector::new((0..spec.num_params()).map(|_| rng.random_range(-s..s)).collect()).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_loss() {
        let spec = ModelSpec::linear(4, 10);
        let mut rng = crate::rng::from_seed(1);
        let batch = random_batch(&mut rng, 7, 4, 10);
        let l = loss(&spec, &ParamVector::zeros(spec.num_params()), &batch).unwrap();
        assert!(math::abs(l - math::ln(10.0)) < 1e-12);
        assert!(math::abs(l - 2.302585) < 1e-6);
    }

    #[test]
    fn saturated_margin_has_tiny_loss() {
        let spec = ModelSpec::linear(1, 2);
        // logits (0, 20) for x = 1
        let params = ParamVector::new(alloc::vec![0.0, 20.0, 0.0, 0.0]).unwrap();
        let batch = Batch::new(alloc::vec![1.0], 1, alloc::vec![1]).unwrap();
        assert!(loss(&spec, &params, &batch).unwrap() < 1e-6);
    }

    // Direct softmax cross-entropy with no max shift, written independently
    // of `evaluate`.
    fn oracle_linear_loss(params: &[f64], rows: &[[f64; 2]], labels: &[usize], c: usize) -> f64 {
        let d = 2;
        let mut total = 0.0;
        for (x, &y) in rows.iter().zip(labels) {
            let logits: Vec<f64> = (0..c)
                .map(|k| params[c * d + k] + params[k * d] * x[0] + params[k * d + 1] * x[1])
                .collect();
            let denom: f64 = logits.iter().map(|z| math::exp(*z)).sum();
            total += -math::ln(math::exp(logits[y]) / denom);
        }
        total / rows.len() as f64
    }

    #[test]
    fn three_sample_loss_matches_oracle() {
        let spec = ModelSpec::linear(2, 3);
        let params = [0.3, -0.2, 0.5, 0.1, -0.7, 0.4, 0.05, -0.1, 0.2];
        let rows = [[1.0, 2.0], [-0.5, 0.3], [0.0, -1.5]];
        let labels = [0usize, 2, 1];
        let batch = Batch::new(rows.concat(), 2, labels.to_vec()).unwrap();
        let got = loss(&spec, &ParamVector::new(params.to_vec()).unwrap(), &batch).unwrap();
        let want = oracle_linear_loss(&params, &rows, &labels, 3);
        assert!(math::abs(got - want) < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn symmetric_balanced_batch_has_zero_gradient() {
        let spec = ModelSpec::linear(2, 2);
        // Each label sees both x and -x, so the zero-parameter gradient cancels.
        let batch = Batch::new(
            alloc::vec![1.0, 2.0, -1.0, -2.0, 1.0, 2.0, -1.0, -2.0],
            2,
            alloc::vec![0, 0, 1, 1],
        )
        .unwrap();
        let (_, g) = loss_and_grad(&spec, &ParamVector::zeros(spec.num_params()), &batch).unwrap();
        assert_eq!(g.dim(), spec.num_params());
        assert!(g.l2_norm() < 1e-15, "{g:?}");
    }

    fn fd_check(spec: ModelSpec, seed: u64) -> f64 {
        let mut rng = crate::rng::from_seed(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let batch = random_batch(&mut rng, 6, spec.input_dim, spec.num_classes);
            let p = random_params(&mut rng, &spec, 0.8);
            let dir = random_params(&mut rng, &spec, 1.0);
            let (_, g) = loss_and_grad(&spec, &p, &batch).unwrap();
            let h = 1e-5;
            let lp = loss(&spec, &p.axpy(h, &dir).unwrap(), &batch).unwrap();
            let lm = loss(&spec, &p.axpy(-h, &dir).unwrap(), &batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = g.dot(&dir).unwrap();
            let rel = math::abs(fd - an) / f64::max(1e-8, f64::max(math::abs(fd), math::abs(an)));
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(fd_check(ModelSpec::linear(5, 4), 3) < 1e-5);
        assert!(fd_check(ModelSpec::mlp(5, 7, 4), 4) < 1e-5);
    }

    #[test]
    fn loss_is_row_permutation_invariant() {
        let spec = ModelSpec::mlp(3, 4, 3);
        let mut rng = crate::rng::from_seed(9);
        let batch = random_batch(&mut rng, 8, 3, 3);
        let p = random_params(&mut rng, &spec, 1.0);
        let perm = [5, 2, 7, 0, 1, 6, 4, 3];
        let a = loss(&spec, &p, &batch).unwrap();
        let b = loss(&spec, &p, &batch.select(&perm)).unwrap();
        assert!(math::abs(a - b) < 1e-14);
    }

    #[test]
    fn hidden_unit_permutation_preserves_loss() {
        let (d, h, c) = (3, 4, 2);
        let spec = ModelSpec::mlp(d, h, c);
        let mut rng = crate::rng::from_seed(5);
        let batch = random_batch(&mut rng, 10, d, c);
        let p = random_params(&mut rng, &spec, 1.0);
        let v = p.as_slice();
        let perm = [2, 0, 3, 1];
        let mut q = v.to_vec();
        for (new_u, &old_u) in perm.iter().enumerate() {
            for j in 0..d {
                q[new_u * d + j] = v[old_u * d + j];
            }
            q[h * d + new_u] = v[h * d + old_u];
            for k in 0..c {
                q[h * d + h + k * h + new_u] = v[h * d + h + k * h + old_u];
            }
        }
        let a = loss(&spec, &p, &batch).unwrap();
        let b = loss(&spec, &ParamVector::new(q).unwrap(), &batch).unwrap();
        assert!(math::abs(a - b) < 1e-13);
    }

    #[test]
    fn sgd_fits_a_separable_toy_set() {
        let spec = ModelSpec::linear(2, 2);
        let inputs = alloc::vec![2.0, 1.0, 1.5, 2.0, 3.0, 0.5, -2.0, -1.0, -1.0, -2.5, -3.0, 0.2];
        let batch = Batch::new(inputs, 2, alloc::vec![0, 0, 0, 1, 1, 1]).unwrap();
        let mut p = ParamVector::zeros(spec.num_params());
        for _ in 0..100 {
            let (_, g) = loss_and_grad(&spec, &p, &batch).unwrap();
            p = p.axpy(-0.1, &g).unwrap();
        }
        assert_eq!(accuracy(&spec, &p, &batch).unwrap(), 1.0);
    }

    #[test]
    fn ties_resolve_to_lowest_class() {
        let spec = ModelSpec::linear(2, 3);
        let batch = Batch::new(alloc::vec![1.0, 1.0], 2, alloc::vec![0]).unwrap();
        let preds = predict(&spec, &ParamVector::zeros(spec.num_params()), &batch).unwrap();
        assert_eq!(preds, alloc::vec![0]);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let spec = ModelSpec::linear(2, 3);
        let batch = Batch::new(alloc::vec![1.0, 1.0], 2, alloc::vec![0]).unwrap();
        assert!(matches!(
            loss(&spec, &ParamVector::zeros(4), &batch),
            Err(Error::Shape { .. })
        ));
        let wrong_inputs = Batch::new(alloc::vec![1.0, 1.0, 1.0], 3, alloc::vec![0]).unwrap();
        assert!(matches!(
            loss(&spec, &ParamVector::zeros(9), &wrong_inputs),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn flatten_round_trip_counts() {
        assert_eq!(ModelSpec::linear(60, 10).num_params(), 610);
        assert_eq!(ModelSpec::mlp(60, 16, 10).num_params(), 60 * 16 + 16 + 160 + 10);
    }
}
