//! Client-side minibatch training.
//!
//! A round of local work starts from the broadcast model with a zeroed
//! momentum buffer, evaluates the full-train-set loss and gradient at that
//! model, then runs `epochs` passes of shuffled minibatch steps.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

use crate::data::ClientDataset;
use crate::models::{self, ModelSpec};
use crate::numerics::ParamVector;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Sgd,
    Momentum,
    Nesterov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSolverConfig {
    pub kind: SolverKind,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
}

impl LocalSolverConfig {
    pub fn sgd(lr: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            kind: SolverKind::Sgd,
            lr,
            momentum: 0.0,
            batch_size,
            epochs,
            shuffle_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("local learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.kind == SolverKind::Sgd && self.momentum != 0.0 {
            return Err(Error::invalid("plain sgd takes momentum 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be positive"));
        }
        Ok(())
    }

    pub fn steps_for(&self, n_train: usize) -> usize {
        self.epochs * n_train.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalReport {
    /// `x_final - x`.
    pub delta: ParamVector,
    /// Full-train-set loss at the incoming model.
    pub initial_loss: f64,
    /// Full-train-set gradient at the incoming model.
    pub initial_grad: ParamVector,
    pub steps_taken: usize,
}

pub fn run_local(spec: &ModelSpec, x: &ParamVector, data: &ClientDataset, cfg: &LocalSolverConfig) -> Result<LocalReport> {
    cfg.validate()?;
    let (initial_loss, initial_grad) = models::loss_and_grad(spec, x, &data.train)?;
    let n = data.train.len();
    let dim = x.dim();
    let mut params = x.as_slice().to_vec();
    let mut buf = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::from_seed(cfg.shuffle_seed);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let l = models::evaluate(spec, &params, &data.train, Some(chunk), Some(&mut grad));
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step });
            }
            apply_step(cfg, &mut params, &mut buf, &grad);
            step += 1;
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence { step });
    }
    let delta: Vec<f64> = params.iter().zip(x.as_slice()).map(|(a, b)| a - b).collect();
    Ok(LocalReport {
        delta: ParamVector::new(delta)?,
        initial_loss,
        initial_grad,
        steps_taken: step,
    })
}

/// One parameter update. Momentum follows the `buf = μ·buf + g` convention;
/// Nesterov steps along `g + μ·buf`.
fn apply_step(cfg: &LocalSolverConfig, params: &mut [f64], buf: &mut [f64], grad: &[f64]) {
    let (lr, mu) = (cfg.lr, cfg.momentum);
    match cfg.kind {
        SolverKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        SolverKind::Momentum => {
            for ((p, b), g) in params.iter_mut().zip(buf.iter_mut()).zip(grad) {
                *b = mu * *b + g;
                *p -= lr * *b;
            }
        }
        SolverKind::Nesterov => {
            for ((p, b), g) in params.iter_mut().zip(buf.iter_mut()).zip(grad) {
                *b = mu * *b + g;
                *p -= lr * (g + mu * *b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::models::Batch;

    fn client() -> (ModelSpec, ClientDataset, ParamVector) {
        let data = gen_synthetic(1, 6, 3, 1.0, 1.0, 21).unwrap().remove(0);
        let spec = ModelSpec::linear(6, 3);
        let x = spec.init_params(&mut rng::from_seed(2));
        (spec, data, x)
    }

    #[test]
    fn single_full_batch_step_is_negative_scaled_gradient() {
        let (spec, data, x) = client();
        let cfg = LocalSolverConfig::sgd(0.05, data.train.len(), 1);
        let rep = run_local(&spec, &x, &data, &cfg).unwrap();
        assert_eq!(rep.steps_taken, 1);
        let want = rep.initial_grad.scale(-0.05).unwrap();
        // x - η g - x is exact up to one rounding of the subtraction
        assert!(rep.delta.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn zero_momentum_matches_plain_sgd() {
        let (spec, data, x) = client();
        let base = LocalSolverConfig { shuffle_seed: 17, ..LocalSolverConfig::sgd(0.02, 10, 2) };
        let plain = run_local(&spec, &x, &data, &base).unwrap();
        for kind in [SolverKind::Momentum, SolverKind::Nesterov] {
            let cfg = LocalSolverConfig { kind, ..base };
            assert_eq!(run_local(&spec, &x, &data, &cfg).unwrap(), plain);
        }
    }

    // Step-by-step replay written against the public model API only.
    fn replay(spec: &ModelSpec, x: &ParamVector, train: &Batch, cfg: &LocalSolverConfig) -> ParamVector {
        let mut shuffle_rng = rng::from_seed(cfg.shuffle_seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut cur = x.clone();
        let mut vel = ParamVector::zeros(x.dim());
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut start = 0;
            while start < order.len() {
                let end = usize::min(start + cfg.batch_size, order.len());
                let mb = train.select(&order[start..end]);
                let (_, g) = models::loss_and_grad(spec, &cur, &mb).unwrap();
                vel = vel.scale(cfg.momentum).unwrap().add(&g).unwrap();
                let dir = match cfg.kind {
                    SolverKind::Sgd => g,
                    SolverKind::Momentum => vel.clone(),
                    SolverKind::Nesterov => g.axpy(cfg.momentum, &vel).unwrap(),
                };
                cur = cur.axpy(-cfg.lr, &dir).unwrap();
                start = end;
            }
        }
        cur.sub(x).unwrap()
    }

    #[test]
    fn matches_independent_replay() {
        let (spec, data, x) = client();
        for kind in [SolverKind::Sgd, SolverKind::Momentum, SolverKind::Nesterov] {
            let momentum = if kind == SolverKind::Sgd { 0.0 } else { 0.9 };
            let cfg = LocalSolverConfig {
                kind,
                lr: 0.01,
                momentum,
                batch_size: 10,
                epochs: 2,
                shuffle_seed: 99,
            };
            let rep = run_local(&spec, &x, &data, &cfg).unwrap();
            assert_eq!(rep.steps_taken, cfg.steps_for(data.train.len()));
            let want = replay(&spec, &x, &data.train, &cfg);
            assert!(rep.delta.max_abs_diff(&want).unwrap() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn identical_inputs_give_identical_reports() {
        let (spec, data, x) = client();
        let cfg = LocalSolverConfig { shuffle_seed: 4, ..LocalSolverConfig::sgd(0.01, 10, 1) };
        assert_eq!(run_local(&spec, &x, &data, &cfg).unwrap(), run_local(&spec, &x, &data, &cfg).unwrap());
    }

    #[test]
    fn huge_learning_rate_diverges_with_step_index() {
        let (spec, data, x) = client();
        let cfg = LocalSolverConfig::sgd(1e300, 1, 3);
        assert!(matches!(run_local(&spec, &x, &data, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            LocalSolverConfig { momentum: 0.5, ..LocalSolverConfig::sgd(0.1, 1, 1) },
            LocalSolverConfig::sgd(0.0, 1, 1),
            LocalSolverConfig::sgd(0.1, 0, 1),
            LocalSolverConfig { kind: SolverKind::Momentum, momentum: 1.0, ..LocalSolverConfig::sgd(0.1, 1, 1) },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
