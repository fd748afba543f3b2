//! Server-side optimizers for the two-level FedOpt loop, plus centralized
//! Adam and N-step accumulated Adam.
//!
//! Every rule consumes client weights `p` through `p / Σp`, so scaling the
//! weight vector by a positive constant never changes the result.

use alloc::vec;
use alloc::vec::Vec;

use crate::local_solver::LocalReport;
use crate::math;
use crate::metrics;
use crate::numerics::{self, ParamVector};
use crate::objective::Objective;
use crate::{Error, Result};

/// Denominators below this trigger the degenerate-weights path.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub x: ParamVector,
    pub m: ParamVector,
    pub v: ParamVector,
    /// Running products of the effective β₁ / β₂ (certainty-adapted Adam).
    pub c_m: f64,
    pub c_v: f64,
    pub t: usize,
}

impl ServerState {
    pub fn new(x: ParamVector) -> Self {
        let d = x.dim();
        Self {
            x,
            m: ParamVector::zeros(d),
            v: ParamVector::zeros(d),
            c_m: 1.0,
            c_v: 1.0,
            t: 0,
        }
    }

    fn with_x(&self, x: ParamVector) -> Self {
        Self {
            x,
            t: self.t + 1,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("adam lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("adam eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QFedAvgConfig {
    pub q: f64,
    /// Lipschitz estimate `L`; conventionally `1 / local_lr`.
    pub lipschitz: f64,
    /// Multiplier on the final server step.
    pub server_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServerAlgorithm {
    FedAvg,
    FedAdam(AdamConfig),
    FedNova,
    QFedAvg(QFedAvgConfig),
}

/// Shared moment update: `m' = (1−b1) g + b1 m`, `v' = (1−b2) g² + b2 v`,
/// `x' = x − lr · (m'/corr1) / (√(v'/corr2) + eps)`.
pub(crate) fn moment_step(
    state: &ServerState,
    g: &ParamVector,
    b1: f64,
    b2: f64,
    lr: f64,
    eps: f64,
    corr1: f64,
    corr2: f64,
) -> Result<(ParamVector, ParamVector, ParamVector)> {
    if g.dim() != state.x.dim() {
        return Err(Error::Shape {
            expected: state.x.dim(),
            found: g.dim(),
        });
    }
    let d = g.dim();
    let mut m = Vec::with_capacity(d);
    let mut v = Vec::with_capacity(d);
    let mut x = Vec::with_capacity(d);
    for i in 0..d {
        let gi = g[i];
        let mi = (1.0 - b1) * gi + b1 * state.m[i];
        let vi = (1.0 - b2) * gi * gi + b2 * state.v[i];
        let m_hat = mi / corr1;
        let v_hat = vi / corr2;
        x.push(state.x[i] - lr * m_hat / (math::sqrt(v_hat) + eps));
        m.push(mi);
        v.push(vi);
    }
    Ok((ParamVector::new(x)?, ParamVector::new(m)?, ParamVector::new(v)?))
}

/// Standard Adam with step-count bias correction `1 − β^t`.
pub fn adam_step(state: &ServerState, grad: &ParamVector, cfg: &AdamConfig) -> Result<ServerState> {
    let t = state.t + 1;
    let corr1 = 1.0 - math::powi(cfg.beta1, t as i32);
    let corr2 = 1.0 - math::powi(cfg.beta2, t as i32);
    let (x, m, v) = moment_step(state, grad, cfg.beta1, cfg.beta2, cfg.lr, cfg.eps, corr1, corr2)?;
    Ok(ServerState {
        x,
        m,
        v,
        c_m: state.c_m,
        c_v: state.c_v,
        t,
    })
}

fn normalized_weights(p: &[f64], k: usize) -> Result<Vec<f64>> {
    if p.len() != k {
        return Err(Error::Shape {
            expected: k,
            found: p.len(),
        });
    }
    if p.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("client weights must be finite and non-negative"));
    }
    let total: f64 = p.iter().sum();
    if total < DEGENERACY_THRESHOLD {
        log::warn!("client weights sum to {total}; skipping update");
        return Err(Error::DegenerateWeights);
    }
    Ok(p.iter().map(|w| w / total).collect())
}

fn average_delta(deltas: &[&ParamVector], p: &[f64]) -> Result<ParamVector> {
    if deltas.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let w = normalized_weights(p, deltas.len())?;
    numerics::weighted_average(deltas, &w)
}

/// `x' = x + Σ p_k Δ_k / Σ p_k` (server learning rate 1).
pub fn fedavg_update(state: &ServerState, deltas: &[&ParamVector], p: &[f64]) -> Result<ServerState> {
    let avg = average_delta(deltas, p)?;
    Ok(state.with_x(state.x.add(&avg)?))
}

/// Adam on the pseudo-gradient `g = −Σ p_k Δ_k / Σ p_k`.
pub fn fedadam_update(state: &ServerState, deltas: &[&ParamVector], p: &[f64], cfg: &AdamConfig) -> Result<ServerState> {
    let g = average_delta(deltas, p)?.scale(-1.0)?;
    adam_step(state, &g, cfg)
}

/// Step-normalized averaging: `x' = x + τ_eff Σ p_k (Δ_k/τ_k) / Σ p_k` with
/// `τ_eff = Σ p_k τ_k / Σ p_k`.
pub fn fednova_aggregate(state: &ServerState, reports: &[LocalReport], p: &[f64]) -> Result<ServerState> {
    if reports.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let w = normalized_weights(p, reports.len())?;
    let mut tau_eff = 0.0;
    let mut dirs = Vec::with_capacity(reports.len());
    for (r, wk) in reports.iter().zip(&w) {
        if r.steps_taken == 0 {
            return Err(Error::invalid("fednova needs at least one local step per client"));
        }
        let tau = r.steps_taken as f64;
        tau_eff += wk * tau;
        dirs.push(r.delta.scale(1.0 / tau)?);
    }
    let refs: Vec<&ParamVector> = dirs.iter().collect();
    let d = numerics::weighted_average(&refs, &w)?;
    Ok(state.with_x(state.x.axpy(tau_eff, &d)?))
}

/// q-FedAvg with a fixed Lipschitz estimate.
///
/// Per client `Δ̃_k = −L Δ_k`, `Δq_k = F_k^q Δ̃_k` and
/// `h_k = q F_k^(q−1) ‖Δ̃_k‖² + L F_k^q`; the step is
/// `x' = x − lr · Σ p̂_k Δq_k / Σ p̂_k h_k`.
pub fn qfedavg_update(state: &ServerState, reports: &[LocalReport], p: &[f64], cfg: &QFedAvgConfig) -> Result<ServerState> {
    if reports.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    if !(cfg.q >= 0.0 && cfg.lipschitz > 0.0 && cfg.server_lr > 0.0) {
        return Err(Error::invalid("q-FedAvg needs q >= 0, L > 0, lr > 0"));
    }
    let w = normalized_weights(p, reports.len())?;
    let (q, l) = (cfg.q, cfg.lipschitz);
    let dim = state.x.dim();
    let mut num = vec![0.0; dim];
    let mut den = 0.0;
    for (r, wk) in reports.iter().zip(&w) {
        if r.delta.dim() != dim {
            return Err(Error::Shape {
                expected: dim,
                found: r.delta.dim(),
            });
        }
        let mut f = r.initial_loss;
        if q < 1.0 && f < DEGENERACY_THRESHOLD {
            log::warn!("q-FedAvg: clamping client loss {f} to {DEGENERACY_THRESHOLD}");
            f = DEGENERACY_THRESHOLD;
        }
        let fq = math::powf(f, q);
        let scaled_norm_sq = {
            let n = l * r.delta.l2_norm();
            n * n
        };
        for (a, dk) in num.iter_mut().zip(r.delta.iter()) {
            *a += wk * fq * (-l * dk);
        }
        den += wk * (q * math::powf(f, q - 1.0) * scaled_norm_sq + l * fq);
    }
    if !(den >= DEGENERACY_THRESHOLD) {
        log::warn!("q-FedAvg denominator {den} is degenerate; skipping update");
        return Err(Error::DegenerateWeights);
    }
    let step: Vec<f64> = num.iter().map(|a| -cfg.server_lr * a / den).collect();
    let step = ParamVector::new(step)?;
    Ok(state.with_x(state.x.add(&step)?))
}

/// One FedOpt round: dispatches to the configured server rule.
pub fn fedopt_round(state: &ServerState, reports: &[LocalReport], p: &[f64], algo: &ServerAlgorithm) -> Result<ServerState> {
    if reports.is_empty() {
        return Err(Error::Empty("client reports"));
    }
    let deltas: Vec<&ParamVector> = reports.iter().map(|r| &r.delta).collect();
    match algo {
        ServerAlgorithm::FedAvg => fedavg_update(state, &deltas, p),
        ServerAlgorithm::FedAdam(cfg) => fedadam_update(state, &deltas, p, cfg),
        ServerAlgorithm::FedNova => fednova_aggregate(state, reports, p),
        ServerAlgorithm::QFedAvg(cfg) => qfedavg_update(state, reports, p, cfg),
    }
}

/// Result of one accumulated-Adam step with its alignment diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AccAdamStep {
    pub state: ServerState,
    /// `min_i |Δ_i / ∇_i|` over coordinates with `|∇_i| > 1e-12`.
    pub r_t: Option<f64>,
    /// `‖Δ‖ / ‖∇f(x)‖`.
    pub p_n: Option<f64>,
    /// `Σ ‖x_{n+1} − x_n‖` over the inner SGD path.
    pub path_length: f64,
    pub grad_evals: usize,
}

/// Adam driven by `Δ = (x − SGD_N(x)) / η_s`, the displacement of `n_steps`
/// full-gradient SGD steps at rate `inner_lr` divided by that rate.
pub fn accadam_step(
    state: &ServerState,
    objective: &dyn Objective,
    n_steps: usize,
    inner_lr: f64,
    cfg: &AdamConfig,
) -> Result<AccAdamStep> {
    if n_steps == 0 || !(inner_lr > 0.0) {
        return Err(Error::invalid("accumulated adam needs n_steps >= 1 and inner_lr > 0"));
    }
    let dim = state.x.dim();
    if objective.dim() != dim {
        return Err(Error::Shape {
            expected: dim,
            found: objective.dim(),
        });
    }
    let x0 = state.x.as_slice();
    let mut cur = x0.to_vec();
    let mut g = vec![0.0; dim];
    let mut first_grad = Vec::new();
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(cur.clone());
    for n in 0..n_steps {
        objective.gradient(&cur, &mut g);
        if n == 0 {
            first_grad = g.clone();
        }
        for (c, gi) in cur.iter_mut().zip(&g) {
            *c -= inner_lr * gi;
        }
        path.push(cur.clone());
    }
    let delta: Vec<f64> = x0.iter().zip(&cur).map(|(a, b)| (a - b) / inner_lr).collect();
    let delta = ParamVector::new(delta)?;
    let true_grad = ParamVector::new(first_grad)?;
    let diag = metrics::convergence_diagnostics(&delta, &true_grad, &path)?;
    let next = adam_step(state, &delta, cfg)?;
    Ok(AccAdamStep {
        state: next,
        r_t: diag.r_t,
        p_n: diag.p_n,
        path_length: diag.path_length,
        grad_evals: n_steps,
    })
}
