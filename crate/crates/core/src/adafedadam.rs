//! Certainty-adapted federated Adam with fairness weighting.
//!
//! Each participating client turns its local displacement `Δ_k` into a
//! normalized update `U_k = −Δ_k / η'_k`, where `η'_k = ‖Δ_k‖ / ‖∇F_k(x)‖`
//! is the step length that would produce `Δ_k` from one gradient step. The
//! ratio of `η'_k` to the client's own learning rate gives its certainty
//! `C_k = ln(η'_k / η_k) + 1`. Clients are weighted by `S_k · I_k^α`, with
//! `I_k = F_k(x^t) / F_k(x^0)` the inverse training rate, so lagging clients
//! pull harder as `α` grows.
//!
//! The server runs Adam with `β_{t,i} = β_i^C`, stepsize `C·η` and bias
//! correction through running products of the effective betas, where `C` is
//! the aggregate certainty clamped below at `c_floor`.

use alloc::vec::Vec;

use crate::data::ClientDataset;
use crate::local_solver::{self, LocalReport, LocalSolverConfig};
use crate::math;
use crate::metrics::{self, RoundMetrics};
use crate::models::ModelSpec;
use crate::numerics::{self, ParamVector};
use crate::server_opt::{moment_step, AdamConfig, ServerState};
use crate::{Error, Result};

/// How the aggregate certainty is formed and turned into a stepsize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CertaintyMode {
    /// `C = Σ w_k C_k / Σ w_k`, stepsize `C·η`.
    #[default]
    WeightedMean,
    /// `C = √(Σ w_k C_k / Σ w_k)`, stepsize `(ln C + 1)·η`. The betas still
    /// adapt as `β^C`.
    RootMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessConfig {
    pub alpha: f64,
    /// Inverse training rates are clamped to `[i_floor, 1/i_floor]`.
    pub i_floor: f64,
    /// Lower clamp applied to the aggregate certainty before adaptation.
    pub c_floor: f64,
    pub mode: CertaintyMode,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            i_floor: 1e-6,
            c_floor: 1.0,
            mode: CertaintyMode::WeightedMean,
        }
    }
}

impl FairnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be finite and non-negative"));
        }
        if !(self.i_floor > 0.0 && self.i_floor < 1.0) {
            return Err(Error::invalid("i_floor must lie in (0, 1)"));
        }
        if !self.c_floor.is_finite() {
            return Err(Error::invalid("c_floor must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Normalized update with `‖U_k‖ = ‖∇F_k(x)‖`.
    pub u: ParamVector,
    pub certainty: f64,
    pub inverse_rate: f64,
    /// Sample weight `S_k` (train-set size).
    pub weight: f64,
    /// True when `inverse_rate` was clamped.
    pub clamped: bool,
}

pub fn make_client_update(
    client_id: usize,
    report: &LocalReport,
    initial_loss_x0: f64,
    local_lr: f64,
    weight: f64,
    i_floor: f64,
) -> Result<ClientUpdate> {
    if !(local_lr > 0.0) || !(weight > 0.0) {
        return Err(Error::invalid("local lr and sample weight must be positive"));
    }
    let grad_norm = report.initial_grad.l2_norm();
    let delta_norm = report.delta.l2_norm();
    if grad_norm == 0.0 || delta_norm == 0.0 {
        log::info!("client {client_id} excluded: zero gradient or zero update");
        return Err(Error::ClientConverged);
    }
    let eta_prime = delta_norm / grad_norm;
    let u = report.delta.scale(-1.0 / eta_prime)?;
    let certainty = math::ln(eta_prime / local_lr) + 1.0;
    if !certainty.is_finite() {
        return Err(Error::NonFinite("client certainty"));
    }
    let raw_rate = if initial_loss_x0 > 0.0 {
        report.initial_loss / initial_loss_x0
    } else {
        f64::INFINITY
    };
    let (lo, hi) = (i_floor, 1.0 / i_floor);
    let inverse_rate = raw_rate.clamp(lo, hi);
    let clamped = inverse_rate != raw_rate;
    if clamped {
        log::debug!("client {client_id}: inverse training rate {raw_rate} clamped to {inverse_rate}");
    }
    Ok(ClientUpdate {
        client_id,
        u,
        certainty,
        inverse_rate,
        weight,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoGradient {
    pub g: ParamVector,
    /// Aggregate certainty before clamping.
    pub certainty: f64,
}

/// Fairness weights `S_k · I_k^α`. Falls back to log-space evaluation,
/// normalized by the largest log-weight, when the direct powers overflow or
/// underflow.
pub fn fairness_weights(updates: &[ClientUpdate], alpha: f64) -> Vec<f64> {
    let direct: Vec<f64> = updates
        .iter()
        .map(|u| u.weight * math::powf(u.inverse_rate, alpha))
        .collect();
    let total: f64 = direct.iter().sum();
    if total.is_finite() && total > 0.0 && direct.iter().all(|w| w.is_finite()) {
        return direct;
    }
    let logs: Vec<f64> = updates
        .iter()
        .map(|u| math::ln(u.weight) + alpha * math::ln(u.inverse_rate))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.iter().map(|l| math::exp(l - max)).collect()
}

pub fn aggregate_pseudo_gradient(updates: &[ClientUpdate], alpha: f64, mode: CertaintyMode) -> Result<PseudoGradient> {
    if updates.is_empty() {
        return Err(Error::RoundSkipped("no client contributed an update"));
    }
    let w = fairness_weights(updates, alpha);
    let us: Vec<&ParamVector> = updates.iter().map(|u| &u.u).collect();
    let g = numerics::weighted_average(&us, &w)?;
    let cs: Vec<f64> = updates.iter().map(|u| u.certainty).collect();
    let mean_c = numerics::weighted_mean(&cs, &w)?;
    let certainty = match mode {
        CertaintyMode::WeightedMean => mean_c,
        // A negative mean has no real root; it is clamped downstream anyway.
        CertaintyMode::RootMean => math::sqrt(mean_c.max(0.0)),
    };
    Ok(PseudoGradient { g, certainty })
}

/// Clamps the aggregate certainty at the configured floor.
pub fn used_certainty(raw: f64, fairness: &FairnessConfig) -> f64 {
    raw.max(fairness.c_floor)
}

/// One certainty-adapted Adam step with running bias-correction products.
pub fn adafedadam_step(
    state: &ServerState,
    g: &ParamVector,
    certainty: f64,
    cfg: &AdamConfig,
    mode: CertaintyMode,
) -> Result<ServerState> {
    if !certainty.is_finite() {
        return Err(Error::NonFinite("certainty"));
    }
    let b1 = math::powf(cfg.beta1, certainty);
    let b2 = math::powf(cfg.beta2, certainty);
    let lr = match mode {
        CertaintyMode::WeightedMean => certainty * cfg.lr,
        CertaintyMode::RootMean => (math::ln(certainty) + 1.0) * cfg.lr,
    };
    if !(lr > 0.0) {
        return Err(Error::RoundSkipped("non-positive adapted stepsize"));
    }
    let c_m = state.c_m * b1;
    let c_v = state.c_v * b2;
    let (corr1, corr2) = (1.0 - c_m, 1.0 - c_v);
    if !(corr1 > 0.0 && corr2 > 0.0) {
        return Err(Error::RoundSkipped("bias-correction factor reached 1"));
    }
    let (x, m, v) = moment_step(state, g, b1, b2, lr, cfg.eps, corr1, corr2)?;
    Ok(ServerState {
        x,
        m,
        v,
        c_m,
        c_v,
        t: state.t + 1,
    })
}

/// Per-client state the server keeps across rounds: the loss recorded at
/// each client's first participation.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLosses(Vec<Option<f64>>);

impl InitialLosses {
    pub fn new(num_clients: usize) -> Self {
        Self(alloc::vec![None; num_clients])
    }

    pub fn get(&self, client: usize) -> Option<f64> {
        self.0.get(client).copied().flatten()
    }

    /// Records `loss` if this is the client's first participation and
    /// returns the stored value.
    pub fn capture(&mut self, client: usize, loss: f64) -> f64 {
        *self.0[client].get_or_insert(loss)
    }
}

/// Everything one AdaFedAdam round needs besides the server state.
#[derive(Debug, Clone, Copy)]
pub struct RoundInputs<'a> {
    pub spec: &'a ModelSpec,
    pub clients: &'a [ClientDataset],
    pub participants: &'a [usize],
    /// Solver configuration per participant (epochs and shuffle seed vary).
    pub solver_cfgs: &'a [LocalSolverConfig],
    pub fairness: &'a FairnessConfig,
    pub adam: &'a AdamConfig,
    pub round: usize,
}

/// Client reports plus the server-side outcome of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub reports: Vec<LocalReport>,
    pub c_raw: Option<f64>,
    pub c_used: Option<f64>,
    pub r_t: Option<f64>,
    pub inverse_rates: Vec<f64>,
    pub skipped: bool,
}

/// Broadcast, local training, normalization, aggregation and the adapted
/// Adam step. A round where every client is excluded leaves the state as is.
pub fn run_round(
    state: &ServerState,
    initial: &mut InitialLosses,
    inputs: &RoundInputs<'_>,
) -> Result<(ServerState, RoundOutcome)> {
    inputs.fairness.validate()?;
    if inputs.participants.len() != inputs.solver_cfgs.len() {
        return Err(Error::Shape {
            expected: inputs.participants.len(),
            found: inputs.solver_cfgs.len(),
        });
    }
    let mut reports = Vec::with_capacity(inputs.participants.len());
    let mut updates = Vec::with_capacity(inputs.participants.len());
    for (&k, cfg) in inputs.participants.iter().zip(inputs.solver_cfgs) {
        let data = inputs
            .clients
            .get(k)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown client {k}")))?;
        let report = local_solver::run_local(inputs.spec, &state.x, data, cfg)?;
        let f0 = initial.capture(k, report.initial_loss);
        match make_client_update(k, &report, f0, cfg.lr, data.size() as f64, inputs.fairness.i_floor) {
            Ok(u) => updates.push(u),
            Err(Error::ClientConverged) => {}
            Err(e) => return Err(e),
        }
        reports.push(report);
    }

    let inverse_rates = updates.iter().map(|u| u.inverse_rate).collect();
    let pg = match aggregate_pseudo_gradient(&updates, inputs.fairness.alpha, inputs.fairness.mode) {
        Ok(pg) => pg,
        Err(Error::RoundSkipped(why)) => {
            log::warn!("round {} skipped: {why}", inputs.round);
            return Ok((state.clone(), skipped_outcome(reports, inverse_rates)));
        }
        Err(e) => return Err(e),
    };
    let c_used = used_certainty(pg.certainty, inputs.fairness);
    if pg.certainty < c_used {
        log::debug!("round {}: certainty {} clamped to {c_used}", inputs.round, pg.certainty);
    }
    assert!(c_used >= inputs.fairness.c_floor, "certainty below floor on a step");

    // Full-batch global gradient over participants, weighted by size.
    let grads: Vec<&ParamVector> = reports.iter().map(|r| &r.initial_grad).collect();
    let sizes: Vec<f64> = inputs
        .participants
        .iter()
        .map(|&k| inputs.clients[k].size() as f64)
        .collect();
    let global_grad = numerics::weighted_average(&grads, &sizes)?;
    let r_t = metrics::alignment_ratio(&pg.g, &global_grad)?;

    let next = match adafedadam_step(state, &pg.g, c_used, inputs.adam, inputs.fairness.mode) {
        Ok(s) => s,
        Err(Error::RoundSkipped(why)) => {
            log::warn!("round {} skipped: {why}", inputs.round);
            return Ok((state.clone(), skipped_outcome(reports, inverse_rates)));
        }
        Err(e) => return Err(e),
    };
    Ok((
        next,
        RoundOutcome {
            reports,
            c_raw: Some(pg.certainty),
            c_used: Some(c_used),
            r_t,
            inverse_rates,
            skipped: false,
        },
    ))
}

fn skipped_outcome(reports: Vec<LocalReport>, inverse_rates: Vec<f64>) -> RoundOutcome {
    RoundOutcome {
        reports,
        c_raw: None,
        c_used: None,
        r_t: None,
        inverse_rates,
        skipped: true,
    }
}

/// [`run_round`] followed by a metrics snapshot of the new model.
pub fn run_adafedadam_round(
    state: &ServerState,
    initial: &mut InitialLosses,
    inputs: &RoundInputs<'_>,
) -> Result<(ServerState, RoundMetrics)> {
    let (next, outcome) = run_round(state, initial, inputs)?;
    let mut m = metrics::snapshot(inputs.round, inputs.spec, &next.x, inputs.clients)?;
    m.c_raw = outcome.c_raw;
    m.c_used = outcome.c_used;
    m.r_t = outcome.r_t;
    m.inverse_rates = outcome.inverse_rates;
    m.participants = inputs.participants.to_vec();
    m.epochs = inputs.solver_cfgs.iter().map(|c| c.epochs).collect();
    m.skipped = outcome.skipped;
    Ok((next, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::server_opt::adam_step;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn report(delta: &[f64], grad: &[f64], loss: f64) -> LocalReport {
        LocalReport {
            delta: pv(delta),
            initial_loss: loss,
            initial_grad: pv(grad),
            steps_taken: 1,
        }
    }

    fn update(u: f64, c: f64, i: f64, s: f64) -> ClientUpdate {
        ClientUpdate {
            client_id: 0,
            u: pv(&[u]),
            certainty: c,
            inverse_rate: i,
            weight: s,
            clamped: false,
        }
    }

    #[test]
    fn single_gradient_step_has_unit_certainty() {
        let grad = [0.3, -1.2, 0.5];
        let eta = 0.01;
        let delta: Vec<f64> = grad.iter().map(|g| -eta * g).collect();
        let u = make_client_update(0, &report(&delta, &grad, 2.0), 2.0, eta, 10.0, 1e-6).unwrap();
        assert!(u.u.max_abs_diff(&pv(&grad)).unwrap() < 1e-14);
        assert!(math::abs(u.certainty - 1.0) < 1e-12);
        assert_eq!(u.inverse_rate, 1.0);
    }

    #[test]
    fn doubling_delta_adds_ln2_certainty() {
        let grad = [1.0, 2.0];
        let d1 = [-0.05, 0.02];
        let d2 = [-0.1, 0.04];
        let a = make_client_update(0, &report(&d1, &grad, 1.0), 1.0, 0.01, 1.0, 1e-6).unwrap();
        let b = make_client_update(0, &report(&d2, &grad, 1.0), 1.0, 0.01, 1.0, 1e-6).unwrap();
        assert!(a.u.max_abs_diff(&b.u).unwrap() < 1e-14);
        assert!(math::abs(b.certainty - a.certainty - math::ln(2.0)) < 1e-12);
        // ‖U‖ matches ‖∇F‖
        assert!(math::abs(a.u.l2_norm() - pv(&grad).l2_norm()) < 1e-9 * pv(&grad).l2_norm());
    }

    #[test]
    fn zero_gradient_or_update_excludes_client() {
        let r = report(&[0.0, 0.0], &[1.0, 1.0], 1.0);
        assert_eq!(make_client_update(0, &r, 1.0, 0.01, 1.0, 1e-6), Err(Error::ClientConverged));
        let r = report(&[0.1, 0.0], &[0.0, 0.0], 1.0);
        assert_eq!(make_client_update(0, &r, 1.0, 0.01, 1.0, 1e-6), Err(Error::ClientConverged));
    }

    #[test]
    fn inverse_rate_is_clamped() {
        let r = report(&[0.1], &[1.0], 1e-9);
        let u = make_client_update(0, &r, 1.0, 0.01, 1.0, 1e-6).unwrap();
        assert_eq!(u.inverse_rate, 1e-6);
        assert!(u.clamped);
        let u = make_client_update(0, &report(&[0.1], &[1.0], 1.0), 0.0, 0.01, 1.0, 1e-6).unwrap();
        assert_eq!(u.inverse_rate, 1e6);
    }

    #[test]
    fn hand_computed_three_client_aggregate() {
        // S=(1,1,2), I=(1,2,1), α=1, U=(1,2,3) → g = 11/5; C=(1,2,4) → 13/5
        let ups = [update(1.0, 1.0, 1.0, 1.0), update(2.0, 2.0, 2.0, 1.0), update(3.0, 4.0, 1.0, 2.0)];
        let pg = aggregate_pseudo_gradient(&ups, 1.0, CertaintyMode::WeightedMean).unwrap();
        assert!(math::abs(pg.g[0] - 11.0 / 5.0) < 1e-15);
        assert!(math::abs(pg.certainty - 13.0 / 5.0) < 1e-15);
        let root = aggregate_pseudo_gradient(&ups, 1.0, CertaintyMode::RootMean).unwrap();
        assert!(math::abs(root.certainty - math::sqrt(13.0 / 5.0)) < 1e-15);
    }

    #[test]
    fn zero_alpha_is_size_weighted_mean() {
        let ups = [update(1.0, 1.0, 3.0, 2.0), update(4.0, 1.0, 0.5, 6.0)];
        let pg = aggregate_pseudo_gradient(&ups, 0.0, CertaintyMode::WeightedMean).unwrap();
        let want = numerics::weighted_average(&[&ups[0].u, &ups[1].u], &[2.0, 6.0]).unwrap();
        assert_eq!(pg.g, want);
    }

    #[test]
    fn huge_alpha_selects_lagging_client() {
        let ups = [update(1.0, 1.0, 2.0, 1.0), update(-5.0, 1.0, 1.0, 100.0)];
        let pg = aggregate_pseudo_gradient(&ups, 1e6, CertaintyMode::WeightedMean).unwrap();
        assert!(math::abs(pg.g[0] - 1.0) < 1e-6);
    }

    #[test]
    fn no_updates_skip_the_round() {
        assert!(matches!(
            aggregate_pseudo_gradient(&[], 1.0, CertaintyMode::WeightedMean),
            Err(Error::RoundSkipped(_))
        ));
    }

    #[test]
    fn certainty_two_first_round_arithmetic() {
        let cfg = AdamConfig::default();
        let s = ServerState::new(pv(&[0.0, 0.0]));
        let g = pv(&[0.4, -0.1]);
        let next = adafedadam_step(&s, &g, 2.0, &cfg, CertaintyMode::WeightedMean).unwrap();
        assert!(math::abs(next.c_m - 0.81) < 1e-15);
        // m̂ = 0.19 g / 0.19 = g
        let m_hat = next.m.scale(1.0 / (1.0 - next.c_m)).unwrap();
        assert!(m_hat.max_abs_diff(&g).unwrap() < 1e-15);
    }

    #[test]
    fn zero_pseudo_gradient_only_decays_moments() {
        let cfg = AdamConfig::default();
        let mut s = ServerState::new(pv(&[1.0, -1.0]));
        s.m = pv(&[0.2, 0.1]);
        s.v = pv(&[0.04, 0.01]);
        let next = adafedadam_step(&s, &ParamVector::zeros(2), 1.5, &cfg, CertaintyMode::WeightedMean).unwrap();
        let b1 = math::powf(0.9, 1.5);
        assert!(math::abs(next.m[0] - 0.2 * b1) < 1e-16);
        // non-zero momentum still moves x; with m = 0 too it stays
        let fresh = ServerState::new(pv(&[1.0, -1.0]));
        let still = adafedadam_step(&fresh, &ParamVector::zeros(2), 1.5, &cfg, CertaintyMode::WeightedMean).unwrap();
        assert_eq!(still.x, fresh.x);
    }

    #[test]
    fn unit_certainty_reproduces_adam() {
        let cfg = AdamConfig::default();
        let mut a = ServerState::new(pv(&[0.5, -0.3, 0.1]));
        let mut b = a.clone();
        let mut rng = crate::rng::from_seed(3);
        use rand::Rng;
        for t in 1..=1000 {
            let g = pv(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            a = adafedadam_step(&a, &g, 1.0, &cfg, CertaintyMode::WeightedMean).unwrap();
            b = adam_step(&b, &g, &cfg).unwrap();
            assert!(math::abs(a.c_m - math::powi(0.9, t)) < 1e-12);
            assert!(math::abs(a.c_v - math::powi(0.999, t)) < 1e-12);
        }
        assert!(a.x.max_abs_diff(&b.x).unwrap() < 1e-12);
    }

    #[test]
    fn constant_certainty_correction_identity() {
        let cfg = AdamConfig::default();
        let mut s = ServerState::new(pv(&[0.0]));
        let c = 2.7;
        for t in 1..=200 {
            s = adafedadam_step(&s, &pv(&[0.1]), c, &cfg, CertaintyMode::WeightedMean).unwrap();
            assert!(math::abs(s.c_m - math::powf(0.9, c * t as f64)) < 1e-12);
        }
    }

    #[test]
    fn initial_loss_is_captured_once() {
        let mut init = InitialLosses::new(3);
        assert_eq!(init.capture(1, 2.5), 2.5);
        assert_eq!(init.capture(1, 0.7), 2.5);
        assert_eq!(init.get(0), None);
    }

    proptest! {
        #[test]
        fn common_delta_scale_keeps_u_and_shifts_certainty(
            grads in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 2..5),
            deltas in proptest::collection::vec(proptest::collection::vec(-0.5f64..0.5, 3), 5),
            c in 0.1f64..10.0,
        ) {
            for (g, d) in grads.iter().zip(&deltas) {
                prop_assume!(pv(g).l2_norm() > 1e-6 && pv(d).l2_norm() > 1e-6);
                let base = make_client_update(0, &report(d, g, 1.0), 1.0, 0.01, 1.0, 1e-6).unwrap();
                let ds: Vec<f64> = d.iter().map(|x| x * c).collect();
                let scaled = make_client_update(0, &report(&ds, g, 1.0), 1.0, 0.01, 1.0, 1e-6).unwrap();
                prop_assert!(base.u.max_abs_diff(&scaled.u).unwrap() < 1e-12);
                prop_assert!(math::abs(scaled.certainty - base.certainty - math::ln(c)) < 1e-9);
            }
        }

        #[test]
        fn size_scale_leaves_aggregate_unchanged(
            rows in proptest::collection::vec((-3.0f64..3.0, 0.0f64..3.0, 0.1f64..3.0, 1.0f64..100.0), 1..6),
            alpha in 0.0f64..4.0,
            c in 0.01f64..100.0,
        ) {
            let a: Vec<ClientUpdate> = rows.iter().map(|&(u, cc, i, s)| update(u, cc, i, s)).collect();
            let b: Vec<ClientUpdate> = rows.iter().map(|&(u, cc, i, s)| update(u, cc, i, s * c)).collect();
            let pa = aggregate_pseudo_gradient(&a, alpha, CertaintyMode::WeightedMean).unwrap();
            let pb = aggregate_pseudo_gradient(&b, alpha, CertaintyMode::WeightedMean).unwrap();
            prop_assert!(math::abs(pa.g[0] - pb.g[0]) < 1e-12 * f64::max(1.0, math::abs(pa.g[0])));
            prop_assert!(math::abs(pa.certainty - pb.certainty) < 1e-12 * f64::max(1.0, math::abs(pa.certainty)));
        }
    }
}
