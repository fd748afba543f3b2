//! Round orchestration shared by every server algorithm.
//!
//! A round is planned first ([`plan_round`]): which clients participate and
//! how many local epochs each runs. Both draws come from named streams of
//! the root seed, so a plan can be rebuilt for any round in isolation.

use alloc::vec::Vec;
use rand::Rng;

use crate::adafedadam::{self, FairnessConfig, InitialLosses, RoundInputs};
use crate::data::ClientDataset;
use crate::local_solver::{self, LocalReport, LocalSolverConfig};
use crate::metrics::{self, RoundMetrics};
use crate::models::ModelSpec;
use crate::numerics::{self, ParamVector};
use crate::rng::{self, keys};
use crate::server_opt::{self, AdamConfig, ServerAlgorithm, ServerState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Baseline(ServerAlgorithm),
    AdaFedAdam { adam: AdamConfig, fairness: FairnessConfig },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Baseline(ServerAlgorithm::FedAvg) => "fedavg",
            Algorithm::Baseline(ServerAlgorithm::FedAdam(_)) => "fedadam",
            Algorithm::Baseline(ServerAlgorithm::FedNova) => "fednova",
            Algorithm::Baseline(ServerAlgorithm::QFedAvg(_)) => "qfedavg",
            Algorithm::AdaFedAdam { .. } => "adafedadam",
        }
    }
}

/// Local epochs per participant per round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochSchedule {
    Fixed(usize),
    /// Uniform over the integers `lo..=hi`.
    UniformInt { lo: usize, hi: usize },
}

impl EpochSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EpochSchedule::Fixed(e) if e >= 1 => Ok(()),
            EpochSchedule::UniformInt { lo, hi } if 1 <= lo && lo <= hi => Ok(()),
            _ => Err(Error::invalid("epoch schedule needs 1 <= lo <= hi")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: usize,
    /// Ascending client ids.
    pub participants: Vec<usize>,
    pub epochs: Vec<usize>,
}

/// Number of clients sampled per round: `max(1, round(fraction · K))`.
pub fn participants_per_round(num_clients: usize, fraction: f64) -> usize {
    let m = crate::math::floor(fraction * num_clients as f64 + 0.5) as usize;
    m.clamp(1, num_clients)
}

pub fn plan_round(
    root_seed: u64,
    round: usize,
    num_clients: usize,
    fraction: f64,
    schedule: &EpochSchedule,
) -> Result<RoundPlan> {
    if num_clients == 0 {
        return Err(Error::Empty("clients"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("participation fraction must lie in (0, 1]"));
    }
    schedule.validate()?;
    let m = participants_per_round(num_clients, fraction);
    let participants = if m == num_clients {
        (0..num_clients).collect()
    } else {
        let mut r = rng::stream(root_seed, &keys::participation(round));
        let mut picked = rand::seq::index::sample(&mut r, num_clients, m).into_vec();
        picked.sort_unstable();
        picked
    };
    let epochs = match *schedule {
        EpochSchedule::Fixed(e) => alloc::vec![e; participants.len()],
        EpochSchedule::UniformInt { lo, hi } => {
            let mut r = rng::stream(root_seed, &keys::epoch_draw(round));
            participants.iter().map(|_| r.random_range(lo..=hi)).collect()
        }
    };
    Ok(RoundPlan {
        round,
        participants,
        epochs,
    })
}

/// Model initialization from the seed's `init` stream.
pub fn initial_model(spec: &ModelSpec, root_seed: u64) -> ParamVector {
    spec.init_params(&mut rng::stream(root_seed, keys::INIT))
}

#[derive(Debug, Clone)]
pub struct Federation {
    pub spec: ModelSpec,
    pub algorithm: Algorithm,
    /// Template for the local solver; epochs and shuffle seed are set per
    /// client per round.
    pub local: LocalSolverConfig,
    pub root_seed: u64,
    pub state: ServerState,
    initial: InitialLosses,
    grad_evals: u64,
}

impl Federation {
    pub fn new(
        spec: ModelSpec,
        algorithm: Algorithm,
        local: LocalSolverConfig,
        root_seed: u64,
        x0: ParamVector,
        num_clients: usize,
    ) -> Result<Self> {
        spec.validate()?;
        local.validate()?;
        if x0.dim() != spec.num_params() {
            return Err(Error::Shape {
                expected: spec.num_params(),
                found: x0.dim(),
            });
        }
        match &algorithm {
            Algorithm::Baseline(ServerAlgorithm::FedAdam(a)) => a.validate()?,
            Algorithm::AdaFedAdam { adam, fairness } => {
                adam.validate()?;
                fairness.validate()?;
            }
            _ => {}
        }
        Ok(Self {
            spec,
            algorithm,
            local,
            root_seed,
            state: ServerState::new(x0),
            initial: InitialLosses::new(num_clients),
            grad_evals: 0,
        })
    }

    /// Minibatch gradient evaluations plus one full-train-set evaluation per
    /// participant per round, summed over all rounds so far.
    pub fn grad_evals(&self) -> u64 {
        self.grad_evals
    }

    pub fn solver_configs(&self, plan: &RoundPlan) -> Vec<LocalSolverConfig> {
        plan.participants
            .iter()
            .zip(&plan.epochs)
            .map(|(&k, &e)| LocalSolverConfig {
                epochs: e,
                shuffle_seed: rng::stream_seed(self.root_seed, &keys::shuffle(k, plan.round)),
                ..self.local
            })
            .collect()
    }

    pub fn run_round(&mut self, clients: &[ClientDataset], plan: &RoundPlan) -> Result<RoundMetrics> {
        if plan.participants.len() != plan.epochs.len() {
            return Err(Error::Shape {
                expected: plan.participants.len(),
                found: plan.epochs.len(),
            });
        }
        let cfgs = self.solver_configs(plan);
        for (&k, c) in plan.participants.iter().zip(&cfgs) {
            let n = clients.get(k).map_or(0, |d| d.train.len());
            self.grad_evals += c.steps_for(n) as u64 + 1;
        }
        let metrics = match self.algorithm {
            Algorithm::AdaFedAdam { adam, fairness } => {
                let inputs = RoundInputs {
                    spec: &self.spec,
                    clients,
                    participants: &plan.participants,
                    solver_cfgs: &cfgs,
                    fairness: &fairness,
                    adam: &adam,
                    round: plan.round,
                };
                let (next, m) = adafedadam::run_adafedadam_round(&self.state, &mut self.initial, &inputs)?;
                self.state = next;
                m
            }
            Algorithm::Baseline(algo) => self.baseline_round(clients, plan, &cfgs, &algo)?,
        };
        Ok(metrics)
    }

    fn baseline_round(
        &mut self,
        clients: &[ClientDataset],
        plan: &RoundPlan,
        cfgs: &[LocalSolverConfig],
        algo: &ServerAlgorithm,
    ) -> Result<RoundMetrics> {
        let mut reports: Vec<LocalReport> = Vec::with_capacity(cfgs.len());
        let mut sizes = Vec::with_capacity(cfgs.len());
        for (&k, cfg) in plan.participants.iter().zip(cfgs) {
            let data = clients
                .get(k)
                .ok_or_else(|| Error::invalid(alloc::format!("unknown client {k}")))?;
            let report = local_solver::run_local(&self.spec, &self.state.x, data, cfg)?;
            // keeps inverse-rate columns comparable across algorithms
            self.initial.capture(k, report.initial_loss);
            reports.push(report);
            sizes.push(data.size() as f64);
        }
        let rates: Vec<f64> = plan
            .participants
            .iter()
            .zip(&reports)
            .filter_map(|(&k, r)| self.initial.get(k).filter(|f0| *f0 > 0.0).map(|f0| r.initial_loss / f0))
            .collect();
        let skipped = match server_opt::fedopt_round(&self.state, &reports, &sizes, algo) {
            Ok(next) => {
                self.state = next;
                false
            }
            Err(Error::DegenerateWeights) => {
                log::warn!("round {} skipped: degenerate aggregation weights", plan.round);
                true
            }
            Err(e) => return Err(e),
        };
        let mut m = metrics::snapshot(plan.round, &self.spec, &self.state.x, clients)?;
        if !skipped {
            let grads: Vec<&ParamVector> = reports.iter().map(|r| &r.initial_grad).collect();
            let deltas: Vec<&ParamVector> = reports.iter().map(|r| &r.delta).collect();
            let global = numerics::weighted_average(&grads, &sizes)?;
            let direction = numerics::weighted_average(&deltas, &sizes)?.scale(-1.0)?;
            m.r_t = metrics::alignment_ratio(&direction, &global)?;
        }
        m.inverse_rates = rates;
        m.participants = plan.participants.clone();
        m.epochs = plan.epochs.clone();
        m.skipped = skipped;
        Ok(m)
    }
}
