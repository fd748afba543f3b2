//! Convergence diagnostics.
//!
//! Two families of series: N-step accumulated Adam on a diagonal convex
//! quadratic (alignment `R_t`, `P_N`, inner path length, loss per Adam
//! step), and AdaFedAdam on the configured federation (certainty and
//! alignment per round).

use std::fs;
use std::path::Path;

use fairfed_core::metrics;
use fairfed_core::objective::{DiagonalQuadratic, Objective};
use fairfed_core::server_opt::{self, AdamConfig, ServerState};
use fairfed_core::ParamVector;
use serde::Serialize;

use crate::config::{AlgorithmName, ExperimentConfig};
use crate::harness;
use crate::output;

/// Curvatures spread geometrically over `[0.1, 1]`, so the smoothness
/// constant is 1; the optimum alternates in sign with growing magnitude.
pub fn test_quadratic(dim: usize) -> DiagonalQuadratic {
    let curvature = (0..dim)
        .map(|i| {
            let t = if dim == 1 { 1.0 } else { i as f64 / (dim - 1) as f64 };
            0.1f64.powf(1.0 - t)
        })
        .collect();
    let optimum = (0..dim)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 / dim as f64))
        .collect();
    DiagonalQuadratic::new(curvature, optimum).expect("valid quadratic")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccAdamRow {
    pub n: usize,
    pub step: usize,
    pub loss: f64,
    pub r_t: Option<f64>,
    pub p_n: Option<f64>,
    pub path_length: f64,
    pub grad_evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccAdamTrace {
    pub n: usize,
    pub initial_loss: f64,
    pub rows: Vec<AccAdamRow>,
}

impl AccAdamTrace {
    /// First Adam step at which the loss is at most `fraction` of the
    /// initial loss.
    pub fn steps_to(&self, fraction: f64) -> Option<usize> {
        let target = fraction * self.initial_loss;
        self.rows.iter().find(|r| r.loss <= target).map(|r| r.step)
    }
}

pub fn accadam_trace(
    objective: &dyn Objective,
    x0: ParamVector,
    n: usize,
    adam_steps: usize,
    inner_lr: f64,
    cfg: &AdamConfig,
) -> fairfed_core::Result<AccAdamTrace> {
    let initial_loss = objective.value(x0.as_slice());
    let mut state = ServerState::new(x0);
    let mut rows = Vec::with_capacity(adam_steps);
    let mut evals = 0;
    for step in 1..=adam_steps {
        let out = server_opt::accadam_step(&state, objective, n, inner_lr, cfg)?;
        evals += out.grad_evals;
        state = out.state;
        rows.push(AccAdamRow {
            n,
            step,
            loss: objective.value(state.x.as_slice()),
            r_t: out.r_t,
            p_n: out.p_n,
            path_length: out.path_length,
            grad_evals: evals,
        });
    }
    Ok(AccAdamTrace { n, initial_loss, rows })
}

/// Loss reduction the speedup table measures progress against.
pub const TARGET_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub n: usize,
    pub steps_to_target: Option<usize>,
    /// Adam steps of the `N = 1` run over those of this run.
    pub speedup: Option<f64>,
    /// Inverse of gradient evaluations spent to reach the target.
    pub progress_per_eval: Option<f64>,
    /// `S(N, c)` with `c = inner_lr · min curvature` and `c = inner_lr · L`.
    pub s_factor_min_curv: f64,
    pub s_factor_max_curv: f64,
}

pub fn speedup_table(traces: &[AccAdamTrace], inner_lr: f64, q: &DiagonalQuadratic) -> Vec<SpeedupRow> {
    let base = traces.iter().find(|t| t.n == 1).and_then(|t| t.steps_to(TARGET_FRACTION));
    let c_min = inner_lr * q.curvature().iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = inner_lr * q.lipschitz();
    traces
        .iter()
        .map(|t| {
            let steps = t.steps_to(TARGET_FRACTION);
            SpeedupRow {
                n: t.n,
                steps_to_target: steps,
                speedup: base.zip(steps).map(|(b, s)| b as f64 / s as f64),
                progress_per_eval: steps.map(|s| 1.0 / (s * t.n) as f64),
                s_factor_min_curv: metrics::speedup_factor(t.n, c_min),
                s_factor_max_curv: metrics::speedup_factor(t.n, c_max),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertaintyRow {
    pub round: usize,
    #[serde(rename = "C_raw")]
    pub c_raw: Option<f64>,
    #[serde(rename = "C_used")]
    pub c_used: Option<f64>,
    #[serde(rename = "R_t")]
    pub r_t: Option<f64>,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub traces: Vec<AccAdamTrace>,
    pub speedups: Vec<SpeedupRow>,
    pub certainty: Vec<CertaintyRow>,
}

pub fn accadam_config(cfg: &ExperimentConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.diag_lr,
        beta1: cfg.beta1,
        beta2: cfg.diag_beta2,
        eps: cfg.diag_eps,
    }
}

pub fn accadam_family(cfg: &ExperimentConfig) -> fairfed_core::Result<(Vec<AccAdamTrace>, Vec<SpeedupRow>)> {
    let q = test_quadratic(cfg.diag_dim);
    let adam = accadam_config(cfg);
    let traces = cfg
        .diag_steps
        .iter()
        .map(|&n| accadam_trace(&q, ParamVector::zeros(cfg.diag_dim), n, cfg.diag_adam_steps, cfg.diag_inner_lr, &adam))
        .collect::<fairfed_core::Result<Vec<_>>>()?;
    let speedups = speedup_table(&traces, cfg.diag_inner_lr, &q);
    Ok((traces, speedups))
}

/// Runs both families for the first configured seed and writes
/// `diag_accadam.csv`, `diag_speedup.csv` and `diag_adafedadam.csv`.
pub fn diagnose(cfg: &ExperimentConfig, out_dir: Option<&Path>, quiet: bool) -> anyhow::Result<Diagnostics> {
    cfg.validate()?;
    let (traces, speedups) = accadam_family(cfg)?;
    let fed_cfg = ExperimentConfig {
        algorithm: AlgorithmName::Adafedadam,
        ..cfg.clone()
    };
    let run = harness::run_seed(&fed_cfg, cfg.seeds[0], quiet)?;
    let certainty: Vec<CertaintyRow> = run
        .history
        .iter()
        .map(|m| CertaintyRow {
            round: m.round,
            c_raw: m.c_raw,
            c_used: m.c_used,
            r_t: m.r_t,
            skipped: m.skipped,
        })
        .collect();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let rows: Vec<&AccAdamRow> = traces.iter().flat_map(|t| &t.rows).collect();
        output::write_rows(&dir.join("diag_accadam.csv"), &rows)?;
        output::write_rows(&dir.join("diag_speedup.csv"), &speedups)?;
        output::write_rows(&dir.join("diag_adafedadam.csv"), &certainty)?;
    }
    Ok(Diagnostics {
        traces,
        speedups,
        certainty,
    })
}
