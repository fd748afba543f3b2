//! Fairness statistics, convergence diagnostics and Pareto assembly.
//!
//! Standard deviations are population (divide by K) and the worst-30% group
//! holds the `ceil(0.3 K)` lowest values. Accuracy is always measured on each
//! client's own held-out split.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::ClientDataset;
use crate::math;
use crate::models::{self, ModelSpec};
use crate::numerics::{l2_norm, ParamVector};
use crate::{Error, Result};

/// Coordinates whose true-gradient magnitude is at or below this are ignored
/// by the alignment ratio.
pub const GRAD_COORD_THRESHOLD: f64 = 1e-12;
pub const WORST_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FairnessStats {
    pub avg: f64,
    pub std: f64,
    pub worst30: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

pub fn fairness_report(accs: &[f64]) -> Result<FairnessStats> {
    if accs.is_empty() {
        return Err(Error::Empty("accuracy list"));
    }
    let (avg, std) = mean_std(accs);
    let mut sorted = accs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = math::ceil(WORST_FRACTION * accs.len() as f64) as usize;
    let k = k.clamp(1, accs.len());
    let worst30 = sorted[..k].iter().sum::<f64>() / k as f64;
    // The group mean can exceed the overall mean by an ulp when all values
    // are equal.
    Ok(FairnessStats {
        avg,
        std,
        worst30: worst30.min(avg),
    })
}

/// Relative standard deviation `std / mean` of per-client errors. An
/// all-zero error vector has RSD 0.
pub fn rsd(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("error list"));
    }
    let (mean, std) = mean_std(errors);
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok(std / mean)
}

/// `min_i |a_i / b_i|` over coordinates with `|b_i| > 1e-12`; `None` when no
/// coordinate qualifies.
pub fn alignment_ratio(a: &ParamVector, b: &ParamVector) -> Result<Option<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            expected: b.dim(),
            found: a.dim(),
        });
    }
    Ok(a.iter()
        .zip(b.iter())
        .filter(|(_, bi)| math::abs(**bi) > GRAD_COORD_THRESHOLD)
        .map(|(ai, bi)| math::abs(ai / bi))
        .reduce(f64::min))
}

/// `Σ ‖x_{n+1} − x_n‖₂` over consecutive iterates.
pub fn path_length<P: AsRef<[f64]>>(iterates: &[P]) -> f64 {
    iterates
        .windows(2)
        .map(|w| {
            let diff: Vec<f64> = w[1].as_ref().iter().zip(w[0].as_ref()).map(|(a, b)| a - b).collect();
            l2_norm(&diff)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceDiagnostics {
    pub r_t: Option<f64>,
    pub path_length: f64,
    /// `‖Δ‖ / ‖∇f‖`, missing when the gradient is zero.
    pub p_n: Option<f64>,
}

pub fn convergence_diagnostics<P: AsRef<[f64]>>(
    g: &ParamVector,
    global_grad: &ParamVector,
    path: &[P],
) -> Result<ConvergenceDiagnostics> {
    let r_t = alignment_ratio(g, global_grad)?;
    let gn = global_grad.l2_norm();
    let p_n = (gn > 0.0).then(|| g.l2_norm() / gn);
    Ok(ConvergenceDiagnostics {
        r_t,
        path_length: path_length(path),
        p_n,
    })
}

/// Best-case speedup `S(N, c) = N c / (1 − (1 − c)^N) − 1/2` of N-step
/// accumulated Adam over plain Adam.
pub fn speedup_factor(n: usize, c: f64) -> f64 {
    let n_f = n as f64;
    n_f * c / (1.0 - math::powi(1.0 - c, n as i32)) - 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub per_client_test_acc: Vec<f64>,
    pub per_client_train_loss: Vec<f64>,
    pub avg_acc: f64,
    pub std_acc: f64,
    pub rsd_err: f64,
    pub worst30_acc: f64,
    /// Aggregate certainty before and after clamping (AdaFedAdam only).
    pub c_raw: Option<f64>,
    pub c_used: Option<f64>,
    /// Alignment of the applied pseudo-gradient with the full global gradient.
    pub r_t: Option<f64>,
    /// Inverse training rates of the round's contributing clients.
    pub inverse_rates: Vec<f64>,
    pub participants: Vec<usize>,
    pub epochs: Vec<usize>,
    /// True when no server step was applied this round.
    pub skipped: bool,
}

impl RoundMetrics {
    pub fn mean_inverse_rate(&self) -> Option<f64> {
        (!self.inverse_rates.is_empty())
            .then(|| self.inverse_rates.iter().sum::<f64>() / self.inverse_rates.len() as f64)
    }

    pub fn max_inverse_rate(&self) -> Option<f64> {
        self.inverse_rates.iter().copied().reduce(f64::max)
    }
}

/// Per-client test accuracy and train loss of `x`, in client order.
pub fn evaluate_clients(spec: &ModelSpec, x: &ParamVector, clients: &[ClientDataset]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut accs = Vec::with_capacity(clients.len());
    let mut losses = Vec::with_capacity(clients.len());
    for c in clients {
        accs.push(models::accuracy(spec, x, &c.test)?);
        losses.push(models::loss(spec, x, &c.train)?);
    }
    Ok((accs, losses))
}

/// Builds the per-round record for model `x`.
pub fn snapshot(round: usize, spec: &ModelSpec, x: &ParamVector, clients: &[ClientDataset]) -> Result<RoundMetrics> {
    let (accs, losses) = evaluate_clients(spec, x, clients)?;
    let stats = fairness_report(&accs)?;
    let errors: Vec<f64> = accs.iter().map(|a| 1.0 - a).collect();
    Ok(RoundMetrics {
        round,
        avg_acc: stats.avg,
        std_acc: stats.std,
        worst30_acc: stats.worst30,
        rsd_err: rsd(&errors)?,
        per_client_test_acc: accs,
        per_client_train_loss: losses,
        c_raw: None,
        c_used: None,
        r_t: None,
        inverse_rates: Vec::new(),
        participants: Vec::new(),
        epochs: Vec::new(),
        skipped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRun {
    pub alpha: f64,
    pub avg_error: f64,
    pub rsd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub name: String,
    pub avg_error: f64,
    pub rsd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoPoint {
    pub alpha: f64,
    pub avg_error: f64,
    pub rsd: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    /// Sweep points sorted by α; `dominated` considers every other sweep
    /// point and every baseline.
    pub points: Vec<ParetoPoint>,
    /// Baselines with `dominated` set when some sweep point dominates them.
    pub baselines: Vec<(BaselineRun, bool)>,
}

/// Weak Pareto dominance in (avg_error, rsd), both minimized.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.0 && a.1 <= b.1 && (a.0 < b.0 || a.1 < b.1)
}

pub fn pareto_points(runs: &[SweepRun], baselines: &[BaselineRun]) -> ParetoFront {
    let mut sorted = runs.to_vec();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let coords: Vec<(f64, f64)> = sorted.iter().map(|r| (r.avg_error, r.rsd)).collect();
    let base_coords: Vec<(f64, f64)> = baselines.iter().map(|b| (b.avg_error, b.rsd)).collect();
    let points = sorted
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let me = coords[i];
            let dominated = coords
                .iter()
                .enumerate()
                .any(|(j, &o)| j != i && dominates(o, me))
                || base_coords.iter().any(|&o| dominates(o, me));
            ParetoPoint {
                alpha: r.alpha,
                avg_error: r.avg_error,
                rsd: r.rsd,
                dominated,
            }
        })
        .collect();
    let baselines = baselines
        .iter()
        .map(|b| {
            let me = (b.avg_error, b.rsd);
            (b.clone(), coords.iter().any(|&o| dominates(o, me)))
        })
        .collect();
    ParetoFront { points, baselines }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        math::abs(a - b) < 1e-12
    }

    #[test]
    fn equal_accuracies() {
        let s = fairness_report(&[0.7; 9]).unwrap();
        assert!(close(s.avg, 0.7) && s.std == 0.0 && close(s.worst30, 0.7));
    }

    #[test]
    fn worst30_uses_ceil() {
        let s = fairness_report(&[0.2, 0.5, 0.8]).unwrap();
        assert!(close(s.worst30, 0.2));
        let accs: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64).collect();
        let s = fairness_report(&accs).unwrap();
        assert!(close(s.avg, 0.55));
        assert!(close(s.worst30, 0.2));
        assert!(s.worst30 <= s.avg);
    }

    #[test]
    fn rsd_examples() {
        assert_eq!(rsd(&[0.3, 0.3, 0.3]).unwrap(), 0.0);
        assert!(close(rsd(&[0.1, 0.3]).unwrap(), 0.5));
        assert!(close(rsd(&[0.2, 0.6]).unwrap(), 0.5));
    }

    #[test]
    fn alignment_of_identical_vectors_is_one() {
        let g = ParamVector::new(alloc::vec![0.5, -2.0, 1e-14, 3.0]).unwrap();
        assert_eq!(alignment_ratio(&g, &g).unwrap(), Some(1.0));
        let zero = ParamVector::zeros(4);
        assert_eq!(alignment_ratio(&g, &zero).unwrap(), None);
    }

    #[test]
    fn straight_path_length() {
        let step = [0.3, -0.4];
        let iterates: Vec<[f64; 2]> = (0..=7).map(|n| [n as f64 * step[0], n as f64 * step[1]]).collect();
        assert!(math::abs(path_length(&iterates) - 7.0 * 0.5) < 1e-12);
    }

    #[test]
    fn sgd_path_on_1d_quadratic_is_geometric() {
        // f = ½ c x², x_{n+1} = (1 − cη) x_n; each step has length
        // |x0| (1 − cη)^n cη.
        let (c, eta, x0, n) = (2.0, 0.1, 1.5, 25);
        let mut xs = alloc::vec![[x0]];
        for _ in 0..n {
            let x = xs.last().unwrap()[0];
            xs.push([x - eta * c * x]);
        }
        let closed: f64 = (0..n).map(|k| math::abs(x0) * math::powi(1.0 - c * eta, k) * c * eta).sum();
        assert!(math::abs(path_length(&xs) - closed) < 1e-12);
    }

    #[test]
    fn speedup_at_one_step_is_half() {
        for c in [0.01, 0.3, 0.9] {
            assert!(close(speedup_factor(1, c), 0.5));
        }
    }

    #[test]
    fn dominance_flags() {
        let runs = [
            SweepRun { alpha: 2.0, avg_error: 0.2, rsd: 0.3 },
            SweepRun { alpha: 0.0, avg_error: 0.1, rsd: 0.5 },
            SweepRun { alpha: 1.0, avg_error: 0.25, rsd: 0.6 },
        ];
        let base = [BaselineRun { name: "fedavg".into(), avg_error: 0.3, rsd: 0.7 }];
        let front = pareto_points(&runs, &base);
        let alphas: Vec<f64> = front.points.iter().map(|p| p.alpha).collect();
        assert_eq!(alphas, alloc::vec![0.0, 1.0, 2.0]);
        let flags: Vec<bool> = front.points.iter().map(|p| p.dominated).collect();
        assert_eq!(flags, alloc::vec![false, true, false]);
        assert!(front.baselines[0].1);
    }

    #[test]
    fn identical_runs_do_not_dominate() {
        let runs = [
            SweepRun { alpha: 0.0, avg_error: 0.2, rsd: 0.3 },
            SweepRun { alpha: 1.0, avg_error: 0.2, rsd: 0.3 },
        ];
        let front = pareto_points(&runs, &[]);
        assert!(front.points.iter().all(|p| !p.dominated));
    }

    proptest! {
        #[test]
        fn fairness_report_is_permutation_invariant(
            accs in proptest::collection::vec(0.0f64..=1.0, 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = accs.clone();
            shuffled.shuffle(&mut crate::rng::from_seed(seed));
            let a = fairness_report(&accs).unwrap();
            let b = fairness_report(&shuffled).unwrap();
            prop_assert!(math::abs(a.avg - b.avg) < 1e-12);
            prop_assert!(math::abs(a.std - b.std) < 1e-12);
            prop_assert_eq!(a.worst30, b.worst30);
            prop_assert!(a.worst30 <= a.avg && a.std >= 0.0);
        }

        #[test]
        fn rsd_ignores_scale(errs in proptest::collection::vec(0.01f64..1.0, 1..20), c in 0.1f64..10.0) {
            let scaled: Vec<f64> = errs.iter().map(|e| e * c).collect();
            prop_assert!(math::abs(rsd(&errs).unwrap() - rsd(&scaled).unwrap()) < 1e-9);
        }
    }
}
