//! Experiment orchestration: data, seeds, the round loop and artifacts.
//!
//! Output layout for `run_experiment(cfg, out)`:
//!
//! ```text
//! out/config.toml            echo of the effective config
//! out/seed-<s>/rounds.csv    one row per round
//! out/seed-<s>/model.txt     final (or last finite) model
//! out/summary.json           per-seed results and cross-seed mean/std
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use fairfed_core::data::{self, ClientDataset};
use fairfed_core::federation::{self, Federation};
use fairfed_core::metrics::{self, BaselineRun, ParetoFront, RoundMetrics, SweepRun};
use fairfed_core::rng::{self, keys};
use fairfed_core::{Error, ParamVector};
use serde::Serialize;

use crate::config::{AlgorithmName, ConfigError, DatasetKind, ExperimentConfig, PartitionName};
use crate::output::{self, RoundRow};
use crate::textfmt;

/// Clients for one seed, either generated from the seed's `data-gen`
/// stream or loaded from `dataset_file`.
pub fn build_clients(cfg: &ExperimentConfig, seed: u64) -> anyhow::Result<Vec<ClientDataset>> {
    if let Some(path) = &cfg.dataset_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let (clients, num_classes) = textfmt::load_dataset(&text).with_context(|| format!("parsing {}", path.display()))?;
        let dim = clients.first().map_or(0, |c| c.train.input_dim());
        if clients.is_empty() || dim != cfg.input_dim || num_classes != cfg.num_classes {
            return Err(ConfigError::Invalid(format!(
                "dataset file has {} clients, input_dim {dim}, num_classes {num_classes}; config expects input_dim {} and num_classes {}",
                clients.len(),
                cfg.input_dim,
                cfg.num_classes
            ))
            .into());
        }
        return Ok(clients);
    }
    let data_seed = rng::stream_seed(seed, keys::DATA_GEN);
    let clients = match cfg.dataset {
        DatasetKind::Synthetic => data::gen_synthetic(
            cfg.num_clients,
            cfg.input_dim,
            cfg.num_classes,
            cfg.synthetic_alpha,
            cfg.synthetic_beta,
            data_seed,
        )?,
        DatasetKind::Blobs => {
            let pool = data::gen_blobs(cfg.pool_size, cfg.input_dim, cfg.num_classes, cfg.blob_scale, data_seed)?;
            let part_seed = rng::stream_seed(data_seed, "partition");
            match cfg.partition {
                PartitionName::Dirichlet => data::partition_dirichlet(&pool, cfg.num_clients, cfg.dirichlet_beta, part_seed)?,
                PartitionName::Iid => data::partition_iid(&pool, cfg.num_clients, part_seed)?,
            }
        }
    };
    Ok(clients)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SeedStatus {
    Completed,
    Diverged { round: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub round: usize,
    pub avg_acc: f64,
    pub std_acc: f64,
    pub rsd_err: f64,
    pub worst30_acc: f64,
}

impl From<&RoundMetrics> for FinalMetrics {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            avg_acc: m.avg_acc,
            std_acc: m.std_acc,
            rsd_err: m.rsd_err,
            worst30_acc: m.worst30_acc,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    #[serde(flatten)]
    pub status: SeedStatus,
    #[serde(rename = "final")]
    pub final_metrics: Option<FinalMetrics>,
    pub rounds_completed: usize,
    pub grad_evals: u64,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub history: Vec<RoundMetrics>,
    #[serde(skip)]
    pub model: ParamVector,
}

impl SeedOutcome {
    pub fn completed(&self) -> bool {
        self.status == SeedStatus::Completed
    }
}

/// Runs one seed in memory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, quiet: bool) -> anyhow::Result<SeedOutcome> {
    let start = Instant::now();
    let clients = build_clients(cfg, seed)?;
    run_seed_on(cfg, seed, &clients, quiet, start)
}

fn run_seed_on(
    cfg: &ExperimentConfig,
    seed: u64,
    clients: &[ClientDataset],
    quiet: bool,
    start: Instant,
) -> anyhow::Result<SeedOutcome> {
    let spec = cfg.model_spec();
    let x0 = federation::initial_model(&spec, seed);
    let mut fed = Federation::new(spec, cfg.algorithm(), cfg.local_config(), seed, x0, clients.len())?;
    let schedule = cfg.epoch_schedule();
    let mut history = Vec::with_capacity(cfg.rounds);
    let mut status = SeedStatus::Completed;
    for round in 1..=cfg.rounds {
        let plan = federation::plan_round(seed, round, clients.len(), cfg.participation_fraction, &schedule)?;
        match fed.run_round(clients, &plan) {
            Ok(m) => {
                if !quiet && (round % 50 == 0 || round == cfg.rounds) {
                    log::info!("seed {seed} round {round}: avg {:.4} std {:.4}", m.avg_acc, m.std_acc);
                }
                history.push(m);
            }
            Err(e @ (Error::Divergence { .. } | Error::NonFinite(_))) => {
                log::warn!("seed {seed} diverged at round {round}: {e}");
                status = SeedStatus::Diverged {
                    round,
                    message: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(SeedOutcome {
        seed,
        status,
        final_metrics: history.last().map(FinalMetrics::from),
        rounds_completed: history.len(),
        grad_evals: fed.grad_evals(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        history,
        model: fed.state.x.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> Option<MeanStd> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossSeed {
    pub completed_seeds: usize,
    pub avg_acc: Option<MeanStd>,
    pub std_acc: Option<MeanStd>,
    pub rsd_err: Option<MeanStd>,
    pub worst30_acc: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub algorithm: &'static str,
    pub seeds: Vec<SeedOutcome>,
    pub across_seeds: CrossSeed,
    pub total_grad_evals: u64,
    pub wall_time_secs: f64,
}

impl Summary {
    pub fn all_diverged(&self) -> bool {
        self.seeds.iter().all(|s| !s.completed())
    }

    /// Seed-averaged final metric over completed seeds.
    pub fn mean_final(&self, f: impl Fn(&FinalMetrics) -> f64) -> Option<f64> {
        let xs: Vec<f64> = self
            .seeds
            .iter()
            .filter(|s| s.completed())
            .filter_map(|s| s.final_metrics.as_ref().map(&f))
            .collect();
        mean_std(&xs).map(|m| m.mean)
    }
}

fn cross_seed(seeds: &[SeedOutcome]) -> CrossSeed {
    let done: Vec<&FinalMetrics> = seeds
        .iter()
        .filter(|s| s.completed())
        .filter_map(|s| s.final_metrics.as_ref())
        .collect();
    let col = |f: fn(&FinalMetrics) -> f64| mean_std(&done.iter().map(|m| f(m)).collect::<Vec<_>>());
    CrossSeed {
        completed_seeds: done.len(),
        avg_acc: col(|m| m.avg_acc),
        std_acc: col(|m| m.std_acc),
        rsd_err: col(|m| m.rsd_err),
        worst30_acc: col(|m| m.worst30_acc),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub quiet: bool,
}

/// Runs every seed (in parallel threads) and writes the artifacts. With
/// `out_dir = None` nothing is written.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, opts: RunOptions) -> anyhow::Result<Summary> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
    }
    let results: Vec<anyhow::Result<SeedOutcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| s.spawn(move || run_seed(cfg, seed, opts.quiet)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });
    let seeds = results.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    if let Some(dir) = out_dir {
        for s in &seeds {
            let sd = dir.join(format!("seed-{}", s.seed));
            fs::create_dir_all(&sd)?;
            let rows: Vec<RoundRow> = s.history.iter().map(RoundRow::from).collect();
            output::write_rounds_csv(&sd.join("rounds.csv"), &rows)?;
            fs::write(sd.join("model.txt"), textfmt::dump_model(&cfg.model_spec(), &s.model))?;
        }
    }
    let summary = Summary {
        config: cfg.clone(),
        algorithm: cfg.algorithm().name(),
        across_seeds: cross_seed(&seeds),
        total_grad_evals: seeds.iter().map(|s| s.grad_evals).sum(),
        seeds,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    pub baselines: Vec<BaselineRun>,
    pub front: ParetoFront,
}

/// Sorted, duplicate-free alpha grid.
pub fn dedup_alphas(alphas: &[f64]) -> anyhow::Result<Vec<f64>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &a in alphas {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(ConfigError::Invalid(format!("alpha {a} must be finite and non-negative")).into());
        }
        if seen.insert(a.to_bits()) {
            out.push(a);
        } else {
            log::warn!("duplicate alpha {a} dropped from sweep");
        }
    }
    if out.is_empty() {
        bail!(ConfigError::Invalid("empty alpha grid".into()));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

fn error_and_rsd(summary: &Summary) -> Option<(f64, f64)> {
    Some((summary.mean_final(|m| 1.0 - m.avg_acc)?, summary.mean_final(|m| m.rsd_err)?))
}

pub fn sweep_alpha(
    base: &ExperimentConfig,
    alphas: &[f64],
    out_dir: Option<&Path>,
    opts: RunOptions,
) -> anyhow::Result<SweepOutcome> {
    let alphas = dedup_alphas(alphas)?;
    let sub = |name: String| out_dir.map(|d| d.join(name));
    let mut runs = Vec::new();
    for &alpha in &alphas {
        let cfg = ExperimentConfig {
            alpha,
            algorithm: AlgorithmName::Adafedadam,
            ..base.clone()
        };
        let dir: Option<PathBuf> = sub(format!("alpha-{alpha}"));
        let s = run_experiment(&cfg, dir.as_deref(), opts)?;
        match error_and_rsd(&s) {
            Some((avg_error, rsd)) => runs.push(SweepRun { alpha, avg_error, rsd }),
            None => log::warn!("alpha {alpha}: every seed diverged, no sweep point"),
        }
    }
    let mut baselines = Vec::new();
    for &name in &base.sweep_baselines {
        let cfg = ExperimentConfig {
            algorithm: name,
            ..base.clone()
        };
        let s = run_experiment(&cfg, sub(format!("baseline-{}", s_name(name))).as_deref(), opts)?;
        if let Some((avg_error, rsd)) = error_and_rsd(&s) {
            baselines.push(BaselineRun {
                name: s_name(name).to_string(),
                avg_error,
                rsd,
            });
        }
    }
    let front = metrics::pareto_points(&runs, &baselines);
    if let Some(dir) = out_dir {
        output::write_sweep_csv(&dir.join("sweep.csv"), &front)?;
    }
    Ok(SweepOutcome { runs, baselines, front })
}

fn s_name(a: AlgorithmName) -> &'static str {
    match a {
        AlgorithmName::Fedavg => "fedavg",
        AlgorithmName::Fedadam => "fedadam",
        AlgorithmName::Fednova => "fednova",
        AlgorithmName::Qfedavg => "qfedavg",
        AlgorithmName::Adafedadam => "adafedadam",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRow {
    pub client: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub label_counts: Vec<usize>,
    pub tv_to_pool: f64,
    pub top2_mass: f64,
}

/// Per-client label histograms (train and test together). With an output
/// directory, also writes the clients as `dataset.txt`, loadable through
/// the `dataset_file` key.
pub fn partition_report(cfg: &ExperimentConfig, seed: u64, out_dir: Option<&Path>) -> anyhow::Result<Vec<PartitionRow>> {
    cfg.validate()?;
    let clients = build_clients(cfg, seed)?;
    let counts: Vec<Vec<usize>> = clients
        .iter()
        .map(|c| {
            let mut h = vec![0; cfg.num_classes];
            for &y in c.train.labels().iter().chain(c.test.labels()) {
                h[y] += 1;
            }
            h
        })
        .collect();
    let mut pool = vec![0; cfg.num_classes];
    for h in &counts {
        for (p, c) in pool.iter_mut().zip(h) {
            *p += c;
        }
    }
    let rows: Vec<PartitionRow> = clients
        .iter()
        .zip(counts)
        .map(|(c, h)| PartitionRow {
            client: c.client_id,
            n_train: c.train.len(),
            n_test: c.test.len(),
            tv_to_pool: data::label_tv_distance(&h, &pool),
            top2_mass: data::top_label_mass(&h, 2),
            label_counts: h,
        })
        .collect();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        output::write_partition_csv(&dir.join("partition.csv"), &rows, cfg.num_classes)?;
        fs::write(dir.join("dataset.txt"), textfmt::dump_dataset(&clients, cfg.num_classes))?;
    }
    Ok(rows)
}
