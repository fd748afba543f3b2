//! Experiment configuration.
//!
//! One TOML file per experiment with a flat key schema. Every key has a
//! default. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use fairfed_core::adafedadam::{CertaintyMode, FairnessConfig};
use fairfed_core::federation::{Algorithm, EpochSchedule};
use fairfed_core::local_solver::{LocalSolverConfig, SolverKind};
use fairfed_core::models::ModelSpec;
use fairfed_core::server_opt::{AdamConfig, QFedAvgConfig, ServerAlgorithm};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmName {
    Fedavg,
    Fedadam,
    Fednova,
    Qfedavg,
    Adafedadam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// LEAF-style synthetic federation with power-law client sizes.
    Synthetic,
    /// Gaussian-blob pool split across clients.
    Blobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionName {
    Dirichlet,
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverName {
    Sgd,
    SgdMomentum,
    SgdNesterov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleName {
    Fixed,
    UniformInt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertaintyName {
    WeightedMean,
    RootMean,
}

/// The file schema. Field names are the config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub algorithm: AlgorithmName,
    pub participation_fraction: f64,

    pub dataset: DatasetKind,
    /// Load clients from a dataset dump instead of generating them.
    pub dataset_file: Option<PathBuf>,
    pub num_clients: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub synthetic_alpha: f64,
    pub synthetic_beta: f64,
    pub partition: PartitionName,
    pub dirichlet_beta: f64,
    pub pool_size: usize,
    pub blob_scale: f64,

    pub model: ModelName,
    pub hidden_dim: usize,

    pub local_solver: SolverName,
    pub local_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epoch_schedule: ScheduleName,
    pub epochs: usize,
    pub epochs_min: usize,
    pub epochs_max: usize,

    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,

    pub alpha: f64,
    pub i_floor: f64,
    pub c_floor: f64,
    pub certainty_mode: CertaintyName,

    pub qfedavg_q: f64,
    /// Defaults to `1 / local_lr` when absent.
    pub qfedavg_lipschitz: Option<f64>,

    /// Baselines evaluated alongside an alpha sweep.
    pub sweep_baselines: Vec<AlgorithmName>,

    pub diag_dim: usize,
    pub diag_steps: Vec<usize>,
    pub diag_adam_steps: usize,
    pub diag_inner_lr: f64,
    pub diag_lr: f64,
    pub diag_beta2: f64,
    pub diag_eps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![0],
            rounds: 300,
            algorithm: AlgorithmName::Adafedadam,
            participation_fraction: 1.0,
            dataset: DatasetKind::Synthetic,
            dataset_file: None,
            num_clients: 30,
            input_dim: 60,
            num_classes: 10,
            synthetic_alpha: 1.0,
            synthetic_beta: 1.0,
            partition: PartitionName::Dirichlet,
            dirichlet_beta: 0.5,
            pool_size: 10_000,
            blob_scale: 3.0,
            model: ModelName::Linear,
            hidden_dim: 32,
            local_solver: SolverName::Sgd,
            local_lr: 0.01,
            momentum: 0.0,
            batch_size: 10,
            epoch_schedule: ScheduleName::Fixed,
            epochs: 1,
            epochs_min: 1,
            epochs_max: 3,
            server_lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            alpha: 1.0,
            i_floor: 1e-6,
            c_floor: 1.0,
            certainty_mode: CertaintyName::WeightedMean,
            qfedavg_q: 1.0,
            qfedavg_lipschitz: None,
            sweep_baselines: Vec::new(),
            diag_dim: 10,
            diag_steps: vec![1, 2, 5, 10],
            diag_adam_steps: 2000,
            diag_inner_lr: 0.1,
            diag_lr: 0.05,
            diag_beta2: 0.999,
            diag_eps: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `dataset_file` is resolved against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(f), Some(dir)) = (&cfg.dataset_file, path.parent()) {
            if f.is_relative() {
                cfg.dataset_file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(invalid("participation_fraction must lie in (0, 1]"));
        }
        if self.num_clients == 0 && self.dataset_file.is_none() {
            return Err(invalid("num_clients must be at least 1"));
        }
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(invalid("input_dim must be positive and num_classes at least 2"));
        }
        if self.model == ModelName::Mlp && self.hidden_dim == 0 {
            return Err(invalid("hidden_dim must be positive"));
        }
        if self.dataset == DatasetKind::Blobs && self.partition == PartitionName::Dirichlet && !(self.dirichlet_beta > 0.0) {
            return Err(invalid("dirichlet_beta must be positive"));
        }
        self.epoch_schedule()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.local_config().validate().map_err(|e| invalid(e.to_string()))?;
        self.adam_config().validate().map_err(|e| invalid(e.to_string()))?;
        self.fairness_config()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if !(self.qfedavg_q >= 0.0) {
            return Err(invalid("qfedavg_q must be non-negative"));
        }
        if self.qfedavg_lipschitz.is_some_and(|l| !(l > 0.0)) {
            return Err(invalid("qfedavg_lipschitz must be positive"));
        }
        if self.diag_dim == 0 || self.diag_steps.contains(&0) || self.diag_adam_steps == 0 {
            return Err(invalid("diagnostic sizes must be positive"));
        }
        if !(self.diag_inner_lr > 0.0 && self.diag_lr > 0.0 && self.diag_eps > 0.0) {
            return Err(invalid("diagnostic rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.diag_beta2) {
            return Err(invalid("diag_beta2 must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelName::Linear => ModelSpec::linear(self.input_dim, self.num_classes),
            ModelName::Mlp => ModelSpec::mlp(self.input_dim, self.hidden_dim, self.num_classes),
        }
    }

    pub fn epoch_schedule(&self) -> EpochSchedule {
        match self.epoch_schedule {
            ScheduleName::Fixed => EpochSchedule::Fixed(self.epochs),
            ScheduleName::UniformInt => EpochSchedule::UniformInt {
                lo: self.epochs_min,
                hi: self.epochs_max,
            },
        }
    }

    pub fn local_config(&self) -> LocalSolverConfig {
        let kind = match self.local_solver {
            SolverName::Sgd => SolverKind::Sgd,
            SolverName::SgdMomentum => SolverKind::Momentum,
            SolverName::SgdNesterov => SolverKind::Nesterov,
        };
        LocalSolverConfig {
            kind,
            lr: self.local_lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs.max(1),
            shuffle_seed: 0,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.server_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn fairness_config(&self) -> FairnessConfig {
        FairnessConfig {
            alpha: self.alpha,
            i_floor: self.i_floor,
            c_floor: self.c_floor,
            mode: match self.certainty_mode {
                CertaintyName::WeightedMean => CertaintyMode::WeightedMean,
                CertaintyName::RootMean => CertaintyMode::RootMean,
            },
        }
    }

    pub fn algorithm_for(&self, name: AlgorithmName) -> Algorithm {
        match name {
            AlgorithmName::Fedavg => Algorithm::Baseline(ServerAlgorithm::FedAvg),
            AlgorithmName::Fedadam => Algorithm::Baseline(ServerAlgorithm::FedAdam(self.adam_config())),
            AlgorithmName::Fednova => Algorithm::Baseline(ServerAlgorithm::FedNova),
            AlgorithmName::Qfedavg => Algorithm::Baseline(ServerAlgorithm::QFedAvg(QFedAvgConfig {
                q: self.qfedavg_q,
                lipschitz: self.qfedavg_lipschitz.unwrap_or(1.0 / self.local_lr),
                server_lr: 1.0,
            })),
            AlgorithmName::Adafedadam => Algorithm::AdaFedAdam {
                adam: self.adam_config(),
                fairness: self.fairness_config(),
            },
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm_for(self.algorithm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("roundz = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
    }

    #[test]
    fn zero_rounds_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml("rounds = 0"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn bad_schedule_and_momentum_rejected() {
        let bad = [
            "epoch_schedule = \"uniform-int\"\nepochs_min = 3\nepochs_max = 2",
            "local_solver = \"sgd\"\nmomentum = 0.9",
            "participation_fraction = 1.5",
            "seeds = []",
        ];
        for text in bad {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig {
            algorithm: AlgorithmName::Qfedavg,
            seeds: vec![3, 4],
            qfedavg_lipschitz: Some(50.0),
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn qfedavg_lipschitz_defaults_to_inverse_local_lr() {
        let cfg = ExperimentConfig::from_toml("algorithm = \"qfedavg\"\nlocal_lr = 0.02").unwrap();
        match cfg.algorithm() {
            Algorithm::Baseline(ServerAlgorithm::QFedAvg(q)) => assert!((q.lipschitz - 50.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }
}
