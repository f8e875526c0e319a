//! Experiment configuration and end-to-end scenario assembly.
//!
//! Run `r` of an experiment uses seed `base + r`. Every random stream of the
//! run (data, split, partition, attacker placement, initialisation, local
//! batches) is derived from that one seed.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adversary::{Adversary, AttackSpec};
use crate::data::{
    load_idx, partition_concentration, select_malicious_group_oriented, split_80_10_10, synthetic_blobs,
    LabeledDataset, PartitionSpec,
};
use crate::engine::{run_training, EngineConfig, ResolvedEngine, TrainingOutcome};
use crate::error::{Error, Result};
use crate::metrics::{detection_confusion, DetectionReport, DETECTION_EPSILON};
use crate::models::{init_params, Model, ModelArch, ModelKind, Precision};
use crate::seed::{self, Stream};

fn default_classes() -> usize {
    10
}
fn default_dim() -> usize {
    20
}
fn default_per_class() -> usize {
    200
}
fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_classes")]
        num_classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
    /// An IDX image/label file pair, split 80/10/10 like the synthetic data.
    Mnist { images: PathBuf, labels: PathBuf },
}

fn default_q() -> f64 {
    0.9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub n_clients: usize,
    #[serde(default = "default_q")]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Logistic,
            hidden: Vec::new(),
            precision: Precision::default(),
        }
    }
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub malicious_fraction: f64,
    #[serde(default)]
    pub model: ModelConfig,
    pub engine: EngineConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.malicious_fraction) {
            return Err(Error::Config(format!(
                "malicious_fraction = {} outside [0, 1)",
                self.malicious_fraction
            )));
        }
        if let DatasetSpec::Synthetic { spread, .. } = self.dataset {
            if !(spread > 0.0) {
                return Err(Error::Config(format!("spread = {spread} must be positive")));
            }
        }
        self.attack.validate()?;
        self.engine.resolve(self.partition.n_clients, self.malicious_fraction)?;
        Ok(())
    }

    pub fn n_malicious(&self) -> usize {
        (self.malicious_fraction * self.partition.n_clients as f64).round() as usize
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}

/// Everything one run needs, built from its seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    pub shards: Vec<LabeledDataset>,
    pub partition: PartitionSpec,
    pub adversary: Adversary,
    pub model: Model,
    pub engine: ResolvedEngine,
    pub theta0: Vec<f64>,
}

impl Scenario {
    pub fn malicious(&self) -> &BTreeSet<usize> {
        self.adversary.malicious()
    }

    pub fn run(&self) -> Result<TrainingOutcome> {
        run_training(
            &self.engine,
            &self.model,
            &self.shards,
            &self.adversary,
            &self.test,
            self.theta0.clone(),
        )
    }
}

fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<LabeledDataset> {
    match spec {
        DatasetSpec::Synthetic {
            num_classes,
            dim,
            per_class,
            spread,
        } => synthetic_blobs(
            *num_classes,
            *dim,
            *per_class,
            *spread,
            seed::derive(seed, Stream::Synthetic, &[]),
        ),
        DatasetSpec::Mnist { images, labels } => load_idx(images, labels),
    }
}

/// Split, partition, attacker placement, shard poisoning and model
/// initialisation for run `run`.
pub fn build_scenario(cfg: &ExperimentConfig, run: usize) -> Result<Scenario> {
    cfg.validate()?;
    let seed = cfg.run_seed(run);
    let data = load_dataset(&cfg.dataset, seed)?;
    let (train, validation, test) = split_80_10_10(&data, seed::derive(seed, Stream::Split, &[]))?;
    let partition = PartitionSpec {
        n_clients: cfg.partition.n_clients,
        q: cfg.partition.q,
        num_groups: data.num_classes(),
        seed: seed::derive(seed, Stream::Partition, &[]),
    };
    let mut shards: Vec<LabeledDataset> = partition_concentration(&train, &partition)?
        .iter()
        .map(|s| train.subset(&s.indices))
        .collect();
    if let Some(c) = shards.iter().position(LabeledDataset::is_empty) {
        return Err(Error::Config(format!("client {c} received no training data")));
    }
    let malicious = select_malicious_group_oriented(&partition, cfg.n_malicious(), seed)?;
    let adversary = Adversary::new(cfg.attack, malicious, partition.n_clients, seed)?;
    adversary.poison_shards(&mut shards)?;

    let arch = match cfg.model.kind {
        ModelKind::Logistic => ModelArch::logistic(data.dim(), data.num_classes()),
        ModelKind::Mlp => ModelArch::mlp(data.dim(), cfg.model.hidden.clone(), data.num_classes()),
    };
    let model = Model::new(arch, cfg.model.precision)?;
    let theta0 = init_params(&model.arch, seed).into_inner();
    let mut engine_cfg = cfg.engine.clone();
    engine_cfg.seed = seed;
    let engine = engine_cfg.resolve(partition.n_clients, cfg.malicious_fraction)?;
    Ok(Scenario {
        seed,
        train,
        validation,
        test,
        shards,
        partition,
        adversary,
        model,
        engine,
        theta0,
    })
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub malicious: BTreeSet<usize>,
    pub outcome: TrainingOutcome,
    /// Detection scored on the last recorded weights.
    pub detection: Option<DetectionReport>,
}

impl RunResult {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.outcome.traces.last().map(|t| t.test_accuracy)
    }
}

pub fn run_once(cfg: &ExperimentConfig, run: usize) -> Result<RunResult> {
    let scenario = build_scenario(cfg, run)?;
    let outcome = scenario.run()?;
    let detection = outcome
        .traces
        .last()
        .map(|t| detection_confusion(t.weights.as_slice(), scenario.malicious(), DETECTION_EPSILON));
    Ok(RunResult {
        run,
        seed: scenario.seed,
        malicious: scenario.malicious().clone(),
        outcome,
        detection,
    })
}
