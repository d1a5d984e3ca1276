//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domains::{gen_linear_domains, gen_rotated_two_moons, gen_spurious_color, DomainDataset};
use crate::error::{PogmError, Result};
use crate::meta::MetaConfig;
use crate::model::{Activation, InitKind, LossKind, ModelSpec};
use crate::rng::{derive_seed, Stream};
use crate::trainer::InnerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    RotatedMoons,
    SpuriousColor,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Pogm,
    Fish,
    ErmPooled,
    ErmTrajectory,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Pogm => "pogm",
            Algo::Fish => "fish",
            Algo::ErmPooled => "erm_pooled",
            Algo::ErmTrajectory => "erm_trajectory",
        }
    }
}

/// Which split the per-round validation accuracy is taken on when picking
/// the reported round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Training split of the held-out domain.
    #[default]
    TestDomain,
    /// Holdout splits of the source domains.
    TrainingDomain,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// KL between mean predictive distributions of one model per domain.
    #[default]
    MeanPredictive,
    /// Pointwise KL between domain-specific models on a shared probe set.
    MatchedProbe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotatedMoonsParams {
    pub angles: Vec<f64>,
    pub n_per_domain: usize,
    pub noise_sd: f64,
}

impl Default for RotatedMoonsParams {
    fn default() -> Self {
        Self {
            angles: vec![0.0, 30.0, 60.0, 90.0],
            n_per_domain: 200,
            noise_sd: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpuriousColorParams {
    pub correlations: Vec<f64>,
    pub label_noise: f64,
    pub n_per_domain: usize,
}

impl Default for SpuriousColorParams {
    fn default() -> Self {
        Self {
            correlations: vec![0.9, 0.8, 0.1],
            label_noise: 0.25,
            n_per_domain: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearParams {
    pub k: usize,
    pub d_invariant: usize,
    pub d_spurious: usize,
    pub n_per_domain: usize,
    pub noise_sd: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            k: 3,
            d_invariant: 2,
            d_spurious: 2,
            n_per_domain: 200,
            noise_sd: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskParams {
    RotatedMoons(RotatedMoonsParams),
    SpuriousColor(SpuriousColorParams),
    Linear(LinearParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: InitKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            activation: Activation::Relu,
            init: InitKind::UniformGlorot,
        }
    }
}

fn default_rounds() -> usize {
    100
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_tau() -> usize {
    5
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_train_frac() -> f64 {
    0.8
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub task_params: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub model: ModelConfig,
    pub algo: Algo,
    #[serde(default)]
    pub inner: InnerConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Index of the domain left out of training.
    pub holdout_domain: usize,
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub kl_mode: KlMode,
    /// Record the per-round diagnostics (costs one extra inner run per domain).
    #[serde(default = "default_true")]
    pub diagnostics: bool,
    /// Display name in comparisons; defaults to the algorithm name.
    #[serde(default)]
    pub label: Option<String>,
}

/// Maximum lag the run keeps snapshots for.
pub const TAU_MAX: usize = 20;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| PogmError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn task_params(&self) -> Result<TaskParams> {
        let value = serde_json::Value::Object(self.task_params.clone());
        let bad = |e: serde_json::Error| PogmError::Config(format!("task_params: {e}"));
        Ok(match self.task {
            Task::RotatedMoons => TaskParams::RotatedMoons(serde_json::from_value(value).map_err(bad)?),
            Task::SpuriousColor => {
                TaskParams::SpuriousColor(serde_json::from_value(value).map_err(bad)?)
            }
            Task::Linear => TaskParams::Linear(serde_json::from_value(value).map_err(bad)?),
        })
    }

    pub fn n_domains(&self) -> Result<usize> {
        Ok(match self.task_params()? {
            TaskParams::RotatedMoons(p) => p.angles.len(),
            TaskParams::SpuriousColor(p) => p.correlations.len(),
            TaskParams::Linear(p) => p.k,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_domains()?;
        if k < 2 {
            return Err(PogmError::Config(format!(
                "need at least 2 domains to hold one out, got {k}"
            )));
        }
        if self.holdout_domain >= k {
            return Err(PogmError::Config(format!(
                "holdout_domain {} is not a domain id (K = {k})",
                self.holdout_domain
            )));
        }
        if self.rounds == 0 {
            return Err(PogmError::Config("rounds must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(PogmError::Config("seeds must be non-empty".into()));
        }
        if self.tau == 0 || self.tau > TAU_MAX {
            return Err(PogmError::Config(format!("tau must lie in 1..={TAU_MAX}")));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(PogmError::Config(format!("train_frac {} outside (0, 1)", self.train_frac)));
        }
        if self.model.hidden.contains(&0) {
            return Err(PogmError::Config("hidden layer sizes must be >= 1".into()));
        }
        self.inner.validate()?;
        self.meta.validate()?;
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algo.name().to_string())
    }

    /// Hash of the settings that determine results. Output location, seed
    /// list and label are excluded, and keys are serialised in sorted order,
    /// so reordering a file never changes the hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("seeds");
            obj.remove("label");
            obj.insert(
                "task_params".into(),
                serde_json::to_value(self.task_params().ok().map(TaskParamsJson))
                    .unwrap_or(serde_json::Value::Null),
            );
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Model for a run seed. Classification tasks use a 2-way softmax head.
    pub fn model_spec(&self, seed: u64) -> Result<ModelSpec> {
        let (input, output, loss) = match self.task_params()? {
            TaskParams::RotatedMoons(_) => (2, 2, LossKind::CrossEntropy),
            TaskParams::SpuriousColor(_) => (2, 2, LossKind::CrossEntropy),
            TaskParams::Linear(p) => (p.d_invariant + p.d_spurious, 1, LossKind::Mse),
        };
        let mut layer_sizes = vec![input];
        layer_sizes.extend(&self.model.hidden);
        layer_sizes.push(output);
        let spec = ModelSpec {
            layer_sizes,
            activation: self.model.activation,
            loss_kind: loss,
            init: self.model.init,
            init_seed: derive_seed(seed, Stream::Init, 0),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// All domains of the task, generated from the run seed.
    pub fn datasets(&self, seed: u64) -> Result<Vec<DomainDataset>> {
        match self.task_params()? {
            TaskParams::RotatedMoons(p) => {
                gen_rotated_two_moons(&p.angles, p.n_per_domain, p.noise_sd, seed)
            }
            TaskParams::SpuriousColor(p) => {
                gen_spurious_color(&p.correlations, p.label_noise, p.n_per_domain, seed)
            }
            TaskParams::Linear(p) => gen_linear_domains(
                p.k,
                p.d_invariant,
                p.d_spurious,
                p.n_per_domain,
                p.noise_sd,
                seed,
            ),
        }
    }
}

/// Task parameters with defaults filled in, so an explicit default and an
/// omitted field hash the same.
struct TaskParamsJson(TaskParams);

impl Serialize for TaskParamsJson {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.0 {
            TaskParams::RotatedMoons(p) => p.serialize(s),
            TaskParams::SpuriousColor(p) => p.serialize(s),
            TaskParams::Linear(p) => p.serialize(s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "task": "rotated_moons",
        "task_params": {"angles": [0, 45], "n_per_domain": 20},
        "algo": "pogm",
        "meta": {"kappa": 0.1, "alpha": 0.5},
        "rounds": 3,
        "seeds": [1, 2],
        "holdout_domain": 1
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.tau, 5);
        assert_eq!(cfg.train_frac, 0.8);
        assert_eq!(cfg.meta.solver_max_iters, 500);
        assert_eq!(cfg.inner, InnerConfig::default());
        assert_eq!(cfg.n_domains().unwrap(), 2);
        assert_eq!(cfg.model_spec(0).unwrap().layer_sizes, vec![2, 16, 16, 2]);
    }

    #[test]
    fn hash_ignores_key_order_and_output_location() {
        let a = ExperimentConfig::from_json(BASE).unwrap();
        let reordered = r#"{
            "holdout_domain": 1,
            "seeds": [7],
            "rounds": 3,
            "meta": {"alpha": 0.5, "kappa": 0.1},
            "algo": "pogm",
            "output_dir": "elsewhere",
            "task_params": {"n_per_domain": 20, "angles": [0, 45], "noise_sd": 0.1},
            "task": "rotated_moons"
        }"#;
        let b = ExperimentConfig::from_json(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.meta.kappa = 0.2;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_holdout = BASE.replace("\"holdout_domain\": 1", "\"holdout_domain\": 2");
        assert!(matches!(
            ExperimentConfig::from_json(&bad_holdout),
            Err(PogmError::Config(_))
        ));
        let unknown = BASE.replace("\"rounds\": 3", "\"rounds\": 3, \"bogus\": 1");
        assert!(ExperimentConfig::from_json(&unknown).is_err());
        let no_seeds = BASE.replace("[1, 2]", "[]");
        assert!(ExperimentConfig::from_json(&no_seeds).is_err());
        let bad_param = BASE.replace("\"n_per_domain\": 20", "\"n_per_domain\": 20, \"x\": 1");
        assert!(ExperimentConfig::from_json(&bad_param).is_err());
        assert!(ExperimentConfig::from_json("not json").is_err());
    }
}
