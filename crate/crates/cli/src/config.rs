//! Experiment configuration: one JSON document, every field optional.
//!
//! ```json
//! {
//!   "name": "desk-v1",
//!   "system": "rigid_double_pendulum",
//!   "dataset": { "trajectories": 200, "steps": 60, "size": 64, "seed": 0 },
//!   "stage1": { "ld": 64, "epochs": 200 },
//!   "intdim": { "method": "levina-bickel", "k": 20, "max_points": 5000 },
//!   "stage2": { "epochs": 300 },
//!   "dynamics": { "epochs": 300 },
//!   "rollout": { "steps": 60, "initial_states": 20, "hybrid_n": 4 },
//!   "evaluate": { "split": "test" },
//!   "probe": { "labeled_fraction": 0.3 }
//! }
//! ```

use std::path::{Path, PathBuf};

use nsv::analysis::ProbeConfig;
use nsv::datasets::{DatasetConfig, Split};
use nsv::rollout::{PerturbationKind, PerturbationSpec, RolloutScheme};
use nsv::stage1::Stage1Config;
use nsv::statevars::DenseTrainConfig;
use nsv::systems::{SystemKind, SystemSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdMethod {
    #[serde(rename = "levina-bickel")]
    LevinaBickel,
    #[serde(rename = "cd")]
    CorrelationDimension,
}

impl std::str::FromStr for IdMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "levina-bickel" | "lb" => Ok(IdMethod::LevinaBickel),
            "cd" => Ok(IdMethod::CorrelationDimension),
            _ => Err(format!("unknown method `{s}` (levina-bickel, cd)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdConfig {
    pub method: IdMethod,
    pub k: usize,
    /// Averages the estimate over `k` in `[lo, hi]` instead of a single `k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_band: Option<[usize; 2]>,
    pub max_points: usize,
    pub split: Split,
    pub seed: u64,
    /// Also estimate on flattened raw frames.
    pub raw_frames: bool,
}

impl Default for IdConfig {
    fn default() -> Self {
        Self {
            method: IdMethod::LevinaBickel,
            k: 20,
            k_band: None,
            max_points: 5000,
            split: Split::Train,
            seed: 0,
            raw_frames: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub schemes: Vec<RolloutScheme>,
    pub steps: usize,
    pub initial_states: usize,
    /// Replaces the N of every hybrid scheme.
    pub hybrid_n: usize,
    pub seed: u64,
    pub perturbations: Vec<PerturbationSpec>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        let mut perturbations = Vec::new();
        for (i, kind) in [
            PerturbationKind::OcclusionSquare,
            PerturbationKind::BackgroundSquare,
            PerturbationKind::GaussianNoise,
        ]
        .into_iter()
        .enumerate()
        {
            for (j, level) in [1.0 / 256.0, 1.0 / 64.0, 1.0 / 16.0]
                .into_iter()
                .enumerate()
            {
                perturbations.push(PerturbationSpec {
                    kind,
                    level,
                    seed: 1000 * (i as u64 + 1) + j as u64,
                });
            }
        }
        Self {
            schemes: vec![
                RolloutScheme::HighDimLatent,
                RolloutScheme::ThroughNsv,
                RolloutScheme::Hybrid { n: 4 },
            ],
            steps: 60,
            initial_states: 20,
            hybrid_n: 4,
            seed: 1,
            perturbations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub split: Split,
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            max_samples: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub runs_dir: PathBuf,
    pub system: SystemKind,
    /// Full system parameters; the preset of `system` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<SystemSpec>,
    pub dataset: DatasetConfig,
    pub stage1: Stage1Config,
    pub intdim: IdConfig,
    /// Stage-2 bottleneck width; the rounded estimate when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<usize>,
    pub stage2: DenseTrainConfig,
    pub dynamics: DenseTrainConfig,
    pub rollout: RolloutConfig,
    pub evaluate: EvaluateConfig,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "desk-v1".into(),
            runs_dir: PathBuf::from("runs"),
            system: SystemKind::RigidDoublePendulum,
            spec: None,
            dataset: DatasetConfig::default(),
            stage1: Stage1Config::default(),
            intdim: IdConfig::default(),
            id: None,
            stage2: DenseTrainConfig::default(),
            dynamics: DenseTrainConfig::default(),
            rollout: RolloutConfig::default(),
            evaluate: EvaluateConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))
    }

    pub fn system_spec(&self) -> SystemSpec {
        self.spec
            .clone()
            .unwrap_or_else(|| SystemSpec::preset(self.system))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }

    /// Rollout schemes with the configured hybrid N applied.
    pub fn schemes(&self) -> Vec<RolloutScheme> {
        self.rollout
            .schemes
            .iter()
            .map(|s| match s {
                RolloutScheme::Hybrid { .. } => RolloutScheme::Hybrid {
                    n: self.rollout.hybrid_n,
                },
                other => *other,
            })
            .collect()
    }
}

/// Checks every field and returns the normalized config, or every problem
/// found.
pub fn validate_config(mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut bad = Vec::new();
    if cfg.name.is_empty() || cfg.name.contains(['/', '\\']) || cfg.name == "." || cfg.name == ".."
    {
        bad.push(format!(
            "name `{}` must be a plain directory name",
            cfg.name
        ));
    }
    if let Some(spec) = &cfg.spec {
        if spec.system != cfg.system {
            bad.push(format!(
                "spec.system `{}` differs from system `{}`",
                spec.system, cfg.system
            ));
        }
        if let Err(e) = spec.validate() {
            bad.push(format!("spec: {e}"));
        }
    }
    bad.extend(
        cfg.dataset
            .validate()
            .into_iter()
            .map(|m| format!("dataset: {m}")),
    );
    bad.extend(cfg.stage1.validate());
    let id = &cfg.intdim;
    if id.k < 3 {
        bad.push(format!(
            "intdim.k must be >= 3 so that k - 2 > 0 (got {})",
            id.k
        ));
    }
    if let Some([lo, hi]) = id.k_band {
        if lo < 3 || hi < lo {
            bad.push(format!("intdim.k_band [{lo}, {hi}] needs 3 <= lo <= hi"));
        }
    }
    if id.max_points <= id.k {
        bad.push(format!(
            "intdim.max_points ({}) must exceed k ({})",
            id.max_points, id.k
        ));
    }
    if cfg.id == Some(0) {
        bad.push("id must be >= 1".into());
    }
    bad.extend(cfg.stage2.validate("stage2"));
    bad.extend(cfg.dynamics.validate("dynamics"));
    let r = &cfg.rollout;
    if r.hybrid_n < 1 {
        bad.push("rollout.hybrid_n must be >= 1".into());
    }
    if r.steps < 1 {
        bad.push("rollout.steps must be >= 1".into());
    }
    if r.initial_states < 2 {
        bad.push("rollout.initial_states must be >= 2".into());
    }
    if r.schemes.is_empty() {
        bad.push("rollout.schemes must not be empty".into());
    }
    for p in &r.perturbations {
        let noise = p.kind == PerturbationKind::GaussianNoise;
        let ok = p.level.is_finite()
            && p.level <= 1.0
            && if noise { p.level >= 0.0 } else { p.level > 0.0 };
        if !ok {
            bad.push(format!(
                "rollout.perturbations: level {} out of range for {:?}",
                p.level, p.kind
            ));
        }
    }
    if cfg.evaluate.max_samples == 0 {
        bad.push("evaluate.max_samples must be >= 1".into());
    }
    bad.extend(cfg.probe.validate());
    if !bad.is_empty() {
        return Err(CliError::Config(bad));
    }
    cfg.rollout.schemes = cfg.schemes();
    cfg.rollout.schemes.dedup();
    Ok(cfg)
}
