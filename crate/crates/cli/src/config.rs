use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prefalign::analysis::{CurveConfig, Theorem1Config};
use prefalign::environment::WorldConfig;
use prefalign::orchestrator::OrchestratorTrainConfig;
use prefalign::policy::{ConditionedTrainConfig, OnlineConfig, PolicyOptConfig};
use prefalign::rewards::{RewardTrainConfig, DEFAULT_TEMPERATURE};
use prefalign::WeightVector;
use serde::{Deserialize, Serialize};

/// Everything a run needs. Every section is optional in the file; missing
/// keys take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Artifact directory; `--out` and `PREFALIGN_ARTIFACTS` take part in
    /// the lookup as well.
    pub artifacts: Option<PathBuf>,
    /// Normalization temperature for orchestrator targets.
    pub temperature: f64,
    /// Weights of the fixed-weight baseline; uniform when absent.
    pub fixed_weights: Option<Vec<f64>>,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub rewards: RewardTrainConfig,
    pub orchestrator: OrchestratorTrainConfig,
    pub policy: PolicyOptConfig,
    pub conditioned: ConditionedTrainConfig,
    pub online: OnlineConfig,
    pub theorem1: Theorem1Config,
    pub curves: CurveConfig,
    pub pareto: ParetoConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Single-label preference pairs (orchestrator and conditioned policy).
    pub rm_pairs: usize,
    /// Multi-objective pairs (reward models).
    pub mo_pairs: usize,
    /// Trailing share of prompts held out of every dataset.
    pub holdout_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            rm_pairs: 2000,
            mo_pairs: 4000,
            holdout_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoConfig {
    /// Grid resolution per simplex coordinate.
    pub divisions: usize,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self { divisions: 10 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            artifacts: None,
            temperature: DEFAULT_TEMPERATURE,
            fixed_weights: None,
            world: WorldConfig::default(),
            data: DataConfig::default(),
            rewards: RewardTrainConfig::default(),
            orchestrator: OrchestratorTrainConfig::default(),
            policy: PolicyOptConfig::default(),
            conditioned: ConditionedTrainConfig::default(),
            online: OnlineConfig::default(),
            theorem1: Theorem1Config::default(),
            curves: CurveConfig::default(),
            pareto: ParetoConfig::default(),
        }
    }
}

fn positive(value: f64, name: &str) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        bail!("{name} must be positive, got {value}");
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        positive(self.temperature, "temperature")?;
        positive(self.policy.beta, "policy.beta")?;
        positive(self.curves.beta, "curves.beta")?;
        positive(self.rewards.learning_rate, "rewards.learning_rate")?;
        positive(self.orchestrator.learning_rate, "orchestrator.learning_rate")?;
        positive(self.conditioned.learning_rate, "conditioned.learning_rate")?;
        positive(self.online.learning_rate, "online.learning_rate")?;
        if self.data.rm_pairs == 0 || self.data.mo_pairs == 0 {
            bail!("data.rm_pairs and data.mo_pairs must be positive");
        }
        if !(0.0..1.0).contains(&self.data.holdout_fraction) {
            bail!("data.holdout_fraction must lie in [0, 1), got {}", self.data.holdout_fraction);
        }
        if self.online.candidates == 0 {
            bail!("online.candidates (M) must be at least 1");
        }
        if self.pareto.divisions == 0 {
            bail!("pareto.divisions must be positive");
        }
        if let Some(w) = &self.fixed_weights {
            if w.len() != self.world.num_objectives {
                bail!(
                    "fixed_weights has {} entries but the world has {} objectives",
                    w.len(),
                    self.world.num_objectives
                );
            }
            WeightVector::new(w.clone()).context("fixed_weights")?;
        }
        Ok(())
    }

    pub fn fixed_weights(&self) -> Result<WeightVector> {
        match &self.fixed_weights {
            Some(w) => Ok(WeightVector::new(w.clone())?),
            None => Ok(WeightVector::uniform(self.world.num_objectives)),
        }
    }
}
