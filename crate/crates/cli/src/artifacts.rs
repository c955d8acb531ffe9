//! Artifact directory: one file per stage plus a manifest recording the
//! configuration hash of the stage and of everything upstream of it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    World,
    DataRm,
    DataMo,
    Rewards,
    Orchestrator,
    PolicyFixed,
    PolicyAdaptive,
    ConditionedOffline,
    ConditionedOnline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::World => "world",
            Stage::DataRm => "data-rm",
            Stage::DataMo => "data-mo",
            Stage::Rewards => "rewards",
            Stage::Orchestrator => "orchestrator",
            Stage::PolicyFixed => "policy-fixed",
            Stage::PolicyAdaptive => "policy-adaptive",
            Stage::ConditionedOffline => "conditioned-offline",
            Stage::ConditionedOnline => "conditioned-online",
        }
    }

    /// Main artifact file of the stage.
    pub fn file(self) -> &'static str {
        match self {
            Stage::World => "world.json",
            Stage::DataRm => "data_rm.jsonl",
            Stage::DataMo => "data_mo.jsonl",
            Stage::Rewards => "rewards.json",
            Stage::Orchestrator => "orchestrator.json",
            Stage::PolicyFixed => "policy_fixed.json",
            Stage::PolicyAdaptive => "policy_adaptive.json",
            Stage::ConditionedOffline => "conditioned_offline.json",
            Stage::ConditionedOnline => "conditioned_online.json",
        }
    }

    /// The command that produces the stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::World => "prefalign make-world",
            Stage::DataRm => "prefalign gen-data rm",
            Stage::DataMo => "prefalign gen-data mo",
            Stage::Rewards => "prefalign train rewards",
            Stage::Orchestrator => "prefalign train orchestrator",
            Stage::PolicyFixed => "prefalign train policy-fixed",
            Stage::PolicyAdaptive => "prefalign train policy-adaptive",
            Stage::ConditionedOffline => "prefalign train conditioned-offline",
            Stage::ConditionedOnline => "prefalign train conditioned-online",
        }
    }

    pub fn inputs(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            World => &[],
            DataRm | DataMo => &[World],
            Rewards => &[World, DataMo],
            Orchestrator => &[World, DataRm, Rewards],
            PolicyFixed => &[World, Rewards],
            PolicyAdaptive => &[World, Rewards, Orchestrator],
            ConditionedOffline => &[World, DataRm, Rewards],
            ConditionedOnline => &[World, Rewards, Orchestrator, ConditionedOffline],
        }
    }

    /// The part of the run configuration the stage depends on directly.
    fn section(self, config: &RunConfig) -> Value {
        match self {
            Stage::World => json!(config.world),
            Stage::DataRm => json!({ "pairs": config.data.rm_pairs, "holdout_fraction": config.data.holdout_fraction }),
            Stage::DataMo => json!({ "pairs": config.data.mo_pairs, "holdout_fraction": config.data.holdout_fraction }),
            Stage::Rewards => json!(config.rewards),
            Stage::Orchestrator => json!({ "temperature": config.temperature, "train": config.orchestrator }),
            Stage::PolicyFixed => json!({ "policy": config.policy, "fixed_weights": config.fixed_weights }),
            Stage::PolicyAdaptive => json!(config.policy),
            Stage::ConditionedOffline => json!({ "temperature": config.temperature, "train": config.conditioned }),
            Stage::ConditionedOnline => json!({ "holdout_fraction": config.data.holdout_fraction, "online": config.online }),
        }
    }

    /// Hash of the stage's configuration, its seed and the expected hashes
    /// of its inputs.
    pub fn config_hash(self, config: &RunConfig) -> String {
        let inputs: BTreeMap<&str, String> = self.inputs().iter().map(|s| (s.name(), s.config_hash(config))).collect();
        let doc = json!({
            "stage": self.name(),
            "seed": config.seed,
            "config": self.section(config),
            "inputs": inputs,
        });
        sha256_hex(doc.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    /// Config hashes of the upstream artifacts that were actually read.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file the stage wrote.
    pub files: BTreeMap<String, String>,
    /// Seconds since the Unix epoch; not part of any hash.
    pub created_unix: u64,
}

/// An artifact directory together with the run's configuration.
pub struct Store {
    pub root: PathBuf,
    pub config: RunConfig,
    pub force: bool,
}

impl Store {
    pub fn new(root: PathBuf, config: RunConfig, force: bool) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("creating artifact directory {}", root.display()))?;
        Ok(Self { root, config, force })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("{}.manifest.json", stage.name()))
    }

    pub fn reports_dir(&self) -> Result<PathBuf> {
        let dir = self.root.join("reports");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<Manifest> {
        let path = self.manifest_path(stage);
        if !path.exists() {
            bail!(
                "missing upstream stage `{}`: no manifest at {}; run `{}` first",
                stage.name(),
                path.display(),
                stage.command()
            );
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    fn stale(&self, message: String) -> Result<()> {
        if self.force {
            eprintln!("warning: {message} (continuing because of --force)");
            Ok(())
        } else {
            bail!("{message}; rerun the stage or pass --force")
        }
    }

    /// Checks an upstream stage against the current configuration and its
    /// recorded file hashes, returning the path of its main file.
    pub fn require(&self, stage: Stage) -> Result<(PathBuf, Manifest)> {
        let manifest = self.read_manifest(stage)?;
        let expected = stage.config_hash(&self.config);
        if manifest.config_hash != expected {
            self.stale(format!(
                "stale upstream stage `{}`: built with config hash {} but the current config expects {}",
                stage.name(),
                short(&manifest.config_hash),
                short(&expected)
            ))?;
        }
        for (file, recorded) in &manifest.files {
            let path = self.path(file);
            let bytes = fs::read(&path).with_context(|| {
                format!("missing file {} of stage `{}`; run `{}`", path.display(), stage.name(), stage.command())
            })?;
            if &sha256_hex(&bytes) != recorded {
                self.stale(format!("{} changed after stage `{}` wrote it", path.display(), stage.name()))?;
            }
        }
        Ok((self.path(stage.file()), manifest))
    }

    pub fn read_json<T: serde::de::DeserializeOwned>(&self, stage: Stage) -> Result<T> {
        let (path, _) = self.require(stage)?;
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Records the manifest of `stage` after its files are written. Every
    /// input is checked again so the manifest reflects what was read.
    pub fn finish(&self, stage: Stage, files: &[&str]) -> Result<Manifest> {
        let mut inputs = BTreeMap::new();
        for input in stage.inputs() {
            let (_, m) = self.require(*input)?;
            inputs.insert(input.name().to_string(), m.config_hash);
        }
        let mut hashes = BTreeMap::new();
        for file in files {
            let bytes = fs::read(self.path(file)).with_context(|| format!("reading back {file}"))?;
            hashes.insert(file.to_string(), sha256_hex(&bytes));
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            stage: stage.name().to_string(),
            seed: self.config.seed,
            config_hash: stage.config_hash(&self.config),
            inputs,
            files: hashes,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_file(&self.manifest_path(stage), text.as_bytes())?;
        Ok(manifest)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_follow_the_dependency_chain() {
        let base = RunConfig::default();
        let mut changed = base.clone();
        changed.online.candidates = 2;
        assert_eq!(Stage::World.config_hash(&base), Stage::World.config_hash(&changed));
        assert_eq!(Stage::Rewards.config_hash(&base), Stage::Rewards.config_hash(&changed));
        assert_ne!(
            Stage::ConditionedOnline.config_hash(&base),
            Stage::ConditionedOnline.config_hash(&changed)
        );

        let mut world = base.clone();
        world.world.num_prompts += 1;
        for stage in [Stage::DataRm, Stage::Rewards, Stage::ConditionedOnline] {
            assert_ne!(stage.config_hash(&base), stage.config_hash(&world));
        }

        let mut seed = base.clone();
        seed.seed = 1;
        assert_ne!(Stage::World.config_hash(&base), Stage::World.config_hash(&seed));
    }

    #[test]
    fn artifact_location_does_not_enter_hashes() {
        let base = RunConfig::default();
        let moved = RunConfig {
            artifacts: Some("elsewhere".into()),
            ..base.clone()
        };
        assert_eq!(Stage::ConditionedOnline.config_hash(&base), Stage::ConditionedOnline.config_hash(&moved));
    }
}
