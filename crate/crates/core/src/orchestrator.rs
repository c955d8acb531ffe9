//! The preference orchestrator: a small network mapping prompt features to a
//! point on the weight simplex, trained to match softmax-normalized reward
//! vectors of preferred responses under `KL(f(x) ‖ w*)`.

use serde::{Deserialize, Serialize};

use crate::environment::{PreferencePair, PromptFeatures, RandomState};
use crate::error::{check_arity, Error, Result};
use crate::nn::{shuffled_batches, AdamConfig, AdamW, HeadInit, Mlp};
use crate::rewards::{normalize_weights, RewardModelSet, DEFAULT_TEMPERATURE};
use crate::simplex::{kl_divergence, log_sum_exp, softmax, WeightVector, LOG_CLAMP};

pub const ORCHESTRATOR_VERSION: u32 = 1;

/// Targets further than this from the simplex are rejected by the loss.
pub const TARGET_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Orchestrator {
    pub feature_dim: usize,
    pub num_objectives: usize,
    /// Temperature used to build the targets this network was trained on.
    pub temperature: f64,
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTargetRecord {
    pub prompt_index: usize,
    pub target: WeightVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Lower bound on optimizer steps; extends `epochs` for small datasets.
    pub min_steps: usize,
    pub hidden_width: usize,
    pub head_init: HeadInit,
    pub adam: AdamConfig,
}

impl Default for OrchestratorTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 32,
            epochs: 20,
            min_steps: 0,
            hidden_width: 32,
            head_init: HeadInit::Zero,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrchestratorDoc {
    version: u32,
    feature_dim: usize,
    num_objectives: usize,
    hidden: usize,
    temperature: f64,
    params: Vec<f64>,
}

impl Serialize for Orchestrator {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        OrchestratorDoc {
            version: ORCHESTRATOR_VERSION,
            feature_dim: self.feature_dim,
            num_objectives: self.num_objectives,
            hidden: self.net.hidden,
            temperature: self.temperature,
            params: self.net.params.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Orchestrator {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = OrchestratorDoc::deserialize(deserializer)?;
        if doc.version != ORCHESTRATOR_VERSION {
            return Err(D::Error::custom(format!("unsupported orchestrator version {}", doc.version)));
        }
        if doc.num_objectives < 2 {
            return Err(D::Error::custom("orchestrator needs at least two objectives"));
        }
        let net = Mlp::from_params(doc.feature_dim, doc.hidden, doc.num_objectives, doc.params)
            .map_err(D::Error::custom)?;
        Ok(Self {
            feature_dim: doc.feature_dim,
            num_objectives: doc.num_objectives,
            temperature: doc.temperature,
            net,
        })
    }
}

pub fn init_orchestrator(
    feature_dim: usize,
    num_objectives: usize,
    hidden: usize,
    head: HeadInit,
    rng: &mut RandomState,
) -> Result<Orchestrator> {
    if feature_dim == 0 || hidden == 0 {
        return Err(Error::Parameter("orchestrator dimensions must be positive".into()));
    }
    if num_objectives < 2 {
        return Err(Error::Parameter(format!(
            "orchestrator needs at least two objectives, got {num_objectives}"
        )));
    }
    Ok(Orchestrator {
        feature_dim,
        num_objectives,
        temperature: DEFAULT_TEMPERATURE,
        net: Mlp::init(feature_dim, hidden, num_objectives, head, rng),
    })
}

fn check_target(target: &[f64], k: usize) -> Result<()> {
    check_arity("orchestrator target", k, target.len())?;
    let sum: f64 = target.iter().sum();
    if target.iter().any(|t| !t.is_finite() || *t < -TARGET_TOL) || (sum - 1.0).abs() > TARGET_TOL {
        return Err(Error::Data(format!("target {target:?} is off the simplex")));
    }
    Ok(())
}

impl Orchestrator {
    pub fn forward(&self, x: &PromptFeatures) -> Result<WeightVector> {
        check_arity("orchestrator input", self.feature_dim, x.dim())?;
        WeightVector::new(softmax(&self.net.output(&x.0)))
    }

    /// Mean `KL(f(x_i) ‖ w_i)` over the batch and its parameter gradient.
    /// Target entries are clamped below at [`LOG_CLAMP`] inside the logarithm.
    pub fn kl_loss_and_grad(&self, batch: &[(&PromptFeatures, &[f64])]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Data("empty orchestrator batch".into()));
        }
        let mut grad = vec![0.0; self.net.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let mut d_logits = vec![0.0; self.num_objectives];
        for (x, target) in batch {
            check_arity("orchestrator input", self.feature_dim, x.dim())?;
            check_target(target, self.num_objectives)?;
            let act = self.net.forward(&x.0);
            let lse = log_sum_exp(&act.output);
            let log_p: Vec<f64> = act.output.iter().map(|z| z - lse).collect();
            let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
            // ℓ_j = log p_j − log q_j; the KL gradient in logit space is p_j (ℓ_j − E_p[ℓ]).
            let ell: Vec<f64> = log_p
                .iter()
                .zip(target.iter())
                .map(|(lp, q)| lp - q.max(LOG_CLAMP).ln())
                .collect();
            let mean_ell: f64 = p.iter().zip(&ell).map(|(a, b)| a * b).sum();
            loss += mean_ell * scale;
            for j in 0..self.num_objectives {
                d_logits[j] = p[j] * (ell[j] - mean_ell) * scale;
            }
            self.net.backward(&x.0, &act, &d_logits, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Mean `KL(f(x) ‖ w(x))` over `prompts`.
    pub fn mean_kl_to(&self, prompts: &[PromptFeatures], weights: &[WeightVector]) -> Result<f64> {
        check_arity("reference weights", prompts.len(), weights.len())?;
        let mut total = 0.0;
        for (x, w) in prompts.iter().zip(weights) {
            let f = self.forward(x)?;
            let clamped: Vec<f64> = w.as_slice().iter().map(|q| q.max(LOG_CLAMP)).collect();
            total += kl_divergence(f.as_slice(), &clamped);
        }
        Ok(total / prompts.len().max(1) as f64)
    }
}

/// One target per pair: the normalized reward vector of the preferred
/// response. Rejected responses are never scored.
pub fn build_targets(
    pairs: &[PreferencePair],
    models: &RewardModelSet,
    prompts: &[PromptFeatures],
    temperature: f64,
) -> Result<Vec<WeightTargetRecord>> {
    let k = models.num_objectives();
    pairs
        .iter()
        .map(|pair| {
            let x = prompts
                .get(pair.prompt_index)
                .ok_or_else(|| Error::Data(format!("pair refers to missing prompt {}", pair.prompt_index)))?;
            let r = models.reward_vector(k, x, pair.chosen)?;
            Ok(WeightTargetRecord {
                prompt_index: pair.prompt_index,
                target: normalize_weights(r.as_slice(), temperature)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainedOrchestrator {
    pub orchestrator: Orchestrator,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

pub fn train_orchestrator(
    targets: &[WeightTargetRecord],
    prompts: &[PromptFeatures],
    temperature: f64,
    config: &OrchestratorTrainConfig,
    rng: &mut RandomState,
) -> Result<TrainedOrchestrator> {
    let first = targets
        .first()
        .ok_or_else(|| Error::Data("cannot train the orchestrator without targets".into()))?;
    let k = first.target.len();
    let d = prompts
        .first()
        .map(PromptFeatures::dim)
        .ok_or_else(|| Error::Data("no prompt features".into()))?;
    for t in targets {
        if t.prompt_index >= prompts.len() {
            return Err(Error::Data(format!("target refers to missing prompt {}", t.prompt_index)));
        }
        check_arity("orchestrator target", k, t.target.len())?;
    }
    let mut orchestrator = init_orchestrator(d, k, config.hidden_width, config.head_init, rng)?;
    orchestrator.temperature = temperature;
    let mut opt = AdamW::new(orchestrator.net.params.len(), config.learning_rate, config.adam);

    let batches_per_epoch = targets.len().div_ceil(config.batch_size.max(1));
    let epochs = config.epochs.max(config.min_steps.div_ceil(batches_per_epoch));
    let mut loss_history = Vec::with_capacity(epochs);
    let mut step = 0;
    for _ in 0..epochs {
        let mut epoch_loss = 0.0;
        for batch in shuffled_batches(targets.len(), config.batch_size, rng) {
            let items: Vec<(&PromptFeatures, &[f64])> = batch
                .iter()
                .map(|&i| (&prompts[targets[i].prompt_index], targets[i].target.as_slice()))
                .collect();
            let (loss, grad) = orchestrator.kl_loss_and_grad(&items)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    stage: "orchestrator training",
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut orchestrator.net.params, &grad);
            step += 1;
        }
        loss_history.push(epoch_loss / targets.len() as f64);
    }
    Ok(TrainedOrchestrator {
        orchestrator,
        loss_history,
    })
}
