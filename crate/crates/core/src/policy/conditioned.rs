//! Weight-conditioned categorical policy `π(y | x, w)` with offline
//! maximum-likelihood warm-up and best-of-M online refinement.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{PromptFeatures, RandomState, ResponseId};
use crate::error::{check_arity, Error, Result};
use crate::nn::{shuffled_batches, AdamConfig, AdamW, HeadInit, Mlp};
use crate::orchestrator::Orchestrator;
use crate::rewards::RewardTable;
use crate::simplex::{kl_divergence, log_sum_exp, softmax, WeightVector};

pub const CONDITIONED_POLICY_VERSION: u32 = 1;

/// A network over `[x; w]` with a softmax head over the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedPolicy {
    pub feature_dim: usize,
    pub num_objectives: usize,
    pub num_responses: usize,
    pub net: Mlp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionedDoc {
    version: u32,
    feature_dim: usize,
    num_objectives: usize,
    num_responses: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl Serialize for ConditionedPolicy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ConditionedDoc {
            version: CONDITIONED_POLICY_VERSION,
            feature_dim: self.feature_dim,
            num_objectives: self.num_objectives,
            num_responses: self.num_responses,
            hidden: self.net.hidden,
            params: self.net.params.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConditionedPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ConditionedDoc::deserialize(deserializer)?;
        if doc.version != CONDITIONED_POLICY_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported conditioned policy version {}",
                doc.version
            )));
        }
        let net = Mlp::from_params(
            doc.feature_dim + doc.num_objectives,
            doc.hidden,
            doc.num_responses,
            doc.params,
        )
        .map_err(D::Error::custom)?;
        Ok(Self {
            feature_dim: doc.feature_dim,
            num_objectives: doc.num_objectives,
            num_responses: doc.num_responses,
            net,
        })
    }
}

/// One supervised example: respond with `response` to prompt `prompt_index`
/// under `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedRecord {
    pub prompt_index: usize,
    pub weights: WeightVector,
    pub response: ResponseId,
}

impl ConditionedPolicy {
    pub fn init(
        feature_dim: usize,
        num_objectives: usize,
        num_responses: usize,
        hidden: usize,
        head: HeadInit,
        rng: &mut RandomState,
    ) -> Result<Self> {
        if feature_dim == 0 || num_objectives == 0 || hidden == 0 || num_responses < 2 {
            return Err(Error::Parameter("invalid conditioned policy dimensions".into()));
        }
        Ok(Self {
            feature_dim,
            num_objectives,
            num_responses,
            net: Mlp::init(feature_dim + num_objectives, hidden, num_responses, head, rng),
        })
    }

    fn input(&self, x: &PromptFeatures, w: &WeightVector) -> Result<Vec<f64>> {
        check_arity("conditioned policy features", self.feature_dim, x.dim())?;
        check_arity("conditioned policy weights", self.num_objectives, w.len())?;
        let mut input = Vec::with_capacity(self.feature_dim + self.num_objectives);
        input.extend_from_slice(&x.0);
        input.extend_from_slice(w.as_slice());
        Ok(input)
    }

    pub fn probabilities(&self, x: &PromptFeatures, w: &WeightVector) -> Result<Vec<f64>> {
        Ok(softmax(&self.net.output(&self.input(x, w)?)))
    }

    /// Mean negative log-likelihood `−log π(y | x, w)` and its gradient.
    pub fn nll_loss_and_grad(&self, batch: &[(&PromptFeatures, &WeightVector, ResponseId)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Data("empty conditioned-policy batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.net.params.len()];
        let mut loss = 0.0;
        for &(x, w, y) in batch {
            if y >= self.num_responses {
                return Err(Error::Data(format!("response {y} outside the catalog")));
            }
            let input = self.input(x, w)?;
            let act = self.net.forward(&input);
            let lse = log_sum_exp(&act.output);
            loss += (lse - act.output[y]) * scale;
            let mut d_out: Vec<f64> = act.output.iter().map(|z| (z - lse).exp() * scale).collect();
            d_out[y] -= scale;
            self.net.backward(&input, &act, &d_out, &mut grad);
        }
        Ok((loss, grad))
    }

    pub fn sample(&self, x: &PromptFeatures, w: &WeightVector, rng: &mut impl Rng) -> Result<ResponseId> {
        let probs = self.probabilities(x, w)?;
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::Data(format!("cannot sample policy: {e}")))?;
        Ok(dist.sample(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionedTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_width: usize,
    pub head_init: HeadInit,
    pub adam: AdamConfig,
}

impl Default for ConditionedTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 30,
            hidden_width: 32,
            head_init: HeadInit::Zero,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedConditioned {
    pub policy: ConditionedPolicy,
    /// Mean loss of each epoch.
    pub loss_history: Vec<f64>,
}

fn check_records(records: &[ConditionedRecord], prompts: &[PromptFeatures]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Data("no conditioned-policy records".into()));
    }
    if let Some(r) = records.iter().find(|r| r.prompt_index >= prompts.len()) {
        return Err(Error::Data(format!("record refers to missing prompt {}", r.prompt_index)));
    }
    Ok(())
}

fn fit_epochs(
    policy: &mut ConditionedPolicy,
    opt: &mut AdamW,
    records: &[ConditionedRecord],
    prompts: &[PromptFeatures],
    epochs: usize,
    batch_size: usize,
    stage: &'static str,
    rng: &mut RandomState,
) -> Result<Vec<f64>> {
    let mut history = Vec::with_capacity(epochs);
    let mut step = 0;
    for _ in 0..epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(records.len(), batch_size, rng) {
            let items: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let r = &records[i];
                    (&prompts[r.prompt_index], &r.weights, r.response)
                })
                .collect();
            let (loss, grad) = policy.nll_loss_and_grad(&items)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    stage,
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            total += loss * batch.len() as f64;
            opt.step(&mut policy.net.params, &grad);
            step += 1;
        }
        history.push(total / records.len() as f64);
    }
    Ok(history)
}

/// Offline warm-up: maximum likelihood of the recorded responses given
/// their prompts and weights.
pub fn fit_conditioned_offline(
    records: &[ConditionedRecord],
    prompts: &[PromptFeatures],
    num_responses: usize,
    config: &ConditionedTrainConfig,
    rng: &mut RandomState,
) -> Result<TrainedConditioned> {
    check_records(records, prompts)?;
    let k = records[0].weights.len();
    let d = prompts[0].dim();
    let mut policy = ConditionedPolicy::init(d, k, num_responses, config.hidden_width, config.head_init, rng)?;
    let mut opt = AdamW::new(policy.net.params.len(), config.learning_rate, config.adam);
    let loss_history = fit_epochs(
        &mut policy,
        &mut opt,
        records,
        prompts,
        config.epochs,
        config.batch_size,
        "conditioned offline fit",
        rng,
    )?;
    Ok(TrainedConditioned { policy, loss_history })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    pub epochs: usize,
    pub prompts_per_epoch: usize,
    /// Candidates sampled per prompt; the best one under the adapter weight is kept.
    pub candidates: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passes over each epoch's kept samples.
    pub passes: usize,
    pub adam: AdamConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            prompts_per_epoch: 5000,
            candidates: 4,
            learning_rate: 1e-3,
            batch_size: 32,
            passes: 1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineEpochStats {
    pub epoch: usize,
    /// Mean adapter-scalarized reward over every sampled candidate.
    pub mean_raw_reward: f64,
    /// Mean adapter-scalarized reward of the kept candidates.
    pub mean_kept_reward: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineRefinement {
    pub policy: ConditionedPolicy,
    pub epochs: Vec<OnlineEpochStats>,
    /// Mean `KL(π_refined ‖ π_start)` at the adapter weights over the prompt pool.
    pub drift_kl: f64,
}

/// Online stage: the orchestrator recommends `w = f_ψ(x)`, the policy samples
/// `candidates` responses, the best under `Σ_k w_k r_k` is kept, and the kept
/// samples are fit by maximum likelihood. No KL anchor to the starting policy
/// is applied; drift is only measured.
///
/// `rewards` holds reward-model scores for every prompt in `prompts`; online
/// prompts are drawn uniformly with replacement from `pool`.
pub fn online_refine(
    start: &ConditionedPolicy,
    orchestrator: &Orchestrator,
    rewards: &RewardTable,
    prompts: &[PromptFeatures],
    pool: &[usize],
    config: &OnlineConfig,
    rng: &mut RandomState,
) -> Result<OnlineRefinement> {
    if config.candidates < 1 {
        return Err(Error::Parameter("online refinement needs at least one candidate per prompt".into()));
    }
    if pool.is_empty() {
        return Err(Error::Data("empty online prompt pool".into()));
    }
    check_arity("reward table prompts", prompts.len(), rewards.num_prompts())?;
    check_arity("reward table catalog", start.num_responses, rewards.num_responses())?;
    check_arity("orchestrator objectives", start.num_objectives, orchestrator.num_objectives)?;
    if let Some(p) = pool.iter().find(|&&p| p >= prompts.len()) {
        return Err(Error::Data(format!("pool refers to missing prompt {p}")));
    }
    let weights: Vec<WeightVector> = prompts.iter().map(|x| orchestrator.forward(x)).collect::<Result<_>>()?;
    let mut policy = start.clone();
    let mut opt = AdamW::new(policy.net.params.len(), config.learning_rate, config.adam);
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut kept = Vec::with_capacity(config.prompts_per_epoch);
        let mut raw_total = 0.0;
        let mut kept_total = 0.0;
        for _ in 0..config.prompts_per_epoch {
            let p = pool[rng.random_range(0..pool.len())];
            let w = &weights[p];
            let scalarized = rewards.scalarized_row(p, w)?;
            let probs = policy.probabilities(&prompts[p], w)?;
            let dist = WeightedIndex::new(&probs).map_err(|e| Error::Data(format!("cannot sample policy: {e}")))?;
            let mut best: Option<(ResponseId, f64)> = None;
            for _ in 0..config.candidates {
                let y = dist.sample(rng);
                let score = scalarized[y];
                raw_total += score;
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((y, score));
                }
            }
            let (response, score) = best.expect("at least one candidate");
            kept_total += score;
            kept.push(ConditionedRecord {
                prompt_index: p,
                weights: w.clone(),
                response,
            });
        }
        let losses = fit_epochs(
            &mut policy,
            &mut opt,
            &kept,
            prompts,
            config.passes,
            config.batch_size,
            "conditioned online refinement",
            rng,
        )?;
        let n = config.prompts_per_epoch as f64;
        stats.push(OnlineEpochStats {
            epoch,
            mean_raw_reward: raw_total / (n * config.candidates as f64),
            mean_kept_reward: kept_total / n,
            mean_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
        });
    }
    let mut drift = 0.0;
    for &p in pool {
        let after = policy.probabilities(&prompts[p], &weights[p])?;
        let before = start.probabilities(&prompts[p], &weights[p])?;
        drift += kl_divergence(&after, &before);
    }
    Ok(OnlineRefinement {
        policy,
        epochs: stats,
        drift_kl: drift / pool.len() as f64,
    })
}

/// `E_{y∼π(·|x,w)}[Σ_k w_k r_k(x, y)]` averaged over `indices`, by enumeration,
/// with `weights[p]` used both to condition and to scalarize.
pub fn expected_scalarized_reward(
    policy: &ConditionedPolicy,
    prompts: &[PromptFeatures],
    weights: &[WeightVector],
    rewards: &RewardTable,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Data("no prompts to evaluate".into()));
    }
    let mut total = 0.0;
    for &p in indices {
        let probs = policy.probabilities(&prompts[p], &weights[p])?;
        let row = rewards.scalarized_row(p, &weights[p])?;
        total += probs.iter().zip(&row).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total / indices.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::rng_from_seed;

    fn prompts() -> Vec<PromptFeatures> {
        vec![PromptFeatures(vec![0.5, -1.0]), PromptFeatures(vec![-0.3, 0.8])]
    }

    #[test]
    fn zero_head_loss_is_log_catalog() {
        let mut rng = rng_from_seed(0);
        let pi = ConditionedPolicy::init(2, 2, 6, 8, HeadInit::Zero, &mut rng).unwrap();
        let ps = prompts();
        let w = WeightVector::uniform(2);
        let (loss, _) = pi.nll_loss_and_grad(&[(&ps[0], &w, 3), (&ps[1], &w, 0)]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn memorizes_single_record() {
        let mut rng = rng_from_seed(1);
        let ps = prompts();
        let rec = ConditionedRecord {
            prompt_index: 1,
            weights: WeightVector::new(vec![0.3, 0.7]).unwrap(),
            response: 2,
        };
        let cfg = ConditionedTrainConfig {
            epochs: 500,
            ..Default::default()
        };
        let trained = fit_conditioned_offline(&[rec.clone()], &ps, 5, &cfg, &mut rng).unwrap();
        let p = trained.policy.probabilities(&ps[1], &rec.weights).unwrap();
        assert!(p[2] > 0.99, "{p:?}");
    }

    #[test]
    fn offline_rejects_empty() {
        let mut rng = rng_from_seed(1);
        let err = fit_conditioned_offline(&[], &prompts(), 5, &ConditionedTrainConfig::default(), &mut rng);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn serialization_round_trips() {
        let mut rng = rng_from_seed(2);
        let pi = ConditionedPolicy::init(2, 3, 4, 5, HeadInit::Scaled, &mut rng).unwrap();
        let text = serde_json::to_string(&pi).unwrap();
        assert_eq!(serde_json::from_str::<ConditionedPolicy>(&text).unwrap(), pi);
    }
}
