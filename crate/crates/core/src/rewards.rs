//! Per-objective reward models trained on pairwise preferences, reward
//! vectors, weighted scalarization and temperature-softmax normalization.

use serde::{Deserialize, Serialize};

use crate::environment::{MultiObjectivePreferencePair, PreferencePair, PromptFeatures, RandomState, ResponseId};
use crate::error::{check_arity, Error, Result};
use crate::nn::{shuffled_batches, AdamConfig, AdamW, HeadInit, Mlp};
use crate::simplex::{log_sigmoid, sigmoid, softmax, RewardVector, WeightVector};

/// Temperature applied to reward vectors before the softmax.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

pub const REWARD_MODEL_VERSION: u32 = 1;

/// Dense `prompts × responses × objectives` reward scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    num_prompts: usize,
    num_responses: usize,
    num_objectives: usize,
    scores: Vec<f64>,
}

impl RewardTable {
    pub fn zeros(num_prompts: usize, num_responses: usize, num_objectives: usize) -> Self {
        Self {
            num_prompts,
            num_responses,
            num_objectives,
            scores: vec![0.0; num_prompts * num_responses * num_objectives],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.num_prompts, self.num_responses, self.num_objectives)
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_responses(&self) -> usize {
        self.num_responses
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    fn offset(&self, p: usize, y: usize, k: usize) -> usize {
        (p * self.num_responses + y) * self.num_objectives + k
    }

    pub fn get(&self, p: usize, y: ResponseId, k: usize) -> f64 {
        self.scores[self.offset(p, y, k)]
    }

    pub fn set(&mut self, p: usize, y: ResponseId, k: usize, value: f64) {
        let i = self.offset(p, y, k);
        self.scores[i] = value;
    }

    pub fn vector(&self, p: usize, y: ResponseId) -> RewardVector {
        let start = self.offset(p, y, 0);
        RewardVector::new(self.scores[start..start + self.num_objectives].to_vec())
            .expect("reward tables hold finite scores")
    }

    /// Rewards of objective `k` over the catalog for prompt `p`.
    pub fn objective_row(&self, p: usize, k: usize) -> Vec<f64> {
        (0..self.num_responses).map(|y| self.get(p, y, k)).collect()
    }

    /// `r_mo(x_p, y; w)` over the catalog.
    pub fn scalarized_row(&self, p: usize, w: &WeightVector) -> Result<Vec<f64>> {
        check_arity("scalarization weights", self.num_objectives, w.len())?;
        Ok((0..self.num_responses)
            .map(|y| (0..self.num_objectives).map(|k| w[k] * self.get(p, y, k)).sum())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub head_init: HeadInit,
    pub adam: AdamConfig,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 30,
            batch_size: 64,
            hidden_width: 32,
            head_init: HeadInit::Zero,
            adam: AdamConfig::default(),
        }
    }
}

/// Scorer `r_φ(x, y)` for one objective: a one-hidden-layer network over
/// prompt features concatenated with a one-hot response id.
///
/// Pairwise preferences only identify a reward up to a per-prompt constant,
/// so [`RewardModel::score`] reports the network output centered over the
/// catalog. The preference loss depends on score differences only and is
/// unaffected by the centering.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub objective: usize,
    pub feature_dim: usize,
    pub num_responses: usize,
    pub net: Mlp,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardModelDoc {
    version: u32,
    objective: usize,
    architecture: Architecture,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Architecture {
    feature_dim: usize,
    num_responses: usize,
    hidden: usize,
    activation: String,
}

impl Serialize for RewardModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RewardModelDoc {
            version: REWARD_MODEL_VERSION,
            objective: self.objective,
            architecture: Architecture {
                feature_dim: self.feature_dim,
                num_responses: self.num_responses,
                hidden: self.net.hidden,
                activation: "tanh".into(),
            },
            params: self.net.params.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RewardModel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = RewardModelDoc::deserialize(deserializer)?;
        if doc.version != REWARD_MODEL_VERSION {
            return Err(D::Error::custom(format!("unsupported reward model version {}", doc.version)));
        }
        if doc.architecture.activation != "tanh" {
            return Err(D::Error::custom("reward models use tanh activations"));
        }
        let a = doc.architecture;
        let net = Mlp::from_params(a.feature_dim + a.num_responses, a.hidden, 1, doc.params)
            .map_err(D::Error::custom)?;
        Ok(Self {
            objective: doc.objective,
            feature_dim: a.feature_dim,
            num_responses: a.num_responses,
            net,
        })
    }
}

impl RewardModel {
    pub fn init(
        objective: usize,
        feature_dim: usize,
        num_responses: usize,
        hidden: usize,
        head: HeadInit,
        rng: &mut RandomState,
    ) -> Self {
        Self {
            objective,
            feature_dim,
            num_responses,
            net: Mlp::init(feature_dim + num_responses, hidden, 1, head, rng),
        }
    }

    fn input(&self, x: &[f64], y: ResponseId) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.feature_dim + self.num_responses);
        input.extend_from_slice(x);
        input.resize(self.feature_dim + self.num_responses, 0.0);
        input[self.feature_dim + y] = 1.0;
        input
    }

    /// Uncentered network output.
    pub fn raw_score(&self, x: &PromptFeatures, y: ResponseId) -> f64 {
        self.net.output(&self.input(&x.0, y))[0]
    }

    /// Centered scores for the whole catalog.
    pub fn scores(&self, x: &PromptFeatures) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.num_responses).map(|y| self.raw_score(x, y)).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        raw.into_iter().map(|r| r - mean).collect()
    }

    pub fn score(&self, x: &PromptFeatures, y: ResponseId) -> f64 {
        self.scores(x)[y]
    }

    fn check_pairs(&self, pairs: &[PreferencePair], prompts: &[PromptFeatures]) -> Result<()> {
        for pair in pairs {
            if pair.prompt_index >= prompts.len() {
                return Err(Error::Data(format!("pair refers to missing prompt {}", pair.prompt_index)));
            }
            if pair.chosen == pair.rejected
                || pair.chosen >= self.num_responses
                || pair.rejected >= self.num_responses
            {
                return Err(Error::Data(format!(
                    "invalid response pair ({}, {})",
                    pair.chosen, pair.rejected
                )));
            }
        }
        if let Some(x) = prompts.first() {
            check_arity("reward model features", self.feature_dim, x.dim())?;
        }
        Ok(())
    }

    /// Mean of `−ln σ(r(x, y⁺) − r(x, y⁻))` over `pairs` and its gradient.
    pub fn loss_and_grad(&self, pairs: &[PreferencePair], prompts: &[PromptFeatures]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.net.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / pairs.len() as f64;
        for pair in pairs {
            let x = &prompts[pair.prompt_index].0;
            let in_plus = self.input(x, pair.chosen);
            let in_minus = self.input(x, pair.rejected);
            let act_plus = self.net.forward(&in_plus);
            let act_minus = self.net.forward(&in_minus);
            let margin = act_plus.output[0] - act_minus.output[0];
            loss -= log_sigmoid(margin) * scale;
            // d/dmargin of −ln σ(margin) = −σ(−margin)
            let g = -sigmoid(-margin) * scale;
            self.net.backward(&in_plus, &act_plus, &[g], &mut grad);
            self.net.backward(&in_minus, &act_minus, &[-g], &mut grad);
        }
        (loss, grad)
    }

    /// Fraction of pairs whose chosen response outscores the rejected one.
    pub fn pairwise_accuracy(&self, pairs: &[PreferencePair], prompts: &[PromptFeatures]) -> f64 {
        let hits = pairs
            .iter()
            .filter(|p| {
                let x = &prompts[p.prompt_index];
                self.raw_score(x, p.chosen) > self.raw_score(x, p.rejected)
            })
            .count();
        hits as f64 / pairs.len().max(1) as f64
    }

    /// Mean model probability `σ(r(y⁺) − r(y⁻))` of the recorded preferences.
    pub fn mean_preference_probability(&self, pairs: &[PreferencePair], prompts: &[PromptFeatures]) -> f64 {
        pairs
            .iter()
            .map(|p| {
                let x = &prompts[p.prompt_index];
                sigmoid(self.raw_score(x, p.chosen) - self.raw_score(x, p.rejected))
            })
            .sum::<f64>()
            / pairs.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRewardModel {
    pub model: RewardModel,
    /// Mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Fits a reward model for `objective` on pairs already oriented for it.
pub fn train_reward_model(
    pairs: &[PreferencePair],
    prompts: &[PromptFeatures],
    num_responses: usize,
    objective: usize,
    config: &RewardTrainConfig,
    rng: &mut RandomState,
) -> Result<TrainedRewardModel> {
    if pairs.is_empty() {
        return Err(Error::Data("cannot train a reward model on an empty dataset".into()));
    }
    let feature_dim = prompts
        .first()
        .map(PromptFeatures::dim)
        .ok_or_else(|| Error::Data("no prompt features".into()))?;
    let mut model = RewardModel::init(
        objective,
        feature_dim,
        num_responses,
        config.hidden_width,
        config.head_init,
        rng,
    );
    model.check_pairs(pairs, prompts)?;
    let mut opt = AdamW::new(model.net.params.len(), config.learning_rate, config.adam);
    let mut loss_history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in shuffled_batches(pairs.len(), config.batch_size, rng) {
            let batch_pairs: Vec<PreferencePair> = batch.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, grad) = model.loss_and_grad(&batch_pairs, prompts);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    stage: "reward model training",
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut model.net.params, &grad);
            step += 1;
        }
        loss_history.push(epoch_loss / pairs.len() as f64);
    }
    Ok(TrainedRewardModel { model, loss_history })
}

/// The `K` reward models, indexed by objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelSet {
    pub models: Vec<RewardModel>,
}

impl RewardModelSet {
    pub fn new(models: Vec<RewardModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Data("need at least one reward model".into()));
        }
        let (d, n) = (models[0].feature_dim, models[0].num_responses);
        for (k, m) in models.iter().enumerate() {
            if m.objective != k {
                return Err(Error::Data(format!("model at position {k} is for objective {}", m.objective)));
            }
            check_arity("reward model features", d, m.feature_dim)?;
            check_arity("reward model catalog", n, m.num_responses)?;
        }
        Ok(Self { models })
    }

    pub fn num_objectives(&self) -> usize {
        self.models.len()
    }

    /// Evaluates every model at `(x, y)`, checking that there are `expected_k` of them.
    pub fn reward_vector(&self, expected_k: usize, x: &PromptFeatures, y: ResponseId) -> Result<RewardVector> {
        reward_vector(&self.models, expected_k, x, y)
    }

    /// Centered model scores for every (prompt, response, objective).
    pub fn table(&self, prompts: &[PromptFeatures]) -> RewardTable {
        let n_y = self.models[0].num_responses;
        let mut table = RewardTable::zeros(prompts.len(), n_y, self.models.len());
        for (p, x) in prompts.iter().enumerate() {
            for (k, m) in self.models.iter().enumerate() {
                for (y, s) in m.scores(x).into_iter().enumerate() {
                    table.set(p, y, k, s);
                }
            }
        }
        table
    }
}

/// Entry `k` is `models[k]` scored at `(x, y)`.
pub fn reward_vector(
    models: &[RewardModel],
    expected_k: usize,
    x: &PromptFeatures,
    y: ResponseId,
) -> Result<RewardVector> {
    check_arity("reward models", expected_k, models.len())?;
    for m in models {
        check_arity("reward model features", m.feature_dim, x.dim())?;
        if y >= m.num_responses {
            return Err(Error::Data(format!("response {y} outside the catalog")));
        }
    }
    RewardVector::new(models.iter().map(|m| m.score(x, y)).collect())
}

/// Trains one model per objective from multi-objective pairs, each on the
/// pairs reoriented by that objective's label.
///
/// Every model starts from the same seed, so initialization and batch order
/// are shared and models differ only through their labels.
pub fn train_reward_models(
    pairs: &[MultiObjectivePreferencePair],
    prompts: &[PromptFeatures],
    num_responses: usize,
    num_objectives: usize,
    config: &RewardTrainConfig,
    seed: u64,
) -> Result<(RewardModelSet, Vec<Vec<f64>>)> {
    let mut models = Vec::with_capacity(num_objectives);
    let mut histories = Vec::with_capacity(num_objectives);
    for k in 0..num_objectives {
        let projected: Vec<PreferencePair> = pairs
            .iter()
            .map(|p| {
                check_arity("preference labels", num_objectives, p.labels.len())?;
                Ok(p.project(k))
            })
            .collect::<Result<_>>()?;
        let mut rng = crate::environment::rng_from_seed(seed);
        let trained = train_reward_model(&projected, prompts, num_responses, k, config, &mut rng)?;
        models.push(trained.model);
        histories.push(trained.loss_history);
    }
    Ok((RewardModelSet::new(models)?, histories))
}

/// `Σ_k w_k r_k`.
pub fn scalarize(r: &RewardVector, w: &WeightVector) -> Result<f64> {
    check_arity("scalarization", r.len(), w.len())?;
    Ok(r.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum())
}

/// `softmax(r / τ)`, computed with max subtraction.
pub fn normalize_weights(r: &[f64], temperature: f64) -> Result<WeightVector> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    if r.is_empty() {
        return Err(Error::Data("cannot normalize an empty reward vector".into()));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("reward vector contains non-finite scores".into()));
    }
    let scaled: Vec<f64> = r.iter().map(|v| v / temperature).collect();
    WeightVector::new(softmax(&scaled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::rng_from_seed;

    #[test]
    fn scalarize_examples() {
        let r = RewardVector::new(vec![2.0, 4.0]).unwrap();
        assert_eq!(scalarize(&r, &WeightVector::new(vec![0.5, 0.5]).unwrap()).unwrap(), 3.0);
        assert_eq!(scalarize(&r, &WeightVector::one_hot(2, 1)).unwrap(), 4.0);
        assert!(matches!(
            scalarize(&r, &WeightVector::uniform(3)),
            Err(Error::Arity { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let w = normalize_weights(&[1.0, 1.0, 1.0], 0.37).unwrap();
        for v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = normalize_weights(&[1.0, 0.0], 1.0).unwrap();
        assert!((w[0] - 0.73106).abs() < 1e-5 && (w[1] - 0.26894).abs() < 1e-5);
        assert!(matches!(normalize_weights(&[1.0], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(normalize_weights(&[1.0], -1.0), Err(Error::Parameter(_))));
        assert!(matches!(normalize_weights(&[f64::NAN, 1.0], 0.1), Err(Error::Data(_))));
        // Overflow-prone inputs still land on the simplex.
        let w = normalize_weights(&[1e6, 1e6 - 1.0], DEFAULT_TEMPERATURE).unwrap();
        assert!(w[0] > 0.9999);
    }

    #[test]
    fn zero_head_initial_loss_is_ln2() {
        let mut rng = rng_from_seed(0);
        let model = RewardModel::init(0, 3, 5, 8, HeadInit::Zero, &mut rng);
        let prompts = vec![PromptFeatures(vec![0.1, -0.3, 2.0])];
        let pairs = vec![
            PreferencePair { prompt_index: 0, chosen: 1, rejected: 4 },
            PreferencePair { prompt_index: 0, chosen: 0, rejected: 2 },
        ];
        let (loss, _) = model.loss_and_grad(&pairs, &prompts);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn training_rejects_empty_and_bad_pairs() {
        let mut rng = rng_from_seed(0);
        let prompts = vec![PromptFeatures(vec![0.0, 1.0])];
        let cfg = RewardTrainConfig::default();
        assert!(matches!(
            train_reward_model(&[], &prompts, 4, 0, &cfg, &mut rng),
            Err(Error::Data(_))
        ));
        let bad = [PreferencePair { prompt_index: 0, chosen: 2, rejected: 2 }];
        assert!(train_reward_model(&bad, &prompts, 4, 0, &cfg, &mut rng).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let mut rng = rng_from_seed(0);
        let prompts = vec![PromptFeatures(vec![1.0, 1.0])];
        let pairs = vec![PreferencePair { prompt_index: 0, chosen: 0, rejected: 1 }];
        let cfg = RewardTrainConfig {
            learning_rate: f64::INFINITY,
            epochs: 3,
            ..RewardTrainConfig::default()
        };
        match train_reward_model(&pairs, &prompts, 2, 0, &cfg, &mut rng) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reward_vector_checks_arity() {
        let mut rng = rng_from_seed(1);
        let models: Vec<RewardModel> = (0..2)
            .map(|k| RewardModel::init(k, 2, 3, 4, HeadInit::Scaled, &mut rng))
            .collect();
        let x = PromptFeatures(vec![0.5, -0.5]);
        assert!(matches!(reward_vector(&models, 3, &x, 0), Err(Error::Arity { .. })));
        let r = reward_vector(&models, 2, &x, 1).unwrap();
        assert_eq!(r[0], models[0].score(&x, 1));
        assert_eq!(r[1], models[1].score(&x, 1));
    }

    #[test]
    fn identical_models_give_equal_entries() {
        let mut rng = rng_from_seed(2);
        let base = RewardModel::init(0, 2, 3, 4, HeadInit::Scaled, &mut rng);
        let mut second = base.clone();
        second.objective = 1;
        let set = RewardModelSet::new(vec![base, second]).unwrap();
        let r = set.reward_vector(2, &PromptFeatures(vec![0.3, 0.9]), 2).unwrap();
        assert_eq!(r[0], r[1]);
    }

    #[test]
    fn serialization_round_trips_and_requires_version() {
        let mut rng = rng_from_seed(4);
        let model = RewardModel::init(1, 2, 3, 4, HeadInit::Scaled, &mut rng);
        let text = serde_json::to_string(&model).unwrap();
        let back: RewardModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
        let unversioned = text.replacen("\"version\":1,", "", 1);
        assert!(serde_json::from_str::<RewardModel>(&unversioned).is_err());
        let future = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(serde_json::from_str::<RewardModel>(&future).is_err());
    }

    #[test]
    fn scores_are_centered() {
        let mut rng = rng_from_seed(5);
        let model = RewardModel::init(0, 2, 6, 4, HeadInit::Scaled, &mut rng);
        let s = model.scores(&PromptFeatures(vec![1.0, 2.0]));
        assert!(s.iter().sum::<f64>().abs() < 1e-12);
    }
}
