//! Deterministic synthetic alignment worlds.
//!
//! A [`World`] holds a finite set of prompts (real feature vectors), one
//! response catalog shared by every prompt, `K` ground-truth reward functions,
//! a floored reference policy and a ground-truth prompt → weight map `w*(x)`.
//! Preference data is generated from it with a Bradley-Terry draw on the true
//! reward scalarized by `w*(x)`, which makes `w*` identifiable from data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_arity, Error, Result};
use crate::policy::TabularPolicy;
use crate::rewards::RewardTable;
use crate::simplex::{log_sum_exp, sigmoid, softmax, WeightVector};

/// Index into the shared response catalog.
pub type ResponseId = usize;

/// Explicit random state threaded through every stochastic operation.
pub type RandomState = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> RandomState {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent stream of the generator for `seed`, so that sub-tasks of a
/// seeded run draw from disjoint sequences regardless of execution order.
pub fn rng_stream(seed: u64, stream: u64) -> RandomState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Feature vector standing in for a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptFeatures(pub Vec<f64>);

impl PromptFeatures {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardFamily {
    /// `r_k(x, y) = u_k·x + v_k·e_y` over prompt features and a random
    /// response embedding.
    Linear,
    /// `r_k(x, y) = v_k·tanh(W_k [x; e_y] + b_k)`.
    Network { hidden: usize },
    /// `r_k(x, y) = log softmax(z_y(x))_k` with `z_y(x)` affine in `x`.
    ///
    /// Each response carries a prompt-dependent profile over objectives, and
    /// the catalog is built from `|Y|/K` base responses in every cyclic
    /// relabeling of the objectives, so no objective is favored on average.
    /// The scalarized reward `Σ w_k log p_k` is a proper scoring rule, so the
    /// best response for weights `w` is the one whose profile is closest to `w`.
    Profile {
        #[serde(default = "default_modulation")]
        modulation: f64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_modulation() -> f64 {
    0.5
}

fn default_spread() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFamily {
    /// The same weights for every prompt; uniform when `weights` is omitted.
    Constant {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// Sign pattern of the leading features selects a dominant objective,
    /// which receives weight `dominant`; the rest share the remainder.
    PiecewiseSign {
        #[serde(default = "default_dominant")]
        dominant: f64,
    },
    /// `softmax(scale · A x / sqrt(d))` with Gaussian `A`.
    SoftmaxLinear {
        #[serde(default = "default_weight_scale")]
        scale: f64,
    },
}

fn default_dominant() -> f64 {
    0.9
}

fn default_weight_scale() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub feature_dim: usize,
    pub num_objectives: usize,
    pub num_responses: usize,
    pub num_prompts: usize,
    pub reward_family: RewardFamily,
    pub weight_family: WeightFamily,
    /// Multiplier on every true reward.
    #[serde(default = "one")]
    pub reward_scale: f64,
    /// Probability floor `c` of the reference policy.
    #[serde(default = "default_ref_floor")]
    pub ref_floor: f64,
    /// Standard deviation of the raw reference-policy logits.
    #[serde(default = "one")]
    pub ref_spread: f64,
    /// Bradley-Terry noise scale `η`: `P(a ≻ b) = σ((s_a − s_b)/η)`; zero
    /// makes preferences deterministic.
    #[serde(default = "one")]
    pub preference_noise: f64,
    /// Every objective uses objective 0's reward function.
    #[serde(default)]
    pub tied_objectives: bool,
    /// Dimension of the random response embeddings of the linear and
    /// network families.
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

fn one() -> f64 {
    1.0
}

fn default_ref_floor() -> f64 {
    0.01
}

fn default_embedding_dim() -> usize {
    4
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            feature_dim: 4,
            num_objectives: 2,
            num_responses: 16,
            num_prompts: 64,
            reward_family: RewardFamily::Profile {
                modulation: default_modulation(),
                spread: default_spread(),
            },
            weight_family: WeightFamily::SoftmaxLinear {
                scale: default_weight_scale(),
            },
            reward_scale: 1.0,
            ref_floor: default_ref_floor(),
            ref_spread: 1.0,
            preference_noise: 1.0,
            tied_objectives: false,
            embedding_dim: default_embedding_dim(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_objectives < 2 {
            return fail(format!("need at least 2 objectives, got {}", self.num_objectives));
        }
        if self.num_responses < 2 {
            return fail(format!("need at least 2 responses, got {}", self.num_responses));
        }
        if self.num_prompts < 1 {
            return fail("need at least 1 prompt".into());
        }
        if self.feature_dim < 1 {
            return fail("feature dimension must be positive".into());
        }
        if !(self.ref_floor > 0.0) || self.ref_floor * self.num_responses as f64 > 1.0 + 1e-12 {
            return fail(format!(
                "reference floor {} must satisfy 0 < c and c·|Y| <= 1 (|Y| = {})",
                self.ref_floor, self.num_responses
            ));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return fail(format!("reward scale {} must be positive", self.reward_scale));
        }
        if !(self.preference_noise.is_finite() && self.preference_noise >= 0.0) {
            return fail(format!("preference noise {} must be non-negative", self.preference_noise));
        }
        if !(self.ref_spread.is_finite() && self.ref_spread >= 0.0) {
            return fail(format!("reference spread {} must be non-negative", self.ref_spread));
        }
        match &self.reward_family {
            RewardFamily::Linear => {
                if self.embedding_dim == 0 {
                    return fail("embedding dimension must be positive".into());
                }
            }
            RewardFamily::Network { hidden } => {
                if *hidden == 0 || self.embedding_dim == 0 {
                    return fail("network reward family needs positive hidden and embedding widths".into());
                }
            }
            RewardFamily::Profile { modulation, spread } => {
                if self.num_responses % self.num_objectives != 0 {
                    return fail(format!(
                        "profile rewards need |Y| ({}) divisible by K ({})",
                        self.num_responses, self.num_objectives
                    ));
                }
                if !(modulation.is_finite() && spread.is_finite()) {
                    return fail("profile modulation and spread must be finite".into());
                }
            }
        }
        match &self.weight_family {
            WeightFamily::Constant { weights: Some(w) } => {
                check_arity("constant weights", self.num_objectives, w.len())
                    .map_err(|e| Error::Config(e.to_string()))?;
                WeightVector::new(w.clone()).map_err(|e| Error::Config(e.to_string()))?;
            }
            WeightFamily::Constant { weights: None } => {}
            WeightFamily::PiecewiseSign { dominant } => {
                let k = self.num_objectives as f64;
                if !(*dominant >= 1.0 / k && *dominant <= 1.0) {
                    return fail(format!("dominant weight {dominant} must lie in [1/K, 1]"));
                }
                if self.feature_dim < sign_bits(self.num_objectives) {
                    return fail(format!(
                        "piecewise weights over {} objectives need at least {} features",
                        self.num_objectives,
                        sign_bits(self.num_objectives)
                    ));
                }
            }
            WeightFamily::SoftmaxLinear { scale } => {
                if !scale.is_finite() {
                    return fail("weight scale must be finite".into());
                }
            }
        }
        Ok(())
    }
}

fn sign_bits(k: usize) -> usize {
    let mut bits = 0;
    while (1usize << bits) < k {
        bits += 1;
    }
    bits.max(1)
}

/// Concrete parameters of the true reward functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardFunction {
    Linear {
        /// `K × d`
        prompt_weights: Vec<Vec<f64>>,
        /// `K × e`
        response_weights: Vec<Vec<f64>>,
        /// `|Y| × e`
        embeddings: Vec<Vec<f64>>,
    },
    Network {
        /// Per objective, `hidden × (d + e)`.
        input_weights: Vec<Vec<Vec<f64>>>,
        /// Per objective, `hidden`.
        biases: Vec<Vec<f64>>,
        /// Per objective, `hidden`.
        output_weights: Vec<Vec<f64>>,
        embeddings: Vec<Vec<f64>>,
    },
    Profile {
        /// `|Y| × K × d`
        logit_weights: Vec<Vec<Vec<f64>>>,
        /// `|Y| × K`
        logit_offsets: Vec<Vec<f64>>,
    },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl RewardFunction {
    /// Unscaled reward of objective `k` for `(x, y)`.
    fn eval(&self, k: usize, x: &[f64], y: ResponseId) -> f64 {
        match self {
            Self::Linear {
                prompt_weights,
                response_weights,
                embeddings,
            } => dot(&prompt_weights[k], x) + dot(&response_weights[k], &embeddings[y]),
            Self::Network {
                input_weights,
                biases,
                output_weights,
                embeddings,
            } => {
                let input: Vec<f64> = x.iter().chain(&embeddings[y]).copied().collect();
                input_weights[k]
                    .iter()
                    .zip(&biases[k])
                    .zip(&output_weights[k])
                    .map(|((row, b), v)| v * (dot(row, &input) + b).tanh())
                    .sum()
            }
            Self::Profile {
                logit_weights,
                logit_offsets,
            } => {
                let logits: Vec<f64> = logit_weights[y]
                    .iter()
                    .zip(&logit_offsets[y])
                    .map(|(w, c)| dot(w, x) + c)
                    .collect();
                logits[k] - log_sum_exp(&logits)
            }
        }
    }
}

/// Concrete parameters of the true prompt → weight map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    Constant { weights: WeightVector },
    PiecewiseSign { dominant: f64, num_objectives: usize },
    SoftmaxLinear { matrix: Vec<Vec<f64>> },
}

impl WeightFunction {
    pub fn eval(&self, x: &PromptFeatures) -> WeightVector {
        match self {
            Self::Constant { weights } => weights.clone(),
            Self::PiecewiseSign {
                dominant,
                num_objectives,
            } => {
                let k = *num_objectives;
                let code = x.0[..sign_bits(k)]
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(i, _)| 1usize << i)
                    .sum::<usize>();
                let rest = (1.0 - dominant) / (k - 1) as f64;
                let mut w = vec![rest; k];
                w[code % k] = *dominant;
                // Exact by construction up to rounding of `rest`.
                WeightVector::with_tolerance(w, 1e-12).expect("piecewise weights lie on the simplex")
            }
            Self::SoftmaxLinear { matrix } => {
                let d = x.dim() as f64;
                let logits: Vec<f64> = matrix.iter().map(|row| dot(row, &x.0) / d.sqrt()).collect();
                WeightVector::with_tolerance(softmax(&logits), 1e-12).expect("softmax output lies on the simplex")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_index: usize,
    pub chosen: ResponseId,
    pub rejected: ResponseId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiObjectivePreferencePair {
    pub prompt_index: usize,
    pub a: ResponseId,
    pub b: ResponseId,
    /// `labels[k]` is true when `a` is preferred to `b` on objective `k`.
    pub labels: Vec<bool>,
}

impl MultiObjectivePreferencePair {
    /// The pair oriented so that the response preferred on objective `k` is chosen.
    pub fn project(&self, k: usize) -> PreferencePair {
        let (chosen, rejected) = if self.labels[k] { (self.a, self.b) } else { (self.b, self.a) };
        PreferencePair {
            prompt_index: self.prompt_index,
            chosen,
            rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub prompts: Vec<PromptFeatures>,
    pub reward_function: RewardFunction,
    pub weight_function: WeightFunction,
    /// `w*(x)` for every prompt.
    pub true_weights: Vec<WeightVector>,
    /// Dense true rewards, scaled.
    pub rewards: RewardTable,
    pub ref_policy: TabularPolicy,
}

fn gaussian_vec(rng: &mut RandomState, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

fn gaussian_mat(rng: &mut RandomState, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| gaussian_vec(rng, cols, scale)).collect()
}

/// Builds the world for `(config, seed)`. Identical inputs give identical worlds.
pub fn build_world(config: &WorldConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let WorldConfig {
        feature_dim: d,
        num_objectives: k,
        num_responses: n_y,
        num_prompts: n_p,
        embedding_dim: e,
        ..
    } = *config;
    let mut rng = rng_from_seed(seed);

    let prompts: Vec<PromptFeatures> = (0..n_p)
        .map(|_| PromptFeatures(gaussian_vec(&mut rng, d, 1.0)))
        .collect();

    let weight_function = match &config.weight_family {
        WeightFamily::Constant { weights } => WeightFunction::Constant {
            weights: match weights {
                Some(w) => WeightVector::new(w.clone())?,
                None => WeightVector::uniform(k),
            },
        },
        WeightFamily::PiecewiseSign { dominant } => WeightFunction::PiecewiseSign {
            dominant: *dominant,
            num_objectives: k,
        },
        WeightFamily::SoftmaxLinear { scale } => WeightFunction::SoftmaxLinear {
            matrix: gaussian_mat(&mut rng, k, d, *scale),
        },
    };

    let reward_function = match &config.reward_family {
        RewardFamily::Linear => RewardFunction::Linear {
            prompt_weights: gaussian_mat(&mut rng, k, d, 1.0 / (d as f64).sqrt()),
            response_weights: gaussian_mat(&mut rng, k, e, 1.0 / (e as f64).sqrt()),
            embeddings: gaussian_mat(&mut rng, n_y, e, 1.0),
        },
        RewardFamily::Network { hidden } => {
            let fan_in = 1.0 / ((d + e) as f64).sqrt();
            let input_weights = (0..k).map(|_| gaussian_mat(&mut rng, *hidden, d + e, fan_in)).collect();
            let biases = gaussian_mat(&mut rng, k, *hidden, 0.1);
            let output_weights = gaussian_mat(&mut rng, k, *hidden, 1.0 / (*hidden as f64).sqrt());
            RewardFunction::Network {
                input_weights,
                biases,
                output_weights,
                embeddings: gaussian_mat(&mut rng, n_y, e, 1.0),
            }
        }
        RewardFamily::Profile { modulation, spread } => {
            let bases = n_y / k;
            let base_weights: Vec<Vec<Vec<f64>>> = (0..bases)
                .map(|_| gaussian_mat(&mut rng, k, d, modulation / (d as f64).sqrt()))
                .collect();
            let base_offsets = gaussian_mat(&mut rng, bases, k, *spread);
            let mut logit_weights = Vec::with_capacity(n_y);
            let mut logit_offsets = Vec::with_capacity(n_y);
            for shift in 0..k {
                for b in 0..bases {
                    logit_weights.push((0..k).map(|j| base_weights[b][(j + shift) % k].clone()).collect());
                    logit_offsets.push((0..k).map(|j| base_offsets[b][(j + shift) % k]).collect());
                }
            }
            RewardFunction::Profile {
                logit_weights,
                logit_offsets,
            }
        }
    };

    let floor = config.ref_floor;
    let mix = 1.0 - floor * n_y as f64;
    let ref_rows: Vec<Vec<f64>> = (0..n_p)
        .map(|_| {
            let raw = softmax(&gaussian_vec(&mut rng, n_y, config.ref_spread));
            raw.into_iter().map(|p| mix * p + floor).collect()
        })
        .collect();
    let ref_policy = TabularPolicy::new(ref_rows)?;

    let true_weights = prompts.iter().map(|x| weight_function.eval(x)).collect();
    let mut world = World {
        config: config.clone(),
        seed,
        prompts,
        reward_function,
        weight_function,
        true_weights,
        rewards: RewardTable::zeros(n_p, n_y, k),
        ref_policy,
    };
    for p in 0..n_p {
        for y in 0..n_y {
            for obj in 0..k {
                let r = world.true_reward(obj, &world.prompts[p], y);
                world.rewards.set(p, y, obj, r);
            }
        }
    }
    Ok(world)
}

impl World {
    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn num_responses(&self) -> usize {
        self.config.num_responses
    }

    pub fn num_objectives(&self) -> usize {
        self.config.num_objectives
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// True (scaled) reward of objective `k` for an arbitrary feature vector.
    pub fn true_reward(&self, k: usize, x: &PromptFeatures, y: ResponseId) -> f64 {
        let k = if self.config.tied_objectives { 0 } else { k };
        self.config.reward_scale * self.reward_function.eval(k, &x.0, y)
    }

    pub fn true_weight(&self, x: &PromptFeatures) -> WeightVector {
        self.weight_function.eval(x)
    }

    /// True reward scalarized by `w*(x)` for a world prompt.
    pub fn scalarized_true_reward(&self, prompt_index: usize, y: ResponseId) -> f64 {
        let w = &self.true_weights[prompt_index];
        (0..self.num_objectives())
            .map(|k| w[k] * self.rewards.get(prompt_index, y, k))
            .sum()
    }

    fn check_prompt(&self, prompt_index: usize) -> Result<()> {
        if prompt_index >= self.num_prompts() {
            return Err(Error::Data(format!(
                "prompt index {prompt_index} out of range for {} prompts",
                self.num_prompts()
            )));
        }
        Ok(())
    }

    /// Probability that `a` is preferred to `b` given their score difference.
    pub fn preference_probability(&self, score_difference: f64) -> f64 {
        let eta = self.config.preference_noise;
        if eta == 0.0 {
            match score_difference.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Less) => 0.0,
                _ => 0.5,
            }
        } else {
            sigmoid(score_difference / eta)
        }
    }

    fn distinct_pair(&self, rng: &mut RandomState) -> Result<(ResponseId, ResponseId)> {
        let n = self.num_responses();
        if n < 2 {
            return Err(Error::Data("need at least two responses to form a pair".into()));
        }
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        Ok((a, b))
    }

    /// Bradley-Terry draw between a fixed ordered pair `(a, b)` on the
    /// `w*`-scalarized true reward.
    pub fn choose_between(
        &self,
        prompt_index: usize,
        a: ResponseId,
        b: ResponseId,
        rng: &mut RandomState,
    ) -> Result<PreferencePair> {
        self.check_prompt(prompt_index)?;
        if a == b || a >= self.num_responses() || b >= self.num_responses() {
            return Err(Error::Data(format!("invalid response pair ({a}, {b})")));
        }
        let delta = self.scalarized_true_reward(prompt_index, a) - self.scalarized_true_reward(prompt_index, b);
        let u: f64 = rng.random();
        let (chosen, rejected) = if u < self.preference_probability(delta) { (a, b) } else { (b, a) };
        Ok(PreferencePair {
            prompt_index,
            chosen,
            rejected,
        })
    }

    pub fn sample_preference_pair(&self, prompt_index: usize, rng: &mut RandomState) -> Result<PreferencePair> {
        self.check_prompt(prompt_index)?;
        let (a, b) = self.distinct_pair(rng)?;
        self.choose_between(prompt_index, a, b, rng)
    }

    pub fn sample_multiobjective_pair(
        &self,
        prompt_index: usize,
        rng: &mut RandomState,
    ) -> Result<MultiObjectivePreferencePair> {
        self.check_prompt(prompt_index)?;
        let (a, b) = self.distinct_pair(rng)?;
        let labels = (0..self.num_objectives())
            .map(|k| {
                let delta = self.rewards.get(prompt_index, a, k) - self.rewards.get(prompt_index, b, k);
                let u: f64 = rng.random();
                u < self.preference_probability(delta)
            })
            .collect();
        Ok(MultiObjectivePreferencePair {
            prompt_index,
            a,
            b,
            labels,
        })
    }

    /// `n` preference pairs on prompts drawn uniformly from `prompt_indices`.
    pub fn generate_preference_pairs(
        &self,
        n: usize,
        prompt_indices: &[usize],
        rng: &mut RandomState,
    ) -> Result<Vec<PreferencePair>> {
        if prompt_indices.is_empty() {
            return Err(Error::Data("no prompts to draw from".into()));
        }
        (0..n)
            .map(|_| {
                let p = prompt_indices[rng.random_range(0..prompt_indices.len())];
                self.sample_preference_pair(p, rng)
            })
            .collect()
    }

    pub fn generate_multiobjective_pairs(
        &self,
        n: usize,
        prompt_indices: &[usize],
        rng: &mut RandomState,
    ) -> Result<Vec<MultiObjectivePreferencePair>> {
        if prompt_indices.is_empty() {
            return Err(Error::Data("no prompts to draw from".into()));
        }
        (0..n)
            .map(|_| {
                let p = prompt_indices[rng.random_range(0..prompt_indices.len())];
                self.sample_multiobjective_pair(p, rng)
            })
            .collect()
    }

    /// Checks the structural invariants of a (possibly deserialized) world.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let (n_p, n_y, k) = (self.config.num_prompts, self.config.num_responses, self.config.num_objectives);
        check_arity("world prompts", n_p, self.prompts.len())?;
        check_arity("world true weights", n_p, self.true_weights.len())?;
        check_arity("reference policy rows", n_p, self.ref_policy.num_prompts())?;
        check_arity("reference policy width", n_y, self.ref_policy.num_responses())?;
        if self.rewards.shape() != (n_p, n_y, k) {
            return Err(Error::Data("reward table shape does not match the world config".into()));
        }
        for x in &self.prompts {
            check_arity("prompt features", self.config.feature_dim, x.dim())?;
            if x.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("prompt features must be finite".into()));
            }
        }
        for w in &self.true_weights {
            check_arity("true weights", k, w.len())?;
        }
        let floor = self.config.ref_floor;
        for p in 0..n_p {
            if self.ref_policy.row(p).iter().any(|&q| q < floor * (1.0 - 1e-12)) {
                return Err(Error::Data(format!("reference policy row {p} violates the floor {floor}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let world: World = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }
}

/// Splits `0..n` into a training prefix and a held-out suffix.
pub fn split_prompts(n: usize, holdout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let held = ((n as f64) * holdout_fraction.clamp(0.0, 1.0)).round() as usize;
    let held = held.min(n.saturating_sub(1));
    let cut = n - held;
    ((0..cut).collect(), (cut..n).collect())
}
