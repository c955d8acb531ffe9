//! Tabular policies over the shared catalog, the KL-regularized objective,
//! its closed-form maximizer and exact-gradient optimizers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::World;
use crate::error::{check_arity, Error, Result};
use crate::orchestrator::Orchestrator;
use crate::rewards::{RewardModelSet, RewardTable};
use crate::simplex::{check_distribution, log_sum_exp, softmax, total_variation, WeightVector};

pub const POLICY_VERSION: u32 = 1;

/// Default KL coefficient `β`.
pub const DEFAULT_BETA: f64 = 0.1;

/// One categorical distribution over the catalog per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TabularPolicyDoc", into = "TabularPolicyDoc")]
pub struct TabularPolicy {
    rows: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabularPolicyDoc {
    version: u32,
    rows: Vec<Vec<f64>>,
}

impl TryFrom<TabularPolicyDoc> for TabularPolicy {
    type Error = Error;

    fn try_from(doc: TabularPolicyDoc) -> Result<Self> {
        if doc.version != POLICY_VERSION {
            return Err(Error::Parse(format!("unsupported policy version {}", doc.version)));
        }
        Self::new(doc.rows)
    }
}

impl From<TabularPolicy> for TabularPolicyDoc {
    fn from(p: TabularPolicy) -> Self {
        Self {
            version: POLICY_VERSION,
            rows: p.rows,
        }
    }
}

impl TabularPolicy {
    /// Validates that every row is a distribution of the same width.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if width == 0 {
            return Err(Error::Data("policy needs at least one non-empty row".into()));
        }
        for (p, row) in rows.iter().enumerate() {
            check_arity("policy row", width, row.len())?;
            check_distribution(row, &format!("policy row {p}"))?;
        }
        Ok(Self { rows })
    }

    pub fn num_prompts(&self) -> usize {
        self.rows.len()
    }

    pub fn num_responses(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.rows[p]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Largest per-prompt total variation distance to `other`.
    pub fn max_total_variation(&self, other: &TabularPolicy) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| total_variation(a, b))
            .fold(0.0, f64::max)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("β must be positive and finite, got {beta}")))
    }
}

/// `F_r(π) = E_π[r] − β·KL(π ‖ π_ref)` for one prompt, by exact summation.
pub fn kl_regularized_value(pi: &[f64], reward: &[f64], beta: f64, pi_ref: &[f64]) -> Result<f64> {
    check_beta(beta)?;
    check_arity("policy row", reward.len(), pi.len())?;
    check_arity("reference row", reward.len(), pi_ref.len())?;
    let mut expected = 0.0;
    let mut kl = 0.0;
    for y in 0..reward.len() {
        if pi[y] == 0.0 {
            continue;
        }
        if pi_ref[y] <= 0.0 {
            return Err(Error::Divergence {
                stage: "kl-regularized value",
                step: 0,
                detail: format!("policy puts mass on response {y}, which the reference excludes"),
            });
        }
        expected += pi[y] * reward[y];
        kl += pi[y] * (pi[y] / pi_ref[y]).ln();
    }
    Ok(expected - beta * kl)
}

/// `π(y) ∝ π_ref(y)·exp(r(y)/β)`, the unique maximizer of [`kl_regularized_value`].
pub fn gibbs_policy(reward: &[f64], beta: f64, pi_ref: &[f64]) -> Result<Vec<f64>> {
    check_beta(beta)?;
    check_arity("reference row", reward.len(), pi_ref.len())?;
    if reward.iter().any(|r| !r.is_finite()) {
        return Err(Error::Data("reward row contains non-finite values".into()));
    }
    let logits: Vec<f64> = reward
        .iter()
        .zip(pi_ref)
        .map(|(r, q)| if *q > 0.0 { q.ln() + r / beta } else { f64::NEG_INFINITY })
        .collect();
    Ok(softmax(&logits))
}

/// Gibbs rows for every prompt of a reward table scalarized per prompt.
pub fn gibbs_table(
    rewards: &RewardTable,
    weights: &[WeightVector],
    beta: f64,
    reference: &TabularPolicy,
) -> Result<TabularPolicy> {
    let rows = scalarized_rows(rewards, weights, reference)?;
    let gibbs = rows
        .iter()
        .enumerate()
        .map(|(p, r)| gibbs_policy(r, beta, reference.row(p)))
        .collect::<Result<Vec<_>>>()?;
    TabularPolicy::new(gibbs)
}

pub(crate) fn scalarized_rows(
    rewards: &RewardTable,
    weights: &[WeightVector],
    reference: &TabularPolicy,
) -> Result<Vec<Vec<f64>>> {
    check_arity("per-prompt weights", rewards.num_prompts(), weights.len())?;
    check_arity("reference rows", rewards.num_prompts(), reference.num_prompts())?;
    check_arity("reference width", rewards.num_responses(), reference.num_responses())?;
    weights
        .iter()
        .enumerate()
        .map(|(p, w)| rewards.scalarized_row(p, w))
        .collect()
}

/// Policy row for logits `θ` together with `∂F/∂θ`, where
/// `∂F/∂θ_j = π_j (a_j − E_π[a])` and `a = r − β log(π/π_ref)`.
pub fn objective_gradient(logits: &[f64], reward: &[f64], beta: f64, pi_ref: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let log_pi: Vec<f64> = logits.iter().map(|t| t - lse).collect();
    let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
    let advantage: Vec<f64> = (0..pi.len())
        .map(|y| reward[y] - beta * (log_pi[y] - pi_ref[y].ln()))
        .collect();
    let mean: f64 = pi.iter().zip(&advantage).map(|(p, a)| p * a).sum();
    let grad = pi.iter().zip(&advantage).map(|(p, a)| p * (a - mean)).collect();
    (pi, grad)
}

fn value_at(logits: &[f64], reward: &[f64], beta: f64, pi_ref: &[f64]) -> f64 {
    let lse = log_sum_exp(logits);
    (0..logits.len())
        .map(|y| {
            let log_pi = logits[y] - lse;
            let p = log_pi.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (reward[y] - beta * (log_pi - pi_ref[y].ln()))
            }
        })
        .sum()
}

/// Ascent direction in logit space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentDirection {
    /// Fisher-preconditioned gradient: `a − E_π[a]`.
    #[default]
    Natural,
    /// Plain gradient `π ⊙ (a − E_π[a])`.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyOptConfig {
    pub beta: f64,
    pub direction: AscentDirection,
    pub max_steps: usize,
    /// Stops once the largest logit-gradient entry falls below this.
    pub gradient_tolerance: f64,
    pub initial_step: f64,
    /// Sufficient-increase constant of the backtracking line search.
    pub armijo: f64,
}

impl Default for PolicyOptConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            direction: AscentDirection::Natural,
            max_steps: 20_000,
            gradient_tolerance: 1e-10,
            initial_step: 1.0,
            armijo: 1e-4,
        }
    }
}

/// Outcome of optimizing a single prompt's row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowOptimization {
    pub policy: Vec<f64>,
    /// Objective value after every accepted step, starting at `π_ref`.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Ascent on the logits of one row, started at `π_ref`, with a backtracking
/// line search that grows the step after each success.
pub fn optimize_row(reward: &[f64], pi_ref: &[f64], config: &PolicyOptConfig) -> Result<RowOptimization> {
    check_beta(config.beta)?;
    check_arity("reference row", reward.len(), pi_ref.len())?;
    let beta = config.beta;
    let mut logits: Vec<f64> = pi_ref.iter().map(|q| q.ln()).collect();
    let mut value = value_at(&logits, reward, beta, pi_ref);
    let mut history = vec![value];
    let mut step = config.initial_step;
    let mut converged = false;
    for iteration in 0..config.max_steps {
        let (pi, grad) = objective_gradient(&logits, reward, beta, pi_ref);
        let g_inf = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if !g_inf.is_finite() || !value.is_finite() {
            return Err(Error::Divergence {
                stage: "policy optimization",
                step: iteration,
                detail: format!("objective {value}, gradient norm {g_inf}"),
            });
        }
        if g_inf < config.gradient_tolerance {
            converged = true;
            break;
        }
        let direction: Vec<f64> = match config.direction {
            AscentDirection::Euclidean => grad.clone(),
            // grad_j = π_j d_j, so the centered advantage is recovered by division;
            // entries with π_j = 0 carry no first-order effect.
            AscentDirection::Natural => grad
                .iter()
                .zip(&pi)
                .map(|(g, p)| if *p > 0.0 { g / p } else { 0.0 })
                .collect(),
        };
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        let mut accepted = false;
        while step > 1e-12 {
            let trial: Vec<f64> = logits.iter().zip(&direction).map(|(t, d)| t + step * d).collect();
            let trial_value = value_at(&trial, reward, beta, pi_ref);
            if trial_value > value && trial_value >= value + config.armijo * step * slope {
                logits = trial;
                value = trial_value;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable increase remains.
            converged = true;
            break;
        }
        history.push(value);
    }
    let lse = log_sum_exp(&logits);
    Ok(RowOptimization {
        policy: logits.iter().map(|t| (t - lse).exp()).collect(),
        history,
        converged,
    })
}

/// A tabular policy produced by per-prompt optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOptimization {
    pub policy: TabularPolicy,
    /// Weight used to scalarize rewards for each prompt.
    pub weights: Vec<WeightVector>,
    pub histories: Vec<Vec<f64>>,
}

/// Optimizes every row of `rewards` scalarized with its own weight vector.
/// Rows are independent and run in parallel; results keep prompt order.
pub fn optimize_weighted(
    rewards: &RewardTable,
    weights: Vec<WeightVector>,
    reference: &TabularPolicy,
    config: &PolicyOptConfig,
) -> Result<PolicyOptimization> {
    let rows = scalarized_rows(rewards, &weights, reference)?;
    let results = rows
        .par_iter()
        .enumerate()
        .map(|(p, r)| optimize_row(r, reference.row(p), config))
        .collect::<Result<Vec<_>>>()?;
    let (policies, histories) = results.into_iter().map(|r| (r.policy, r.history)).unzip();
    Ok(PolicyOptimization {
        policy: TabularPolicy::new(policies)?,
        weights,
        histories,
    })
}

/// Fixed-weight MORLHF: every prompt uses `w_fixed`, uniform when `None`.
pub fn optimize_policy_fixed(
    w_fixed: Option<&WeightVector>,
    models: &RewardModelSet,
    world: &World,
    config: &PolicyOptConfig,
) -> Result<PolicyOptimization> {
    let k = models.num_objectives();
    let w = w_fixed.cloned().unwrap_or_else(|| WeightVector::uniform(k));
    check_arity("fixed weights", k, w.len())?;
    let table = models.table(&world.prompts);
    optimize_weighted(&table, vec![w; world.num_prompts()], &world.ref_policy, config)
}

/// PRO-MORLHF: prompt `x` scalarizes with the orchestrator's `f_ψ(x)`.
pub fn optimize_policy_adaptive(
    orchestrator: &Orchestrator,
    models: &RewardModelSet,
    world: &World,
    config: &PolicyOptConfig,
) -> Result<PolicyOptimization> {
    check_arity("orchestrator objectives", models.num_objectives(), orchestrator.num_objectives)?;
    let weights = adapter_weights(orchestrator, &world.prompts)?;
    let table = models.table(&world.prompts);
    optimize_weighted(&table, weights, &world.ref_policy, config)
}

pub fn adapter_weights(
    orchestrator: &Orchestrator,
    prompts: &[crate::environment::PromptFeatures],
) -> Result<Vec<WeightVector>> {
    prompts.iter().map(|x| orchestrator.forward(x)).collect()
}

/// Fixed-step gradient ascent from `π_ref` on the rewards scalarized by
/// `optimized`, reporting the mean reward scalarized by `evaluated` at each
/// of `steps` iterates (step 0 is the reference policy).
pub fn ascent_curve(
    rewards: &RewardTable,
    optimized: &[WeightVector],
    evaluated: &[WeightVector],
    reference: &TabularPolicy,
    beta: f64,
    step_size: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let train_rows = scalarized_rows(rewards, optimized, reference)?;
    let eval_rows = scalarized_rows(rewards, evaluated, reference)?;
    let n_p = train_rows.len();
    let per_prompt: Vec<Vec<f64>> = (0..n_p)
        .into_par_iter()
        .map(|p| {
            let pi_ref = reference.row(p);
            let mut logits: Vec<f64> = pi_ref.iter().map(|q| q.ln()).collect();
            let mut series = Vec::with_capacity(steps);
            for _ in 0..steps {
                let (pi, grad) = objective_gradient(&logits, &train_rows[p], beta, pi_ref);
                series.push(pi.iter().zip(&eval_rows[p]).map(|(a, b)| a * b).sum::<f64>());
                for (l, g) in logits.iter_mut().zip(&grad) {
                    *l += step_size * g;
                }
            }
            series
        })
        .collect();
    let curve: Vec<f64> = (0..steps)
        .map(|t| per_prompt.iter().map(|s| s[t]).sum::<f64>() / n_p as f64)
        .collect();
    if let Some(t) = curve.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            stage: "learning curve",
            step: t,
            detail: "mean reward is not finite".into(),
        });
    }
    Ok(curve)
}
