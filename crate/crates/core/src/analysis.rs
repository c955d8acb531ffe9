//! Alignment-gap measurement, the fixed-versus-adaptive scaling experiment,
//! Pareto sweeps and learning curves, with their tabular outputs.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{rng_stream, PromptFeatures, World};
use crate::error::{check_arity, Error, Result};
use crate::orchestrator::{build_targets, train_orchestrator, OrchestratorTrainConfig};
use crate::policy::{
    adapter_weights, ascent_curve, gibbs_policy, kl_regularized_value, optimize_weighted, ConditionedPolicy,
    PolicyOptConfig, TabularPolicy,
};
use crate::rewards::{train_reward_models, RewardModelSet, RewardTable, RewardTrainConfig, DEFAULT_TEMPERATURE};
use crate::simplex::WeightVector;

/// Slack allowed below zero for a gap before it counts as a violation.
pub const GAP_SLACK: f64 = 1e-9;

/// `Gap(π, x) = F(π*) − F(π)` for prompt `p`, where both values use the
/// reward table scalarized by the prompt's true weight and `π*` is the exact
/// Gibbs optimum.
pub fn gap(pi_row: &[f64], world: &World, prompt_index: usize, rewards: &RewardTable, beta: f64) -> Result<f64> {
    if prompt_index >= world.num_prompts() {
        return Err(Error::Data(format!("prompt {prompt_index} is outside the world")));
    }
    let pi_ref = world.ref_policy.row(prompt_index);
    let r = rewards.scalarized_row(prompt_index, &world.true_weights[prompt_index])?;
    let optimum = gibbs_policy(&r, beta, pi_ref)?;
    Ok(kl_regularized_value(&optimum, &r, beta, pi_ref)? - kl_regularized_value(pi_row, &r, beta, pi_ref)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub method: String,
    pub beta: f64,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub per_prompt: Vec<f64>,
    /// Mean of `per_prompt`.
    pub align_gap: f64,
    /// `E‖w*(x) − w_used(x)‖²` over prompts.
    pub mismatch: f64,
}

/// Gaps of every row of `policy` together with the mean squared distance
/// between the true weights and `used_weights`.
pub fn align_gap(
    policy: &TabularPolicy,
    used_weights: &[WeightVector],
    world: &World,
    rewards: &RewardTable,
    beta: f64,
    method: &str,
) -> Result<GapReport> {
    let n_p = world.num_prompts();
    check_arity("policy rows", n_p, policy.num_prompts())?;
    check_arity("used weights", n_p, used_weights.len())?;
    check_arity("reward table prompts", n_p, rewards.num_prompts())?;
    let per_prompt = (0..n_p)
        .map(|p| gap(policy.row(p), world, p, rewards, beta))
        .collect::<Result<Vec<_>>>()?;
    if let Some((p, g)) = per_prompt.iter().enumerate().find(|(_, g)| **g < -GAP_SLACK) {
        return Err(Error::Invariant(format!("negative gap {g} at prompt {p}")));
    }
    let mismatch = world
        .true_weights
        .iter()
        .zip(used_weights)
        .map(|(a, b)| a.squared_distance(b))
        .sum::<f64>()
        / n_p as f64;
    Ok(GapReport {
        method: method.to_string(),
        beta,
        n: None,
        seed: None,
        align_gap: per_prompt.iter().sum::<f64>() / n_p as f64,
        per_prompt,
        mismatch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Theorem1Config {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub temperature: f64,
    /// Multi-objective pairs used to train the reward models of each seed.
    pub reward_pairs: usize,
    pub reward_train: RewardTrainConfig,
    pub orchestrator_train: OrchestratorTrainConfig,
    pub policy: PolicyOptConfig,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Self {
            sizes: vec![200, 500, 2000],
            seeds: (0..5).collect(),
            temperature: DEFAULT_TEMPERATURE,
            reward_pairs: 4000,
            reward_train: RewardTrainConfig::default(),
            orchestrator_train: OrchestratorTrainConfig {
                learning_rate: 1e-2,
                epochs: 20,
                min_steps: 1250,
                ..OrchestratorTrainConfig::default()
            },
            policy: PolicyOptConfig::default(),
        }
    }
}

/// One row of the scaling table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub align_gap: f64,
    pub mismatch: f64,
}

pub const ADAPTIVE: &str = "adaptive";
pub const FIXED_UNIFORM: &str = "fixed_uniform";

// Stream ids keep the random draws of each stage disjoint.
const STREAM_REWARD_DATA: u64 = 1;
const STREAM_ORCHESTRATOR: u64 = 1 << 32;

/// Reward models for one seed of an experiment: trained on multi-objective
/// pairs drawn uniformly over the world's prompts.
pub fn seeded_reward_models(
    world: &World,
    seed: u64,
    pairs: usize,
    config: &RewardTrainConfig,
) -> Result<RewardModelSet> {
    let mut rng = rng_stream(seed, STREAM_REWARD_DATA);
    let all: Vec<usize> = (0..world.num_prompts()).collect();
    let data = world.generate_multiobjective_pairs(pairs, &all, &mut rng)?;
    let (models, _) = train_reward_models(
        &data,
        &world.prompts,
        world.num_responses(),
        world.num_objectives(),
        config,
        seed,
    )?;
    Ok(models)
}

/// For every seed: trains reward models once, evaluates the uniform
/// fixed-weight policy, then for every `N` draws `N` preference pairs, trains
/// an orchestrator on their targets and evaluates the adaptive policy.
/// Gaps are measured under the learned reward table with the true weights.
/// Rows are ordered by seed, then `N`, fixed arm before adaptive.
pub fn theorem1_experiment(world: &World, config: &Theorem1Config) -> Result<Vec<GapRow>> {
    if config.sizes.is_empty() || config.seeds.is_empty() {
        return Err(Error::Parameter("experiment needs at least one size and one seed".into()));
    }
    let k = world.num_objectives();
    let n_p = world.num_prompts();
    let beta = config.policy.beta;
    let all: Vec<usize> = (0..n_p).collect();
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<GapRow>> {
            let models = seeded_reward_models(world, seed, config.reward_pairs, &config.reward_train)?;
            let table = models.table(&world.prompts);
            let uniform = vec![WeightVector::uniform(k); n_p];
            let fixed = optimize_weighted(&table, uniform.clone(), &world.ref_policy, &config.policy)?;
            let mut fixed_report = align_gap(&fixed.policy, &uniform, world, &table, beta, FIXED_UNIFORM)?;
            fixed_report.seed = Some(seed);

            let adaptive = config
                .sizes
                .par_iter()
                .map(|&n| -> Result<GapReport> {
                    let mut rng = rng_stream(seed, STREAM_ORCHESTRATOR + n as u64);
                    let pairs = world.generate_preference_pairs(n, &all, &mut rng)?;
                    let targets = build_targets(&pairs, &models, &world.prompts, config.temperature)?;
                    let trained = train_orchestrator(
                        &targets,
                        &world.prompts,
                        config.temperature,
                        &config.orchestrator_train,
                        &mut rng,
                    )?;
                    let weights = adapter_weights(&trained.orchestrator, &world.prompts)?;
                    let opt = optimize_weighted(&table, weights.clone(), &world.ref_policy, &config.policy)?;
                    let mut report = align_gap(&opt.policy, &weights, world, &table, beta, ADAPTIVE)?;
                    report.n = Some(n);
                    report.seed = Some(seed);
                    Ok(report)
                })
                .collect::<Result<Vec<_>>>()?;

            let mut rows = Vec::with_capacity(2 * config.sizes.len());
            for (&n, report) in config.sizes.iter().zip(adaptive) {
                for r in [&fixed_report, &report] {
                    rows.push(GapRow {
                        method: r.method.clone(),
                        n,
                        seed,
                        align_gap: r.align_gap,
                        mismatch: r.mismatch,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Median `align_gap` over seeds for one method and size.
pub fn median_gap(rows: &[GapRow], method: &str, n: usize) -> Option<f64> {
    let mut values: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.n == n)
        .map(|r| r.align_gap)
        .collect();
    median(&mut values)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub weight: WeightVector,
    /// Mean reward of each objective over the evaluated prompts.
    pub mean_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<FrontierPoint>,
    /// The point for uniform weights, reported on its own.
    pub equal_weight: FrontierPoint,
}

fn mean_objective_rewards(rows: &[(usize, Vec<f64>)], rewards: &RewardTable) -> Vec<f64> {
    let k = rewards.num_objectives();
    let mut sums = vec![0.0; k];
    for (p, probs) in rows {
        for (obj, sum) in sums.iter_mut().enumerate() {
            *sum += probs
                .iter()
                .enumerate()
                .map(|(y, q)| q * rewards.get(*p, y, obj))
                .sum::<f64>();
        }
    }
    sums.into_iter().map(|s| s / rows.len() as f64).collect()
}

fn sweep<F>(grid: &[WeightVector], rewards: &RewardTable, indices: &[usize], policy_for: F) -> Result<SweepReport>
where
    F: Fn(usize, &WeightVector) -> Result<Vec<f64>> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Parameter("empty weight grid".into()));
    }
    if indices.is_empty() {
        return Err(Error::Data("no prompts to sweep over".into()));
    }
    let k = rewards.num_objectives();
    for w in grid {
        check_arity("grid weight", k, w.len())?;
    }
    let point = |w: &WeightVector| -> Result<FrontierPoint> {
        let rows = indices
            .iter()
            .map(|&p| Ok((p, policy_for(p, w)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrontierPoint {
            weight: w.clone(),
            mean_rewards: mean_objective_rewards(&rows, rewards),
        })
    };
    let points = grid.par_iter().map(point).collect::<Result<Vec<_>>>()?;
    let equal_weight = point(&WeightVector::uniform(k))?;
    Ok(SweepReport { points, equal_weight })
}

/// Mean per-objective reward of `π(·|x, w)` over the prompts in `indices`,
/// for every grid weight.
pub fn pareto_sweep(
    policy: &ConditionedPolicy,
    prompts: &[PromptFeatures],
    rewards: &RewardTable,
    indices: &[usize],
    grid: &[WeightVector],
) -> Result<SweepReport> {
    sweep(grid, rewards, indices, |p, w| policy.probabilities(&prompts[p], w))
}

/// The same sweep for the exact Gibbs policy of each grid weight.
pub fn gibbs_sweep(
    rewards: &RewardTable,
    reference: &TabularPolicy,
    beta: f64,
    indices: &[usize],
    grid: &[WeightVector],
) -> Result<SweepReport> {
    sweep(grid, rewards, indices, |p, w| {
        gibbs_policy(&rewards.scalarized_row(p, w)?, beta, reference.row(p))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMethod {
    /// Each prompt optimizes the reward scalarized by the orchestrator's weight.
    Pro,
    /// Every prompt uses uniform weights.
    UniformFixed,
    /// Every prompt optimizes the first objective only.
    SingleReward,
}

impl CurveMethod {
    pub const ALL: [CurveMethod; 3] = [CurveMethod::Pro, CurveMethod::UniformFixed, CurveMethod::SingleReward];

    pub fn label(self) -> &'static str {
        match self {
            CurveMethod::Pro => "pro",
            CurveMethod::UniformFixed => "uniform_fixed",
            CurveMethod::SingleReward => "single_reward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveConfig {
    pub beta: f64,
    pub step_size: f64,
    pub steps: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            beta: crate::policy::DEFAULT_BETA,
            step_size: 2.0,
            steps: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub method: CurveMethod,
    /// Mean adapter-scalarized reward at steps `0..steps`.
    pub values: Vec<f64>,
}

/// Fixed-step exact gradient ascent from the reference policy for each
/// method, all measured by the reward scalarized with the adapter weights.
pub fn learning_curves(
    rewards: &RewardTable,
    adapter: &[WeightVector],
    reference: &TabularPolicy,
    config: &CurveConfig,
) -> Result<Vec<CurveSeries>> {
    let k = rewards.num_objectives();
    let n_p = rewards.num_prompts();
    CurveMethod::ALL
        .iter()
        .map(|&method| {
            let optimized = match method {
                CurveMethod::Pro => adapter.to_vec(),
                CurveMethod::UniformFixed => vec![WeightVector::uniform(k); n_p],
                CurveMethod::SingleReward => vec![WeightVector::one_hot(k, 0); n_p],
            };
            let values = ascent_curve(
                rewards,
                &optimized,
                adapter,
                reference,
                config.beta,
                config.step_size,
                config.steps,
            )?;
            Ok(CurveSeries { method, values })
        })
        .collect()
}

/// First step `t` with `v_t − v_0 ≥ fraction·(v_T − v_0)`, i.e. the step at
/// which the given fraction of the total improvement is reached.
pub fn steps_to_fraction(values: &[f64], fraction: f64) -> Option<usize> {
    let first = *values.first()?;
    let last = *values.last()?;
    let target = fraction * (last - first);
    values.iter().position(|v| v - first >= target)
}

fn float(v: f64) -> String {
    format!("{v}")
}

/// Header `method,N,seed,align_gap,mismatch`.
pub fn write_gap_table<W: Write>(rows: &[GapRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "N", "seed", "align_gap", "mismatch"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.n.to_string(),
            r.seed.to_string(),
            float(r.align_gap),
            float(r.mismatch),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Header `method,step,mean_reward`.
pub fn write_curve_table<W: Write>(series: &[CurveSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "step", "mean_reward"])?;
    for s in series {
        for (t, v) in s.values.iter().enumerate() {
            w.write_record([s.method.label().to_string(), t.to_string(), float(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Header `w_1..w_K,r_1..r_K`, one row per point.
pub fn write_frontier_table<W: Write>(points: &[FrontierPoint], out: W) -> Result<()> {
    let k = points.first().map(|p| p.weight.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=k)
        .map(|i| format!("w_{i}"))
        .chain((1..=k).map(|i| format!("r_{i}")))
        .collect();
    w.write_record(&header)?;
    for p in points {
        check_arity("frontier rewards", k, p.mean_rewards.len())?;
        let row: Vec<String> = p
            .weight
            .as_slice()
            .iter()
            .chain(&p.mean_rewards)
            .map(|v| float(*v))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_to_fraction_uses_improvement() {
        let v = [-1.0, -0.5, -0.2, -0.1, 0.0];
        assert_eq!(steps_to_fraction(&v, 0.9), Some(3));
        assert_eq!(steps_to_fraction(&[2.0; 4], 0.9), Some(0));
        assert_eq!(steps_to_fraction(&[], 0.9), None);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn tables_have_headers() {
        let mut buf = Vec::new();
        write_gap_table(
            &[GapRow {
                method: "fixed_uniform".into(),
                n: 10,
                seed: 3,
                align_gap: 0.5,
                mismatch: 0.25,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,N,seed,align_gap,mismatch\nfixed_uniform,10,3,0.5,0.25\n"
        );
        let mut buf = Vec::new();
        write_frontier_table(
            &[FrontierPoint {
                weight: WeightVector::new(vec![1.0, 0.0]).unwrap(),
                mean_rewards: vec![0.1, -0.2],
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "w_1,w_2,r_1,r_2\n1,0,0.1,-0.2\n");
    }
}
