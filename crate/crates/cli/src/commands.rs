use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use prefalign::analysis::{
    align_gap, learning_curves, median_gap, pareto_sweep, steps_to_fraction, theorem1_experiment, write_curve_table,
    write_frontier_table, write_gap_table, GapRow, ADAPTIVE, FIXED_UNIFORM,
};
use prefalign::environment::{
    build_world, rng_stream, split_prompts, MultiObjectivePreferencePair, PreferencePair, World,
};
use prefalign::io::{read_jsonl, write_jsonl};
use prefalign::orchestrator::{build_targets, train_orchestrator, Orchestrator};
use prefalign::policy::{
    adapter_weights, decode_weighted_prompt, encode_weighted_prompt, fit_conditioned_offline, online_refine,
    optimize_policy_adaptive, optimize_policy_fixed, ConditionedPolicy, ConditionedRecord, OnlineEpochStats,
    TabularPolicy,
};
use prefalign::rewards::{train_reward_models, RewardModelSet, RewardTable};
use prefalign::simplex::simplex_grid;
use prefalign::WeightVector;
use serde::{Deserialize, Serialize};

use crate::artifacts::{write_file, Stage, Store};

/// Independent random streams of the stages that draw randomness.
mod stream {
    pub const DATA_MO: u64 = 1;
    pub const DATA_RM: u64 = 2;
    pub const ORCHESTRATOR: u64 = 3;
    pub const CONDITIONED_OFFLINE: u64 = 4;
    pub const CONDITIONED_ONLINE: u64 = 5;
}

const RECORDS_FILE: &str = "conditioned_records.jsonl";
const ONLINE_STATS_FILE: &str = "conditioned_online_stats.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyArtifact {
    policy: TabularPolicy,
    /// Scalarization weight of each prompt.
    weights: Vec<WeightVector>,
}

/// A conditioned-policy training record with the weights rendered into the
/// prompt text.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateRecord {
    input: String,
    response: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OnlineStats {
    epochs: Vec<OnlineEpochStats>,
    drift_kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DataKind {
    /// Single-label preference pairs under the true weights.
    Rm,
    /// Pairs with one label per objective.
    Mo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainStage {
    Rewards,
    Orchestrator,
    PolicyFixed,
    PolicyAdaptive,
    ConditionedOffline,
    ConditionedOnline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalKind {
    Gap,
    Theorem1,
    Pareto,
    Curves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TabularChoice {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ConditionedChoice {
    Offline,
    Online,
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn train_indices(store: &Store, world: &World) -> Vec<usize> {
    split_prompts(world.num_prompts(), store.config.data.holdout_fraction).0
}

fn held_out_indices(store: &Store, world: &World) -> Vec<usize> {
    let (train, held) = split_prompts(world.num_prompts(), store.config.data.holdout_fraction);
    if held.is_empty() {
        train
    } else {
        held
    }
}

fn load_world(store: &Store) -> Result<World> {
    let (path, _) = store.require(Stage::World)?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(World::from_json(&text)?)
}

fn load_rewards(store: &Store, world: &World) -> Result<(RewardModelSet, RewardTable)> {
    let models: RewardModelSet = store.read_json(Stage::Rewards)?;
    let models = RewardModelSet::new(models.models)?;
    let table = models.table(&world.prompts);
    Ok((models, table))
}

fn load_orchestrator(store: &Store) -> Result<Orchestrator> {
    store.read_json(Stage::Orchestrator)
}

fn load_conditioned(store: &Store, which: ConditionedChoice) -> Result<ConditionedPolicy> {
    match which {
        ConditionedChoice::Offline => store.read_json(Stage::ConditionedOffline),
        ConditionedChoice::Online => store.read_json(Stage::ConditionedOnline),
    }
}

pub fn make_world(store: &Store) -> Result<()> {
    let world = build_world(&store.config.world, store.config.seed)?;
    let stage = Stage::World;
    write_file(&store.path(stage.file()), world.to_json()?.as_bytes())?;
    let manifest = store.finish(stage, &[stage.file()])?;
    println!(
        "world: {} prompts, {} responses, {} objectives; config hash {}",
        world.num_prompts(),
        world.num_responses(),
        world.num_objectives(),
        manifest.config_hash
    );
    Ok(())
}

pub fn gen_data(store: &Store, kind: DataKind) -> Result<()> {
    let world = load_world(store)?;
    let train = train_indices(store, &world);
    let seed = store.config.seed;
    let (stage, n) = match kind {
        DataKind::Rm => {
            let mut rng = rng_stream(seed, stream::DATA_RM);
            let pairs = world.generate_preference_pairs(store.config.data.rm_pairs, &train, &mut rng)?;
            write_jsonl(&store.path(Stage::DataRm.file()), &pairs)?;
            (Stage::DataRm, pairs.len())
        }
        DataKind::Mo => {
            let mut rng = rng_stream(seed, stream::DATA_MO);
            let pairs = world.generate_multiobjective_pairs(store.config.data.mo_pairs, &train, &mut rng)?;
            write_jsonl(&store.path(Stage::DataMo.file()), &pairs)?;
            (Stage::DataMo, pairs.len())
        }
    };
    store.finish(stage, &[stage.file()])?;
    println!("{}: {n} records over {} training prompts", stage.name(), train.len());
    Ok(())
}

pub fn train(store: &Store, which: TrainStage) -> Result<()> {
    match which {
        TrainStage::Rewards => train_rewards(store),
        TrainStage::Orchestrator => train_orchestrator_stage(store),
        TrainStage::PolicyFixed => train_policy(store, TabularChoice::Fixed),
        TrainStage::PolicyAdaptive => train_policy(store, TabularChoice::Adaptive),
        TrainStage::ConditionedOffline => train_conditioned_offline(store),
        TrainStage::ConditionedOnline => train_conditioned_online(store),
    }
}

fn train_rewards(store: &Store) -> Result<()> {
    let world = load_world(store)?;
    let (path, _) = store.require(Stage::DataMo)?;
    let pairs: Vec<MultiObjectivePreferencePair> = read_jsonl(&path)?;
    let (models, histories) = train_reward_models(
        &pairs,
        &world.prompts,
        world.num_responses(),
        world.num_objectives(),
        &store.config.rewards,
        store.config.seed,
    )?;
    let stage = Stage::Rewards;
    write_file(&store.path(stage.file()), &to_json(&models)?)?;
    store.finish(stage, &[stage.file()])?;
    for (k, h) in histories.iter().enumerate() {
        println!("reward model {k}: final epoch loss {:.4}", h.last().copied().unwrap_or(f64::NAN));
    }
    Ok(())
}

fn train_orchestrator_stage(store: &Store) -> Result<()> {
    let world = load_world(store)?;
    let (models, _) = load_rewards(store, &world)?;
    let (path, _) = store.require(Stage::DataRm)?;
    let pairs: Vec<PreferencePair> = read_jsonl(&path)?;
    let targets = build_targets(&pairs, &models, &world.prompts, store.config.temperature)?;
    let mut rng = rng_stream(store.config.seed, stream::ORCHESTRATOR);
    let trained = train_orchestrator(
        &targets,
        &world.prompts,
        store.config.temperature,
        &store.config.orchestrator,
        &mut rng,
    )?;
    let stage = Stage::Orchestrator;
    write_file(&store.path(stage.file()), &to_json(&trained.orchestrator)?)?;
    store.finish(stage, &[stage.file()])?;
    let train = train_indices(store, &world);
    let truth: Vec<WeightVector> = train.iter().map(|&p| world.true_weights[p].clone()).collect();
    let prompts: Vec<_> = train.iter().map(|&p| world.prompts[p].clone()).collect();
    println!(
        "orchestrator: {} targets, final epoch loss {:.4}, mean KL to true weights {:.4}",
        targets.len(),
        trained.loss_history.last().copied().unwrap_or(f64::NAN),
        trained.orchestrator.mean_kl_to(&prompts, &truth)?
    );
    Ok(())
}

fn train_policy(store: &Store, which: TabularChoice) -> Result<()> {
    let world = load_world(store)?;
    let (models, _) = load_rewards(store, &world)?;
    let (stage, result) = match which {
        TabularChoice::Fixed => {
            let w = store.config.fixed_weights()?;
            (
                Stage::PolicyFixed,
                optimize_policy_fixed(Some(&w), &models, &world, &store.config.policy)?,
            )
        }
        TabularChoice::Adaptive => {
            let orchestrator = load_orchestrator(store)?;
            (
                Stage::PolicyAdaptive,
                optimize_policy_adaptive(&orchestrator, &models, &world, &store.config.policy)?,
            )
        }
    };
    let steps: usize = result.histories.iter().map(|h| h.len() - 1).max().unwrap_or(0);
    let artifact = PolicyArtifact {
        policy: result.policy,
        weights: result.weights,
    };
    write_file(&store.path(stage.file()), &to_json(&artifact)?)?;
    store.finish(stage, &[stage.file()])?;
    println!("{}: optimized {} prompts, at most {steps} ascent steps per prompt", stage.name(), world.num_prompts());
    Ok(())
}

fn prompt_id(index: usize) -> String {
    format!("P{index}")
}

fn parse_prompt_id(id: &str) -> Result<usize> {
    id.strip_prefix('P')
        .and_then(|n| n.parse().ok())
        .with_context(|| format!("prompt id `{id}` is not of the form P<index>"))
}

fn train_conditioned_offline(store: &Store) -> Result<()> {
    let world = load_world(store)?;
    let (models, _) = load_rewards(store, &world)?;
    let (path, _) = store.require(Stage::DataRm)?;
    let pairs: Vec<PreferencePair> = read_jsonl(&path)?;
    let targets = build_targets(&pairs, &models, &world.prompts, store.config.temperature)?;

    let rendered = pairs
        .iter()
        .zip(&targets)
        .map(|(pair, t)| {
            Ok(TemplateRecord {
                input: encode_weighted_prompt(&prompt_id(pair.prompt_index), &t.target)?.as_str().to_string(),
                response: pair.chosen,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&store.path(RECORDS_FILE), &rendered)?;

    let records = read_jsonl::<TemplateRecord>(&store.path(RECORDS_FILE))?
        .into_iter()
        .map(|r| {
            let (id, weights) = decode_weighted_prompt(&r.input, world.num_objectives())?;
            Ok(ConditionedRecord {
                prompt_index: parse_prompt_id(&id)?,
                weights,
                response: r.response,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = rng_stream(store.config.seed, stream::CONDITIONED_OFFLINE);
    let trained = fit_conditioned_offline(
        &records,
        &world.prompts,
        world.num_responses(),
        &store.config.conditioned,
        &mut rng,
    )?;
    let stage = Stage::ConditionedOffline;
    write_file(&store.path(stage.file()), &to_json(&trained.policy)?)?;
    store.finish(stage, &[stage.file(), RECORDS_FILE])?;
    println!(
        "conditioned-offline: {} records, final epoch loss {:.4}",
        records.len(),
        trained.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train_conditioned_online(store: &Store) -> Result<()> {
    let world = load_world(store)?;
    let (_, table) = load_rewards(store, &world)?;
    let orchestrator = load_orchestrator(store)?;
    let start = load_conditioned(store, ConditionedChoice::Offline)?;
    let pool = train_indices(store, &world);
    let mut rng = rng_stream(store.config.seed, stream::CONDITIONED_ONLINE);
    let refined = online_refine(&start, &orchestrator, &table, &world.prompts, &pool, &store.config.online, &mut rng)?;
    let stage = Stage::ConditionedOnline;
    write_file(&store.path(stage.file()), &to_json(&refined.policy)?)?;
    let stats = OnlineStats {
        epochs: refined.epochs.clone(),
        drift_kl: refined.drift_kl,
    };
    write_file(&store.path(ONLINE_STATS_FILE), &to_json(&stats)?)?;
    store.finish(stage, &[stage.file(), ONLINE_STATS_FILE])?;
    for e in &refined.epochs {
        println!(
            "online epoch {}: mean sampled reward {:.4}, mean kept reward {:.4}, loss {:.4}",
            e.epoch, e.mean_raw_reward, e.mean_kept_reward, e.mean_loss
        );
    }
    println!("drift KL to the offline policy {:.4}", refined.drift_kl);
    Ok(())
}

pub struct EvalOptions {
    pub policy: Option<String>,
}

pub fn eval(store: &Store, kind: EvalKind, options: &EvalOptions) -> Result<PathBuf> {
    match kind {
        EvalKind::Gap => eval_gap(store, options),
        EvalKind::Theorem1 => eval_theorem1(store),
        EvalKind::Pareto => eval_pareto(store, options),
        EvalKind::Curves => eval_curves(store),
    }
}

fn parse_choice<T: clap::ValueEnum>(value: Option<&str>, default: T) -> Result<T> {
    match value {
        None => Ok(default),
        Some(v) => T::from_str(v, true).map_err(|e| anyhow::anyhow!("invalid --policy value: {e}")),
    }
}

fn eval_gap(store: &Store, options: &EvalOptions) -> Result<PathBuf> {
    let which = parse_choice(options.policy.as_deref(), TabularChoice::Adaptive)?;
    let world = load_world(store)?;
    let (_, table) = load_rewards(store, &world)?;
    let (stage, method) = match which {
        TabularChoice::Fixed => (Stage::PolicyFixed, FIXED_UNIFORM),
        TabularChoice::Adaptive => (Stage::PolicyAdaptive, ADAPTIVE),
    };
    let artifact: PolicyArtifact = store.read_json(stage)?;
    let report = align_gap(&artifact.policy, &artifact.weights, &world, &table, store.config.policy.beta, method)?;
    let row = GapRow {
        method: method.to_string(),
        n: store.config.data.rm_pairs,
        seed: store.config.seed,
        align_gap: report.align_gap,
        mismatch: report.mismatch,
    };
    let dir = store.reports_dir()?;
    let mut csv = Vec::new();
    write_gap_table(&[row], &mut csv)?;
    let path = dir.join(format!("gap_{method}.csv"));
    write_file(&path, &csv)?;
    write_file(&dir.join(format!("gap_{method}.json")), &to_json(&report)?)?;
    println!("{method}: align gap {:.6}, weight mismatch {:.6}", report.align_gap, report.mismatch);
    Ok(path)
}

fn eval_theorem1(store: &Store) -> Result<PathBuf> {
    let world = load_world(store)?;
    let cfg = &store.config.theorem1;
    let rows = theorem1_experiment(&world, cfg)?;
    let mut csv = Vec::new();
    write_gap_table(&rows, &mut csv)?;
    let path = store.reports_dir()?.join("theorem1.csv");
    write_file(&path, &csv)?;
    for &n in &cfg.sizes {
        let fixed = median_gap(&rows, FIXED_UNIFORM, n).unwrap_or(f64::NAN);
        let adaptive = median_gap(&rows, ADAPTIVE, n).unwrap_or(f64::NAN);
        println!("N={n}: median gap adaptive {adaptive:.5}, fixed uniform {fixed:.5}");
    }
    Ok(path)
}

fn eval_pareto(store: &Store, options: &EvalOptions) -> Result<PathBuf> {
    let which = parse_choice(options.policy.as_deref(), ConditionedChoice::Online)?;
    let world = load_world(store)?;
    let (_, table) = load_rewards(store, &world)?;
    let policy = load_conditioned(store, which)?;
    let grid = simplex_grid(world.num_objectives(), store.config.pareto.divisions);
    if grid.is_empty() {
        bail!("empty weight grid");
    }
    let held = held_out_indices(store, &world);
    let sweep = pareto_sweep(&policy, &world.prompts, &table, &held, &grid)?;
    let mut csv = Vec::new();
    write_frontier_table(&sweep.points, &mut csv)?;
    let name = match which {
        ConditionedChoice::Offline => "pareto_offline.csv",
        ConditionedChoice::Online => "pareto_online.csv",
    };
    let path = store.reports_dir()?.join(name);
    write_file(&path, &csv)?;
    println!(
        "{} weight points over {} held-out prompts; equal-weight mean rewards {:.4?}",
        sweep.points.len(),
        held.len(),
        sweep.equal_weight.mean_rewards
    );
    Ok(path)
}

fn eval_curves(store: &Store) -> Result<PathBuf> {
    let world = load_world(store)?;
    let (_, table) = load_rewards(store, &world)?;
    let orchestrator = load_orchestrator(store)?;
    let adapter = adapter_weights(&orchestrator, &world.prompts)?;
    let curves = learning_curves(&table, &adapter, &world.ref_policy, &store.config.curves)?;
    let mut csv = Vec::new();
    write_curve_table(&curves, &mut csv)?;
    let path = store.reports_dir()?.join("curves.csv");
    write_file(&path, &csv)?;
    for c in &curves {
        let t90 = steps_to_fraction(&c.values, 0.9).map_or("never".to_string(), |t| t.to_string());
        println!(
            "{}: final reward {:.4}, steps to 90% of improvement {t90}",
            c.method.label(),
            c.values.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(path)
}
