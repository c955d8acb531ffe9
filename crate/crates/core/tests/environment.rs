use prefalign::environment::*;
use prefalign::simplex::sigmoid;
use serde_json::Value;

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array().unwrap().iter().map(floats).collect()
}

/// Evaluates the serialized reward parameters directly from the JSON document.
fn oracle_reward(params: &Value, k: usize, x: &[f64], y: usize) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    match params["kind"].as_str().unwrap() {
        "linear" => {
            let u = matrix(&params["prompt_weights"]);
            let v = matrix(&params["response_weights"]);
            let e = matrix(&params["embeddings"]);
            dot(&u[k], x) + dot(&v[k], &e[y])
        }
        "network" => {
            let e = matrix(&params["embeddings"]);
            let w = matrix(&params["input_weights"][k]);
            let b = floats(&params["biases"][k]);
            let v = floats(&params["output_weights"][k]);
            let mut input = x.to_vec();
            input.extend(&e[y]);
            (0..w.len()).map(|h| v[h] * (dot(&w[h], &input) + b[h]).tanh()).sum()
        }
        "profile" => {
            let w = &params["logit_weights"][y];
            let c = floats(&params["logit_offsets"][y]);
            let z: Vec<f64> = (0..c.len()).map(|j| dot(&floats(&w[j]), x) + c[j]).collect();
            let m = z.iter().cloned().fold(f64::MIN, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            z[k] - lse
        }
        other => panic!("unknown family {other}"),
    }
}

fn check_table_against_oracle(config: &WorldConfig, seed: u64) {
    let world = build_world(config, seed).unwrap();
    let doc: Value = serde_json::from_str(&world.to_json().unwrap()).unwrap();
    let params = &doc["reward_function"];
    let prompts = matrix(&doc["prompts"]);
    for (p, x) in prompts.iter().enumerate() {
        for y in 0..config.num_responses {
            for k in 0..config.num_objectives {
                let expected = oracle_reward(params, k, x, y) * config.reward_scale;
                let stored = world.rewards.get(p, y, k);
                assert!(
                    (stored - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
                    "p={p} y={y} k={k}: {stored} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn stored_rewards_match_independent_evaluation() {
    for family in [RewardFamily::Linear, RewardFamily::Network { hidden: 8 }] {
        let config = WorldConfig {
            feature_dim: 4,
            num_objectives: 3,
            num_responses: 16,
            num_prompts: 64,
            reward_family: family,
            ..WorldConfig::default()
        };
        check_table_against_oracle(&config, 7);
    }
    let profile = WorldConfig {
        num_objectives: 3,
        num_responses: 18,
        reward_scale: 2.5,
        ..WorldConfig::default()
    };
    check_table_against_oracle(&profile, 7);
}

#[test]
fn worlds_are_deterministic_and_round_trip() {
    let config = WorldConfig::default();
    let a = build_world(&config, 11).unwrap();
    let b = build_world(&config, 11).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let c = build_world(&config, 12).unwrap();
    assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    let reloaded = World::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(reloaded, a);
    assert_eq!(reloaded.to_json().unwrap(), a.to_json().unwrap());
}

#[test]
fn reference_rows_respect_floor() {
    for seed in 0..5 {
        let config = WorldConfig {
            ref_floor: 0.05,
            ref_spread: 4.0,
            ..WorldConfig::default()
        };
        let world = build_world(&config, seed).unwrap();
        for p in 0..world.num_prompts() {
            let row = world.ref_policy.row(p);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&q| q >= 0.05 - 1e-15));
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = WorldConfig::default();
    for bad in [
        WorldConfig { num_objectives: 1, ..base.clone() },
        WorldConfig { num_responses: 1, ..base.clone() },
        WorldConfig { ref_floor: 0.0, ..base.clone() },
        WorldConfig { ref_floor: 0.1, ..base.clone() },
        WorldConfig { num_prompts: 0, ..base.clone() },
    ] {
        assert!(matches!(build_world(&bad, 0), Err(prefalign::Error::Config(_))), "{bad:?}");
    }
}

/// The same world with rewards rescaled so that the chosen pair's scalarized
/// difference is exactly `target`.
fn world_with_gap(target: f64) -> (World, usize, usize, usize) {
    let config = WorldConfig::default();
    let world = build_world(&config, 3).unwrap();
    let (p, a, b) = (5, 2, 9);
    let delta = world.scalarized_true_reward(p, a) - world.scalarized_true_reward(p, b);
    assert!(delta.abs() > 1e-3);
    let scaled = WorldConfig {
        reward_scale: target / delta,
        ..config
    };
    (build_world(&scaled, 3).unwrap(), p, a, b)
}

#[test]
fn bradley_terry_rate_matches_sigmoid() {
    let (world, p, a, b) = world_with_gap(1.0);
    let delta = world.scalarized_true_reward(p, a) - world.scalarized_true_reward(p, b);
    assert!((delta - 1.0).abs() < 1e-12);
    let mut rng = rng_from_seed(99);
    let n = 10_000;
    let wins = (0..n)
        .filter(|_| world.choose_between(p, a, b, &mut rng).unwrap().chosen == a)
        .count();
    let expected = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((wins as f64 / n as f64 - expected).abs() < 0.02, "{wins}");
}

#[test]
fn equal_scores_are_a_coin_flip() {
    let (world, p, a, b) = world_with_gap(1e-300);
    assert_eq!(world.preference_probability(0.0), 0.5);
    let mut rng = rng_from_seed(5);
    let n = 10_000;
    let wins = (0..n)
        .filter(|_| world.choose_between(p, a, b, &mut rng).unwrap().chosen == a)
        .count();
    assert!((wins as f64 / n as f64 - 0.5).abs() < 0.02);
}

#[test]
fn equal_objective_rewards_give_fair_labels() {
    let config = WorldConfig {
        reward_scale: 1e-300,
        ..WorldConfig::default()
    };
    let world = build_world(&config, 6).unwrap();
    let mut rng = rng_from_seed(6);
    let pairs = world.generate_multiobjective_pairs(10_000, &[0, 1, 2], &mut rng).unwrap();
    for k in 0..2 {
        let rate = pairs.iter().filter(|p| p.labels[k]).count() as f64 / pairs.len() as f64;
        assert!((rate - 0.5).abs() < 0.02, "objective {k}: {rate}");
    }
}

#[test]
fn noiseless_preferences_are_deterministic() {
    let config = WorldConfig {
        preference_noise: 0.0,
        ..WorldConfig::default()
    };
    let world = build_world(&config, 3).unwrap();
    let mut rng = rng_from_seed(1);
    for pair in world.generate_preference_pairs(500, &[0, 1, 2, 3], &mut rng).unwrap() {
        let p = pair.prompt_index;
        assert!(world.scalarized_true_reward(p, pair.chosen) >= world.scalarized_true_reward(p, pair.rejected));
    }
}

#[test]
fn swapping_the_pair_flips_the_label_law() {
    let (world, p, a, b) = world_with_gap(0.7);
    let n = 10_000;
    let mut forward_rng = rng_from_seed(21);
    let mut swapped_rng = rng_from_seed(21);
    let mut forward = 0;
    let mut swapped = 0;
    for _ in 0..n {
        forward += (world.choose_between(p, a, b, &mut forward_rng).unwrap().chosen == a) as usize;
        swapped += (world.choose_between(p, b, a, &mut swapped_rng).unwrap().chosen == a) as usize;
    }
    assert!((forward as f64 - swapped as f64).abs() / (n as f64) < 0.02);
}

#[test]
fn conflicting_objectives_disagree() {
    let config = WorldConfig {
        reward_scale: 8.0,
        ..WorldConfig::default()
    };
    let world = build_world(&config, 4).unwrap();
    // Find a prompt and ordered pair where objective 0 prefers a and objective 1 prefers b.
    let mut found = None;
    'outer: for p in 0..world.num_prompts() {
        for a in 0..world.num_responses() {
            for b in 0..world.num_responses() {
                let d0 = world.rewards.get(p, a, 0) - world.rewards.get(p, b, 0);
                let d1 = world.rewards.get(p, a, 1) - world.rewards.get(p, b, 1);
                if d0 > 4.0 && d1 < -4.0 {
                    found = Some((p, a, b, d0, d1));
                    break 'outer;
                }
            }
        }
    }
    let (p, a, b, d0, d1) = found.expect("world has conflicting objectives");
    let s0 = sigmoid(d0);
    let s1 = sigmoid(d1);
    let expected = s0 * (1.0 - s1) + (1.0 - s0) * s1;
    assert!(expected > 0.9);
    // Sample the labels for this exact pair through the public sampler by rejection.
    let mut rng = rng_from_seed(8);
    let mut draws = 0;
    let mut disagree = 0;
    while draws < 2000 {
        let pair = world.sample_multiobjective_pair(p, &mut rng).unwrap();
        let labels = if (pair.a, pair.b) == (a, b) {
            pair.labels.clone()
        } else if (pair.a, pair.b) == (b, a) {
            pair.labels.iter().map(|l| !l).collect()
        } else {
            continue;
        };
        assert_eq!(labels.len(), 2);
        draws += 1;
        disagree += (labels[0] != labels[1]) as usize;
    }
    assert!((disagree as f64 / draws as f64 - expected).abs() < 0.04);
}

#[test]
fn tied_objectives_share_rewards() {
    let config = WorldConfig {
        tied_objectives: true,
        num_objectives: 3,
        num_responses: 18,
        ..WorldConfig::default()
    };
    let world = build_world(&config, 2).unwrap();
    for p in 0..world.num_prompts() {
        for y in 0..world.num_responses() {
            let v = world.rewards.vector(p, y);
            assert!(v.as_slice().iter().all(|r| *r == v[0]));
        }
    }
    let mut rng = rng_from_seed(3);
    let pairs = world.generate_multiobjective_pairs(200, &[0], &mut rng).unwrap();
    assert!(pairs.iter().all(|p| p.labels.len() == 3 && p.a != p.b));
}

#[test]
fn constant_family_is_constant() {
    let config = WorldConfig {
        weight_family: WeightFamily::Constant {
            weights: Some(vec![0.2, 0.8]),
        },
        ..WorldConfig::default()
    };
    let world = build_world(&config, 0).unwrap();
    for w in &world.true_weights {
        assert_eq!(w.as_slice(), &[0.2, 0.8]);
    }
}
