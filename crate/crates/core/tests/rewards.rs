mod common;

use common::{central_difference, relative_error};
use prefalign::environment::*;
use prefalign::nn::{smoothed, HeadInit};
use prefalign::rewards::*;
use prefalign::simplex::softmax;
use prefalign::Error;
use rand::Rng;
use rand_distr::StandardNormal;

fn world() -> World {
    build_world(&WorldConfig::default(), 1).unwrap()
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let world = world();
    let mut rng = rng_from_seed(4);
    let pairs = world.generate_preference_pairs(12, &[0, 1, 2, 3, 4], &mut rng).unwrap();
    for point in 0..10 {
        let mut model = RewardModel::init(0, 4, 16, 6, HeadInit::Scaled, &mut rng);
        for p in model.net.params.iter_mut() {
            *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let (_, analytic) = model.loss_and_grad(&pairs, &world.prompts);
        let numeric = central_difference(&model.net.params, 1e-6, |params| {
            let mut m = model.clone();
            m.net.params.copy_from_slice(params);
            m.loss_and_grad(&pairs, &world.prompts).0
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "point {point}: relative error {err}");
    }
}

#[test]
fn zero_head_loss_is_ln2() {
    let world = world();
    let mut rng = rng_from_seed(0);
    let pairs = world.generate_preference_pairs(50, &[0, 1], &mut rng).unwrap();
    let model = RewardModel::init(0, 4, 16, 8, HeadInit::Zero, &mut rng);
    let (loss, _) = model.loss_and_grad(&pairs, &world.prompts);
    assert!((loss - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn learns_noiseless_linear_preferences() {
    let config = WorldConfig {
        reward_family: RewardFamily::Linear,
        preference_noise: 0.0,
        ..WorldConfig::default()
    };
    let world = build_world(&config, 2).unwrap();
    let (train, held) = split_prompts(world.num_prompts(), 0.25);
    let mut rng = rng_from_seed(2);
    let data = world.generate_multiobjective_pairs(3000, &train, &mut rng).unwrap();
    let (models, _) = train_reward_models(&data, &world.prompts, 16, 2, &RewardTrainConfig::default(), 2).unwrap();
    let test = world.generate_multiobjective_pairs(1000, &held, &mut rng).unwrap();
    for k in 0..2 {
        // Ordering by the generating reward, independent of the sampled labels.
        let correct = test
            .iter()
            .filter(|p| {
                let truth = world.rewards.get(p.prompt_index, p.a, k) > world.rewards.get(p.prompt_index, p.b, k);
                let x = &world.prompts[p.prompt_index];
                let model = models.models[k].score(x, p.a) > models.models[k].score(x, p.b);
                truth == model
            })
            .count();
        let accuracy = correct as f64 / test.len() as f64;
        assert!(accuracy >= 0.9, "objective {k}: accuracy {accuracy}");
    }
}

#[test]
fn trained_models_prefer_held_out_choices() {
    let world = world();
    let (train, held) = split_prompts(world.num_prompts(), 0.25);
    let mut rng = rng_from_seed(3);
    let data = world.generate_multiobjective_pairs(3000, &train, &mut rng).unwrap();
    let (models, histories) =
        train_reward_models(&data, &world.prompts, 16, 2, &RewardTrainConfig::default(), 3).unwrap();
    let test = world.generate_multiobjective_pairs(2000, &held, &mut rng).unwrap();
    for k in 0..2 {
        let projected: Vec<PreferencePair> = test.iter().map(|p| p.project(k)).collect();
        let p = models.models[k].mean_preference_probability(&projected, &world.prompts);
        assert!(p > 0.5, "objective {k}: {p}");
        let smooth = smoothed(&histories[k], 5);
        assert!(smooth.last().unwrap() < smooth.first().unwrap());
        assert!(histories[k][0] < 2f64.ln());
    }
}

#[test]
fn smoothed_history_is_non_increasing_on_full_batches() {
    let world = world();
    let mut rng = rng_from_seed(9);
    let pairs = world.generate_preference_pairs(256, &[0, 1, 2, 3], &mut rng).unwrap();
    let config = RewardTrainConfig {
        batch_size: 256,
        learning_rate: 3e-3,
        epochs: 60,
        ..Default::default()
    };
    let trained = train_reward_model(&pairs, &world.prompts, 16, 0, &config, &mut rng).unwrap();
    let smooth = smoothed(&trained.loss_history, 5);
    assert!(smooth.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{smooth:?}");
}

#[test]
fn training_errors() {
    let world = world();
    let mut rng = rng_from_seed(0);
    let cfg = RewardTrainConfig::default();
    assert!(matches!(
        train_reward_model(&[], &world.prompts, 16, 0, &cfg, &mut rng),
        Err(Error::Data(_))
    ));
    let pairs = world.generate_preference_pairs(1, &[0], &mut rng).unwrap();
    let exploding = RewardTrainConfig {
        learning_rate: f64::INFINITY,
        epochs: 3,
        ..cfg
    };
    match train_reward_model(&pairs, &world.prompts, 16, 0, &exploding, &mut rng) {
        Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn reward_vector_semantics() {
    let mut rng = rng_from_seed(5);
    let base = RewardModel::init(0, 4, 16, 8, HeadInit::Scaled, &mut rng);
    let mut clone = base.clone();
    clone.objective = 1;
    let same = RewardModelSet::new(vec![base.clone(), clone]).unwrap();
    let x = PromptFeatures(vec![0.3, -0.2, 1.1, 0.0]);
    let r = same.reward_vector(2, &x, 3).unwrap();
    assert_eq!(r[0], r[1]);
    assert!(matches!(same.reward_vector(3, &x, 3), Err(Error::Arity { .. })));

    let other = RewardModel::init(1, 4, 16, 8, HeadInit::Scaled, &mut rng);
    let set = RewardModelSet::new(vec![base.clone(), other.clone()]).unwrap();
    let r = set.reward_vector(2, &x, 7).unwrap();
    assert_eq!(r[0], base.score(&x, 7));
    assert_eq!(r[1], other.score(&x, 7));
    let text = serde_json::to_string(&set).unwrap();
    assert_eq!(serde_json::from_str::<RewardModelSet>(&text).unwrap(), set);
}

#[test]
fn frozen_table_is_reproduced_on_re_evaluation() {
    let world = world();
    let mut rng = rng_from_seed(6);
    let data = world.generate_multiobjective_pairs(200, &[0, 1, 2], &mut rng).unwrap();
    let cfg = RewardTrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let (models, _) = train_reward_models(&data, &world.prompts, 16, 2, &cfg, 6).unwrap();
    let table = models.table(&world.prompts);
    let reloaded: RewardModelSet = serde_json::from_str(&serde_json::to_string(&models).unwrap()).unwrap();
    for (p, x) in world.prompts.iter().enumerate() {
        for y in 0..16 {
            let v = reloaded.reward_vector(2, x, y).unwrap();
            for k in 0..2 {
                assert_eq!(v[k].to_bits(), table.get(p, y, k).to_bits());
            }
        }
    }
}

#[test]
fn rescaling_one_model_rescales_its_logits() {
    // Targets use raw model scales: multiplying model 0's output layer by c
    // multiplies its scores, and the target is softmax of the rescaled vector.
    let mut rng = rng_from_seed(7);
    let m0 = RewardModel::init(0, 4, 16, 8, HeadInit::Scaled, &mut rng);
    let m1 = RewardModel::init(1, 4, 16, 8, HeadInit::Scaled, &mut rng);
    let c = 3.0;
    let mut scaled = m0.clone();
    let w2_start = scaled.net.hidden * scaled.net.n_in + scaled.net.hidden;
    for p in &mut scaled.net.params[w2_start..] {
        *p *= c;
    }
    let x = PromptFeatures(vec![1.0, 0.5, -0.5, 0.2]);
    let y = 4;
    let original = RewardModelSet::new(vec![m0.clone(), m1.clone()]).unwrap();
    let rescaled = RewardModelSet::new(vec![scaled, m1]).unwrap();
    let r = original.reward_vector(2, &x, y).unwrap();
    let w = normalize_weights(rescaled.reward_vector(2, &x, y).unwrap().as_slice(), 0.1).unwrap();
    let expected = softmax(&[c * r[0] / 0.1, r[1] / 0.1]);
    for k in 0..2 {
        assert!((w[k] - expected[k]).abs() < 1e-12);
    }
}
