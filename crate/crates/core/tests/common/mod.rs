#![allow(dead_code)]

use prefalign::environment::{WeightFamily, WorldConfig};

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a floor so that two zero vectors agree.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Central differences of `f` around `params`.
pub fn central_difference(params: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut work = params.to_vec();
    (0..params.len())
        .map(|i| {
            work[i] = params[i] + h;
            let plus = f(&work);
            work[i] = params[i] - h;
            let minus = f(&work);
            work[i] = params[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Two objectives, 32 responses, prompt-dependent true weights.
pub fn experiment_world() -> WorldConfig {
    WorldConfig {
        num_responses: 32,
        ref_floor: 0.02,
        weight_family: WeightFamily::SoftmaxLinear { scale: 6.0 },
        ..WorldConfig::default()
    }
}
