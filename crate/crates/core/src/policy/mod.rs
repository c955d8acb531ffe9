//! Policies: tabular KL-regularized optimization with its Gibbs closed form,
//! and the weight-conditioned policy with its prompt template.

mod conditioned;
mod tabular;
mod template;

pub use conditioned::{
    expected_scalarized_reward, fit_conditioned_offline, online_refine, ConditionedPolicy, ConditionedRecord,
    ConditionedTrainConfig, OnlineConfig, OnlineEpochStats, OnlineRefinement, TrainedConditioned,
    CONDITIONED_POLICY_VERSION,
};
pub use tabular::{
    adapter_weights, ascent_curve, AscentDirection, gibbs_policy, gibbs_table, kl_regularized_value, objective_gradient,
    optimize_policy_adaptive, optimize_policy_fixed, optimize_row, optimize_weighted, PolicyOptConfig,
    PolicyOptimization, RowOptimization, TabularPolicy, DEFAULT_BETA, POLICY_VERSION,
};
pub use template::{decode_weighted_prompt, encode_weighted_prompt, WeightedPromptEncoding, RENDER_TOLERANCE};
