//! Empirical checks of the off-manifold gradient theory and of the gradient
//! code itself.

mod gradcheck;
mod offmanifold;
mod theorem;

pub use gradcheck::{check_text_gradient, check_two_layer_gradient, GradCheckConfig, GradCheckReport};
pub use offmanifold::{
    offmanifold_norm_experiment, path_gradients, OffManifoldParams, OffManifoldReport, PointRecord, Verdict,
};
pub use theorem::{
    active_sum_variance_check, corollary_scaling, fit_inverse_sqrt, isotropic_abs_cosine, norm_tail_experiment,
    sampling_slack, signed_offmanifold_sum, theorem_monte_carlo, theorem_trial, theorem_trial_with_seeds,
    NormTailReport, ScalingFit, ScalingPoint, TheoremReport, TheoremTrialParams, TrialOutcome, TrialSeeds,
    VarianceCheck,
};
