use onmanifold::pipeline::{run_planted_experiment, PlantedExperimentConfig};
use onmanifold::verify::{active_sum_variance_check, isotropic_abs_cosine, sampling_slack};
use statrs::function::gamma::ln_gamma;

#[test]
fn active_sum_coordinates_have_predicted_variance() {
    let v = active_sum_variance_check(256, 128, 512, 500, 3).unwrap();
    assert!((v.pooled_ratio - 1.0).abs() <= 0.1, "{v:?}");
    // Each unit is active with probability 1/2 at a generic point.
    assert!((v.mean_active - 256.0).abs() < 5.0, "{v:?}");
}

#[test]
fn isotropic_cosine_matches_gamma_ratio() {
    for dim in [2usize, 3, 7, 64, 255, 1024, 4096] {
        let n = dim as f64;
        let oracle = (ln_gamma(n / 2.0) - ln_gamma((n + 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt();
        let got = isotropic_abs_cosine(dim);
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0), "dim {dim}: {got} vs {oracle}");
    }
}

#[test]
fn sampling_slack_is_three_binomial_sigmas_plus_one_count() {
    let (b, n) = (0.01, 400usize);
    let expected = 3.0 * (b * (1.0 - b) / n as f64).sqrt() + 1.0 / n as f64;
    assert!((sampling_slack(b, n) - expected).abs() < 1e-15);
}

#[test]
fn planted_ensemble_members_clear_the_accuracy_floor() {
    let (report, models, _) = run_planted_experiment(&PlantedExperimentConfig::default()).unwrap();
    assert_eq!(models.surrogates.len(), 5);
    assert_eq!(report.training.surrogate_heldout_accuracy.len(), 5);
    for acc in &report.training.surrogate_heldout_accuracy {
        assert!(*acc >= 0.9, "{:?}", report.training.surrogate_heldout_accuracy);
    }
    let mut seeds = report.training.surrogate_seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds.len(), 5);
    for m in &models.surrogates {
        assert!(std::sync::Arc::ptr_eq(m.embedding(), models.classifier.embedding()));
    }
}
