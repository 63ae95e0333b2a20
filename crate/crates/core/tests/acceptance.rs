//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand_distr::Beta;

use onmanifold::explain::{manifold_report, suggest_threshold, NormProfile, ThresholdConfig, FALLBACK_THRESHOLD};
use onmanifold::nets::{Embedding, TextClassifier, TwoLayerNet};
use onmanifold::numerics::{Mat, Rng};
use onmanifold::pipeline::{run_planted_experiment, PlantedExperimentConfig};
use onmanifold::subspace::SubspaceBasis;
use onmanifold::textpipe::{generate_planted_corpus, PlantedCorpus, PlantedCorpusSpec, Vocab};
use onmanifold::verify::{
    check_text_gradient, check_two_layer_gradient, corollary_scaling, norm_tail_experiment,
    offmanifold_norm_experiment, theorem_monte_carlo, GradCheckConfig, OffManifoldParams, TheoremTrialParams,
    Verdict,
};

struct Outcome {
    passed: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, onmanifold::error::Error>;

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn theorem_monte_carlo_init() -> Result<Outcome, onmanifold::error::Error> {
    let params = TheoremTrialParams::default();
    let clock = Instant::now();
    let r = theorem_monte_carlo(&params)?;
    let elapsed = clock.elapsed();
    let decomposition = r.max_decomposition_error.unwrap_or(f64::INFINITY);
    let passed = r.violations == 0 && decomposition <= 1e-10 && elapsed < Duration::from_secs(120);
    Ok(Outcome {
        passed,
        detail: format!(
            "d={} codim={} m={} trials={}: violations {} (bound {:.3e}), max decomposition error {:.1e}, {} (target < 120s)",
            params.ambient_dim,
            params.codim,
            params.width,
            params.trials,
            r.violations,
            r.bound_value,
            decomposition,
            secs(elapsed)
        ),
    })
}

fn corollary_scaling_fit() -> Result<Outcome, onmanifold::error::Error> {
    let (fit, _) = corollary_scaling(&[64, 256, 1024], 1024, 200, 0)?;
    let devs: Vec<String> = fit
        .points
        .iter()
        .map(|p| format!("codim {}: {:.4} vs {:.4} ({:+.1}%)", p.codim, p.mean_abs_cosine, p.fitted, 100.0 * p.relative_deviation))
        .collect();
    Ok(Outcome {
        passed: fit.max_relative_deviation <= 0.2,
        detail: format!("c={:.4}; {} (limit 20%)", fit.coefficient, devs.join(", ")),
    })
}

fn norm_tail() -> Result<Outcome, onmanifold::error::Error> {
    let mut passed = true;
    let mut parts = Vec::new();
    for n in [64usize, 256] {
        let r = norm_tail_experiment(n, 1.0 / n as f64, 100_000, 7)?;
        // Independent evaluation of the allowance.
        let b = (-(n as f64) / 16.0).exp();
        let allowance = b + 3.0 * (b * (1.0 - b) / 1e5).sqrt();
        let ok = r.empirical <= allowance && r.passed;
        passed &= ok;
        parts.push(format!("n={n}: {:.2e} <= {:.2e}", r.empirical, allowance));
    }
    Ok(Outcome {
        passed,
        detail: parts.join(", "),
    })
}

fn offmanifold_separation() -> Result<Outcome, onmanifold::error::Error> {
    let r = offmanifold_norm_experiment(&OffManifoldParams::default())?;
    let passed = r.heldout_accuracy >= 0.95 && r.ratio >= 3.0 && r.median_init_cosine >= 0.9 && r.verdict == Verdict::Pass;
    Ok(Outcome {
        passed,
        detail: format!(
            "accuracy {:.4} held-out; median off-manifold norm / path gradient = {:.3} (need 3); median init cosine {:.4} (need 0.9)",
            r.heldout_accuracy, r.ratio, r.median_init_cosine
        ),
    })
}

fn planted_precision() -> Result<Outcome, onmanifold::error::Error> {
    let clock = Instant::now();
    let mut gains = Vec::new();
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let mut cfg = PlantedExperimentConfig::default();
        cfg.corpus.seed = seed;
        cfg.pipeline.seed = seed;
        assert_eq!(cfg.train_docs + 100, cfg.corpus.doc_count);
        let (r, models, _) = run_planted_experiment(&cfg)?;
        assert_eq!(models.surrogates.len(), 5);
        assert_eq!(r.documents.len(), 100);
        gains.push(r.precision_gain);
        parts.push(format!(
            "seed {seed}: {:.3} vs {:.3}",
            r.ours_precision, r.baseline_precision
        ));
    }
    let elapsed = clock.elapsed();
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    Ok(Outcome {
        passed: mean >= 0.15 && elapsed < Duration::from_secs(600),
        detail: format!(
            "precision@10 ours vs max-norm: {}; mean gain {mean:.3} (need 0.15), {} (target < 600s)",
            parts.join(", "),
            secs(elapsed)
        ),
    })
}

fn threshold_gap() -> Result<Outcome, onmanifold::error::Error> {
    let cfg = ThresholdConfig::default();
    let shape = Beta::new(2.0, 2.0).expect("valid shape");
    let mut inside = 0;
    for run in 0..100u64 {
        let mut rng = Rng::new(1000 + run);
        let mut profiles = Vec::new();
        let (mut low_max, mut high_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..40 {
            let values: Vec<f64> = (0..30)
                .map(|_| {
                    let b: f64 = rng.sample(&shape);
                    if rng.uniform() < 0.6 {
                        let v = 0.08 + 0.27 * b;
                        low_max = low_max.max(v);
                        v
                    } else {
                        let v = 0.6 + 0.4 * b;
                        high_min = high_min.min(v);
                        v
                    }
                })
                .collect();
            profiles.push(NormProfile::from_normalized(values));
        }
        let s = suggest_threshold(&profiles, &cfg);
        if !s.used_fallback && s.threshold > low_max && s.threshold < high_min {
            inside += 1;
        }
    }
    let mut rng = Rng::new(5);
    let uniform: Vec<NormProfile> = (0..20)
        .map(|_| NormProfile::from_normalized((0..50).map(|_| rng.uniform()).collect()))
        .collect();
    let fb = suggest_threshold(&uniform, &cfg);
    let fallback_ok = fb.used_fallback && fb.threshold == 0.1 && FALLBACK_THRESHOLD == 0.1;
    Ok(Outcome {
        passed: inside >= 95 && fallback_ok,
        detail: format!(
            "{inside}/100 bimodal runs inside the gap (need 95); uniform norms give {} (fallback {})",
            fb.threshold, fb.used_fallback
        ),
    })
}

fn pca_manifold() -> Result<Outcome, onmanifold::error::Error> {
    let (p, r) = (32usize, 12usize);
    let mut rng = Rng::new(12);
    let basis = SubspaceBasis::random(p, p - r, &mut rng)?;
    let spec = PlantedCorpusSpec {
        doc_count: 300,
        seed: 12,
        ..PlantedCorpusSpec::default()
    };
    let corpus = generate_planted_corpus(&spec)?;
    let tokens: Vec<Vec<String>> = corpus.docs.iter().map(|d| d.tokens.clone()).collect();
    let vocab = Vocab::build(&tokens, None);
    let mut rows = Vec::with_capacity(vocab.len());
    for _ in 0..vocab.len() {
        rows.push(basis.embed(&rng.gaussian_vector(r, 1.0))?);
    }
    let emb = Embedding::new("rank12", Mat::from_rows(&rows)?)?;
    let docs = PlantedCorpus::encode_docs(&corpus.docs, &vocab, 64)?;
    let mut embedded = Vec::new();
    for d in &docs {
        let (x, mask) = emb.embed(&d.token_ids)?;
        for (j, pad) in mask.iter().enumerate() {
            if !pad {
                embedded.push(x.row(j).to_vec());
            }
        }
    }
    let report = manifold_report(&Mat::from_rows(&embedded)?, 0.95)?;
    let k = report.components_for_cutoff;
    Ok(Outcome {
        passed: k.is_some_and(|k| k <= r),
        detail: format!(
            "{} embedded tokens in p={p} on a rank-{r} subspace: 95% variance at component {} (need <= {r})",
            embedded.len(),
            k.map_or_else(|| "none".to_string(), |k| k.to_string())
        ),
    })
}

fn gradient_correctness() -> Result<Outcome, onmanifold::error::Error> {
    let cfg = GradCheckConfig {
        probes: 1000,
        step: 1e-5,
        tolerance: 1e-4,
        ..GradCheckConfig::default()
    };
    let mut rng = Rng::new(8);
    let net = TwoLayerNet::init(64, 128, &mut rng)?;
    let two = check_two_layer_gradient(&net, &cfg, &mut rng)?;
    let emb = Arc::new(Embedding::random("gradcheck", 200, 32, 1.0, &mut rng)?);
    let clf = TextClassifier::init("gradcheck", emb, 64, &mut rng)?;
    let text = check_text_gradient(&clf, 64, 8, &cfg, &mut rng)?;
    Ok(Outcome {
        passed: two.passed && text.passed && two.probes == 1000 && text.probes == 1000,
        detail: format!(
            "two-layer: {} probes, {} failures, max rel. error {:.1e} ({} excluded); text: {} probes, {} failures, max {:.1e} ({} excluded)",
            two.probes, two.failures, two.max_relative_error, two.excluded, text.probes, text.failures, text.max_relative_error, text.excluded
        ),
    })
}

fn determinism() -> Result<Outcome, onmanifold::error::Error> {
    let cfg = PlantedExperimentConfig::default();
    let resolved = serde_json::to_string(&cfg)?;
    let run = || -> Result<(String, String), onmanifold::error::Error> {
        let cfg: PlantedExperimentConfig = serde_json::from_str(&resolved)?;
        let (report, _, explained) = run_planted_experiment(&cfg)?;
        Ok((report.to_json()?, serde_json::to_string_pretty(&explained)?))
    };
    let (a_report, a_expl) = run()?;
    let (b_report, b_expl) = run()?;
    Ok(Outcome {
        passed: a_report == b_report && a_expl == b_expl,
        detail: format!(
            "report {} bytes, explanations {} bytes; identical: {}",
            a_report.len(),
            a_expl.len(),
            a_report == b_report && a_expl == b_expl
        ),
    })
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 9] = [
        ("theorem Monte Carlo at initialization", theorem_monte_carlo_init),
        ("inverse square-root cosine scaling", corollary_scaling_fit),
        ("squared-norm concentration tail", norm_tail),
        ("off-manifold norm separation after training", offmanifold_separation),
        ("planted-keyword precision gain", planted_precision),
        ("threshold suggestion on bimodal norms", threshold_gap),
        ("PCA of a rank-12 embedded corpus", pca_manifold),
        ("finite-difference gradient agreement", gradient_correctness),
        ("pipeline determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| f == &id) {
            continue;
        }
        let clock = Instant::now();
        let (status, detail) = match check() {
            Ok(o) => (if o.passed { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} criterion {id} ({name}): {detail} [{}]", secs(clock.elapsed()));
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", checks.len());
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
