//! Monte Carlo check of the off-manifold gradient inner-product bound.
//!
//! Two independently initialized networks `N_1(x) = sum u_i relu(w_i.x)` and
//! `N_2(x) = sum v_i relu(w'_i.x)` are evaluated at a point `x0` of a
//! `(d - codim)`-dimensional subspace `M`. With `g~_1`, `g~_2` the projections
//! of their input gradients onto the orthogonal complement of `M`,
//!
//! `Pr[ |<g~_1, g~_2>| >= sqrt(2 codim) / d ] <= exp(-codim/16) + 2 exp(-m/2)`.
//!
//! Consequently `|cos(g~_1, g~_2)|` is of order `1/sqrt(codim)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::TwoLayerNet;
use crate::numerics::{axpy, cosine_similarity, derive_seed, dot, mean, norm, Rng};
use crate::subspace::{sample_on_subspace, SubspaceBasis};
use crate::training::{train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremTrialParams {
    pub ambient_dim: usize,
    pub codim: usize,
    pub width: usize,
    pub trials: usize,
    pub base_seed: u64,
    /// Train both networks on labeled points of `M` before measuring.
    pub train_first: bool,
    pub train_samples: usize,
    pub train_config: TrainConfig,
    /// One subspace (drawn from `base_seed`) for every trial instead of a
    /// fresh one per trial. The network law is rotation invariant, so this
    /// changes cost, not the distribution of any reported quantity.
    pub shared_subspace: bool,
    /// Also evaluate the inner product through the per-unit decomposition
    /// and record its disagreement with the direct value.
    pub check_decomposition: bool,
}

impl Default for TheoremTrialParams {
    fn default() -> Self {
        TheoremTrialParams {
            ambient_dim: 512,
            codim: 256,
            width: 1024,
            trials: 200,
            base_seed: 0,
            train_first: false,
            train_samples: 1000,
            train_config: TrainConfig {
                epochs: 200,
                learning_rate: 50.0,
                target_accuracy: Some(0.95),
                ..TrainConfig::default()
            },
            shared_subspace: true,
            check_decomposition: true,
        }
    }
}

impl TheoremTrialParams {
    pub fn validate(&self) -> Result<()> {
        if self.codim == 0 || self.codim >= self.ambient_dim {
            return Err(Error::param(
                "codim",
                format!("need 0 < codim < d = {}, got {}", self.ambient_dim, self.codim),
            ));
        }
        if self.width == 0 {
            return Err(Error::param("width", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be at least 1"));
        }
        if self.trials < 100 {
            log::warn!("{} trials give a coarse violation rate; 100 or more is recommended", self.trials);
        }
        if self.train_first {
            if self.train_samples < 2 {
                return Err(Error::param("train_samples", "need at least 2 points"));
            }
            self.train_config.validate()?;
        }
        Ok(())
    }

    /// `sqrt(2 codim) / d`.
    pub fn threshold(&self) -> f64 {
        (2.0 * self.codim as f64).sqrt() / self.ambient_dim as f64
    }

    /// `exp(-codim/16) + 2 exp(-m/2)`.
    pub fn bound(&self) -> f64 {
        (-(self.codim as f64) / 16.0).exp() + 2.0 * (-(self.width as f64) / 2.0).exp()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.base_seed, trial as u64)
    }

    fn subspace_for(&self, seed: u64) -> Result<SubspaceBasis> {
        SubspaceBasis::random(self.ambient_dim, self.codim, &mut Rng::new(seed))
    }

    /// The subspace shared by every trial when `shared_subspace` is set.
    pub fn shared_basis(&self) -> Result<SubspaceBasis> {
        self.subspace_for(derive_seed(self.base_seed, u64::MAX))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    /// `|<g~_1, g~_2>|`.
    pub inner: f64,
    /// `|cos(g~_1, g~_2)|`.
    pub cosine: f64,
    pub active_first: usize,
    pub active_second: usize,
    /// `| direct - decomposed |` when the decomposition was evaluated.
    pub decomposition_error: Option<f64>,
    /// A zero projected gradient forced a redraw.
    pub resampled: bool,
}

/// Seeds of the parts of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub subspace: u64,
    pub point: u64,
    pub first_net: u64,
    pub second_net: u64,
}

impl TrialSeeds {
    pub fn from_trial_seed(seed: u64) -> TrialSeeds {
        TrialSeeds {
            subspace: derive_seed(seed, 0),
            point: derive_seed(seed, 1),
            first_net: derive_seed(seed, 2),
            second_net: derive_seed(seed, 3),
        }
    }
}

/// `sum_{i in S} sign(u_i) P w_i`, with `P` the off-manifold coordinate map.
pub fn signed_offmanifold_sum(net: &TwoLayerNet, basis: &SubspaceBasis, active: &[usize]) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; basis.codim()];
    for &i in active {
        let w_off = basis.off_coordinates(net.weights().row(i))?;
        axpy(net.output_weights()[i].signum(), &w_off, &mut sum);
    }
    Ok(sum)
}

fn make_net(params: &TheoremTrialParams, basis: &SubspaceBasis, seed: u64) -> Result<TwoLayerNet> {
    let mut rng = Rng::new(seed);
    let net = TwoLayerNet::init(params.ambient_dim, params.width, &mut rng)?;
    if !params.train_first {
        return Ok(net);
    }
    let data = sample_on_subspace(basis, params.train_samples, &mut Rng::new(derive_seed(seed, 7)), 0.5)?;
    let mut cfg = params.train_config.clone();
    cfg.seed = derive_seed(seed, 8);
    Ok(train(net, &data.inputs, &data.labels, &cfg)?.model)
}

/// Draws the point (standard normal subspace coordinates) and both networks
/// from explicit seeds.
pub fn theorem_trial_with_seeds(
    params: &TheoremTrialParams,
    basis: &SubspaceBasis,
    seeds: TrialSeeds,
) -> Result<(f64, f64, usize, usize, Option<f64>)> {
    let mut point_rng = Rng::new(seeds.point);
    let x0 = basis.embed(&point_rng.gaussian_vector(basis.manifold_dim(), 1.0))?;
    let first = make_net(params, basis, seeds.first_net)?;
    let second = make_net(params, basis, seeds.second_net)?;
    let (g1, s1) = first.input_gradient(&x0)?;
    let (g2, s2) = second.input_gradient(&x0)?;
    let p1 = basis.off_coordinates(&g1)?;
    let p2 = basis.off_coordinates(&g2)?;
    let inner = dot(&p1, &p2);
    let cosine = cosine_similarity(&p1, &p2)?.abs();
    let decomposition_error = if params.check_decomposition {
        let a = signed_offmanifold_sum(&first, basis, s1.indices())?;
        let b = signed_offmanifold_sum(&second, basis, s2.indices())?;
        let m = params.width as f64;
        let decomposed = dot(&a, &b).abs() / (m * m);
        Some((inner.abs() - decomposed).abs())
    } else {
        None
    };
    Ok((inner.abs(), cosine, s1.len(), s2.len(), decomposition_error))
}

/// One trial; a zero projected gradient is redrawn once from a derived seed.
pub fn theorem_trial(params: &TheoremTrialParams, trial: usize, shared: Option<&SubspaceBasis>) -> Result<TrialOutcome> {
    let seed = params.trial_seed(trial);
    let mut resampled = false;
    for attempt in 0..2u64 {
        let attempt_seed = if attempt == 0 { seed } else { derive_seed(seed, u64::MAX) };
        let seeds = TrialSeeds::from_trial_seed(attempt_seed);
        let own;
        let basis = match shared {
            Some(b) => b,
            None => {
                own = params.subspace_for(seeds.subspace)?;
                &own
            }
        };
        match theorem_trial_with_seeds(params, basis, seeds) {
            Ok((inner, cosine, k1, k2, decomposition_error)) => {
                return Ok(TrialOutcome {
                    trial,
                    seed,
                    inner,
                    cosine,
                    active_first: k1,
                    active_second: k2,
                    decomposition_error,
                    resampled,
                });
            }
            Err(Error::Degenerate(why)) if attempt == 0 => {
                log::warn!("trial {trial}: {why}; redrawing");
                resampled = true;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("second attempt returns")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub params: TheoremTrialParams,
    pub threshold: f64,
    pub bound_value: f64,
    /// `3 sqrt(bound (1 - bound) / trials) + 1 / trials`.
    pub sampling_slack: f64,
    pub violations: usize,
    pub violation_rate: f64,
    pub passed: bool,
    pub mean_abs_cosine: f64,
    /// `E|cos|` of two independent isotropic Gaussian vectors in `codim`
    /// dimensions.
    pub isotropic_abs_cosine: f64,
    pub max_decomposition_error: Option<f64>,
    pub resampled_trials: usize,
    pub trials: Vec<TrialOutcome>,
}

impl TheoremReport {
    pub fn inner_products(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.inner).collect()
    }

    pub fn cosines(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.cosine).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "seed",
            "inner",
            "cosine",
            "active_first",
            "active_second",
            "decomposition_error",
            "resampled",
        ])?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                t.inner.to_string(),
                t.cosine.to_string(),
                t.active_first.to_string(),
                t.active_second.to_string(),
                t.decomposition_error.map(|e| e.to_string()).unwrap_or_default(),
                t.resampled.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    /// One line: rate, bound, slack and verdict.
    pub fn summary(&self) -> String {
        format!(
            "violation rate {}/{} = {:.3e} vs bound exp(-{}/16) + 2 exp(-{}/2) = {:.3e} + slack 3 sqrt(b(1-b)/n) + 1/n = {:.3e}: {}",
            self.violations,
            self.trials.len(),
            self.violation_rate,
            self.params.codim,
            self.params.width,
            self.bound_value,
            self.sampling_slack,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// `3 sqrt(b (1 - b) / n) + 1/n`.
pub fn sampling_slack(bound: f64, trials: usize) -> f64 {
    let b = bound.clamp(0.0, 1.0);
    let n = trials as f64;
    3.0 * (b * (1.0 - b) / n).sqrt() + 1.0 / n
}

/// `E|cos|` of two independent isotropic Gaussian vectors in `dim`
/// dimensions: `Gamma(dim/2) / (sqrt(pi) Gamma((dim+1)/2))`.
pub fn isotropic_abs_cosine(dim: usize) -> f64 {
    assert!(dim >= 1, "dimension must be positive");
    // r(n) = Gamma(n/2) / Gamma((n+1)/2) satisfies r(n+2) = r(n) n / (n+1).
    let pi = std::f64::consts::PI;
    let (mut r, mut n) = if dim % 2 == 1 { (pi.sqrt(), 1) } else { (2.0 / pi.sqrt(), 2) };
    while n < dim {
        r *= n as f64 / (n + 1) as f64;
        n += 2;
    }
    r / pi.sqrt()
}

/// Runs every trial (in parallel, reported in trial order).
pub fn theorem_monte_carlo(params: &TheoremTrialParams) -> Result<TheoremReport> {
    params.validate()?;
    let shared = if params.shared_subspace {
        Some(params.shared_basis()?)
    } else {
        None
    };
    let trials: Vec<TrialOutcome> = (0..params.trials)
        .into_par_iter()
        .map(|t| theorem_trial(params, t, shared.as_ref()))
        .collect::<Result<_>>()?;
    let threshold = params.threshold();
    let bound_value = params.bound();
    let violations = trials.iter().filter(|t| t.inner >= threshold).count();
    let violation_rate = violations as f64 / trials.len() as f64;
    let slack = sampling_slack(bound_value, trials.len());
    let cos: Vec<f64> = trials.iter().map(|t| t.cosine).collect();
    let max_decomposition_error = trials
        .iter()
        .filter_map(|t| t.decomposition_error)
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    Ok(TheoremReport {
        threshold,
        bound_value,
        sampling_slack: slack,
        violations,
        violation_rate,
        passed: violation_rate <= bound_value + slack,
        mean_abs_cosine: mean(&cos).expect("at least one trial"),
        isotropic_abs_cosine: isotropic_abs_cosine(params.codim),
        max_decomposition_error,
        resampled_trials: trials.iter().filter(|t| t.resampled).count(),
        trials,
        params: params.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub codim: usize,
    pub mean_abs_cosine: f64,
    pub fitted: f64,
    /// `|mean - fitted| / fitted`.
    pub relative_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Least-squares `c` in `mean_abs_cosine ~ c / sqrt(codim)`.
    pub coefficient: f64,
    pub points: Vec<ScalingPoint>,
    pub max_relative_deviation: f64,
}

/// Least-squares fit of `y = c / sqrt(codim)`:
/// `c = sum y_i codim_i^{-1/2} / sum codim_i^{-1}`.
pub fn fit_inverse_sqrt(points: &[(usize, f64)]) -> Result<ScalingFit> {
    if points.is_empty() {
        return Err(Error::param("points", "need at least one point"));
    }
    let num: f64 = points.iter().map(|&(l, y)| y / (l as f64).sqrt()).sum();
    let den: f64 = points.iter().map(|&(l, _)| 1.0 / l as f64).sum();
    let c = num / den;
    let pts: Vec<ScalingPoint> = points
        .iter()
        .map(|&(l, y)| {
            let fitted = c / (l as f64).sqrt();
            ScalingPoint {
                codim: l,
                mean_abs_cosine: y,
                fitted,
                relative_deviation: (y - fitted).abs() / fitted,
            }
        })
        .collect();
    Ok(ScalingFit {
        coefficient: c,
        max_relative_deviation: pts.iter().map(|p| p.relative_deviation).fold(0.0, f64::max),
        points: pts,
    })
}

/// Mean `|cos|` at each codimension with `d = 2 codim`, then the fit.
pub fn corollary_scaling(
    codims: &[usize],
    width: usize,
    trials: usize,
    base_seed: u64,
) -> Result<(ScalingFit, Vec<TheoremReport>)> {
    let mut reports = Vec::with_capacity(codims.len());
    for (i, &l) in codims.iter().enumerate() {
        let params = TheoremTrialParams {
            ambient_dim: 2 * l,
            codim: l,
            width,
            trials,
            base_seed: derive_seed(base_seed, i as u64),
            check_decomposition: false,
            ..TheoremTrialParams::default()
        };
        reports.push(theorem_monte_carlo(&params)?);
    }
    let points: Vec<(usize, f64)> = reports.iter().map(|r| (r.params.codim, r.mean_abs_cosine)).collect();
    Ok((fit_inverse_sqrt(&points)?, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTailReport {
    pub dim: usize,
    pub variance: f64,
    pub draws: usize,
    pub exceedances: usize,
    pub empirical: f64,
    /// `exp(-dim/16)`.
    pub bound: f64,
    /// `3 sqrt(bound (1 - bound) / draws)`.
    pub slack: f64,
    pub passed: bool,
}

/// Empirical `Pr[|w|^2 >= 2 variance dim]` for `w ~ N(0, variance I_dim)`.
pub fn norm_tail_experiment(dim: usize, variance: f64, draws: usize, seed: u64) -> Result<NormTailReport> {
    if dim == 0 || draws == 0 {
        return Err(Error::param("norm_tail", "dimension and draws must be positive"));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::param("variance", format!("must be positive, got {variance}")));
    }
    let mut rng = Rng::new(seed);
    let level = 2.0 * variance * dim as f64;
    let exceedances = (0..draws)
        .filter(|_| {
            let w = rng.gaussian_vector(dim, variance);
            norm(&w).powi(2) >= level
        })
        .count();
    let empirical = exceedances as f64 / draws as f64;
    let bound = (-(dim as f64) / 16.0).exp();
    let slack = 3.0 * (bound * (1.0 - bound) / draws as f64).sqrt();
    Ok(NormTailReport {
        dim,
        variance,
        draws,
        exceedances,
        empirical,
        bound,
        slack,
        passed: empirical <= bound + slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub seeds: usize,
    /// Pooled `mean_c s_c^2 / (k / d)` over seeds and coordinates, where `s`
    /// is [`signed_offmanifold_sum`] at a point of `M`; 1 in expectation.
    pub pooled_ratio: f64,
    pub mean_active: f64,
}

/// Checks that the coordinates of the signed off-manifold sum over the
/// active set have variance `k/d` at initialization.
pub fn active_sum_variance_check(
    ambient_dim: usize,
    codim: usize,
    width: usize,
    seeds: usize,
    base_seed: u64,
) -> Result<VarianceCheck> {
    if seeds == 0 {
        return Err(Error::param("seeds", "must be at least 1"));
    }
    let basis = SubspaceBasis::random(ambient_dim, codim, &mut Rng::new(base_seed))?;
    let per_seed: Vec<(f64, usize)> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = Rng::new(derive_seed(base_seed, s as u64));
            let x0 = basis.embed(&rng.gaussian_vector(basis.manifold_dim(), 1.0))?;
            let net = TwoLayerNet::init(ambient_dim, width, &mut rng)?;
            let active = net.active_set(&x0)?;
            let sum = signed_offmanifold_sum(&net, &basis, active.indices())?;
            let k = active.len().max(1) as f64;
            let expected = k / ambient_dim as f64;
            let ratio = sum.iter().map(|c| c * c).sum::<f64>() / (codim as f64 * expected);
            Ok((ratio, active.len()))
        })
        .collect::<Result<_>>()?;
    Ok(VarianceCheck {
        seeds,
        pooled_ratio: per_seed.iter().map(|r| r.0).sum::<f64>() / seeds as f64,
        mean_active: per_seed.iter().map(|r| r.1 as f64).sum::<f64>() / seeds as f64,
    })
}
