//! Central finite-difference checks of the analytic input gradients.
//!
//! A probe compares the analytic directional derivative `g.v` with
//! `(f(x + h v) - f(x - h v)) / 2h`. Both networks are piecewise linear, so
//! the two agree to rounding error unless a ReLU changes sign inside the
//! stencil; such probes (and inputs within `boundary` of a kink) are skipped
//! and redrawn. The relative error is taken against
//! `max(|g.v|, 1e-3 |g| |v|)` so that directions nearly orthogonal to the
//! gradient are not judged on rounding noise alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{TextClassifier, TwoLayerNet};
use crate::numerics::{dot, norm, Mat, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Minimum allowed `|preactivation|` at the probe point.
    pub boundary: f64,
    /// Redraws allowed per accepted probe.
    pub max_attempts_per_probe: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            probes: 1000,
            step: 1e-5,
            tolerance: 1e-4,
            boundary: 1e-6,
            max_attempts_per_probe: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub probes: usize,
    /// Draws skipped because of a nearby kink.
    pub excluded: usize,
    pub failures: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn relative_error(analytic: f64, numeric: f64, grad_norm: f64, dir_norm: f64) -> f64 {
    let scale = analytic.abs().max(1e-3 * grad_norm * dir_norm);
    if scale == 0.0 {
        numeric.abs()
    } else {
        (numeric - analytic).abs() / scale
    }
}

/// A single unit's pre-activation sign is stable over the stencil.
fn stable(z0: f64, zp: f64, zm: f64, boundary: f64) -> bool {
    z0.abs() >= boundary && (zp >= 0.0) == (z0 >= 0.0) && (zm >= 0.0) == (z0 >= 0.0)
}

struct Tally {
    config: GradCheckConfig,
    accepted: usize,
    excluded: usize,
    failures: usize,
    max_err: f64,
}

impl Tally {
    fn new(config: &GradCheckConfig) -> Result<Tally> {
        if config.probes == 0 || !(config.step > 0.0) || !(config.tolerance > 0.0) {
            return Err(Error::param("gradcheck", "probes, step and tolerance must be positive"));
        }
        Ok(Tally {
            config: *config,
            accepted: 0,
            excluded: 0,
            failures: 0,
            max_err: 0.0,
        })
    }

    fn record(&mut self, err: f64) {
        self.accepted += 1;
        self.max_err = self.max_err.max(err);
        if err > self.config.tolerance || !err.is_finite() {
            self.failures += 1;
        }
    }

    fn exhausted(&self) -> bool {
        self.excluded > self.config.max_attempts_per_probe * self.config.probes
    }

    fn finish(self) -> Result<GradCheckReport> {
        if self.accepted < self.config.probes {
            return Err(Error::SamplingExhausted {
                attempts: self.accepted + self.excluded,
                reason: format!("only {} probes away from activation kinks", self.accepted),
            });
        }
        Ok(GradCheckReport {
            probes: self.accepted,
            excluded: self.excluded,
            failures: self.failures,
            max_relative_error: self.max_err,
            passed: self.failures == 0,
        })
    }
}

/// Probes at Gaussian inputs along Gaussian directions.
pub fn check_two_layer_gradient(net: &TwoLayerNet, config: &GradCheckConfig, rng: &mut Rng) -> Result<GradCheckReport> {
    let mut tally = Tally::new(config)?;
    let d = net.input_dim();
    let h = config.step;
    while tally.accepted < config.probes && !tally.exhausted() {
        let x = rng.gaussian_vector(d, 1.0);
        let v = rng.gaussian_vector(d, 1.0);
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let (z0, zp, zm) = (net.preactivations(&x)?, net.preactivations(&xp)?, net.preactivations(&xm)?);
        if !(0..net.width()).all(|i| stable(z0[i], zp[i], zm[i], config.boundary)) {
            tally.excluded += 1;
            continue;
        }
        let (g, _) = net.input_gradient(&x)?;
        let numeric = (net.forward(&xp)? - net.forward(&xm)?) / (2.0 * h);
        tally.record(relative_error(dot(&g, &v), numeric, norm(&g), norm(&v)));
    }
    tally.finish()
}

/// Probes single embedding entries `(j, c)` of random documents of
/// `length` tokens, drawn from non-pad vocabulary ids; each document's
/// last `pad` positions are padding.
pub fn check_text_gradient(
    clf: &TextClassifier,
    length: usize,
    pad: usize,
    config: &GradCheckConfig,
    rng: &mut Rng,
) -> Result<GradCheckReport> {
    if pad >= length {
        return Err(Error::param("pad", "need at least one non-pad position"));
    }
    let vocab = clf.embedding().vocab_size();
    if vocab < 2 {
        return Err(Error::param("vocab", "need a non-pad token"));
    }
    let mut tally = Tally::new(config)?;
    let h = config.step;
    let p = clf.embedding_dim();
    while tally.accepted < config.probes && !tally.exhausted() {
        let tokens: Vec<u32> = (0..length)
            .map(|j| if j < length - pad { 1 + rng.below(vocab - 1) as u32 } else { 0 })
            .collect();
        let (x, mask) = clf.embedding().embed(&tokens)?;
        let j = rng.below(length - pad);
        let c = rng.below(p);
        let z0 = clf.word_preactivation(x.row(j));
        let shifted = |delta: f64| -> Mat {
            let mut y = x.clone();
            y[(j, c)] += delta;
            y
        };
        let (xp, xm) = (shifted(h), shifted(-h));
        let zp = clf.word_preactivation(xp.row(j));
        let zm = clf.word_preactivation(xm.row(j));
        if !(0..z0.len()).all(|k| stable(z0[k], zp[k], zm[k], config.boundary)) {
            tally.excluded += 1;
            continue;
        }
        let (_, cache) = clf.forward_embedded(&x, &mask)?;
        let grads = clf.backward(&cache);
        let analytic = grads.word(j)[c];
        let numeric = (clf.forward_embedded(&xp, &mask)?.0 - clf.forward_embedded(&xm, &mask)?.0) / (2.0 * h);
        tally.record(relative_error(analytic, numeric, norm(grads.word(j)), 1.0));
    }
    tally.finish()
}
