//! Seeded gradient-descent training and surrogate ensembles.
//!
//! Training is full-batch by default, which makes every epoch a fixed
//! sequence of floating-point operations. Mini-batches are drawn from a
//! seeded shuffle. Within a batch, gradients are reduced over fixed chunks
//! in a fixed order, so results are bit-identical for any thread count.

mod models;
mod pretrain;

pub use models::TokenPass;
pub use pretrain::{pretrain_embedding, PretrainConfig, PretrainOutcome};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Rng};

/// A model trained by [`train`]: a flat parameter vector with batched
/// forward and backward passes over a scalar score.
pub trait Trainable: Clone + Send + Sync {
    type Example: Sync;
    type Cache: Sync;

    fn parameters(&self) -> Vec<f64>;
    fn set_parameters(&mut self, params: &[f64]);
    fn forward_batch(&self, batch: &[&Self::Example]) -> (Vec<f64>, Self::Cache);
    /// Adds `sum_n dscores[n] * d score_n / d params` to `grad`.
    fn backward_batch(
        &self,
        batch: &[&Self::Example],
        cache: &Self::Cache,
        dscores: &[f64],
        grad: &mut [f64],
    );
    fn validate_example(&self, example: &Self::Example) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `log(1 + exp(-y s))`, i.e. cross-entropy with labels mapped to {0, 1}.
    Logistic,
    /// `max(0, 1 - y s)`.
    Hinge,
}

impl Loss {
    /// Loss value and derivative with respect to the score.
    pub fn eval(self, score: f64, label: i8) -> (f64, f64) {
        let y = f64::from(label);
        let margin = y * score;
        match self {
            Loss::Logistic => {
                // log(1 + e^-t) and its derivative -1/(1 + e^t), computed
                // without overflow for either sign of t.
                let value = if margin > 0.0 {
                    (-margin).exp().ln_1p()
                } else {
                    -margin + margin.exp().ln_1p()
                };
                let sig_neg = if margin > 0.0 {
                    let e = (-margin).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + margin.exp())
                };
                (value, -y * sig_neg)
            }
            Loss::Hinge => {
                if margin < 1.0 {
                    (1.0 - margin, -y)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Loss::Logistic),
            "hinge" => Ok(Loss::Hinge),
            other => Err(Error::param(
                "loss",
                format!("expected logistic or hinge, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub loss: Loss,
    pub seed: u64,
    /// Heavy-ball momentum coefficient in `[0, 1)`.
    pub momentum: f64,
    /// Stop after the first epoch whose training accuracy (measured before
    /// that epoch's update) reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.5,
            batch_size: None,
            loss: Loss::Logistic,
            seed: 0,
            momentum: 0.0,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate passes validation; [`train`] then reports
    /// [`Error::NoProgress`].
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(
                "learning_rate",
                format!("must be finite and nonnegative, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::param("target_accuracy", format!("must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean loss of each epoch, measured before that epoch's updates.
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
    pub epochs_run: usize,
}

/// Fraction of examples with `sign(score) = label` (a zero score counts as
/// the positive class).
pub fn accuracy<M: Trainable>(model: &M, inputs: &[M::Example], labels: &[i8]) -> f64 {
    if inputs.is_empty() {
        return 0.0;
    }
    let refs: Vec<&M::Example> = inputs.iter().collect();
    let (scores, _) = model.forward_batch(&refs);
    correct_fraction(&scores, labels)
}

fn correct_fraction(scores: &[f64], labels: &[i8]) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &y)| (**s >= 0.0) == (y > 0))
        .count();
    hits as f64 / scores.len() as f64
}

/// Gradient descent on the mean loss over `inputs`.
pub fn train<M: Trainable>(
    mut model: M,
    inputs: &[M::Example],
    labels: &[i8],
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::param("dataset", "training set is empty"));
    }
    crate::error::check_len("training labels", inputs.len(), labels.len())?;
    if let Some(bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
        return Err(Error::param("labels", format!("labels must be -1 or 1, found {bad}")));
    }
    for x in inputs {
        model.validate_example(x)?;
    }

    let n = inputs.len();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let initial = model.parameters();
    let mut params = initial.clone();
    let mut velocity = vec![0.0; params.len()];
    let mut trace = Vec::with_capacity(config.epochs);
    let mut epochs_run = 0;

    for epoch in 0..config.epochs {
        if batch < n {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_hits = 0.0;
        for idx in order.chunks(batch) {
            let xs: Vec<&M::Example> = idx.iter().map(|&i| &inputs[i]).collect();
            let ys: Vec<i8> = idx.iter().map(|&i| labels[i]).collect();
            let (scores, cache) = model.forward_batch(&xs);
            let scale = 1.0 / idx.len() as f64;
            let mut dscores = Vec::with_capacity(idx.len());
            for (&s, &y) in scores.iter().zip(&ys) {
                let (l, dl) = config.loss.eval(s, y);
                epoch_loss += l;
                dscores.push(dl * scale);
            }
            epoch_hits += correct_fraction(&scores, &ys) * idx.len() as f64;
            if !epoch_loss.is_finite() {
                trace.push(epoch_loss / n as f64);
                return Err(Error::Diverged { epoch, trace });
            }
            let mut grad = vec![0.0; params.len()];
            model.backward_batch(&xs, &cache, &dscores, &mut grad);
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                trace.push(epoch_loss / n as f64);
                return Err(Error::Diverged { epoch, trace });
            }
            model.set_parameters(&params);
        }
        trace.push(epoch_loss / n as f64);
        epochs_run = epoch + 1;
        if let Some(target) = config.target_accuracy {
            if epoch_hits / n as f64 >= target {
                log::debug!("target accuracy {target} reached after {epochs_run} epochs");
                break;
            }
        }
    }

    if params == initial {
        return Err(Error::NoProgress {
            epochs: epochs_run,
            trace,
        });
    }
    let train_accuracy = accuracy(&model, inputs, labels);
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
        train_accuracy,
        epochs_run,
    })
}

/// Writes `epoch,loss` rows (epochs counted from 1).
pub fn write_loss_trace<W: Write>(out: W, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "loss"])?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<loss trace>", e))?;
    Ok(())
}

/// Default held-out accuracy every ensemble member must reach.
pub const DEFAULT_ACCURACY_FLOOR: f64 = 0.9;

/// Labeled examples for training and held-out evaluation.
pub struct Split<'a, E> {
    pub train_inputs: &'a [E],
    pub train_labels: &'a [i8],
    pub heldout_inputs: &'a [E],
    pub heldout_labels: &'a [i8],
}

#[derive(Debug, Clone)]
pub struct SurrogateEnsemble<M> {
    pub members: Vec<M>,
    /// Seed each member was initialized and trained with.
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub heldout_accuracy: Vec<f64>,
    pub loss_traces: Vec<Vec<f64>>,
}

impl<M> SurrogateEnsemble<M> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Seed of ensemble member `index` on its `attempt`-th training (0 or 1).
pub fn member_seed(base_seed: u64, index: usize, attempt: u64) -> u64 {
    let s = derive_seed(base_seed, index as u64);
    if attempt == 0 {
        s
    } else {
        derive_seed(s, attempt)
    }
}

/// Trains `t` members, each initialized by `init(index, seed)` and trained
/// with `config` reseeded to `seed`. A member below `accuracy_floor` on the
/// held-out split is retrained once with a fresh seed. Members train in
/// parallel and are returned in index order.
pub fn train_ensemble<M, F>(
    init: F,
    data: &Split<'_, M::Example>,
    config: &TrainConfig,
    t: usize,
    base_seed: u64,
    accuracy_floor: f64,
) -> Result<SurrogateEnsemble<M>>
where
    M: Trainable,
    F: Fn(usize, u64) -> Result<M> + Sync,
    M::Example: Sync,
{
    if t == 0 {
        return Err(Error::param("t", "ensemble needs at least one member"));
    }
    config.validate()?;
    let results: Vec<Result<(M, u64, f64, Vec<f64>)>> = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..2 {
                let seed = member_seed(base_seed, i, attempt);
                let model = init(i, seed)?;
                let cfg = TrainConfig {
                    seed,
                    ..config.clone()
                };
                let out = train(model, data.train_inputs, data.train_labels, &cfg)?;
                let acc = accuracy(&out.model, data.heldout_inputs, data.heldout_labels);
                if acc >= accuracy_floor {
                    return Ok((out.model, seed, acc, out.loss_trace));
                }
                log::warn!(
                    "ensemble member {i} (seed {seed}) reached held-out accuracy {acc:.4} < {accuracy_floor}"
                );
                last = Some(acc);
            }
            Err(Error::EnsembleQuality {
                member: i,
                accuracy: last.unwrap_or(0.0),
                floor: accuracy_floor,
            })
        })
        .collect();

    let mut ens = SurrogateEnsemble {
        members: Vec::with_capacity(t),
        seeds: Vec::with_capacity(t),
        config: config.clone(),
        heldout_accuracy: Vec::with_capacity(t),
        loss_traces: Vec::with_capacity(t),
    };
    for r in results {
        let (m, seed, acc, trace) = r?;
        ens.members.push(m);
        ens.seeds.push(seed);
        ens.heldout_accuracy.push(acc);
        ens.loss_traces.push(trace);
    }
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::TwoLayerNet;
    use crate::numerics::{cosine_similarity, Rng};

    /// Two Gaussian blobs in the plane separated along the first axis.
    fn toy_2d(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<i8>) {
        let mut rng = Rng::new(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y: i8 = if i % 2 == 0 { 1 } else { -1 };
            let cx = 2.0 * f64::from(y);
            xs.push(vec![cx + 0.5 * rng.normal(), 0.5 * rng.normal(), 1.0]);
            ys.push(y);
        }
        (xs, ys)
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            epochs: 200,
            learning_rate: 200.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_toy_reaches_high_accuracy() {
        let (xs, ys) = toy_2d(200, 1);
        let net = TwoLayerNet::init(3, 32, &mut Rng::new(2)).unwrap();
        let out = train(net, &xs, &ys, &toy_config()).unwrap();
        assert!(out.train_accuracy >= 0.99, "{}", out.train_accuracy);
        assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
    }

    #[test]
    fn same_seed_same_weights() {
        let (xs, ys) = toy_2d(100, 3);
        let cfg = TrainConfig {
            batch_size: Some(16),
            momentum: 0.5,
            epochs: 20,
            ..toy_config()
        };
        let run = || {
            let net = TwoLayerNet::init(3, 8, &mut Rng::new(4)).unwrap();
            train(net, &xs, &ys, &cfg).unwrap().model
        };
        let (a, b) = (run(), run());
        let bits = |m: &TwoLayerNet| m.parameters().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_learning_rate_reports_no_progress() {
        let (xs, ys) = toy_2d(20, 5);
        let net = TwoLayerNet::init(3, 4, &mut Rng::new(6)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..toy_config()
        };
        match train(net, &xs, &ys, &cfg) {
            Err(Error::NoProgress { epochs, trace }) => {
                assert_eq!(epochs, 3);
                assert_eq!(trace.len(), 3);
            }
            other => panic!("expected NoProgress, got {other:?}"),
        }
    }

    #[test]
    fn overflowing_update_diverges_with_trace() {
        let (mut xs, ys) = toy_2d(20, 7);
        xs[0][0] = 1e308;
        let net = TwoLayerNet::init(3, 4, &mut Rng::new(8)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e10,
            loss: Loss::Hinge,
            epochs: 50,
            ..toy_config()
        };
        match train(net, &xs, &ys, &cfg) {
            Err(Error::Diverged { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected Diverged, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_and_data_rejected() {
        let (xs, ys) = toy_2d(4, 9);
        let net = TwoLayerNet::init(3, 4, &mut Rng::new(0)).unwrap();
        let bad = TrainConfig {
            epochs: 0,
            ..toy_config()
        };
        assert!(train(net.clone(), &xs, &ys, &bad).is_err());
        assert!(train(net.clone(), &xs[..0], &ys[..0], &toy_config()).is_err());
        assert!(train(net.clone(), &xs, &[1, 1, 0, 1], &toy_config()).is_err());
        assert!(train(net, &[vec![1.0]], &[1], &toy_config()).is_err());
    }

    #[test]
    fn logistic_loss_is_stable_at_extremes() {
        let (v, d) = Loss::Logistic.eval(800.0, 1);
        assert!(v >= 0.0 && v < 1e-300 && d.abs() < 1e-300);
        let (v, d) = Loss::Logistic.eval(-800.0, 1);
        assert!((v - 800.0).abs() < 1e-9 && (d + 1.0).abs() < 1e-15);
        let (v, d) = Loss::Logistic.eval(0.0, -1);
        assert!((v - 2f64.ln()).abs() < 1e-15 && (d - 0.5).abs() < 1e-15);
        assert_eq!(Loss::Hinge.eval(2.0, 1), (0.0, 0.0));
        assert_eq!(Loss::Hinge.eval(0.5, -1), (1.5, 1.0));
    }

    #[test]
    fn ensemble_members_are_distinct_and_ordered() {
        let (xs, ys) = toy_2d(120, 11);
        let (hx, hy) = toy_2d(60, 12);
        let split = Split {
            train_inputs: &xs,
            train_labels: &ys,
            heldout_inputs: &hx,
            heldout_labels: &hy,
        };
        let cfg = TrainConfig {
            epochs: 60,
            ..toy_config()
        };
        let init = |_: usize, seed: u64| TwoLayerNet::init(3, 16, &mut Rng::new(seed));
        let ens = train_ensemble(init, &split, &cfg, 4, 77, 0.9).unwrap();
        assert_eq!(ens.len(), 4);
        let again = train_ensemble(init, &split, &cfg, 4, 77, 0.9).unwrap();
        assert_eq!(ens.seeds, again.seeds);
        assert_eq!(ens.members, again.members);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_ne!(ens.seeds[i], ens.seeds[j]);
                let c = cosine_similarity(&ens.members[i].parameters(), &ens.members[j].parameters())
                    .unwrap();
                assert!(c.abs() < 0.5, "members {i},{j} cosine {c}");
            }
        }
        assert!(ens.heldout_accuracy.iter().all(|&a| a >= 0.9));

        let single = train_ensemble(init, &split, &cfg, 1, 77, 0.9).unwrap();
        assert_eq!(single.members[0], ens.members[0]);
    }

    #[test]
    fn unreachable_floor_is_an_ensemble_error() {
        let (xs, ys) = toy_2d(40, 13);
        let split = Split {
            train_inputs: &xs,
            train_labels: &ys,
            heldout_inputs: &xs,
            heldout_labels: &ys,
        };
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 1e-12,
            ..toy_config()
        };
        let init = |_: usize, seed: u64| TwoLayerNet::init(3, 4, &mut Rng::new(seed));
        assert!(matches!(
            train_ensemble(init, &split, &cfg, 2, 1, 1.01),
            Err(Error::EnsembleQuality { .. })
        ));
    }

    #[test]
    fn loss_trace_csv() {
        let mut buf = Vec::new();
        write_loss_trace(&mut buf, &[0.5, 0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
