//! Off-manifold gradient norm against on-manifold variation of a trained
//! two-layer network.
//!
//! For held-out points of `M` the experiment records the norm of the
//! gradient's projection onto the orthogonal complement of `M`, and for pairs
//! of such points the mean slope `|N(x_b) - N(x_a)| / |x_b - x_a|` along the
//! segment joining them (which lies in `M`). The first stays at its
//! initialization scale through training while the second is all that the
//! data constrains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::TwoLayerNet;
use crate::numerics::{cosine_similarity, derive_seed, median, norm, sub, Rng};
use crate::subspace::{sample_on_subspace, SubspaceBasis};
use crate::training::{accuracy, train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffManifoldParams {
    pub ambient_dim: usize,
    pub codim: usize,
    pub width: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub margin: f64,
    pub train: TrainConfig,
    /// Required ratio of the two medians.
    pub factor: f64,
    /// Held-out accuracy below which no verdict is given.
    pub min_accuracy: f64,
    pub seed: u64,
}

impl Default for OffManifoldParams {
    fn default() -> Self {
        OffManifoldParams {
            ambient_dim: 256,
            codim: 128,
            width: 512,
            train_samples: 2000,
            test_samples: 400,
            margin: 0.5,
            train: TrainConfig {
                epochs: 500,
                learning_rate: 50.0,
                target_accuracy: Some(0.99),
                ..TrainConfig::default()
            },
            factor: 3.0,
            min_accuracy: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The network did not reach `min_accuracy`; nothing is asserted.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub off_norm: f64,
    pub init_off_norm: f64,
    /// Cosine between the off-manifold gradient parts at init and after
    /// training.
    pub init_cosine: f64,
    /// `|P g - P g_init| / |P g_init|`.
    pub relative_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffManifoldReport {
    pub params: OffManifoldParams,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
    pub epochs_run: usize,
    pub median_off_norm: f64,
    pub median_path_gradient: f64,
    pub ratio: f64,
    /// The same ratio for the untrained network.
    pub init_ratio: f64,
    pub median_init_cosine: f64,
    pub median_relative_drift: f64,
    pub verdict: Verdict,
    pub points: Vec<PointRecord>,
    pub path_gradients: Vec<f64>,
}

/// Slopes between consecutive pairs `(x_0, x_1), (x_2, x_3), ...`.
pub fn path_gradients(net: &TwoLayerNet, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    points
        .chunks_exact(2)
        .map(|pair| {
            let dist = norm(&sub(&pair[1], &pair[0]));
            if dist == 0.0 {
                return Err(Error::Degenerate("coincident path endpoints".into()));
            }
            Ok((net.forward(&pair[1])? - net.forward(&pair[0])?).abs() / dist)
        })
        .collect()
}

fn off_gradient(net: &TwoLayerNet, basis: &SubspaceBasis, x: &[f64]) -> Result<Vec<f64>> {
    basis.off_coordinates(&net.input_gradient(x)?.0)
}

fn ratio_of_medians(net: &TwoLayerNet, basis: &SubspaceBasis, points: &[Vec<f64>]) -> Result<(f64, f64)> {
    let offs: Vec<f64> = points
        .iter()
        .map(|x| off_gradient(net, basis, x).map(|g| norm(&g)))
        .collect::<Result<_>>()?;
    let paths = path_gradients(net, points)?;
    Ok((
        median(&offs).expect("test points"),
        median(&paths).expect("test pairs"),
    ))
}

pub fn offmanifold_norm_experiment(params: &OffManifoldParams) -> Result<OffManifoldReport> {
    if params.codim == 0 || params.codim >= params.ambient_dim {
        return Err(Error::param("codim", "need 0 < codim < d"));
    }
    if params.test_samples < 2 {
        return Err(Error::param("test_samples", "need at least 2 points"));
    }
    let mut rng = Rng::new(params.seed);
    let basis = SubspaceBasis::random(params.ambient_dim, params.codim, &mut rng)?;
    let data = sample_on_subspace(
        &basis,
        params.train_samples + params.test_samples,
        &mut rng.child(1),
        params.margin,
    )?;
    let (train_set, test_set) = data.split(params.train_samples)?;
    let init = TwoLayerNet::init(params.ambient_dim, params.width, &mut rng.child(2))?;
    let mut cfg = params.train.clone();
    cfg.seed = derive_seed(params.seed, 3);
    let outcome = train(init.clone(), &train_set.inputs, &train_set.labels, &cfg)?;
    let net = outcome.model;
    let heldout_accuracy = accuracy(&net, &test_set.inputs, &test_set.labels);

    let mut points = Vec::with_capacity(test_set.len());
    for x in &test_set.inputs {
        let g = off_gradient(&net, &basis, x)?;
        let g0 = off_gradient(&init, &basis, x)?;
        let n0 = norm(&g0);
        points.push(PointRecord {
            off_norm: norm(&g),
            init_off_norm: n0,
            init_cosine: cosine_similarity(&g, &g0)?,
            relative_drift: norm(&sub(&g, &g0)) / n0,
        });
    }
    let offs: Vec<f64> = points.iter().map(|p| p.off_norm).collect();
    let path = path_gradients(&net, &test_set.inputs)?;
    let median_off_norm = median(&offs).expect("test points");
    let median_path_gradient = median(&path).expect("test pairs");
    let ratio = median_off_norm / median_path_gradient;
    let (init_off, init_path) = ratio_of_medians(&init, &basis, &test_set.inputs)?;
    let cosines: Vec<f64> = points.iter().map(|p| p.init_cosine).collect();
    let drifts: Vec<f64> = points.iter().map(|p| p.relative_drift).collect();

    let verdict = if heldout_accuracy < params.min_accuracy {
        log::warn!(
            "held-out accuracy {heldout_accuracy:.3} is below {}; the norm comparison is inconclusive",
            params.min_accuracy
        );
        Verdict::Inconclusive
    } else if ratio >= params.factor {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(OffManifoldReport {
        params: params.clone(),
        train_accuracy: outcome.train_accuracy,
        heldout_accuracy,
        epochs_run: outcome.epochs_run,
        median_off_norm,
        median_path_gradient,
        ratio,
        init_ratio: init_off / init_path,
        median_init_cosine: median(&cosines).expect("test points"),
        median_relative_drift: median(&drifts).expect("test points"),
        verdict,
        points,
        path_gradients: path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> OffManifoldParams {
        OffManifoldParams {
            ambient_dim: 32,
            codim: 16,
            width: 64,
            train_samples: 300,
            test_samples: 60,
            seed: 2,
            ..OffManifoldParams::default()
        }
    }

    #[test]
    fn path_gradient_of_linear_region() {
        // One active unit: N(x) = w.x / 1 on the positive side.
        let w = crate::numerics::Mat::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let net = TwoLayerNet::from_parts(w, vec![1.0]).unwrap();
        let g = path_gradients(&net, &[vec![1.0, 1.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(g, vec![3.0]);
        assert!(path_gradients(&net, &[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn under_trained_network_is_inconclusive() {
        let p = OffManifoldParams {
            train: TrainConfig {
                epochs: 1,
                learning_rate: 1e-6,
                ..TrainConfig::default()
            },
            min_accuracy: 1.01,
            ..small()
        };
        let r = offmanifold_norm_experiment(&p).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        // Barely moved: trained and init ratios coincide closely.
        assert!((r.ratio / r.init_ratio - 1.0).abs() < 1e-3);
        assert!(r.median_init_cosine > 0.999999);
    }

    #[test]
    fn small_experiment_trains_and_reports() {
        let r = offmanifold_norm_experiment(&small()).unwrap();
        assert!(r.heldout_accuracy > 0.8, "{}", r.heldout_accuracy);
        assert_eq!(r.points.len(), 60);
        assert_eq!(r.path_gradients.len(), 30);
        assert!(r.median_init_cosine > 0.5);
        assert_eq!(r, offmanifold_norm_experiment(&small()).unwrap());
    }
}
