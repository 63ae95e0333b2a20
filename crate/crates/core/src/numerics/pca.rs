use serde::{Deserialize, Serialize};

use super::{dot, symmetric_eigen, Mat};
use crate::error::{Error, Result};

/// Default cumulative-variance cutoff used to call a leading set of principal
/// directions "on-manifold".
pub const DEFAULT_VARIANCE_CUTOFF: f64 = 0.95;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaResult {
    /// Sample variances along the principal directions, descending.
    pub component_variances: Vec<f64>,
    /// `cumulative_ratio[i] = sum(variances[..=i]) / sum(variances)`.
    /// All zeros when `degenerate`.
    pub cumulative_ratio: Vec<f64>,
    /// Row `i` is the unit principal direction of `component_variances[i]`.
    pub components: Mat,
    pub mean: Vec<f64>,
    /// Total variance is zero (e.g. all rows identical).
    pub degenerate: bool,
}

impl PcaResult {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of leading components needed to reach `cutoff` of the total
    /// variance. `None` when degenerate.
    pub fn components_for_ratio(&self, cutoff: f64) -> Option<usize> {
        if self.degenerate {
            return None;
        }
        // Guard against the last ratio landing a hair under 1.0.
        let target = cutoff.min(1.0) - 1e-12;
        self.cumulative_ratio
            .iter()
            .position(|&r| r >= target)
            .map(|i| i + 1)
    }

    /// Coordinates of `x - mean` in the principal basis.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components
            .iter_rows()
            .map(|c| dot(c, &centered))
            .collect()
    }

    /// Inverse of [`PcaResult::project`] using the first `coeffs.len()`
    /// components.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, comp) in coeffs.iter().zip(self.components.iter_rows()) {
            super::axpy(*c, comp, &mut out);
        }
        out
    }
}

/// Principal component analysis of the rows of `data`.
///
/// Eigen-decomposes the mean-centered sample covariance (denominator
/// `rows - 1`) with [`symmetric_eigen`].
pub fn pca(data: &Mat) -> Result<PcaResult> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::param(
            "data",
            format!("pca needs at least 2 rows, got {n}"),
        ));
    }
    if !data.is_finite() {
        return Err(Error::Degenerate("pca input has non-finite entries".into()));
    }

    let mut mean = vec![0.0; d];
    for row in data.iter_rows() {
        super::axpy(1.0, row, &mut mean);
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = Mat::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in data.iter_rows() {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let cov_row = cov.row_mut(i);
            for j in i..d {
                cov_row[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = symmetric_eigen(&cov)?;
    let component_variances: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = component_variances.iter().sum();
    let scale = 1.0 + mean.iter().map(|m| m * m).sum::<f64>();
    let degenerate = !(total > 1e-24 * scale);

    let cumulative_ratio = if degenerate {
        vec![0.0; d]
    } else {
        let mut acc = 0.0;
        let mut out: Vec<f64> = component_variances
            .iter()
            .map(|v| {
                acc += v;
                (acc / total).min(1.0)
            })
            .collect();
        if let Some(last) = out.last_mut() {
            *last = 1.0;
        }
        out
    };

    Ok(PcaResult {
        component_variances,
        cumulative_ratio,
        components: eig.vectors,
        mean,
        degenerate,
    })
}
