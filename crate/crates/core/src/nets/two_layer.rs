use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{axpy, dot, Mat, Rng};

/// `N(x) = sum_i u_i relu(<w_i, x>)` with `|u_i| = 1/m`.
///
/// A unit counts as active when `<w_i, x> >= 0`; at the kink the gradient
/// takes the active branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerNet {
    w: Mat,
    u: Vec<f64>,
}

/// Hidden units with nonnegative pre-activation at a query point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.indices.binary_search(&unit).is_ok()
    }
}

impl TwoLayerNet {
    /// `w_i ~ N(0, I_d / d)`, `u_i = +-1/m` with fair independent signs.
    pub fn init(input_dim: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || width == 0 {
            return Err(Error::param(
                "dims",
                format!("need d, m >= 1, got d={input_dim}, m={width}"),
            ));
        }
        let variance = 1.0 / input_dim as f64;
        let mut values = Vec::with_capacity(width * input_dim);
        for _ in 0..width {
            values.extend(rng.gaussian_vector(input_dim, variance));
        }
        let scale = 1.0 / width as f64;
        let u = (0..width).map(|_| scale * rng.sign()).collect();
        Ok(TwoLayerNet {
            w: Mat::from_vec(width, input_dim, values)?,
            u,
        })
    }

    /// Rejects output weights whose magnitude differs from `1/m`.
    pub fn from_parts(w: Mat, u: Vec<f64>) -> Result<Self> {
        check_len(
            "TwoLayerNet::from_parts (output weights)",
            w.rows(),
            u.len(),
        )?;
        if w.rows() == 0 || w.cols() == 0 {
            return Err(Error::param("w", "network needs d, m >= 1"));
        }
        let scale = 1.0 / u.len() as f64;
        if let Some(bad) = u.iter().find(|x| ((x.abs() - scale) / scale).abs() > 1e-12) {
            return Err(Error::param(
                "u",
                format!("output weights must have magnitude 1/m = {scale}, found {bad}"),
            ));
        }
        if !w.is_finite() {
            return Err(Error::param("w", "weights must be finite"));
        }
        Ok(TwoLayerNet { w, u })
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn width(&self) -> usize {
        self.w.rows()
    }

    /// `m x d`, row `i` is `w_i`.
    pub fn weights(&self) -> &Mat {
        &self.w
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Mat {
        &mut self.w
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.u
    }

    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("TwoLayerNet input", self.input_dim(), x.len())?;
        self.w.matvec(x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let z = self.preactivations(x)?;
        Ok(z.iter().zip(&self.u).map(|(z, u)| u * z.max(0.0)).sum())
    }

    pub fn active_set(&self, x: &[f64]) -> Result<ActiveSet> {
        let z = self.preactivations(x)?;
        Ok(active_from_preactivations(&z))
    }

    /// `dN/dx = sum_{i in S} u_i w_i`, with `S` the active set at `x`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<(Vec<f64>, ActiveSet)> {
        let active = self.active_set(x)?;
        let mut g = vec![0.0; self.input_dim()];
        for &i in active.indices() {
            axpy(self.u[i], self.w.row(i), &mut g);
        }
        Ok((g, active))
    }

    /// `<w_i, x>` for one unit.
    pub fn preactivation(&self, unit: usize, x: &[f64]) -> f64 {
        dot(self.w.row(unit), x)
    }
}

fn active_from_preactivations(z: &[f64]) -> ActiveSet {
    ActiveSet {
        indices: z
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= 0.0)
            .map(|(i, _)| i)
            .collect(),
    }
}
