//! Dense linear algebra, seeded sampling, and PCA.
//!
//! Vectors are plain `&[f64]` slices; [`Mat`] is a row-major dense matrix.
//! Nothing here allocates behind the caller's back except where a new vector
//! is returned.

mod eigen;
mod pca;
mod rng;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use pca::{pca, PcaResult, DEFAULT_VARIANCE_CUTOFF};
pub use rng::{derive_seed, Rng};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(v: &[f64], alpha: f64) -> Vec<f64> {
    v.iter().map(|x| alpha * x).collect()
}

/// Cosine similarity `<a,b> / (|a| |b|)`.
///
/// A zero-norm argument is a [`Error::Degenerate`] error rather than a silent
/// zero: callers that want a fallback value must decide on it explicitly.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("cosine_similarity", a.len(), b.len())?;
    let sa = max_abs(a);
    let sb = max_abs(b);
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    // Rescale by the largest magnitude so squared norms cannot under- or
    // overflow.
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x / sa, y / sb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Median of a slice (average of the two middle values for even length).
/// Returns `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        check_len("Mat::from_vec", rows * cols, values.len())?;
        Ok(Mat { rows, cols, values })
    }

    /// Builds a matrix from equally sized rows. An empty iterator yields a
    /// `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("Mat::from_rows", cols, r.as_ref().len())?;
            values.extend_from_slice(r.as_ref());
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            values,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty-column matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Mat::matvec", self.cols, x.len())?;
        Ok(self.iter_rows().map(|r| dot(r, x)).collect())
    }

    /// `self^T * y`
    pub fn tr_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("Mat::tr_matvec", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.iter_rows().zip(y) {
            axpy(yi, r, &mut out);
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * other^T`, i.e. all pairwise row inner products.
    pub fn mul_transpose(&self, other: &Mat) -> Result<Mat> {
        check_len("Mat::mul_transpose", self.cols, other.cols)?;
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out[(i, j)] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_vectors() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_survives_tiny_magnitudes() {
        let c = cosine_similarity(&[1e-200, 1e-200], &[1e-200, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let m = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        assert_eq!(m.tr_matvec(&[1.0, 1.0]).unwrap(), vec![5.0, 7.0, 9.0]);
        assert_eq!(
            m.transpose().matvec(&[1.0, 1.0]).unwrap(),
            m.tr_matvec(&[1.0, 1.0]).unwrap()
        );
    }

    fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, len).prop_filter("nonzero", |v| norm(v) > 1e-6)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_scale_invariant_bounded(
            (a, b) in (1usize..16).prop_flat_map(|n| (nonzero_vec(n), nonzero_vec(n))),
            lambda in 1e-3f64..1e3,
        ) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            let scaled_a = scaled(&a, lambda);
            let sab = cosine_similarity(&scaled_a, &b).unwrap();
            prop_assert!((sab - ab).abs() <= 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
        }
    }
}
