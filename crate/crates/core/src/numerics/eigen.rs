//! Symmetric eigensolver: Householder tridiagonalization followed by the
//! implicit-shift QL iteration (the classic `tred2`/`tql2` pair from EISPACK).
//!
//! Cost is `O(n^3)` with a small constant; `n` up to a few thousand is fine.

use super::Mat;
use crate::error::{check_len, Error, Result};

/// Eigen-decomposition `A = Q diag(values) Q^T`, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Row `i` is the unit eigenvector belonging to `values[i]`.
    pub vectors: Mat,
}

pub fn symmetric_eigen(a: &Mat) -> Result<SymmetricEigen> {
    let n = a.rows();
    check_len("symmetric_eigen (square)", n, a.cols())?;
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    if !a.is_finite() {
        return Err(Error::Degenerate("matrix has non-finite entries".into()));
    }
    let mut v = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e);
    // tql2 rotates pairs of eigenvector columns; work on the transpose so
    // those become contiguous rows.
    let mut vt = v.transpose();
    tql2(&mut vt, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.row_mut(dst).copy_from_slice(vt.row(src));
    }
    Ok(SymmetricEigen {
        values: order.iter().map(|&i| d[i]).collect(),
        vectors,
    })
}

fn tred2(v: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for &dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// `vt` holds eigenvector columns as rows.
fn tql2(vt: &mut Mat, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let max_iter = 64 * n.max(8);
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::Degenerate(format!(
                        "QL iteration did not converge for eigenvalue {l}"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    rotate_rows(vt, i, c, s);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Givens rotation applied to rows `i` and `i + 1`.
fn rotate_rows(vt: &mut Mat, i: usize, c: f64, s: f64) {
    let cols = vt.cols();
    let (head, tail) = vt.as_mut_slice().split_at_mut((i + 1) * cols);
    let ri = &mut head[i * cols..];
    let ri1 = &mut tail[..cols];
    for (a, b) in ri.iter_mut().zip(ri1.iter_mut()) {
        let h = *b;
        *b = s * *a + c * h;
        *a = c * *a - s * h;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, Rng};

    fn random_symmetric(n: usize, seed: u64) -> Mat {
        let mut rng = Rng::new(seed);
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x = rng.normal();
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    #[test]
    fn diagonal_matrix() {
        let mut a = Mat::zeros(3, 3);
        a[(0, 0)] = 1.0;
        a[(1, 1)] = 3.0;
        a[(2, 2)] = 2.0;
        let eig = symmetric_eigen(&a).unwrap();
        assert_eq!(eig.values, vec![3.0, 2.0, 1.0]);
        assert!((eig.vectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reconstructs_random_matrices() {
        for (n, seed) in [(1, 1), (2, 2), (5, 3), (17, 4), (40, 5)] {
            let a = random_symmetric(n, seed);
            let eig = symmetric_eigen(&a).unwrap();
            let q = &eig.vectors;
            for i in 0..n {
                for j in 0..n {
                    let ortho = dot(q.row(i), q.row(j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ortho - want).abs() < 1e-12, "n={n} Q Q^T");
                    let rec: f64 = (0..n).map(|k| eig.values[k] * q[(k, i)] * q[(k, j)]).sum();
                    assert!((rec - a[(i, j)]).abs() < 1e-11, "n={n} reconstruction");
                }
            }
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn agrees_with_nalgebra() {
        let n = 24;
        let a = random_symmetric(n, 99);
        let ours = symmetric_eigen(&a).unwrap().values;
        let na = nalgebra::DMatrix::from_row_slice(n, n, a.as_slice());
        let mut theirs: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn repeated_eigenvalues() {
        let a = Mat::identity(6);
        let eig = symmetric_eigen(&a).unwrap();
        assert!(eig.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
