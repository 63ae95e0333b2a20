//! Linear data subspaces `M` of `R^d`, projections onto `M` and its
//! orthogonal complement, and labeled synthetic datasets lying on `M`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{axpy, dot, norm, Mat, Rng};

/// Orthonormal bases of a subspace `M` (dimension `d - codim`) and of its
/// complement (dimension `codim`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    codim: usize,
    on: Mat,
    off: Mat,
}

impl SubspaceBasis {
    /// Random `M`: the first `d - codim` Gram-Schmidt vectors of `d` Gaussian
    /// draws span `M`, the remaining `codim` span the complement.
    pub fn random(ambient_dim: usize, codim: usize, rng: &mut Rng) -> Result<Self> {
        validate_dims(ambient_dim, codim)?;
        let d = ambient_dim;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
        while rows.len() < d {
            let mut v = rng.gaussian_vector(d, 1.0);
            let start = norm(&v);
            // Two passes of modified Gram-Schmidt keep the basis orthogonal to
            // machine precision.
            for _ in 0..2 {
                for q in &rows {
                    let c = dot(q, &v);
                    axpy(-c, q, &mut v);
                }
            }
            let len = norm(&v);
            if len <= 1e-8 * start {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= len);
            rows.push(v);
        }
        let off_rows = rows.split_off(d - codim);
        Ok(SubspaceBasis {
            ambient_dim: d,
            codim,
            on: Mat::from_rows(&rows)?,
            off: Mat::from_rows(&off_rows)?,
        })
    }

    /// `M = span{e_i : i in on_axes}`.
    pub fn axis_aligned(ambient_dim: usize, on_axes: &[usize]) -> Result<Self> {
        let mut is_on = vec![false; ambient_dim];
        for &a in on_axes {
            if a >= ambient_dim {
                return Err(Error::param(
                    "on_axes",
                    format!("axis {a} out of range for dimension {ambient_dim}"),
                ));
            }
            if is_on[a] {
                return Err(Error::param("on_axes", format!("axis {a} listed twice")));
            }
            is_on[a] = true;
        }
        let codim = ambient_dim - on_axes.len();
        validate_dims(ambient_dim, codim)?;
        let unit = |i: usize| {
            let mut e = vec![0.0; ambient_dim];
            e[i] = 1.0;
            e
        };
        let on: Vec<Vec<f64>> = on_axes.iter().map(|&i| unit(i)).collect();
        let off: Vec<Vec<f64>> = (0..ambient_dim).filter(|&i| !is_on[i]).map(unit).collect();
        Ok(SubspaceBasis {
            ambient_dim,
            codim,
            on: Mat::from_rows(&on)?,
            off: Mat::from_rows(&off)?,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Dimension of the complement of `M`.
    pub fn codim(&self) -> usize {
        self.codim
    }

    /// Dimension of `M`.
    pub fn manifold_dim(&self) -> usize {
        self.ambient_dim - self.codim
    }

    /// `(d - codim) x d`, orthonormal rows spanning `M`.
    pub fn basis_on(&self) -> &Mat {
        &self.on
    }

    /// `codim x d`, orthonormal rows spanning the complement.
    pub fn basis_off(&self) -> &Mat {
        &self.off
    }

    /// Coordinates of the `M` component of `x` in `basis_on`.
    pub fn on_coordinates(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("SubspaceBasis::on_coordinates", self.ambient_dim, x.len())?;
        self.on.matvec(x)
    }

    /// Coordinates of the off-manifold component of `x` in `basis_off`.
    pub fn off_coordinates(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("SubspaceBasis::off_coordinates", self.ambient_dim, x.len())?;
        self.off.matvec(x)
    }

    pub fn project_on(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.on.tr_matvec(&self.on_coordinates(x)?)
    }

    pub fn project_off(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.off.tr_matvec(&self.off_coordinates(x)?)
    }

    /// Point of `M` with the given `basis_on` coordinates.
    pub fn embed(&self, coords: &[f64]) -> Result<Vec<f64>> {
        self.on.tr_matvec(coords)
    }
}

fn validate_dims(d: usize, codim: usize) -> Result<()> {
    if codim == 0 || codim >= d {
        return Err(Error::param(
            "codim",
            format!("need 0 < codim < ambient dimension, got codim={codim}, d={d}"),
        ));
    }
    Ok(())
}

/// Labeled points on `M`, separable inside `M` by `separator` with at least
/// `margin`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticDataset {
    pub inputs: Vec<Vec<f64>>,
    /// Each label is `-1` or `+1`.
    pub labels: Vec<i8>,
    pub margin: f64,
    /// Unit normal of the labeling hyperplane, lying in `M`. Empty for data
    /// read back from CSV.
    pub separator: Vec<f64>,
}

/// Rejection draws allowed per requested point before giving up.
pub const SAMPLING_ATTEMPTS_PER_POINT: usize = 200;

/// Draws `count` points `x = sum_i c_i q_i` over the rows `q_i` of
/// `basis_on`, with `c_i ~ N(0, d / (2 (d - codim)))` so that the expected
/// squared distance between two points is `d`. Labels are the sign of
/// `<separator, x>`; points closer than `margin` to the hyperplane are
/// redrawn.
pub fn sample_on_subspace(
    basis: &SubspaceBasis,
    count: usize,
    rng: &mut Rng,
    margin: f64,
) -> Result<SyntheticDataset> {
    if count < 2 {
        return Err(Error::param(
            "count",
            format!("need at least 2 points, got {count}"),
        ));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::param(
            "margin",
            format!("must be positive, got {margin}"),
        ));
    }
    let k = basis.manifold_dim();
    let variance = basis.ambient_dim() as f64 / (2.0 * k as f64);

    let mut sep_coords = rng.gaussian_vector(k, 1.0);
    let len = norm(&sep_coords);
    sep_coords.iter_mut().for_each(|c| *c /= len);

    let budget = SAMPLING_ATTEMPTS_PER_POINT * count;
    let mut inputs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut attempts = 0;
    while inputs.len() < count {
        if attempts == budget {
            return Err(Error::SamplingExhausted {
                attempts,
                reason: format!(
                    "only {} of {count} points clear margin {margin}",
                    inputs.len()
                ),
            });
        }
        attempts += 1;
        let coords = rng.gaussian_vector(k, variance);
        let side = dot(&coords, &sep_coords);
        if side.abs() < margin {
            continue;
        }
        inputs.push(basis.embed(&coords)?);
        labels.push(if side > 0.0 { 1 } else { -1 });
    }
    Ok(SyntheticDataset {
        inputs,
        labels,
        margin,
        separator: basis.embed(&sep_coords)?,
    })
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// First `first` points and the rest, sharing separator and margin.
    pub fn split(mut self, first: usize) -> Result<(SyntheticDataset, SyntheticDataset)> {
        if first == 0 || first >= self.len() {
            return Err(Error::param(
                "first",
                format!(
                    "split point {first} must lie strictly inside 0..{}",
                    self.len()
                ),
            ));
        }
        let rest = SyntheticDataset {
            inputs: self.inputs.split_off(first),
            labels: self.labels.split_off(first),
            margin: self.margin,
            separator: self.separator.clone(),
        };
        Ok((self, rest))
    }

    /// CSV with header `x0,...,x{d-1},label`, one point per row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Inverse of [`SyntheticDataset::write_csv`]. The CSV stores neither
    /// margin nor separator: the result has `margin = NaN` and an empty
    /// separator.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 2 || &header[cols - 1] != "label" {
            return Err(Error::param(
                "csv",
                "expected header x0,...,x{d-1},label".to_string(),
            ));
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::param("csv", format!("row {}: bad number {s:?}: {e}", row + 1))
                })
            };
            let x = (0..cols - 1)
                .map(|i| parse(&rec[i]))
                .collect::<Result<Vec<f64>>>()?;
            let label = match rec[cols - 1].trim() {
                "1" | "+1" => 1,
                "-1" => -1,
                other => {
                    return Err(Error::param(
                        "csv",
                        format!("row {}: label must be -1 or 1, got {other:?}", row + 1),
                    ))
                }
            };
            inputs.push(x);
            labels.push(label);
        }
        Ok(SyntheticDataset {
            inputs,
            labels,
            margin: f64::NAN,
            separator: Vec::new(),
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{median, sub, Rng};
    use proptest::prelude::*;

    fn gram_ok(m: &Mat, tol: f64) {
        for i in 0..m.rows() {
            for j in 0..m.rows() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(m.row(i), m.row(j)) - want).abs() < tol);
            }
        }
    }

    #[test]
    fn small_random_basis_is_orthonormal() {
        let b = SubspaceBasis::random(4, 2, &mut Rng::new(1)).unwrap();
        assert_eq!(b.basis_on().rows(), 2);
        assert_eq!(b.basis_off().rows(), 2);
        let all = Mat::from_rows(
            &b.basis_on()
                .iter_rows()
                .chain(b.basis_off().iter_rows())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        gram_ok(&all, 1e-10);
    }

    #[test]
    fn on_and_off_are_orthogonal_for_many_seeds() {
        for seed in 0..20 {
            let b = SubspaceBasis::random(30, 11, &mut Rng::new(seed)).unwrap();
            let cross = b.basis_on().mul_transpose(b.basis_off()).unwrap();
            assert!(cross.as_slice().iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn axis_aligned_projection() {
        let b = SubspaceBasis::axis_aligned(3, &[0, 1]).unwrap();
        assert_eq!(b.project_on(&[3.0, 4.0, 5.0]).unwrap(), vec![3.0, 4.0, 0.0]);
        assert_eq!(
            b.project_off(&[3.0, 4.0, 5.0]).unwrap(),
            vec![0.0, 0.0, 5.0]
        );
    }

    #[test]
    fn bad_dimensions_rejected() {
        let mut rng = Rng::new(0);
        assert!(SubspaceBasis::random(4, 0, &mut rng).is_err());
        assert!(SubspaceBasis::random(4, 4, &mut rng).is_err());
        assert!(SubspaceBasis::axis_aligned(3, &[0, 1, 2]).is_err());
        assert!(SubspaceBasis::axis_aligned(3, &[0, 0]).is_err());
        let b = SubspaceBasis::random(4, 2, &mut rng).unwrap();
        assert!(matches!(
            b.project_off(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn samples_lie_on_subspace_with_expected_spread() {
        let mut rng = Rng::new(5);
        let b = SubspaceBasis::random(64, 32, &mut rng).unwrap();
        let data = sample_on_subspace(&b, 200, &mut rng, 0.5).unwrap();
        for x in &data.inputs {
            assert!(norm(&b.project_off(x).unwrap()) < 1e-8);
        }
        let mut dists = Vec::new();
        for i in 0..data.len() {
            for j in (i + 1)..data.len() {
                dists.push(norm(&sub(&data.inputs[i], &data.inputs[j])));
            }
        }
        let med = median(&dists).unwrap();
        assert!(med > 4.0 && med < 16.0, "median distance {med}");
        let pos = data.labels.iter().filter(|&&y| y == 1).count();
        assert!((70..=130).contains(&pos), "{pos} positives of 200");
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            assert!(f64::from(y) * dot(&data.separator, x) >= 0.5 - 1e-12);
        }
    }

    #[test]
    fn impossible_margin_exhausts_budget() {
        let mut rng = Rng::new(2);
        let b = SubspaceBasis::random(8, 4, &mut rng).unwrap();
        assert!(matches!(
            sample_on_subspace(&b, 5, &mut rng, 1e6),
            Err(Error::SamplingExhausted { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = Rng::new(9);
        let b = SubspaceBasis::random(6, 2, &mut rng).unwrap();
        let data = sample_on_subspace(&b, 10, &mut rng, 0.1).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = SyntheticDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.inputs, data.inputs);
        assert_eq!(back.labels, data.labels);
    }

    #[test]
    fn csv_rejects_bad_label() {
        let text = "x0,label\n1.0,0\n";
        assert!(SyntheticDataset::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn different_bases_of_same_subspace_project_identically() {
        // Rotate the on-basis of M within M.
        let mut rng = Rng::new(4);
        let b = SubspaceBasis::random(10, 4, &mut rng).unwrap();
        let rot = SubspaceBasis::random(6, 3, &mut rng).unwrap();
        let q: Vec<Vec<f64>> = rot
            .basis_on()
            .iter_rows()
            .chain(rot.basis_off().iter_rows())
            .collect::<Vec<_>>()
            .iter()
            .map(|r| b.basis_on().tr_matvec(r).unwrap())
            .collect();
        let other = SubspaceBasis {
            ambient_dim: 10,
            codim: 4,
            on: Mat::from_rows(&q).unwrap(),
            off: b.basis_off().clone(),
        };
        let x = rng.gaussian_vector(10, 1.0);
        let p1 = b.project_on(&x).unwrap();
        let p2 = other.project_on(&x).unwrap();
        assert!(norm(&sub(&p1, &p2)) < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn projections_are_idempotent_and_complementary(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let d = 2 + rng.below(10);
            let codim = 1 + rng.below(d - 1);
            let b = SubspaceBasis::random(d, codim, &mut rng).unwrap();
            let x = rng.gaussian_vector(d, 1.0);
            let on = b.project_on(&x).unwrap();
            let off = b.project_off(&x).unwrap();
            let on2 = b.project_on(&on).unwrap();
            prop_assert!(norm(&sub(&on, &on2)) < 1e-10);
            let back: Vec<f64> = on.iter().zip(&off).map(|(a, c)| a + c).collect();
            prop_assert!(norm(&sub(&back, &x)) < 1e-10);
            let pyth = dot(&on, &on) + dot(&off, &off);
            prop_assert!((pyth - dot(&x, &x)).abs() <= 1e-8 * dot(&x, &x));
        }
    }
}
