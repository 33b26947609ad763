//! Principal component analysis over a symmetric Jacobi eigensolver.
//!
//! Used to reduce feature dimensionality before the mixture model when the
//! feature space is wide. Deterministic: eigenvector signs are normalized
//! and ties are broken by index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are eigenvectors.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let d = a.rows();
    if a.cols() != d {
        return Err(Error::shape("eigen input must be square"));
    }
    let mut m = a.clone();
    let mut v = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.0 });
    let scale: f64 = (0..d).map(|i| m.get(i, i).abs()).fold(1e-300, f64::max);
    let tol = 1e-14 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += m.get(p, q).abs();
            }
        }
        if off < tol {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = m.get(i, p);
                    let aiq = m.get(i, q);
                    m.set(i, p, c * aip - s * aiq);
                    m.set(i, q, s * aip + c * aiq);
                }
                for j in 0..d {
                    let apj = m.get(p, j);
                    let aqj = m.get(q, j);
                    m.set(p, j, c * apj - s * aqj);
                    m.set(q, j, s * apj + c * aqj);
                }
                for i in 0..d {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let values = (0..d).map(|i| m.get(i, i)).collect();
    Ok((values, v))
}

/// Fitted PCA transform: `project(x) = components * (x - mean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d_out x d_in`, rows are principal axes ordered by decreasing variance.
    pub components: Matrix,
}

impl Pca {
    pub fn fit(data: &Matrix, d_out: usize) -> Result<Pca> {
        let (n, d) = (data.rows(), data.cols());
        if n == 0 || d_out == 0 || d_out > d {
            return Err(Error::config(format!(
                "cannot fit a {d_out}-component PCA on {n}x{d} data"
            )));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(data.row(i)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = Matrix::zeros(d, d);
        for i in 0..n {
            let row = data.row(i);
            for a in 0..d {
                let ca = row[a] - mean[a];
                for b in a..d {
                    let add = ca * (row[b] - mean[b]);
                    cov.set(a, b, cov.get(a, b) + add);
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov.get(a, b) / n as f64;
                cov.set(a, b, v);
                cov.set(b, a, v);
            }
        }
        let (values, vectors) = symmetric_eigen(&cov)?;
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap().then(i.cmp(&j)));

        let mut components = Matrix::zeros(d_out, d);
        for (r, &col) in order.iter().take(d_out).enumerate() {
            let axis: Vec<f64> = (0..d).map(|i| vectors.get(i, col)).collect();
            // Fix the arbitrary sign: largest-magnitude coordinate positive.
            let mut lead = 0;
            for (i, v) in axis.iter().enumerate() {
                if v.abs() > axis[lead].abs() {
                    lead = i;
                }
            }
            let sign = if axis[lead] < 0.0 { -1.0 } else { 1.0 };
            for (i, v) in axis.iter().enumerate() {
                components.set(r, i, sign * v);
            }
        }
        Ok(Pca { mean, components })
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        (0..self.components.rows())
            .map(|r| {
                self.components
                    .row(r)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (v, m))| c * (v - m))
                    .sum()
            })
            .collect()
    }

    pub fn apply(&self, data: &Matrix) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..data.rows()).map(|i| self.apply_row(data.row(i))).collect();
        Matrix::from_rows(&rows).expect("projection rows are uniform")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn eigen_of_known_two_by_two() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (values, vectors) = symmetric_eigen(&a).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((sorted[0] - 1.0).abs() < 1e-12);
        assert!((sorted[1] - 3.0).abs() < 1e-12);
        // A v = lambda v for each column
        for c in 0..2 {
            for r in 0..2 {
                let av: f64 = (0..2).map(|k| a.get(r, k) * vectors.get(k, c)).sum();
                assert!((av - values[c] * vectors.get(r, c)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pca_finds_dominant_direction() {
        // Points spread along (1, 1) with small orthogonal jitter.
        let mut rows = Vec::new();
        for i in 0..200 {
            let t = (i as f64 / 100.0) - 1.0;
            let jitter = 0.01 * ((i * 37 % 17) as f64 / 17.0 - 0.5);
            rows.push(vec![t + jitter, t - jitter]);
        }
        let data = Matrix::from_rows(&rows).unwrap();
        let pca = Pca::fit(&data, 1).unwrap();
        let axis = pca.components.row(0);
        let unit = 1.0 / 2.0_f64.sqrt();
        assert!((axis[0].abs() - unit).abs() < 1e-2);
        assert!((axis[1].abs() - unit).abs() < 1e-2);
        // components are unit-norm
        let norm: f64 = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_is_deterministic() {
        let data = Matrix::from_fn(50, 6, |i, j| ((i * 7 + j * 13) % 23) as f64 / 23.0);
        let a = Pca::fit(&data, 3).unwrap();
        let b = Pca::fit(&data, 3).unwrap();
        assert_eq!(a, b);
    }
}
