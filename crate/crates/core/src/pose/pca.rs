use dummynet_nn::Scalar;

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order with eigenvectors as rows.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i].powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    (values, vectors)
}

/// Principal components of row samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// `k` orthonormal rows of length `dim`.
    pub basis: Vec<Vec<T>>,
    /// Variance along each basis row (population normalization, `1/n`).
    pub variances: Vec<T>,
    /// Total variance over all dimensions.
    pub total_variance: T,
}

impl<T: Scalar> Pca<T> {
    /// Fits the top `k` components of `samples` (each of length `dim`).
    pub fn fit(samples: &[Vec<T>], k: usize) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let dim = samples[0].len();
        if k > dim || samples.iter().any(|s| s.len() != dim) {
            return Err(Error::ShapeMismatch(format!("pca over {dim}-d samples with {k} components")));
        }
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; dim * dim];
        for s in samples {
            let d: Vec<f64> = s.iter().zip(&mean).map(|(v, m)| v.as_f64() - m).collect();
            for i in 0..dim {
                for j in i..dim {
                    cov[i * dim + j] += d[i] * d[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let c = cov[i * dim + j] / n as f64;
                cov[i * dim + j] = c;
                cov[j * dim + i] = c;
            }
        }
        let total: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
        let (values, vectors) = symmetric_eigen(&cov, dim);
        Ok(Self {
            mean: mean.into_iter().map(T::lit).collect(),
            basis: vectors.into_iter().take(k).map(|r| r.into_iter().map(T::lit).collect()).collect(),
            variances: values.into_iter().take(k).map(|v| T::lit(v.max(0.0))).collect(),
            total_variance: T::lit(total),
        })
    }

    pub fn project(&self, x: &[T]) -> Vec<T> {
        self.basis.iter().map(|b| b.iter().zip(x).zip(&self.mean).map(|((b, x), m)| *b * (*x - *m)).sum()).collect()
    }

    pub fn reconstruct(&self, coeffs: &[T]) -> Vec<T> {
        let mut out = self.mean.clone();
        for (b, c) in self.basis.iter().zip(coeffs) {
            for (o, v) in out.iter_mut().zip(b) {
                *o += *c * *v;
            }
        }
        out
    }

    /// Fraction of total variance along each kept component.
    pub fn explained_ratio(&self) -> Vec<T> {
        self.variances.iter().map(|v| if self.total_variance > T::zero() { *v / self.total_variance } else { T::zero() }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        let a = [2.0, 1.0, 1.0, 2.0];
        let (vals, vecs) = symmetric_eigen(&a, 2);
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((vecs[0][0].abs() - s).abs() < 1e-14 && (vecs[0][0] - vecs[0][1]).abs() < 1e-14);
    }

    #[test]
    fn projection_round_trip_full_rank() {
        let samples: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 * 0.1, (i % 3) as f64]).collect();
        let p = Pca::fit(&samples, 3).unwrap();
        for s in &samples {
            let r = p.reconstruct(&p.project(s));
            for (a, b) in r.iter().zip(s) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
