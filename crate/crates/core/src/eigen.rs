//! Cyclic Jacobi eigendecomposition of symmetric matrices.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// `A = V diag(values) V^T`, eigenvalues in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricEigen {
    pub n: usize,
    pub values: Vec<f64>,
    /// Row-major `n x n`; column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
}

impl SymmetricEigen {
    /// Runs sweeps until the off-diagonal Frobenius norm drops below
    /// `1e-10 * ||A||_F`.
    pub fn new(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::shape(
                "SymmetricEigen::new",
                format!("{} values for {n}x{n}", a.len()),
            ));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("matrix has non-finite entries".into()));
        }
        let mut m = a.to_vec();
        // Symmetrize so tiny asymmetries from accumulation never matter.
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (m[i * n + j] + m[j * n + i]);
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tol = 1e-10 * norm;
        let off = |m: &[f64]| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        s += m[i * n + j] * m[i * n + j];
                    }
                }
            }
            s.sqrt()
        };
        let mut sweeps = 0;
        while off(&m) > tol {
            if sweeps == MAX_SWEEPS {
                return Err(Error::Degenerate(format!(
                    "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"
                )));
            }
            sweeps += 1;
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
                        let (kp, kq) = (m[k * n + p], m[k * n + q]);
                        m[k * n + p] = c * kp - s * kq;
                        m[k * n + q] = s * kp + c * kq;
                    }
                    for k in 0..n {
                        let (pk, qk) = (m[p * n + k], m[q * n + k]);
                        m[p * n + k] = c * pk - s * qk;
                        m[q * n + k] = s * pk + c * qk;
                    }
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    for k in 0..n {
                        let (kp, kq) = (v[k * n + p], v[k * n + q]);
                        v[k * n + p] = c * kp - s * kq;
                        v[k * n + q] = s * kp + c * kq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
        let values = order.iter().map(|&i| m[i * n + i]).collect();
        let mut vectors = vec![0.0; n * n];
        for (new, &old) in order.iter().enumerate() {
            for k in 0..n {
                vectors[k * n + new] = v[k * n + old];
            }
        }
        Ok(Self { n, values, vectors })
    }

    /// Number of leading eigenvalues above `rel * max(values)`.
    pub fn retained(&self, rel: f64) -> usize {
        let max = self.values.first().copied().unwrap_or(0.0);
        self.values
            .iter()
            .take_while(|&&v| v > rel * max && v > 0.0)
            .count()
    }

    /// `sum_k<count f(values[k]) v_k v_k^T`, row-major.
    pub fn spectral_map(&self, count: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.n;
        let scale: Vec<f64> = self.values[..count].iter().map(|&v| f(v)).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (k, s) in scale.iter().enumerate() {
                    acc += self.vectors[i * n + k] * s * self.vectors[j * n + k];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }
}
