//! Fréchet distance between Gaussian moment fits of two sample sets.
//!
//! `FD = ‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_aΣ_b)^{1/2})`, with the trace of the
//! square root taken through the symmetric form `Σ_a^{1/2} Σ_b Σ_a^{1/2}`.

use crate::error::{Error, Result};
use crate::nnet::Tensor;

const JACOBI_SWEEPS: usize = 100;

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::InvalidArgument(format!(
                "{dim}x{dim} matrix needs {} entries, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn matmul(&self, other: &SymMatrix) -> SymMatrix {
        let n = self.dim;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        SymMatrix { dim: n, data }
    }

    pub fn symmetrized(&self) -> SymMatrix {
        let n = self.dim;
        let mut data = self.data.clone();
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = 0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        SymMatrix { dim: n, data }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                m = m.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        m
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the eigenvectors as the columns of a row-major matrix.
pub fn symmetric_eigen(m: &SymMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.dim;
    let mut a = m.symmetrized().data;
    let mut v = SymMatrix::identity(n).data;
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    (values, v)
}

/// Principal square root of a symmetric positive semi-definite matrix;
/// slightly negative eigenvalues are clipped to zero.
pub fn sqrtm_psd(m: &SymMatrix) -> SymMatrix {
    let n = m.dim;
    let (vals, vecs) = symmetric_eigen(m);
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = (0..n)
                .map(|k| vecs[i * n + k] * roots[k] * vecs[j * n + k])
                .sum();
        }
    }
    SymMatrix { dim: n, data }.symmetrized()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentFit {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
    pub count: usize,
}

impl MomentFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (n − 1) covariance of the rows of `samples`.
pub fn fit_moments(samples: &Tensor) -> Result<MomentFit> {
    let n = samples.rows();
    if samples.shape().len() != 2 || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "moment fit needs a (n >= 2, d >= 1) matrix, got shape {:?}",
            samples.shape()
        )));
    }
    let rows: Vec<&[f64]> = (0..n).map(|r| samples.row(r)).collect();
    fit_rows(&rows)
}

/// [`fit_moments`] over borrowed rows.
pub fn fit_rows(rows: &[&[f64]]) -> Result<MomentFit> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "moment fit needs at least 2 samples, got {n}"
        )));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("ragged or empty sample rows".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(MomentFit {
        mean,
        cov: SymMatrix { dim: d, data: cov },
        count: n,
    })
}

pub fn frechet_distance(a: &MomentFit, b: &MomentFit) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::Shape {
            context: "frechet_distance dimension",
            dim: 0,
            expected: d,
            actual: b.dim(),
        });
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let root_a = sqrtm_psd(&a.cov);
    let inner = root_a.matmul(&b.cov).matmul(&root_a).symmetrized();
    let (vals, _) = symmetric_eigen(&inner);
    let cross: f64 = vals.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let fd = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(if fd < 0.0 && fd > -1e-8 { 0.0 } else { fd })
}
