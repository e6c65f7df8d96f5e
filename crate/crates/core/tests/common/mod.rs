//! Oracles shared by the integration tests. They avoid the library's own
//! eigensolver and square-root code paths.

#![allow(dead_code)]

use bsa_distill::frechet::{MomentFit, SymMatrix};
use bsa_distill::nnet::{Denoiser, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

pub fn eye(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[row][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Principal square root by the Denman-Beavers iteration; valid for
/// matrices with positive real spectrum, symmetric or not.
pub fn sqrtm_db(a: &Mat) -> Mat {
    let n = a.len();
    let mut y = a.clone();
    let mut z = eye(n);
    for _ in 0..100 {
        let yi = inverse(&y);
        let zi = inverse(&z);
        let ny: Mat = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect())
            .collect();
        let nz: Mat = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect())
            .collect();
        let delta: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (ny[i][j] - y[i][j]).abs())
            .fold(0.0, f64::max);
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

pub fn to_mat(s: &SymMatrix) -> Mat {
    (0..s.dim)
        .map(|i| (0..s.dim).map(|j| s.get(i, j)).collect())
        .collect()
}

pub fn to_sym(m: &Mat) -> SymMatrix {
    let n = m.len();
    SymMatrix::new(n, m.iter().flatten().copied().collect()).unwrap()
}

/// `B·Bᵀ + 0.1·I` with standard-normal `B`.
pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> Mat {
    let b: Mat = (0..n)
        .map(|_| (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect())
        .collect();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            s[i][j] = (0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>();
        }
        s[i][i] += 0.1;
    }
    s
}

pub fn random_fit<R: Rng>(n: usize, rng: &mut R) -> MomentFit {
    MomentFit {
        mean: (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect(),
        cov: to_sym(&random_spd(n, rng)),
        count: 100,
    }
}

/// `‖Δμ‖² + Tr Σa + Tr Σb − 2 Tr (Σa Σb)^{1/2}` with the non-symmetric
/// product rooted directly.
pub fn frechet_oracle(a: &MomentFit, b: &MomentFit) -> f64 {
    let sa = to_mat(&a.cov);
    let sb = to_mat(&b.cov);
    let root = sqrtm_db(&mul(&sa, &sb));
    let n = sa.len();
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let tr = |m: &Mat| (0..n).map(|i| m[i][i]).sum::<f64>();
    mean + tr(&sa) + tr(&sb) - 2.0 * tr(&root)
}

/// Central-difference gradient of `f` with respect to every parameter.
pub fn finite_difference<M, F>(model: &M, h: f64, f: F) -> Vec<Vec<f64>>
where
    M: Denoiser,
    F: Fn(&M) -> f64,
{
    let mut out = Vec::new();
    for p in 0..model.params().len() {
        let mut g = Vec::with_capacity(model.params()[p].len());
        for i in 0..model.params()[p].len() {
            let mut plus = model.clone();
            plus.params_mut()[p].data_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[p].data_mut()[i] -= h;
            g.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// `|a − b| ≤ max(rel·max(|a|, |b|), abs)`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= (rel * a.abs().max(b.abs())).max(abs)
}
