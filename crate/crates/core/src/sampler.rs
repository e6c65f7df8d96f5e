//! Reverse-process samplers.
//!
//! Deterministic DDIM on the continuous schedule, with `t = i/N` grid
//! points, and the ancestral sampler on the discrete β table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nnet::{Denoiser, Parameterization, Tensor};
use crate::schedule::{ContinuousSchedule, DiscreteSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START};

/// Smallest `α_t` accepted when converting an ε-prediction to x-space.
pub const ALPHA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ddim,
    Ancestral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub kind: SamplerKind,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn ddim(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            kind: SamplerKind::Ddim,
            seed,
        }
    }
}

/// `x̂ = (z_t − σ_t·ε̂)/α_t`.
pub fn eps_to_x(z_t: &Tensor, eps: &Tensor, alpha: f64, sigma: f64) -> Result<Tensor> {
    if alpha <= ALPHA_FLOOR {
        return Err(Error::AlphaBelowFloor { alpha });
    }
    z_t.zip_map(eps, |z, e| (z - sigma * e) / alpha)
}

/// The model's x-space prediction for rows with per-row times. ε-models are
/// converted with [`eps_to_x`]; the caller must keep `t` away from 1 for them.
pub fn predict_x<M: Denoiser>(
    model: &M,
    z: &Tensor,
    ts: &[f64],
    conds: &[usize],
    schedule: &ContinuousSchedule,
) -> Result<Tensor> {
    let out = model.forward_batch(z, ts, conds)?;
    match model.parameterization() {
        Parameterization::X => Ok(out),
        Parameterization::Epsilon => {
            let cols = z.cols();
            let mut data = Vec::with_capacity(z.len());
            for (r, &t) in ts.iter().enumerate() {
                let (a, s) = schedule.alpha_sigma(t)?;
                if a <= ALPHA_FLOOR {
                    return Err(Error::Singular {
                        t,
                        what: "alpha_t at or below the conversion floor",
                    });
                }
                for c in 0..cols {
                    let i = r * cols + c;
                    data.push((z.data()[i] - s * out.data()[i]) / a);
                }
            }
            Tensor::new(z.shape().to_vec(), data)
        }
    }
}

/// `z_s = α_s·x̂ + (σ_s/σ_t)·(z_t − α_t·x̂)`.
pub fn ddim_step(
    z_t: &Tensor,
    x_hat: &Tensor,
    t: f64,
    s: f64,
    schedule: &ContinuousSchedule,
) -> Result<Tensor> {
    let rows = z_t.rows();
    ddim_step_rows(z_t, x_hat, &vec![t; rows], &vec![s; rows], schedule)
}

/// [`ddim_step`] with a separate `(t, s)` pair for every row.
pub fn ddim_step_rows(
    z_t: &Tensor,
    x_hat: &Tensor,
    ts: &[f64],
    ss: &[f64],
    schedule: &ContinuousSchedule,
) -> Result<Tensor> {
    z_t.expect_same_shape(x_hat, "ddim_step")?;
    let rows = z_t.rows();
    if ts.len() != rows || ss.len() != rows {
        return Err(Error::Shape {
            context: "ddim_step times per row",
            dim: 0,
            expected: rows,
            actual: ts.len().min(ss.len()),
        });
    }
    let cols = z_t.cols();
    let mut out = z_t.clone();
    for r in 0..rows {
        let (t, s) = (ts[r], ss[r]);
        if s > t {
            return Err(Error::InvalidArgument(format!(
                "ddim_step needs s <= t, got s = {s}, t = {t}"
            )));
        }
        if s == t {
            continue;
        }
        let (a_t, sig_t) = schedule.alpha_sigma(t)?;
        let (a_s, sig_s) = schedule.alpha_sigma(s)?;
        if sig_t == 0.0 {
            return Err(Error::Singular {
                t,
                what: "sigma_t is zero",
            });
        }
        let ratio = sig_s / sig_t;
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for (c, o) in row.iter_mut().enumerate() {
            let x = x_hat.data()[r * cols + c];
            let z = z_t.data()[r * cols + c];
            *o = a_s * x + ratio * (z - a_t * x);
        }
    }
    Ok(out)
}

/// One step of the ancestral sampler: posterior mean from `ε̂`, plus
/// `√β̃_n` times fresh Gaussian noise.
pub fn ancestral_step<R: Rng + ?Sized>(
    z_n: &Tensor,
    eps_hat: &Tensor,
    n: usize,
    discrete: &DiscreteSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    z_n.expect_same_shape(eps_hat, "ancestral_step")?;
    let beta = discrete.beta(n)?;
    let alpha = 1.0 - beta;
    let alpha_bar = discrete.alpha_bar(n)?;
    let var = discrete.posterior_variance(n)?;
    let coef = (1.0 - alpha) / (1.0 - alpha_bar).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let std = var.sqrt();
    let mut out = z_n.zip_map(eps_hat, |z, e| inv_sqrt_alpha * (z - coef * e))?;
    if std > 0.0 {
        for v in out.data_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v += std * g;
        }
    }
    Ok(out)
}

fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Draws one sample per entry of `conds`, starting from `z ~ N(0, I)`.
pub fn sample<M: Denoiser>(
    model: &M,
    conds: &[usize],
    config: &SamplerConfig,
    schedule: &ContinuousSchedule,
) -> Result<Tensor> {
    if config.steps == 0 {
        return Err(Error::InvalidArgument("sampler needs steps >= 1".into()));
    }
    if conds.is_empty() {
        return Err(Error::InvalidArgument("no conditions to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z = standard_normal(conds.len(), model.latent_dim(), &mut rng)?;
    match config.kind {
        SamplerKind::Ddim => ddim_loop(model, z, conds, config.steps, schedule),
        SamplerKind::Ancestral => {
            let discrete =
                DiscreteSchedule::build(config.steps, DEFAULT_BETA_START, DEFAULT_BETA_END)?;
            ancestral_loop(model, z, conds, &discrete, schedule, &mut rng)
        }
    }
}

/// Deterministic DDIM from `z` at `t = 1` down to `t = 0` over `steps`
/// uniform intervals.
pub fn ddim_loop<M: Denoiser>(
    model: &M,
    mut z: Tensor,
    conds: &[usize],
    steps: usize,
    schedule: &ContinuousSchedule,
) -> Result<Tensor> {
    let rows = z.rows();
    // ε-models cannot be converted at α = 0; start just below t = 1.
    let t_cap = match model.parameterization() {
        Parameterization::X => 1.0,
        Parameterization::Epsilon => 1.0 - schedule.t_min,
    };
    for i in (1..=steps).rev() {
        let t = (i as f64 / steps as f64).min(t_cap);
        let s = ((i - 1) as f64 / steps as f64).min(t);
        let ts = vec![t; rows];
        let x_hat = predict_x(model, &z, &ts, conds, schedule)?;
        z = ddim_step_rows(&z, &x_hat, &ts, &vec![s; rows], schedule)?;
    }
    Ok(z)
}

fn ancestral_loop<M: Denoiser>(
    model: &M,
    mut z: Tensor,
    conds: &[usize],
    discrete: &DiscreteSchedule,
    schedule: &ContinuousSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let rows = z.rows();
    for n in (1..=discrete.steps()).rev() {
        let alpha_bar = discrete.alpha_bar(n)?;
        let t = schedule.t_for_alpha_bar(alpha_bar);
        let ts = vec![t; rows];
        let out = model.forward_batch(&z, &ts, conds)?;
        let eps_hat = match model.parameterization() {
            Parameterization::Epsilon => out,
            Parameterization::X => {
                let a = alpha_bar.sqrt();
                let s = (1.0 - alpha_bar).sqrt();
                z.zip_map(&out, |zv, xv| (zv - a * xv) / s)?
            }
        };
        z = ancestral_step(&z, &eps_hat, n, discrete, rng)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Graph, Var};

    /// Ignores its input and predicts a fixed vector in the model's space.
    #[derive(Clone)]
    struct Constant {
        value: Vec<f64>,
        param: Parameterization,
    }

    impl Denoiser for Constant {
        fn parameterization(&self) -> Parameterization {
            self.param
        }
        fn set_parameterization(&mut self, p: Parameterization) {
            self.param = p;
        }
        fn latent_dim(&self) -> usize {
            self.value.len()
        }
        fn params(&self) -> &[Tensor] {
            &[]
        }
        fn params_mut(&mut self) -> &mut [Tensor] {
            &mut []
        }
        fn forward_batch(&self, z: &Tensor, _ts: &[f64], _conds: &[usize]) -> Result<Tensor> {
            let data = (0..z.rows()).flat_map(|_| self.value.clone()).collect();
            Tensor::matrix(z.rows(), self.value.len(), data)
        }
        fn forward_graph(
            &self,
            g: &mut Graph,
            _params: &[Var],
            z: Var,
            ts: &[f64],
            conds: &[usize],
        ) -> Result<Var> {
            let v = self.forward_batch(g.value(z), ts, conds)?;
            Ok(g.leaf(v))
        }
    }

    fn scalar(v: f64) -> Tensor {
        Tensor::matrix(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn eps_to_x_examples() {
        let z = scalar(1.0);
        assert_eq!(eps_to_x(&z, &scalar(3.0), 1.0, 0.0).unwrap(), z);
        let x = eps_to_x(&z, &scalar(0.5), 0.8, 0.6).unwrap();
        assert!((x.data()[0] - 0.875).abs() < 1e-15);
        assert!(matches!(
            eps_to_x(&z, &scalar(0.5), 1e-7, 1.0),
            Err(Error::AlphaBelowFloor { .. })
        ));
    }

    #[test]
    fn eps_to_x_inverts_forward_map() {
        let sched = ContinuousSchedule::default();
        let (a, s) = sched.alpha_sigma(0.3).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.4, -1.2, 2.5]).unwrap();
        let e = Tensor::matrix(1, 3, vec![-0.7, 0.1, 1.9]).unwrap();
        let z = x.scale(a).add(&e.scale(s)).unwrap();
        let back = eps_to_x(&z, &e, a, s).unwrap();
        for (u, v) in back.data().iter().zip(x.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_step_examples() {
        let sched = ContinuousSchedule::default();
        // pure signal stays pure signal
        let x = scalar(0.7);
        let (a_t, _) = sched.alpha_sigma(0.6).unwrap();
        let (a_s, _) = sched.alpha_sigma(0.2).unwrap();
        let z = ddim_step(&x.scale(a_t), &x, 0.6, 0.2, &sched).unwrap();
        assert!((z.data()[0] - a_s * 0.7).abs() < 1e-15);
        // identity step
        let z_t = scalar(1.3);
        assert_eq!(ddim_step(&z_t, &x, 0.4, 0.4, &sched).unwrap(), z_t);
        // hand-evaluated values from cos/sin at π/4 and π/8
        let z = ddim_step(&scalar(1.0), &scalar(0.5), 0.5, 0.25, &sched).unwrap();
        let hand = 0.9238795 * 0.5 + (0.3826834 / 0.7071068) * (1.0 - 0.7071068 * 0.5);
        assert!((z.data()[0] - hand).abs() < 1e-6);
        assert!((z.data()[0] - 0.8118).abs() < 1e-4);
        assert!(ddim_step(&z_t, &x, 0.2, 0.4, &sched).is_err());
    }

    #[test]
    fn ddim_step_at_t_zero_only_allows_identity() {
        let sched = ContinuousSchedule::default();
        let z = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        assert_eq!(ddim_step(&z, &z, 0.0, 0.0, &sched).unwrap(), z);
        assert!(ddim_step(&z, &z, 0.0, -0.1, &sched).is_err());
    }

    #[test]
    fn ancestral_step_examples() {
        let d = DiscreteSchedule::build(2, 0.1, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // ε̂ = 0 at n = 1: deterministic z/√(1−β)
        let z = scalar(1.0);
        let out = ancestral_step(&z, &scalar(0.0), 1, &d, &mut rng).unwrap();
        assert_eq!(out.data()[0], 1.0 / 0.9f64.sqrt());
        // n = 2 mean, checked by removing the noise draw
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = r1.clone();
        let out = ancestral_step(&z, &scalar(1.0), 2, &d, &mut r1).unwrap();
        let g: f64 = StandardNormal.sample(&mut r2);
        let mean = (1.0 / 0.9f64.sqrt()) * (1.0 - 0.1 / 0.19f64.sqrt());
        assert!((mean - 0.8122).abs() < 1e-4);
        let var = d.posterior_variance(2).unwrap();
        assert!((var - 0.0526).abs() < 1e-4);
        assert!((out.data()[0] - (mean + var.sqrt() * g)).abs() < 1e-15);
        assert!(ancestral_step(&z, &scalar(1.0), 3, &d, &mut rng).is_err());
    }

    #[test]
    fn single_step_ddim_returns_one_shot_prediction() {
        let sched = ContinuousSchedule::default();
        let m = Constant {
            value: vec![0.25, -1.5],
            param: Parameterization::X,
        };
        let out = sample(&m, &[0, 1, 2], &SamplerConfig::ddim(1, 3), &sched).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), &[0.25, -1.5]);
        }
    }

    #[test]
    fn constant_predictor_ddim_returns_constant_for_any_steps() {
        let sched = ContinuousSchedule::default();
        let m = Constant {
            value: vec![0.8],
            param: Parameterization::X,
        };
        for steps in [2, 3, 7, 64] {
            let out = sample(&m, &[0; 5], &SamplerConfig::ddim(steps, 1), &sched).unwrap();
            for v in out.data() {
                assert!((v - 0.8).abs() < 1e-12, "steps {steps}: {v}");
            }
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let sched = ContinuousSchedule::default();
        let m = Constant {
            value: vec![0.1, 0.2],
            param: Parameterization::Epsilon,
        };
        for kind in [SamplerKind::Ddim, SamplerKind::Ancestral] {
            let cfg = SamplerConfig {
                steps: 20,
                kind,
                seed: 42,
            };
            let a = sample(&m, &[0, 0], &cfg, &sched).unwrap();
            let b = sample(&m, &[0, 0], &cfg, &sched).unwrap();
            assert_eq!(a, b);
            assert!(a.all_finite());
        }
    }

    #[test]
    fn semigroup_for_constant_predictor() {
        let sched = ContinuousSchedule::default();
        let x = Tensor::matrix(1, 2, vec![0.3, -0.9]).unwrap();
        let z = Tensor::matrix(1, 2, vec![1.1, 0.4]).unwrap();
        let one = ddim_step(&z, &x, 0.9, 0.2, &sched).unwrap();
        let mid = ddim_step(&z, &x, 0.9, 0.55, &sched).unwrap();
        let two = ddim_step(&mid, &x, 0.55, 0.2, &sched).unwrap();
        for (a, b) in one.data().iter().zip(two.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
