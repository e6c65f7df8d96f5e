//! Base diffusion training.
//!
//! Each update draws `(class, z_0)` pairs, a time `t ~ U[t_min, 1)` and noise
//! `ε` per sample, forms `z_t = α_t z_0 + σ_t ε`, and regresses the network
//! output onto `ε` or `z_0` depending on its parameterization. The strategy
//! weight is defined in x-space; ε-models receive the equivalent
//! `w(snr)/snr` so that both parameterizations minimise the same objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::ToyDataset;
use crate::error::{Error, Result};
use crate::nnet::{
    cosine_lr, loss_and_gradients, AdamConfig, AdamState, Denoiser, DenoiserModel, ModelConfig,
    Parameterization, Tensor,
};
use crate::schedule::ContinuousSchedule;
use crate::weighting::{WeightKind, WeightStrategy};

/// Loss above which training is treated as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub updates: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Learning rate reached at the last update under cosine annealing from
    /// `adam.lr`.
    pub lr_end: f64,
    pub seed: u64,
    pub parameterization: Parameterization,
    pub strategy: WeightStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            updates: 20_000,
            batch_size: 256,
            adam: AdamConfig::default(),
            lr_end: AdamConfig::default().lr,
            seed: 0,
            parameterization: Parameterization::Epsilon,
            strategy: WeightStrategy::with_default_gamma(WeightKind::EpsilonSnr),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// One entry per update.
    pub losses: Vec<f64>,
}

/// A noised training batch.
#[derive(Debug, Clone)]
pub struct NoisedBatch {
    pub conds: Vec<usize>,
    pub z0: Tensor,
    pub eps: Tensor,
    pub z_t: Tensor,
    pub ts: Vec<f64>,
    pub snrs: Vec<f64>,
}

pub fn noised_batch<R: Rng + ?Sized>(
    dataset: &ToyDataset,
    batch_size: usize,
    schedule: &ContinuousSchedule,
    rng: &mut R,
) -> Result<NoisedBatch> {
    let (conds, z0) = dataset.draw_batch(batch_size, rng)?;
    let cols = z0.cols();
    let mut ts = Vec::with_capacity(batch_size);
    let mut snrs = Vec::with_capacity(batch_size);
    let mut eps = Vec::with_capacity(z0.len());
    let mut z_t = Vec::with_capacity(z0.len());
    for r in 0..batch_size {
        let u: f64 = rng.random();
        let t = schedule.t_min + (1.0 - schedule.t_min) * u;
        let (a, s) = schedule.alpha_sigma(t)?;
        for c in 0..cols {
            let e: f64 = StandardNormal.sample(rng);
            eps.push(e);
            z_t.push(a * z0.data()[r * cols + c] + s * e);
        }
        ts.push(t);
        snrs.push(schedule.snr(t)?);
    }
    Ok(NoisedBatch {
        conds,
        eps: Tensor::matrix(batch_size, cols, eps)?,
        z_t: Tensor::matrix(batch_size, cols, z_t)?,
        z0,
        ts,
        snrs,
    })
}

/// Per-row loss weights and regression target for `model`'s output space.
pub fn targets_for<'a>(
    param: Parameterization,
    batch: &'a NoisedBatch,
    strategy: &WeightStrategy,
) -> Result<(&'a Tensor, Vec<f64>)> {
    let mut weights = Vec::with_capacity(batch.snrs.len());
    for &snr in &batch.snrs {
        let w = strategy.weight(snr)?;
        weights.push(match param {
            Parameterization::X => w,
            Parameterization::Epsilon => w / snr,
        });
    }
    let target = match param {
        Parameterization::X => &batch.z0,
        Parameterization::Epsilon => &batch.eps,
    };
    Ok((target, weights))
}

/// Trains `model` in place of the default initialisation.
pub fn train<M: Denoiser>(
    mut model: M,
    config: &TrainConfig,
    dataset: &ToyDataset,
    schedule: &ContinuousSchedule,
) -> Result<TrainOutcome<M>> {
    dataset.validate()?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("train batch_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(model.params(), config.adam);
    let mut losses = Vec::with_capacity(config.updates);
    let param = model.parameterization();

    for update in 0..config.updates {
        let batch = noised_batch(dataset, config.batch_size, schedule, &mut rng)?;
        let (target, weights) = targets_for(param, &batch, &config.strategy)?;
        let (loss, grads) = loss_and_gradients(&model, |g, params| {
            let z = g.leaf(batch.z_t.clone());
            let y = g.leaf(target.clone());
            let out = model.forward_graph(g, params, z, &batch.ts, &batch.conds)?;
            g.weighted_sq_err(out, y, &weights)
        })?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            return Err(Error::Diverged { update, loss });
        }
        losses.push(loss);
        adam.config.lr = cosine_lr(config.adam.lr, config.lr_end, update, config.updates);
        adam.step(model.params_mut(), &grads)?;
    }
    Ok(TrainOutcome { model, losses })
}

/// Initialises a [`DenoiserModel`] from `config.seed` and trains it.
pub fn train_base(
    config: &TrainConfig,
    model_config: &ModelConfig,
    dataset: &ToyDataset,
    schedule: &ContinuousSchedule,
) -> Result<TrainOutcome<DenoiserModel>> {
    if dataset.latent_dim != model_config.latent_dim
        || dataset.num_classes != model_config.num_classes
    {
        return Err(Error::InvalidArgument(format!(
            "dataset ({} classes, dim {}) does not match model ({} classes, dim {})",
            dataset.num_classes,
            dataset.latent_dim,
            model_config.num_classes,
            model_config.latent_dim
        )));
    }
    let mut mc = model_config.clone();
    mc.parameterization = config.parameterization;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = DenoiserModel::new(mc, &mut rng)?;
    train(model, config, dataset, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::eps_to_x;

    fn small_model() -> ModelConfig {
        ModelConfig {
            hidden: vec![16, 16],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_updates_returns_initial_model() {
        let cfg = TrainConfig {
            updates: 0,
            ..TrainConfig::default()
        };
        let ds = ToyDataset::default();
        let out = train_base(&cfg, &small_model(), &ds, &ContinuousSchedule::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = DenoiserModel::new(small_model(), &mut rng).unwrap();
        assert_eq!(out.model, init);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn eps_loss_equals_snr_weighted_x_loss() {
        let sched = ContinuousSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let t: f64 = sched.t_min + (1.0 - 2.0 * sched.t_min) * rng.random::<f64>();
            let (a, s) = sched.alpha_sigma(t).unwrap();
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e_hat: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z: Vec<f64> = x.iter().zip(&e).map(|(xv, ev)| a * xv + s * ev).collect();
            let z = Tensor::matrix(1, 3, z).unwrap();
            let e_hat_t = Tensor::matrix(1, 3, e_hat.clone()).unwrap();
            let x_hat = eps_to_x(&z, &e_hat_t, a, s).unwrap();
            let eps_loss: f64 = e.iter().zip(&e_hat).map(|(u, v)| (u - v).powi(2)).sum();
            let x_loss: f64 = x
                .iter()
                .zip(x_hat.data())
                .map(|(u, v)| (u - v).powi(2))
                .sum();
            let snr = a * a / (s * s);
            assert!(
                (eps_loss - snr * x_loss).abs() <= 1e-9 * eps_loss.max(1.0),
                "t = {t}: {eps_loss} vs {}",
                snr * x_loss
            );
        }
    }

    #[test]
    fn eps_snr_strategy_gives_unit_eps_weights() {
        let sched = ContinuousSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = noised_batch(&ToyDataset::default(), 64, &sched, &mut rng).unwrap();
        let strat = WeightStrategy::with_default_gamma(WeightKind::EpsilonSnr);
        let (target, w) = targets_for(Parameterization::Epsilon, &batch, &strat).unwrap();
        assert!(w.iter().all(|&v| v == 1.0));
        assert_eq!(target, &batch.eps);
    }

    #[test]
    fn single_point_loss_decreases() {
        let ds = ToyDataset {
            num_classes: 1,
            stddev: 0.0,
            ..ToyDataset::default()
        };
        let mc = ModelConfig {
            num_classes: 1,
            ..small_model()
        };
        let cfg = TrainConfig {
            updates: 600,
            batch_size: 64,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            lr_end: 3e-3,
            parameterization: Parameterization::X,
            strategy: WeightStrategy::with_default_gamma(WeightKind::BalancedSnrAware),
            ..TrainConfig::default()
        };
        let out = train_base(&cfg, &mc, &ds, &ContinuousSchedule::default()).unwrap();
        let head: f64 = out.losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = out.losses[550..].iter().sum::<f64>() / 50.0;
        assert!(tail < head * 0.1, "head {head}, tail {tail}");
    }

    #[test]
    fn training_is_seed_reproducible() {
        let cfg = TrainConfig {
            updates: 30,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let ds = ToyDataset::default();
        let sched = ContinuousSchedule::default();
        let a = train_base(&cfg, &small_model(), &ds, &sched).unwrap();
        let b = train_base(&cfg, &small_model(), &ds, &sched).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model, b.model);
        assert!(a.losses.iter().all(|l| l.is_finite()));
    }
}
