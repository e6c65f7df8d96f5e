//! Progressive distillation.
//!
//! A round copies the teacher into an x-parameterized student and regresses
//! the student's one-step prediction at `t = i/N` onto the `z̃_0` that
//! reproduces two teacher DDIM half-steps `t → t − 0.5/N → t − 1/N`. The
//! student then becomes the teacher and the step count halves.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::ToyDataset;
use crate::error::{Error, Result};
use crate::nnet::{cosine_lr, loss_and_gradients, AdamConfig, AdamState, Denoiser, Parameterization, Tensor};
use crate::sampler::{ddim_step_rows, predict_x};
use crate::schedule::ContinuousSchedule;
use crate::weighting::{WeightKind, WeightStrategy};

/// Targets whose denominator magnitude is at or below this are rejected.
pub const DENOMINATOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Number of halving rounds `K`.
    pub rounds: usize,
    /// Teacher step count of the first round; round `k` trains a student for
    /// `n_start / 2^k` steps.
    pub n_start: usize,
    /// Optimizer update budget per round.
    pub steps_per_round: usize,
    pub batch_size: usize,
    pub strategy: WeightStrategy,
    pub adam: AdamConfig,
    /// Learning rate reached at the end of the update budget under cosine
    /// annealing from `adam.lr`.
    pub lr_end: f64,
    pub seed: u64,
    /// Updates per moving-average window of the plateau test; 0 disables it.
    pub plateau_window: usize,
    /// Stop once a window's mean loss improves on the previous window's by
    /// less than this relative amount.
    pub plateau_tol: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            n_start: 64,
            steps_per_round: 2000,
            batch_size: 256,
            strategy: WeightStrategy::with_default_gamma(WeightKind::BalancedSnrAware),
            adam: AdamConfig::default(),
            lr_end: AdamConfig::default().lr,
            seed: 0,
            plateau_window: 200,
            plateau_tol: 1e-4,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("distill rounds must be >= 1".into()));
        }
        let divisor = 1usize
            .checked_shl(self.rounds as u32)
            .filter(|d| *d != 0 && self.rounds < usize::BITS as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("{} rounds is too many", self.rounds)))?;
        if self.n_start == 0 || self.n_start % divisor != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_start {} must be a positive multiple of 2^{} = {divisor}",
                self.n_start, self.rounds
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("distill batch_size must be >= 1".into()));
        }
        if !(self.plateau_tol.is_finite() && self.plateau_tol >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "plateau_tol {} must be finite and >= 0",
                self.plateau_tol
            )));
        }
        Ok(())
    }

    /// `(teacher_steps, student_steps)` of 1-based round `k`.
    pub fn round_steps(&self, k: usize) -> (usize, usize) {
        let teacher = self.n_start >> (k - 1);
        (teacher, teacher / 2)
    }
}

/// Times at which the teacher is queried for x̂: ε-teachers cannot be
/// converted at `α = 0`, so their queries stop at `1 − t_min`.
fn query_times<M: Denoiser>(teacher: &M, ts: &[f64], schedule: &ContinuousSchedule) -> Vec<f64> {
    match teacher.parameterization() {
        Parameterization::X => ts.to_vec(),
        Parameterization::Epsilon => ts.iter().map(|&t| t.min(1.0 - schedule.t_min)).collect(),
    }
}

/// Per-row teacher targets for a student with `student_steps` steps.
/// Returns `(z̃_0, z_{t''})`.
pub fn teacher_targets<M: Denoiser>(
    teacher: &M,
    z_t: &Tensor,
    ts: &[f64],
    student_steps: usize,
    conds: &[usize],
    schedule: &ContinuousSchedule,
) -> Result<(Tensor, Tensor)> {
    if student_steps == 0 {
        return Err(Error::InvalidArgument("student step count must be >= 1".into()));
    }
    let n = student_steps as f64;
    let mut t1 = Vec::with_capacity(ts.len());
    let mut t2 = Vec::with_capacity(ts.len());
    for &t in ts {
        let half = t - 0.5 / n;
        let full = t - 1.0 / n;
        if full < -1e-12 {
            return Err(Error::OutOfRange {
                name: "t - 1/N",
                value: full,
                lo: 0.0,
                hi: 1.0,
            });
        }
        t1.push(half);
        t2.push(full.max(0.0));
    }

    let x1 = predict_x(teacher, z_t, &query_times(teacher, ts, schedule), conds, schedule)?;
    let z1 = ddim_step_rows(z_t, &x1, ts, &t1, schedule)?;
    let x2 = predict_x(teacher, &z1, &query_times(teacher, &t1, schedule), conds, schedule)?;
    let z2 = ddim_step_rows(&z1, &x2, &t1, &t2, schedule)?;

    let cols = z_t.cols();
    let mut target = Vec::with_capacity(z_t.len());
    for (r, (&t, &tpp)) in ts.iter().zip(&t2).enumerate() {
        let (a_t, s_t) = schedule.alpha_sigma(t)?;
        let (a_pp, s_pp) = schedule.alpha_sigma(tpp)?;
        if s_t == 0.0 {
            return Err(Error::Singular {
                t,
                what: "sigma_t = 0 in target",
            });
        }
        let ratio = s_pp / s_t;
        let denom = a_pp - ratio * a_t;
        if denom.abs() <= DENOMINATOR_FLOOR {
            return Err(Error::DegenerateTarget {
                t,
                steps: student_steps,
                denominator: denom,
            });
        }
        for c in 0..cols {
            let i = r * cols + c;
            target.push((z2.data()[i] - ratio * z_t.data()[i]) / denom);
        }
    }
    Ok((Tensor::matrix(z_t.rows(), cols, target)?, z2))
}

/// [`teacher_targets`] with one time and condition shared by all rows.
pub fn teacher_target<M: Denoiser>(
    teacher: &M,
    z_t: &Tensor,
    t: f64,
    student_steps: usize,
    cond: usize,
    schedule: &ContinuousSchedule,
) -> Result<(Tensor, Tensor)> {
    let rows = z_t.rows();
    teacher_targets(
        teacher,
        z_t,
        &vec![t; rows],
        student_steps,
        &vec![cond; rows],
        schedule,
    )
}

/// One regression batch of a round.
#[derive(Debug, Clone)]
pub struct DistillBatch {
    pub conds: Vec<usize>,
    pub z_t: Tensor,
    pub ts: Vec<f64>,
    pub snrs: Vec<f64>,
    pub weights: Vec<f64>,
    pub targets: Tensor,
}

pub fn distill_batch<M: Denoiser, R: Rng + ?Sized>(
    teacher: &M,
    dataset: &ToyDataset,
    batch_size: usize,
    student_steps: usize,
    strategy: &WeightStrategy,
    schedule: &ContinuousSchedule,
    rng: &mut R,
) -> Result<DistillBatch> {
    let (conds, z0) = dataset.draw_batch(batch_size, rng)?;
    let cols = z0.cols();
    let mut ts = Vec::with_capacity(batch_size);
    let mut snrs = Vec::with_capacity(batch_size);
    let mut weights = Vec::with_capacity(batch_size);
    let mut z_t = Vec::with_capacity(z0.len());
    for r in 0..batch_size {
        let i = rng.random_range(1..=student_steps);
        let t = i as f64 / student_steps as f64;
        let (a, s) = schedule.alpha_sigma(t)?;
        for c in 0..cols {
            let e: f64 = StandardNormal.sample(rng);
            z_t.push(a * z0.data()[r * cols + c] + s * e);
        }
        let snr = schedule.snr(t)?;
        ts.push(t);
        snrs.push(snr);
        weights.push(strategy.weight(snr)?);
    }
    let z_t = Tensor::matrix(batch_size, cols, z_t)?;
    let (targets, _) = teacher_targets(teacher, &z_t, &ts, student_steps, &conds, schedule)?;
    Ok(DistillBatch {
        conds,
        z_t,
        ts,
        snrs,
        weights,
        targets,
    })
}

/// Loss contribution of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleLoss {
    pub t: f64,
    pub snr: f64,
    pub weight: f64,
    pub sq_err: f64,
    /// `weight · sq_err`.
    pub loss: f64,
}

/// Per-sample records whose mean equals the batch loss bit for bit.
pub fn sample_losses(batch: &DistillBatch, prediction: &Tensor) -> Vec<SampleLoss> {
    (0..batch.ts.len())
        .map(|r| {
            let sq_err: f64 = prediction
                .row(r)
                .iter()
                .zip(batch.targets.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let weight = batch.weights[r];
            SampleLoss {
                t: batch.ts[r],
                snr: batch.snrs[r],
                weight,
                sq_err,
                loss: weight * sq_err,
            }
        })
        .collect()
}

/// What an observer sees after each optimizer update.
#[derive(Debug)]
pub struct UpdateEvent<'a> {
    pub round: usize,
    pub update: usize,
    pub batch: &'a DistillBatch,
    /// Student output before the update.
    pub prediction: &'a Tensor,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub updates: usize,
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

impl RoundOutcome {
    /// Mean of the last `window` losses (all of them if fewer).
    pub fn final_loss(&self, window: usize) -> f64 {
        if self.losses.is_empty() {
            return f64::NAN;
        }
        let w = window.clamp(1, self.losses.len());
        let tail = &self.losses[self.losses.len() - w..];
        tail.iter().sum::<f64>() / w as f64
    }
}

/// Trains one student for `student_steps` steps against `teacher`.
/// Round `k` draws from RNG stream `k + 1`; streams 0 and 1 belong to model
/// initialization and base training.
pub fn distill_round<M, F>(
    teacher: &M,
    config: &DistillConfig,
    round: usize,
    teacher_steps: usize,
    dataset: &ToyDataset,
    schedule: &ContinuousSchedule,
    mut observer: F,
) -> Result<(M, RoundOutcome)>
where
    M: Denoiser,
    F: FnMut(&UpdateEvent<'_>),
{
    if teacher_steps < 2 || teacher_steps % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "teacher step count {teacher_steps} must be even and >= 2"
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("distill batch_size must be >= 1".into()));
    }
    let student_steps = teacher_steps / 2;
    let mut student = teacher.clone();
    student.set_parameterization(Parameterization::X);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(round as u64 + 1);
    let mut adam = AdamState::new(student.params(), config.adam);
    let mut losses = Vec::with_capacity(config.steps_per_round);
    let mut prev_window: Option<f64> = None;
    let mut window_sum = 0.0;
    let mut stopped_early = false;

    for update in 0..config.steps_per_round {
        let batch = distill_batch(
            teacher,
            dataset,
            config.batch_size,
            student_steps,
            &config.strategy,
            schedule,
            &mut rng,
        )?;
        let mut prediction = None;
        let (loss, grads) = loss_and_gradients(&student, |g, params| {
            let z = g.leaf(batch.z_t.clone());
            let y = g.leaf(batch.targets.clone());
            let out = student.forward_graph(g, params, z, &batch.ts, &batch.conds)?;
            prediction = Some(g.value(out).clone());
            g.weighted_sq_err(out, y, &batch.weights)
        })?;
        let prediction = prediction.expect("forward pass recorded");
        if !loss.is_finite() {
            let records = sample_losses(&batch, &prediction);
            let bad = records
                .iter()
                .find(|r| !r.loss.is_finite())
                .copied()
                .unwrap_or(records[0]);
            return Err(Error::NonFiniteLoss {
                t: bad.t,
                weight: bad.weight,
                loss: bad.loss,
            });
        }
        observer(&UpdateEvent {
            round,
            update,
            batch: &batch,
            prediction: &prediction,
            loss,
        });
        adam.config.lr = cosine_lr(config.adam.lr, config.lr_end, update, config.steps_per_round);
        adam.step(student.params_mut(), &grads)?;
        losses.push(loss);

        if config.plateau_window > 0 {
            window_sum += loss;
            if losses.len() % config.plateau_window == 0 {
                let mean = window_sum / config.plateau_window as f64;
                window_sum = 0.0;
                if let Some(prev) = prev_window {
                    if (prev - mean) / prev.abs().max(f64::MIN_POSITIVE) < config.plateau_tol {
                        stopped_early = true;
                        break;
                    }
                }
                prev_window = Some(mean);
            }
        }
    }
    Ok((
        student,
        RoundOutcome {
            updates: losses.len(),
            losses,
            stopped_early,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub teacher_steps: usize,
    pub student_steps: usize,
    pub updates: usize,
    pub stopped_early: bool,
    pub final_loss: f64,
    pub wall_clock_secs: f64,
    pub losses: Vec<f64>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistillTrace {
    pub rounds: Vec<RoundRecord>,
}

impl DistillTrace {
    /// Losses of every round, ignoring timing.
    pub fn all_losses(&self) -> Vec<&[f64]> {
        self.rounds.iter().map(|r| r.losses.as_slice()).collect()
    }
}

/// Runs all rounds, handing each finished student to `on_round`, which may
/// return a checkpoint reference for the trace.
pub fn progressive_distill_with<M, F>(
    teacher: M,
    config: &DistillConfig,
    dataset: &ToyDataset,
    schedule: &ContinuousSchedule,
    mut on_round: F,
) -> Result<(M, DistillTrace)>
where
    M: Denoiser,
    F: FnMut(&RoundRecord, &M) -> Result<Option<String>>,
{
    config.validate()?;
    dataset.validate()?;
    let mut teacher = teacher;
    let mut trace = DistillTrace::default();
    for k in 1..=config.rounds {
        let (teacher_steps, student_steps) = config.round_steps(k);
        let start = Instant::now();
        let (student, outcome) =
            distill_round(&teacher, config, k, teacher_steps, dataset, schedule, |_| {})?;
        let mut record = RoundRecord {
            round: k,
            teacher_steps,
            student_steps,
            updates: outcome.updates,
            stopped_early: outcome.stopped_early,
            final_loss: outcome.final_loss(config.plateau_window),
            wall_clock_secs: start.elapsed().as_secs_f64(),
            losses: outcome.losses,
            checkpoint: None,
        };
        record.checkpoint = on_round(&record, &student)?;
        trace.rounds.push(record);
        teacher = student;
    }
    Ok((teacher, trace))
}

pub fn progressive_distill<M: Denoiser>(
    teacher: M,
    config: &DistillConfig,
    dataset: &ToyDataset,
    schedule: &ContinuousSchedule,
) -> Result<(M, DistillTrace)> {
    progressive_distill_with(teacher, config, dataset, schedule, |_, _| Ok(None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{DenoiserModel, Graph, ModelConfig, Var};
    use crate::sampler::ddim_step;

    /// `x̂ = a·z + b` with scalar parameters shared across dimensions.
    #[derive(Clone, Debug, PartialEq)]
    struct Linear {
        params: Vec<Tensor>,
        param: Parameterization,
        dim: usize,
    }

    impl Linear {
        fn new(a: f64, b: f64, dim: usize, param: Parameterization) -> Self {
            Self {
                params: vec![
                    Tensor::matrix(1, 1, vec![a]).unwrap(),
                    Tensor::matrix(1, 1, vec![b]).unwrap(),
                ],
                param,
                dim,
            }
        }
        fn ab(&self) -> (f64, f64) {
            (self.params[0].data()[0], self.params[1].data()[0])
        }
    }

    impl Denoiser for Linear {
        fn parameterization(&self) -> Parameterization {
            self.param
        }
        fn set_parameterization(&mut self, p: Parameterization) {
            self.param = p;
        }
        fn latent_dim(&self) -> usize {
            self.dim
        }
        fn params(&self) -> &[Tensor] {
            &self.params
        }
        fn params_mut(&mut self) -> &mut [Tensor] {
            &mut self.params
        }
        fn forward_batch(&self, z: &Tensor, _ts: &[f64], _conds: &[usize]) -> Result<Tensor> {
            let (a, b) = self.ab();
            Ok(z.map(|v| a * v + b))
        }
        fn forward_graph(
            &self,
            g: &mut Graph,
            params: &[Var],
            z: Var,
            _ts: &[f64],
            _conds: &[usize],
        ) -> Result<Var> {
            let rows = g.value(z).rows();
            let cols = g.value(z).cols();
            let ones = g.leaf(Tensor::full(&[rows, 1], 1.0));
            let across = g.leaf(Tensor::full(&[1, cols], 1.0));
            let a_row = g.matmul(params[0], across)?;
            let a_full = g.matmul(ones, a_row)?;
            let b_row = g.matmul(params[1], across)?;
            let b_full = g.matmul(ones, b_row)?;
            let az = g.mul(z, a_full)?;
            g.add(az, b_full)
        }
    }

    fn sched() -> ContinuousSchedule {
        ContinuousSchedule::default()
    }

    #[test]
    fn constant_teacher_target_is_exact() {
        let teacher = Linear::new(0.0, 0.7, 1, Parameterization::X);
        let z = Tensor::matrix(3, 1, vec![-1.0, 0.2, 1.5]).unwrap();
        for &(t, n) in &[(1.0, 4), (0.5, 4), (0.25, 4), (1.0 / 8.0, 8)] {
            let (target, _) = teacher_target(&teacher, &z, t, n, 0, &sched()).unwrap();
            for v in target.data() {
                assert!((v - 0.7).abs() < 1e-12, "t = {t}: {v}");
            }
        }
    }

    #[test]
    fn scalar_eps_teacher_oracle() {
        // ε̂ ≡ 0 teacher, N = 4, t = 1, z_t = 1: the query at t = 1 is moved
        // to 1 − t_min, where x̂ = z/α.
        let s = sched();
        let teacher = Linear::new(0.0, 0.0, 1, Parameterization::Epsilon);
        let z = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let (target, zpp) = teacher_target(&teacher, &z, 1.0, 4, 0, &s).unwrap();

        let (aq, _) = s.alpha_sigma(1.0 - s.t_min).unwrap();
        let x1 = 1.0 / aq;
        let (a1, s1) = s.alpha_sigma(1.0).unwrap();
        let (ah, sh) = s.alpha_sigma(0.875).unwrap();
        let zh = ah * x1 + (sh / s1) * (1.0 - a1 * x1);
        let x2 = zh / ah;
        let (app, spp) = s.alpha_sigma(0.75).unwrap();
        let zpp_oracle = app * x2 + (spp / sh) * (zh - ah * x2);
        let ratio = spp / s1;
        let oracle = (zpp_oracle - ratio * 1.0) / (app - ratio * a1);
        assert!((zpp.data()[0] - zpp_oracle).abs() < 1e-12);
        assert!((target.data()[0] - oracle).abs() < 1e-9 * oracle.abs().max(1.0));
    }

    #[test]
    fn target_inverts_single_step() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mc = ModelConfig {
            hidden: vec![8],
            ..ModelConfig::default()
        };
        for trial in 0..50 {
            let teacher = DenoiserModel::new(mc.clone().with_x(), &mut rng).unwrap();
            let n = [1usize, 2, 4, 8, 16][trial % 5];
            let i = rng.random_range(1..=n);
            let t = i as f64 / n as f64;
            let z = Tensor::matrix(4, 2, (0..8).map(|_| StandardNormal.sample(&mut rng)).collect())
                .unwrap();
            let (target, zpp) = teacher_target(&teacher, &z, t, n, trial % 8, &s).unwrap();
            let tpp = (t - 1.0 / n as f64).max(0.0);
            let again = ddim_step(&z, &target, t, tpp, &s).unwrap();
            for (u, v) in again.data().iter().zip(zpp.data()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    trait WithX {
        fn with_x(self) -> Self;
    }
    impl WithX for ModelConfig {
        fn with_x(mut self) -> Self {
            self.parameterization = Parameterization::X;
            self
        }
    }

    fn small_config(updates: usize) -> DistillConfig {
        DistillConfig {
            rounds: 1,
            n_start: 8,
            steps_per_round: updates,
            batch_size: 32,
            plateau_window: 0,
            ..DistillConfig::default()
        }
    }

    #[test]
    fn zero_updates_copy_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mc = ModelConfig {
            hidden: vec![8, 8],
            ..ModelConfig::default()
        };
        let teacher = DenoiserModel::new(mc, &mut rng).unwrap();
        let (student, out) = distill_round(
            &teacher,
            &small_config(0),
            1,
            8,
            &ToyDataset::default(),
            &sched(),
            |_| {},
        )
        .unwrap();
        assert_eq!(student.params(), teacher.params());
        assert_eq!(student.parameterization(), Parameterization::X);
        assert_eq!(out.updates, 0);
    }

    #[test]
    fn rejects_odd_teacher_steps_and_bad_configs() {
        let teacher = Linear::new(1.0, 0.0, 2, Parameterization::X);
        let ds = ToyDataset::default();
        for n in [0, 1, 3] {
            assert!(distill_round(&teacher, &small_config(1), 1, n, &ds, &sched(), |_| {}).is_err());
        }
        let bad = DistillConfig {
            rounds: 3,
            n_start: 12,
            ..DistillConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero = DistillConfig {
            rounds: 0,
            ..DistillConfig::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn logged_losses_are_weight_times_error() {
        let teacher = Linear::new(0.5, 0.1, 2, Parameterization::X);
        let mut checked = 0;
        distill_round(
            &teacher,
            &small_config(20),
            1,
            8,
            &ToyDataset::default(),
            &sched(),
            |ev| {
                let recs = sample_losses(ev.batch, ev.prediction);
                let mut total = 0.0;
                for (r, rec) in recs.iter().enumerate() {
                    let w = ev.batch.strategy_weight_check(r);
                    assert_eq!(rec.weight, w);
                    assert_eq!(rec.loss, rec.weight * rec.sq_err);
                    total += rec.loss;
                }
                assert_eq!(total / recs.len() as f64, ev.loss);
                checked += 1;
            },
        )
        .unwrap();
        assert_eq!(checked, 20);
    }

    impl DistillBatch {
        fn strategy_weight_check(&self, r: usize) -> f64 {
            WeightStrategy::with_default_gamma(WeightKind::BalancedSnrAware)
                .weight(self.snrs[r])
                .unwrap()
        }
    }

    #[test]
    fn linear_student_reaches_normal_equations() {
        // A one-step student only sees t = 1, where the target is an affine
        // function of z_t, so every batch shares the least-squares optimum.
        let teacher = Linear::new(0.6, 0.3, 1, Parameterization::X);
        let ds = ToyDataset {
            num_classes: 2,
            latent_dim: 1,
            radius: 1.0,
            stddev: 0.3,
            seed: 0,
        };
        let config = DistillConfig {
            rounds: 1,
            n_start: 2,
            steps_per_round: 3000,
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            lr_end: 1e-2,
            plateau_window: 0,
            ..DistillConfig::default()
        };
        let mut triples: Vec<(f64, f64, f64)> = Vec::new();
        let (student, _) = distill_round(&teacher, &config, 1, 2, &ds, &sched(), |ev| {
            if ev.update >= 2000 {
                for r in 0..ev.batch.ts.len() {
                    triples.push((
                        ev.batch.z_t.data()[r],
                        ev.batch.targets.data()[r],
                        ev.batch.weights[r],
                    ));
                }
            }
        })
        .unwrap();
        let (mut sww, mut swz, mut swzz, mut swy, mut swzy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(z, y, w) in &triples {
            sww += w;
            swz += w * z;
            swzz += w * z * z;
            swy += w * y;
            swzy += w * z * y;
        }
        let det = swzz * sww - swz * swz;
        let a = (swzy * sww - swz * swy) / det;
        let b = (swzz * swy - swz * swzy) / det;
        let (sa, sb) = student.ab();
        assert!((sa - a).abs() < 1e-3, "a: {sa} vs {a}");
        assert!((sb - b).abs() < 1e-3, "b: {sb} vs {b}");
    }

    #[test]
    fn trace_bookkeeping_and_determinism() {
        let teacher = Linear::new(0.5, 0.0, 2, Parameterization::X);
        let config = DistillConfig {
            rounds: 3,
            n_start: 64,
            steps_per_round: 5,
            batch_size: 8,
            plateau_window: 0,
            ..DistillConfig::default()
        };
        let ds = ToyDataset::default();
        let (_, a) = progressive_distill(teacher.clone(), &config, &ds, &sched()).unwrap();
        let (_, b) = progressive_distill(teacher, &config, &ds, &sched()).unwrap();
        let steps: Vec<_> = a.rounds.iter().map(|r| (r.teacher_steps, r.student_steps)).collect();
        assert_eq!(steps, vec![(64, 32), (32, 16), (16, 8)]);
        for (k, r) in a.rounds.iter().enumerate() {
            assert_eq!(r.teacher_steps, config.n_start >> k);
        }
        assert_eq!(a.all_losses(), b.all_losses());
    }

    #[test]
    fn plateau_stops_constant_loss() {
        // A student that already matches its teacher's constant target sees
        // zero loss and no improvement.
        let teacher = Linear::new(0.0, 0.4, 2, Parameterization::X);
        let config = DistillConfig {
            steps_per_round: 1000,
            plateau_window: 10,
            ..small_config(1000)
        };
        let (_, out) =
            distill_round(&teacher, &config, 1, 8, &ToyDataset::default(), &sched(), |_| {})
                .unwrap();
        assert!(out.stopped_early);
        assert!(out.updates < 1000 && out.updates % 10 == 0);
    }
}
