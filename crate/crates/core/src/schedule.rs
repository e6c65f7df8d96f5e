//! Noise schedules.
//!
//! [`ContinuousSchedule`] gives the variance-preserving `(α_t, σ_t)` pair used
//! by DDIM and distillation. [`DiscreteSchedule`] is the `β_n` table behind the
//! ancestral sampler.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

pub const DEFAULT_T_MIN: f64 = 1e-4;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
}

/// Cosine schedule `α_t = cos(πt/2)`, `σ_t = sin(πt/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousSchedule {
    pub kind: ScheduleKind,
    /// Lower clip applied to `t` when an SNR is requested.
    pub t_min: f64,
}

impl Default for ContinuousSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            t_min: DEFAULT_T_MIN,
        }
    }
}

impl ContinuousSchedule {
    pub fn cosine(t_min: f64) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            t_min,
        }
    }

    /// `(α_t, σ_t)`. Written as `sin(π(1−t)/2)` and `sin(πt/2)` so both
    /// endpoints are exact and `α = σ` at `t = 0.5`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange {
                name: "t",
                value: t,
                lo: 0.0,
                hi: 1.0,
            });
        }
        match self.kind {
            ScheduleKind::Cosine => Ok(((FRAC_PI_2 * (1.0 - t)).sin(), (FRAC_PI_2 * t).sin())),
        }
    }

    /// `α_t²/σ_t²` with `t` clipped below at `t_min`.
    pub fn snr(&self, t: f64) -> Result<f64> {
        let (a, s) = self.alpha_sigma(t.max(self.t_min))?;
        Ok((a * a) / (s * s))
    }

    /// Inverse of `α_t² = ᾱ` on `[0, 1]`.
    pub fn t_for_alpha_bar(&self, alpha_bar: f64) -> f64 {
        match self.kind {
            ScheduleKind::Cosine => {
                let a = alpha_bar.clamp(0.0, 1.0).sqrt();
                (a.acos() / FRAC_PI_2).clamp(0.0, 1.0)
            }
        }
    }
}

/// Linear-β table with cumulative products and posterior variances.
/// Index `n` runs over `1..=N`; storage is zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_variances: Vec<f64>,
}

impl DiscreteSchedule {
    pub fn build(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("discrete schedule needs N >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        let posterior_variances = betas
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * b
            })
            .collect();
        Self {
            betas,
            alpha_bars,
            posterior_variances,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_variances(&self) -> &[f64] {
        &self.posterior_variances
    }

    fn index(&self, n: usize) -> Result<usize> {
        if n == 0 || n > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "step index {n} outside 1..={}",
                self.steps()
            )));
        }
        Ok(n - 1)
    }

    pub fn beta(&self, n: usize) -> Result<f64> {
        Ok(self.betas[self.index(n)?])
    }

    pub fn alpha_bar(&self, n: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(n)?])
    }

    pub fn posterior_variance(&self, n: usize) -> Result<f64> {
        Ok(self.posterior_variances[self.index(n)?])
    }
}

impl Default for DiscreteSchedule {
    fn default() -> Self {
        Self::build(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default discrete schedule is valid")
    }
}
