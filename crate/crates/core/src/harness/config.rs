//! Run configuration in a flat `section.key = value` text format.
//!
//! Every key has a default; parsing starts from [`RunConfig::default`] and
//! overrides the keys present. Unknown keys are rejected. `#` starts a
//! comment. [`RunConfig::to_text`] writes every key, so parsing its output
//! reproduces the configuration exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::ToyDataset;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::nnet::{AdamConfig, ModelConfig, Parameterization};
use crate::schedule::{ContinuousSchedule, ScheduleKind};
use crate::trainer::TrainConfig;
use crate::weighting::{WeightKind, WeightStrategy};

/// Environment variable that overrides `run.output_dir`.
pub const OUTPUT_ENV: &str = "BSA_DISTILL_OUT";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Generated samples per class per repetition.
    pub samples_per_class: usize,
    /// Reference draws per class.
    pub reference_per_class: usize,
    pub repetitions: usize,
    /// Base sampling seed; repetition `r` uses `seed + r` for every model.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 1000,
            reference_per_class: 20_000,
            repetitions: 5,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `seed` drives the evaluation reference population.
    pub dataset: ToyDataset,
    /// `latent_dim` and `num_classes` follow the dataset.
    pub model: ModelConfig,
    pub schedule: ContinuousSchedule,
    /// `seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    /// `strategy` is replaced by each entry of `strategies`; `seed` by each
    /// entry of `seeds`.
    pub distill: DistillConfig,
    pub strategies: Vec<WeightKind>,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = ToyDataset::default();
        Self {
            model: ModelConfig {
                latent_dim: dataset.latent_dim,
                num_classes: dataset.num_classes,
                hidden: vec![128, 128],
                parameterization: Parameterization::X,
                ..ModelConfig::default()
            },
            dataset,
            schedule: ContinuousSchedule::default(),
            train: TrainConfig {
                updates: 30_000,
                batch_size: 256,
                adam: AdamConfig {
                    lr: 2e-3,
                    ..AdamConfig::default()
                },
                lr_end: 1e-5,
                seed: 0,
                parameterization: Parameterization::X,
                strategy: WeightStrategy::with_default_gamma(WeightKind::BalancedSnrAware),
            },
            distill: DistillConfig {
                rounds: 3,
                n_start: 64,
                steps_per_round: 1500,
                batch_size: 256,
                strategy: WeightStrategy::with_default_gamma(WeightKind::BalancedSnrAware),
                adam: AdamConfig {
                    lr: 5e-4,
                    ..AdamConfig::default()
                },
                lr_end: 5e-5,
                seed: 0,
                plateau_window: 200,
                plateau_tol: 1e-4,
            },
            strategies: vec![
                WeightKind::TruncatedSnr,
                WeightKind::MinSnrGamma,
                WeightKind::BalancedSnrAware,
            ],
            eval: EvalConfig::default(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| format!("'{}': {e}", s.trim())))
        .collect()
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("'{value}': {e}"))
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("dataset.num_classes", self.dataset.num_classes.to_string());
        put("dataset.latent_dim", self.dataset.latent_dim.to_string());
        put("dataset.radius", self.dataset.radius.to_string());
        put("dataset.stddev", self.dataset.stddev.to_string());
        put("dataset.seed", self.dataset.seed.to_string());
        put("model.embed_dim", self.model.embed_dim.to_string());
        put("model.num_frequencies", self.model.num_frequencies.to_string());
        put("model.hidden", join(&self.model.hidden));
        put("schedule.kind", "cosine".to_string());
        put("schedule.t_min", self.schedule.t_min.to_string());
        put("train.updates", self.train.updates.to_string());
        put("train.batch_size", self.train.batch_size.to_string());
        put("train.lr", self.train.adam.lr.to_string());
        put("train.lr_end", self.train.lr_end.to_string());
        put("train.beta1", self.train.adam.beta1.to_string());
        put("train.beta2", self.train.adam.beta2.to_string());
        put("train.adam_eps", self.train.adam.eps.to_string());
        put("train.parameterization", self.train.parameterization.to_string());
        put("train.strategy", self.train.strategy.kind.to_string());
        put("train.gamma", self.train.strategy.gamma.to_string());
        put("distill.rounds", self.distill.rounds.to_string());
        put("distill.n_start", self.distill.n_start.to_string());
        put("distill.steps_per_round", self.distill.steps_per_round.to_string());
        put("distill.batch_size", self.distill.batch_size.to_string());
        put("distill.lr", self.distill.adam.lr.to_string());
        put("distill.lr_end", self.distill.lr_end.to_string());
        put("distill.beta1", self.distill.adam.beta1.to_string());
        put("distill.beta2", self.distill.adam.beta2.to_string());
        put("distill.adam_eps", self.distill.adam.eps.to_string());
        put("distill.gamma", self.distill.strategy.gamma.to_string());
        put("distill.strategies", join(&self.strategies));
        put("distill.plateau_window", self.distill.plateau_window.to_string());
        put("distill.plateau_tol", self.distill.plateau_tol.to_string());
        put("eval.samples_per_class", self.eval.samples_per_class.to_string());
        put("eval.reference_per_class", self.eval.reference_per_class.to_string());
        put("eval.repetitions", self.eval.repetitions.to_string());
        put("eval.seed", self.eval.seed.to_string());
        put("run.seeds", join(&self.seeds));
        put("run.output_dir", self.output_dir.display().to_string());
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected 'section.key = value', got '{line}'"),
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|message| Error::Config {
                    line: line_no,
                    message,
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "dataset.num_classes" => {
                self.dataset.num_classes = parse_value(value)?;
                self.model.num_classes = self.dataset.num_classes;
            }
            "dataset.latent_dim" => {
                self.dataset.latent_dim = parse_value(value)?;
                self.model.latent_dim = self.dataset.latent_dim;
            }
            "dataset.radius" => self.dataset.radius = parse_value(value)?,
            "dataset.stddev" => self.dataset.stddev = parse_value(value)?,
            "dataset.seed" => self.dataset.seed = parse_value(value)?,
            "model.embed_dim" => self.model.embed_dim = parse_value(value)?,
            "model.num_frequencies" => self.model.num_frequencies = parse_value(value)?,
            "model.hidden" => self.model.hidden = parse_list(value)?,
            "schedule.kind" => {
                if value != "cosine" {
                    return Err(format!("unknown schedule kind '{value}' (expected cosine)"));
                }
                self.schedule.kind = ScheduleKind::Cosine;
            }
            "schedule.t_min" => self.schedule.t_min = parse_value(value)?,
            "train.updates" => self.train.updates = parse_value(value)?,
            "train.batch_size" => self.train.batch_size = parse_value(value)?,
            "train.lr" => self.train.adam.lr = parse_value(value)?,
            "train.lr_end" => self.train.lr_end = parse_value(value)?,
            "train.beta1" => self.train.adam.beta1 = parse_value(value)?,
            "train.beta2" => self.train.adam.beta2 = parse_value(value)?,
            "train.adam_eps" => self.train.adam.eps = parse_value(value)?,
            "train.parameterization" => {
                self.train.parameterization = parse_value(value)?;
                self.model.parameterization = self.train.parameterization;
            }
            "train.strategy" => self.train.strategy.kind = parse_value(value)?,
            "train.gamma" => self.train.strategy.gamma = parse_value(value)?,
            "distill.rounds" => self.distill.rounds = parse_value(value)?,
            "distill.n_start" => self.distill.n_start = parse_value(value)?,
            "distill.steps_per_round" => self.distill.steps_per_round = parse_value(value)?,
            "distill.batch_size" => self.distill.batch_size = parse_value(value)?,
            "distill.lr" => self.distill.adam.lr = parse_value(value)?,
            "distill.lr_end" => self.distill.lr_end = parse_value(value)?,
            "distill.beta1" => self.distill.adam.beta1 = parse_value(value)?,
            "distill.beta2" => self.distill.adam.beta2 = parse_value(value)?,
            "distill.adam_eps" => self.distill.adam.eps = parse_value(value)?,
            "distill.gamma" => self.distill.strategy.gamma = parse_value(value)?,
            "distill.strategies" => self.strategies = parse_list(value)?,
            "distill.plateau_window" => self.distill.plateau_window = parse_value(value)?,
            "distill.plateau_tol" => self.distill.plateau_tol = parse_value(value)?,
            "eval.samples_per_class" => self.eval.samples_per_class = parse_value(value)?,
            "eval.reference_per_class" => self.eval.reference_per_class = parse_value(value)?,
            "eval.repetitions" => self.eval.repetitions = parse_value(value)?,
            "eval.seed" => self.eval.seed = parse_value(value)?,
            "run.seeds" => self.seeds = parse_list(value)?,
            "run.output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.distill.validate()?;
        WeightStrategy::new(self.train.strategy.kind, self.train.strategy.gamma)?;
        WeightStrategy::new(self.distill.strategy.kind, self.distill.strategy.gamma)?;
        if !(self.schedule.t_min > 0.0 && self.schedule.t_min < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "schedule.t_min {} must lie in (0, 0.5)",
                self.schedule.t_min
            )));
        }
        if self.train.batch_size == 0 {
            return Err(Error::InvalidArgument("train.batch_size must be >= 1".into()));
        }
        if self.eval.samples_per_class < 2 || self.eval.reference_per_class < 2 {
            return Err(Error::InvalidArgument(
                "eval sample counts must be >= 2 per class".into(),
            ));
        }
        if self.eval.repetitions == 0 {
            return Err(Error::InvalidArgument("eval.repetitions must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("run.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// `run.output_dir`, or the value of [`OUTPUT_ENV`] when set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn distill_config(&self, kind: WeightKind, seed: u64) -> DistillConfig {
        DistillConfig {
            strategy: WeightStrategy {
                kind,
                gamma: self.distill.strategy.gamma,
            },
            seed,
            ..self.distill.clone()
        }
    }

    /// Step counts of the halving sequence, largest first.
    pub fn step_sequence(&self) -> Vec<usize> {
        (0..=self.distill.rounds)
            .map(|k| self.distill.n_start >> k)
            .collect()
    }
}
