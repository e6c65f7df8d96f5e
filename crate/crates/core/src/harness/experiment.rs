//! The strategy-comparison experiment.
//!
//! For each training seed: train a base teacher, evaluate it with plain DDIM
//! at every step count of the halving sequence, then distill it once per
//! weight strategy and evaluate each round's student at its own step count.
//! Every evaluation is repeated with the same sampling seeds for all models.
//!
//! Output layout under the run directory:
//!
//! ```text
//! config.txt
//! results.csv
//! failures.txt
//! seed-<s>/teacher.ckpt
//! seed-<s>/train_loss.csv
//! seed-<s>/metrics.csv
//! seed-<s>/<strategy>/round-<k>.ckpt
//! seed-<s>/<strategy>/trace.csv
//! seed-<s>/<strategy>/losses.csv
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::RunConfig;
use super::report::{aggregate, metrics_csv, results_csv, MetricRecord, ResultRow, TEACHER_DDIM};
use crate::data::ToyDataset;
use crate::distill::{progressive_distill_with, DistillTrace};
use crate::error::{Error, Result};
use crate::frechet::{fit_moments, fit_rows, frechet_distance, MomentFit};
use crate::nnet::{Denoiser, DenoiserModel, Tensor};
use crate::sampler::{sample, SamplerConfig};
use crate::schedule::ContinuousSchedule;
use crate::trainer::train_base;
use crate::weighting::WeightKind;

/// Moment fits of the evaluation reference, per class and pooled.
#[derive(Debug, Clone)]
pub struct Reference {
    pub per_class: Vec<MomentFit>,
    pub pooled: MomentFit,
}

impl Reference {
    /// `per_class` draws of every class from a generator seeded with the
    /// dataset seed.
    pub fn build(dataset: &ToyDataset, per_class: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(dataset.seed);
        let conds = class_blocks(dataset.num_classes, per_class);
        let z = dataset.draw_for_classes(&conds, &mut rng)?;
        Self::from_population(&z, dataset.num_classes, per_class)
    }

    fn from_population(z: &Tensor, classes: usize, per_class: usize) -> Result<Self> {
        let per_class = (0..classes)
            .map(|c| {
                let rows: Vec<&[f64]> = (c * per_class..(c + 1) * per_class)
                    .map(|r| z.row(r))
                    .collect();
                fit_rows(&rows)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            per_class,
            pooled: fit_moments(z)?,
        })
    }
}

/// `[0; n], [1; n], …` for `classes` classes.
pub fn class_blocks(classes: usize, n: usize) -> Vec<usize> {
    (0..classes).flat_map(|c| std::iter::repeat_n(c, n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub fd_cond: f64,
    pub fd_pooled: f64,
}

/// Fréchet distances of a class-blocked population against `reference`.
pub fn score_population(z: &Tensor, reference: &Reference) -> Result<Metric> {
    let classes = reference.per_class.len();
    if classes == 0 || z.rows() % classes != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} rows do not split into {classes} class blocks",
            z.rows()
        )));
    }
    let fits = Reference::from_population(z, classes, z.rows() / classes)?;
    let mut total = 0.0;
    for (fit, refc) in fits.per_class.iter().zip(&reference.per_class) {
        total += frechet_distance(fit, refc)?;
    }
    Ok(Metric {
        fd_cond: total / classes as f64,
        fd_pooled: frechet_distance(&fits.pooled, &reference.pooled)?,
    })
}

/// Samples `samples_per_class` latents per class with DDIM and scores them.
pub fn evaluate<M: Denoiser>(
    model: &M,
    steps: usize,
    sampling_seed: u64,
    samples_per_class: usize,
    reference: &Reference,
    schedule: &ContinuousSchedule,
) -> Result<Metric> {
    let conds = class_blocks(reference.per_class.len(), samples_per_class);
    let z = sample(model, &conds, &SamplerConfig::ddim(steps, sampling_seed), schedule)?;
    score_population(&z, reference)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub output_dir: PathBuf,
    pub records: Vec<MetricRecord>,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<Failure>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn evaluate_all<M: Denoiser>(
    cfg: &RunConfig,
    reference: &Reference,
    seed: u64,
    strategy: &str,
    model: &M,
    steps: usize,
) -> Result<Vec<MetricRecord>> {
    (0..cfg.eval.repetitions)
        .map(|rep| {
            let m = evaluate(
                model,
                steps,
                cfg.eval.seed + rep as u64,
                cfg.eval.samples_per_class,
                reference,
                &cfg.schedule,
            )?;
            Ok(MetricRecord {
                seed,
                strategy: strategy.to_string(),
                steps,
                repetition: rep,
                fd_cond: m.fd_cond,
                fd_pooled: m.fd_pooled,
            })
        })
        .collect()
}

fn trace_csv(trace: &DistillTrace) -> String {
    let mut s = String::from(
        "round,teacher_steps,student_steps,updates,stopped_early,final_loss,wall_clock_secs,checkpoint\n",
    );
    for r in &trace.rounds {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.3},{}",
            r.round,
            r.teacher_steps,
            r.student_steps,
            r.updates,
            r.stopped_early,
            r.final_loss,
            r.wall_clock_secs,
            r.checkpoint.as_deref().unwrap_or("")
        );
    }
    s
}

fn losses_csv(trace: &DistillTrace) -> String {
    let mut s = String::from("round,update,loss\n");
    for r in &trace.rounds {
        for (i, l) in r.losses.iter().enumerate() {
            let _ = writeln!(s, "{},{i},{l}", r.round);
        }
    }
    s
}

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .display()
        .to_string()
}

/// Distills `teacher` with one strategy and evaluates every round's student.
pub fn run_strategy(
    cfg: &RunConfig,
    reference: &Reference,
    seed: u64,
    kind: WeightKind,
    teacher: &DenoiserModel,
    root: &Path,
) -> Result<Vec<MetricRecord>> {
    let dcfg = cfg.distill_config(kind, seed);
    let dir = root.join(format!("seed-{seed}")).join(kind.name());
    let mut students: Vec<(usize, DenoiserModel)> = Vec::new();
    let (_, trace) = progressive_distill_with(
        teacher.clone(),
        &dcfg,
        &cfg.dataset,
        &cfg.schedule,
        |record, student| {
            let path = dir.join(format!("round-{}.ckpt", record.round));
            save_checkpoint(
                &path,
                &Checkpoint {
                    schedule: cfg.schedule,
                    model: student.clone(),
                    round: record.round,
                    steps: record.student_steps,
                    strategy: kind.name().to_string(),
                    seed,
                },
            )?;
            students.push((record.student_steps, student.clone()));
            Ok(Some(relative(&path, root)))
        },
    )?;
    write(&dir.join("trace.csv"), &trace_csv(&trace))?;
    write(&dir.join("losses.csv"), &losses_csv(&trace))?;
    let mut records = Vec::new();
    for (steps, student) in &students {
        records.extend(evaluate_all(cfg, reference, seed, kind.name(), student, *steps)?);
    }
    Ok(records)
}

/// Teacher training, teacher evaluation and every strategy for one seed.
pub fn run_seed(
    cfg: &RunConfig,
    reference: &Reference,
    seed: u64,
    root: &Path,
) -> (Vec<MetricRecord>, Vec<Failure>) {
    let fail = |stage: &str, e: Error| Failure {
        seed,
        stage: stage.to_string(),
        message: e.to_string(),
    };
    let dir = root.join(format!("seed-{seed}"));
    let teacher = match train_teacher(cfg, seed, &dir) {
        Ok(t) => t,
        Err(e) => return (Vec::new(), vec![fail("train", e)]),
    };

    let mut failures = Vec::new();
    let teacher_jobs: Vec<usize> = cfg.step_sequence();
    let strategy_results: Vec<(String, Result<Vec<MetricRecord>>)> = teacher_jobs
        .par_iter()
        .map(|&steps| {
            (
                format!("eval {TEACHER_DDIM} {steps}"),
                evaluate_all(cfg, reference, seed, TEACHER_DDIM, &teacher, steps),
            )
        })
        .chain(cfg.strategies.par_iter().map(|&kind| {
            (
                format!("distill {}", kind.name()),
                run_strategy(cfg, reference, seed, kind, &teacher, root),
            )
        }))
        .collect();

    let mut records = Vec::new();
    for (stage, res) in strategy_results {
        match res {
            Ok(r) => records.extend(r),
            Err(e) => failures.push(fail(&stage, e)),
        }
    }
    if let Err(e) = write(&dir.join("metrics.csv"), &metrics_csv(&records)) {
        failures.push(fail("write metrics", e));
    }
    (records, failures)
}

fn train_teacher(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<DenoiserModel> {
    let out = train_base(&cfg.train_config(seed), &cfg.model, &cfg.dataset, &cfg.schedule)?;
    let mut losses = String::from("update,loss\n");
    for (i, l) in out.losses.iter().enumerate() {
        let _ = writeln!(losses, "{i},{l}");
    }
    write(&dir.join("train_loss.csv"), &losses)?;
    save_checkpoint(
        &dir.join("teacher.ckpt"),
        &Checkpoint {
            schedule: cfg.schedule,
            model: out.model.clone(),
            round: 0,
            steps: cfg.distill.n_start,
            strategy: "base".to_string(),
            seed,
        },
    )?;
    Ok(out.model)
}

fn failures_text(failures: &[Failure]) -> String {
    let mut s = String::from("seed,stage,message\n");
    for f in failures {
        let _ = writeln!(s, "{},{},{}", f.seed, f.stage, f.message.replace(['\n', ','], " "));
    }
    s
}

/// [`run_experiment_in`] the configured (or environment-overridden) output
/// directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentSummary> {
    run_experiment_in(cfg, &cfg.resolved_output_dir())
}

/// Runs every seed, then writes `results.csv` and `failures.txt` under
/// `root`. Stage failures are recorded and the remaining stages still run.
pub fn run_experiment_in(cfg: &RunConfig, root: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let root = root.to_path_buf();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    write(&root.join("config.txt"), &cfg.to_text())?;
    let reference = Reference::build(&cfg.dataset, cfg.eval.reference_per_class)?;

    let per_seed: Vec<(Vec<MetricRecord>, Vec<Failure>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &reference, seed, &root))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_seed {
        records.extend(r);
        failures.extend(f);
    }
    let rows = aggregate(&records);
    write(&root.join("results.csv"), &results_csv(&rows))?;
    write(&root.join("failures.txt"), &failures_text(&failures))?;
    Ok(ExperimentSummary {
        output_dir: root,
        records,
        rows,
        failures,
    })
}
