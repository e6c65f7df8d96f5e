//! Command-line interface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::RunConfig;
use super::experiment::{class_blocks, evaluate, run_experiment_in, Reference};
use super::report::{weights_table, write_report};
use crate::distill::progressive_distill_with;
use crate::error::{Error, Result};
use crate::sampler::{sample, SamplerConfig, SamplerKind};
use crate::trainer::train_base;
use crate::weighting::{WeightKind, DEFAULT_GAMMA};

#[derive(Debug, Parser)]
#[command(
    name = "bsa-distill",
    version,
    about = "Train, progressively distill and evaluate conditional diffusion models on a toy dataset"
)]
struct Cli {
    /// Run configuration file (`section.key = value` lines); defaults apply
    /// to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the default configuration.
    Defaults,
    /// Train a base teacher and write its checkpoint.
    Train {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path [default: <output_dir>/seed-<seed>/teacher.ckpt]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Progressively distill a teacher checkpoint with one weight strategy.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        /// eps-snr, trunc-snr, snr-plus-one, min-snr or bsa
        #[arg(long, default_value = "bsa")]
        strategy: WeightKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for round checkpoints and the trace
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the ancestral sampler instead of DDIM
        #[arg(long)]
        ancestral: bool,
        /// CSV output path [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fréchet distances of a checkpoint's samples against the reference.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Weight of every strategy against t and snr(t).
    WeightsTable {
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Rebuild results.csv from the per-seed metric files of a run.
    Report {
        /// Run directory [default: the configured output directory]
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Run the full strategy comparison.
    Experiment {
        /// Run directory [default: the configured output directory]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(cli.config.as_deref())?;
    let stdout = |out: &mut dyn Write, s: &str| {
        out.write_all(s.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))
    };
    match cli.command {
        Command::Defaults => stdout(out, &RunConfig::default().to_text())?,
        Command::Train { seed, out: path } => {
            let path = path.unwrap_or_else(|| {
                cfg.resolved_output_dir()
                    .join(format!("seed-{seed}"))
                    .join("teacher.ckpt")
            });
            let trained = train_base(&cfg.train_config(seed), &cfg.model, &cfg.dataset, &cfg.schedule)?;
            save_checkpoint(
                &path,
                &Checkpoint {
                    schedule: cfg.schedule,
                    model: trained.model,
                    round: 0,
                    steps: cfg.distill.n_start,
                    strategy: "base".into(),
                    seed,
                },
            )?;
            let last = trained.losses.last().copied().unwrap_or(f64::NAN);
            stdout(out, &format!("wrote {} (final loss {last})\n", path.display()))?;
        }
        Command::Distill {
            teacher,
            strategy,
            seed,
            out: dir,
        } => {
            let ck = load_checkpoint(&teacher)?;
            let dcfg = cfg.distill_config(strategy, seed);
            let (_, trace) = progressive_distill_with(
                ck.model,
                &dcfg,
                &cfg.dataset,
                &ck.schedule,
                |record, student| {
                    let path = dir.join(format!("round-{}.ckpt", record.round));
                    save_checkpoint(
                        &path,
                        &Checkpoint {
                            schedule: ck.schedule,
                            model: student.clone(),
                            round: record.round,
                            steps: record.student_steps,
                            strategy: strategy.name().into(),
                            seed,
                        },
                    )?;
                    Ok(Some(path.display().to_string()))
                },
            )?;
            let mut s = String::from("round,teacher_steps,student_steps,updates,final_loss,checkpoint\n");
            for r in &trace.rounds {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.round,
                    r.teacher_steps,
                    r.student_steps,
                    r.updates,
                    r.final_loss,
                    r.checkpoint.as_deref().unwrap_or("")
                );
            }
            write_file(&dir.join("trace.csv"), &s)?;
            stdout(out, &s)?;
        }
        Command::Sample {
            checkpoint,
            steps,
            per_class,
            seed,
            ancestral,
            out: path,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let classes = ck.model.config().num_classes;
            let conds = class_blocks(classes, per_class);
            let sc = SamplerConfig {
                steps,
                kind: if ancestral {
                    SamplerKind::Ancestral
                } else {
                    SamplerKind::Ddim
                },
                seed,
            };
            let z = sample(&ck.model, &conds, &sc, &ck.schedule)?;
            let mut s = String::from("class");
            for c in 0..z.cols() {
                let _ = write!(s, ",z{c}");
            }
            s.push('\n');
            for (r, c) in conds.iter().enumerate() {
                let _ = write!(s, "{c}");
                for v in z.row(r) {
                    let _ = write!(s, ",{v}");
                }
                s.push('\n');
            }
            match path {
                Some(p) => write_file(&p, &s)?,
                None => stdout(out, &s)?,
            }
        }
        Command::Eval {
            checkpoint,
            steps,
            seed,
        } => {
            let ck = load_checkpoint(&checkpoint)?;
            let reference = Reference::build(&cfg.dataset, cfg.eval.reference_per_class)?;
            let m = evaluate(
                &ck.model,
                steps,
                seed,
                cfg.eval.samples_per_class,
                &reference,
                &ck.schedule,
            )?;
            stdout(
                out,
                &format!("steps,fd_cond,fd_pooled\n{steps},{},{}\n", m.fd_cond, m.fd_pooled),
            )?;
        }
        Command::WeightsTable { gamma, points } => {
            stdout(out, &weights_table(gamma, points, &cfg.schedule)?)?;
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.resolved_output_dir());
            let rows = write_report(&dir)?;
            stdout(
                out,
                &format!("wrote {} ({} rows)\n", dir.join("results.csv").display(), rows.len()),
            )?;
        }
        Command::Experiment { out: dir } => {
            let root = dir.unwrap_or_else(|| cfg.resolved_output_dir());
            let summary = run_experiment_in(&cfg, &root)?;
            stdout(
                out,
                &format!(
                    "wrote {} ({} rows, {} failures)\n",
                    summary.output_dir.join("results.csv").display(),
                    summary.rows.len(),
                    summary.failures.len()
                ),
            )?;
            if !summary.failures.is_empty() {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Runs the CLI on `args` (including the program name), writing normal
/// output to `out` and diagnostics to stderr. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    run(std::env::args_os(), &mut lock)
}
