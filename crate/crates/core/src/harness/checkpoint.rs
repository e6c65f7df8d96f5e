//! Text checkpoints with bit-exact parameters.
//!
//! ```text
//! bsa-distill checkpoint v1
//! schedule = cosine 0.0001
//! parameterization = x
//! latent_dim = 2
//! num_classes = 8
//! embed_dim = 8
//! num_frequencies = 8
//! hidden = 64,64
//! round = 0
//! steps = 64
//! strategy = base
//! seed = 0
//! param embed 8x8
//! 3fe0000000000000 bfd5555555555555 ...
//! end
//! ```
//!
//! Parameter values are the hexadecimal IEEE-754 bit patterns, four per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnet::{Denoiser, DenoiserModel, ModelConfig, Tensor};
use crate::schedule::{ContinuousSchedule, ScheduleKind};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "bsa-distill checkpoint v";
const VALUES_PER_LINE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ContinuousSchedule,
    pub model: DenoiserModel,
    /// 0 for a base model, `k` for the student of round `k`.
    pub round: usize,
    /// Sampling steps the model is meant for.
    pub steps: usize,
    /// Weight strategy name, or `base`.
    pub strategy: String,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let cfg = self.model.config();
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}{CHECKPOINT_VERSION}");
        let _ = writeln!(s, "schedule = cosine {}", self.schedule.t_min);
        let _ = writeln!(s, "parameterization = {}", cfg.parameterization);
        let _ = writeln!(s, "latent_dim = {}", cfg.latent_dim);
        let _ = writeln!(s, "num_classes = {}", cfg.num_classes);
        let _ = writeln!(s, "embed_dim = {}", cfg.embed_dim);
        let _ = writeln!(s, "num_frequencies = {}", cfg.num_frequencies);
        let hidden: Vec<String> = cfg.hidden.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "round = {}", self.round);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "strategy = {}", self.strategy);
        let _ = writeln!(s, "seed = {}", self.seed);
        for (name, p) in cfg.param_names().iter().zip(self.model.params()) {
            let shape: Vec<String> = p.shape().iter().map(ToString::to_string).collect();
            let _ = writeln!(s, "param {name} {}", shape.join("x"));
            for chunk in p.data().chunks(VALUES_PER_LINE) {
                let words: Vec<String> =
                    chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
                let _ = writeln!(s, "{}", words.join(" "));
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (offset, first) = lines.next_line("header")?;
        let version = first
            .strip_prefix(MAGIC)
            .ok_or_else(|| err(offset, format!("missing '{MAGIC}N' header")))?;
        let version: u32 = version
            .parse()
            .map_err(|_| err(offset, format!("bad version '{version}'")))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }

        let (off, sched) = lines.field("schedule")?;
        let mut parts = sched.split_whitespace();
        if parts.next() != Some("cosine") {
            return Err(err(off, format!("unknown schedule '{sched}'")));
        }
        let t_min = parse_at(off, parts.next().unwrap_or(""), "t_min")?;
        let schedule = ContinuousSchedule {
            kind: ScheduleKind::Cosine,
            t_min,
        };
        let (off, p) = lines.field("parameterization")?;
        let parameterization = p.parse().map_err(|_| err(off, format!("bad parameterization '{p}'")))?;
        let latent_dim = lines.parsed("latent_dim")?;
        let num_classes = lines.parsed("num_classes")?;
        let embed_dim = lines.parsed("embed_dim")?;
        let num_frequencies = lines.parsed("num_frequencies")?;
        let (off, h) = lines.field("hidden")?;
        let hidden = if h.is_empty() {
            Vec::new()
        } else {
            h.split(',')
                .map(|w| parse_at(off, w.trim(), "hidden width"))
                .collect::<Result<Vec<usize>>>()?
        };
        let round = lines.parsed("round")?;
        let steps = lines.parsed("steps")?;
        let (_, strategy) = lines.field("strategy")?;
        let strategy = strategy.to_string();
        let seed = lines.parsed("seed")?;

        let config = ModelConfig {
            latent_dim,
            num_classes,
            embed_dim,
            num_frequencies,
            hidden,
            parameterization,
        };
        config
            .validate()
            .map_err(|e| err(lines.offset, format!("invalid model description: {e}")))?;

        let mut params = Vec::new();
        for (name, shape) in config.param_names().iter().zip(config.param_shapes()) {
            let (off, line) = lines.next_line("param block")?;
            let expected = format!(
                "param {name} {}",
                shape.iter().map(ToString::to_string).collect::<Vec<_>>().join("x")
            );
            if line != expected {
                return Err(err(off, format!("expected '{expected}', got '{line}'")));
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            while data.len() < count {
                let (off, line) = lines.next_line("parameter values")?;
                for word in line.split_whitespace() {
                    let bits = u64::from_str_radix(word, 16)
                        .ok()
                        .filter(|_| word.len() == 16)
                        .ok_or_else(|| err(off, format!("bad hex value '{word}'")))?;
                    data.push(f64::from_bits(bits));
                }
            }
            if data.len() != count {
                return Err(err(
                    lines.offset,
                    format!("{name}: expected {count} values, got {}", data.len()),
                ));
            }
            params.push(Tensor::new(shape, data).map_err(|e| err(off, e.to_string()))?);
        }
        let (off, last) = lines.next_line("end marker")?;
        if last != "end" {
            return Err(err(off, format!("expected 'end', got '{last}'")));
        }
        let model = DenoiserModel::from_params(config, params)
            .map_err(|e| err(off, e.to_string()))?;
        Ok(Self {
            schedule,
            model,
            round,
            steps,
            strategy,
            seed,
        })
    }
}

fn err(offset: usize, message: String) -> Error {
    Error::Checkpoint { offset, message }
}

fn parse_at<T: std::str::FromStr>(offset: usize, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| err(offset, format!("bad {what} '{s}'")))
}

/// Line cursor that remembers byte offsets.
struct Lines<'a> {
    text: &'a str,
    offset: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, offset: 0 }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let rest = &self.text[self.offset..];
        if rest.is_empty() {
            return Err(err(self.offset, format!("unexpected end of file, expected {what}")));
        }
        let start = self.offset;
        let (line, consumed) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.offset += consumed;
        Ok((start, line.trim_end_matches('\r')))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (off, line) = self.next_line(key)?;
        let value = line
            .split_once('=')
            .filter(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| err(off, format!("expected '{key} = ...', got '{line}'")))?;
        Ok((off, value))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (off, v) = self.field(key)?;
        parse_at(off, v, key)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, checkpoint.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::parse(&text)
}
