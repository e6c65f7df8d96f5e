//! Per-repetition metric records, their aggregation into `results.csv`, and
//! the weight table.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schedule::ContinuousSchedule;
use crate::weighting::{WeightKind, WeightStrategy};

/// Strategy label of the undistilled teacher sampled with plain DDIM.
pub const TEACHER_DDIM: &str = "teacher-ddim";
/// Normal-approximation quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.96;

pub const METRICS_HEADER: &str = "seed,strategy,steps,repetition,fd_cond,fd_pooled";
pub const RESULTS_COMMENT: &str =
    "# ci95 = 1.96 * sd / sqrt(n), sd with n - 1 denominator (normal approximation); seed 'all' pools every seed and repetition";
pub const RESULTS_HEADER: &str = "seed,strategy,steps,metric,n,mean,ci95";

/// Metric names, in report order.
pub const METRICS: [&str; 2] = ["fd_cond", "fd_pooled"];

/// One evaluation repetition of one model at one step count.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub seed: u64,
    pub strategy: String,
    pub steps: usize,
    pub repetition: usize,
    /// Fréchet distance per class against that class's reference, averaged
    /// over classes.
    pub fd_cond: f64,
    /// Fréchet distance of the pooled population against the pooled reference.
    pub fd_pooled: f64,
}

impl MetricRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "fd_cond" => Some(self.fd_cond),
            "fd_pooled" => Some(self.fd_pooled),
            _ => None,
        }
    }
}

pub fn metrics_csv(records: &[MetricRecord]) -> String {
    let mut s = String::new();
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.seed, r.strategy, r.steps, r.repetition, r.fd_cond, r.fd_pooled
        );
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line_no == 1 {
            if line != METRICS_HEADER {
                return Err(Error::Config {
                    line: 1,
                    message: format!("expected header '{METRICS_HEADER}'"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Config {
            line: line_no,
            message: format!("bad {what} in '{line}'"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        out.push(MetricRecord {
            seed: f[0].parse().map_err(|_| bad("seed"))?,
            strategy: f[1].to_string(),
            steps: f[2].parse().map_err(|_| bad("steps"))?,
            repetition: f[3].parse().map_err(|_| bad("repetition"))?,
            fd_cond: f[4].parse().map_err(|_| bad("fd_cond"))?,
            fd_pooled: f[5].parse().map_err(|_| bad("fd_pooled"))?,
        });
    }
    Ok(out)
}

/// Sample mean and `1.96·sd/√n` with the `n − 1` standard deviation; the
/// interval is 0 for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * var.sqrt() / (n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// `None` pools all seeds.
    pub seed: Option<u64>,
    pub strategy: String,
    pub steps: usize,
    pub metric: &'static str,
    pub n: usize,
    pub mean: f64,
    pub ci95: f64,
}

fn strategy_rank(name: &str) -> usize {
    if name == TEACHER_DDIM {
        return 0;
    }
    WeightKind::ALL
        .iter()
        .position(|k| k.name() == name)
        .map_or(WeightKind::ALL.len() + 1, |p| p + 1)
}

/// Groups records by (seed, strategy, steps, metric) and adds pooled `all`
/// rows. Rows are ordered by seed, strategy, descending steps, metric.
pub fn aggregate(records: &[MetricRecord]) -> Vec<ResultRow> {
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut keys: Vec<(String, usize)> = records
        .iter()
        .map(|r| (r.strategy.clone(), r.steps))
        .collect();
    keys.sort_by(|a, b| {
        (strategy_rank(&a.0), &a.0, std::cmp::Reverse(a.1))
            .cmp(&(strategy_rank(&b.0), &b.0, std::cmp::Reverse(b.1)))
    });
    keys.dedup();

    let mut rows = Vec::new();
    let groups = seeds.iter().map(|&s| Some(s)).chain(std::iter::once(None));
    for seed in groups {
        for (strategy, steps) in &keys {
            for metric in METRICS {
                let values: Vec<f64> = records
                    .iter()
                    .filter(|r| {
                        seed.is_none_or(|s| r.seed == s)
                            && &r.strategy == strategy
                            && r.steps == *steps
                    })
                    .filter_map(|r| r.metric(metric))
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, ci95) = mean_ci95(&values);
                rows.push(ResultRow {
                    seed,
                    strategy: strategy.clone(),
                    steps: *steps,
                    metric,
                    n: values.len(),
                    mean,
                    ci95,
                });
            }
        }
    }
    rows
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    s.push_str(RESULTS_COMMENT);
    s.push('\n');
    s.push_str(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        let seed = r.seed.map_or_else(|| "all".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "{seed},{},{},{},{},{},{}",
            r.strategy, r.steps, r.metric, r.n, r.mean, r.ci95
        );
    }
    s
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.is_empty() || line == RESULTS_HEADER {
            continue;
        }
        let bad = |what: &str| Error::Config {
            line: line_no,
            message: format!("bad {what} in '{line}'"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad("field count"));
        }
        let metric = METRICS
            .iter()
            .find(|m| **m == f[3])
            .copied()
            .ok_or_else(|| bad("metric"))?;
        out.push(ResultRow {
            seed: if f[0] == "all" {
                None
            } else {
                Some(f[0].parse().map_err(|_| bad("seed"))?)
            },
            strategy: f[1].to_string(),
            steps: f[2].parse().map_err(|_| bad("steps"))?,
            metric,
            n: f[4].parse().map_err(|_| bad("n"))?,
            mean: f[5].parse().map_err(|_| bad("mean"))?,
            ci95: f[6].parse().map_err(|_| bad("ci95"))?,
        });
    }
    Ok(out)
}

/// Reads every `seed-*/metrics.csv` under `dir`, in name order.
pub fn collect_metrics(dir: &Path) -> Result<Vec<MetricRecord>> {
    let mut seed_dirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed-"))
        })
        .collect();
    seed_dirs.sort();
    let mut records = Vec::new();
    for d in seed_dirs {
        let path = d.join("metrics.csv");
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        records.extend(parse_metrics_csv(&text)?);
    }
    Ok(records)
}

/// Rebuilds `results.csv` in `dir` from the stored metric records.
pub fn write_report(dir: &Path) -> Result<Vec<ResultRow>> {
    let rows = aggregate(&collect_metrics(dir)?);
    let path = dir.join("results.csv");
    std::fs::write(&path, results_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// `t, snr(t)` and every strategy's weight on a uniform grid of `points`
/// times over `[0, 1]`.
pub fn weights_table(gamma: f64, points: usize, schedule: &ContinuousSchedule) -> Result<String> {
    if points < 2 {
        return Err(Error::InvalidArgument("weight table needs >= 2 points".into()));
    }
    let strategies: Vec<WeightStrategy> = WeightKind::ALL
        .iter()
        .map(|&k| WeightStrategy::new(k, gamma))
        .collect::<Result<_>>()?;
    let mut s = String::from("t,snr");
    for k in WeightKind::ALL {
        s.push(',');
        s.push_str(k.name());
    }
    s.push('\n');
    for i in 0..points {
        let t = i as f64 / (points - 1) as f64;
        let snr = schedule.snr(t)?;
        let _ = write!(s, "{t},{snr}");
        for st in &strategies {
            let _ = write!(s, ",{}", st.weight(snr)?);
        }
        s.push('\n');
    }
    Ok(s)
}
