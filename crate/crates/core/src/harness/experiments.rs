//! Parameter sweeps and aggregation of their outputs into plot tables.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{read_csv, smooth, write_csv, EpisodeRecord};
use super::{run, RunOptions, Scheme};
use crate::config::ConfigFile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Cells,
    Services,
    Zipf,
    Storage,
    Compute,
    /// Mean cell population; the range keeps the default 1:5 spread.
    Users,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Cells,
        SweepAxis::Services,
        SweepAxis::Zipf,
        SweepAxis::Storage,
        SweepAxis::Compute,
        SweepAxis::Users,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Cells => "cells",
            SweepAxis::Services => "services",
            SweepAxis::Zipf => "zipf",
            SweepAxis::Storage => "storage",
            SweepAxis::Compute => "compute",
            SweepAxis::Users => "users",
        }
    }

    fn integral(self) -> bool {
        !matches!(self, SweepAxis::Zipf | SweepAxis::Compute)
    }

    /// Sets this axis to `value` in `file`.
    pub fn apply(self, file: &mut ConfigFile, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidArgument(format!("{self} value {value} must be finite and >= 0")));
        }
        if self.integral() && value.fract() != 0.0 {
            return Err(Error::InvalidArgument(format!("{self} takes integer values, got {value}")));
        }
        match self {
            SweepAxis::Cells => {
                file.cells = value as usize;
                file.server_specs = None;
                file.network.bandwidth_matrix = None;
            }
            SweepAxis::Services => {
                file.services = value as usize;
                file.service_specs = None;
            }
            SweepAxis::Zipf => file.workload.zipf_exponent = value,
            SweepAxis::Storage => {
                file.server.storage = value as u32;
                file.server_specs = None;
            }
            SweepAxis::Compute => {
                file.server.compute = value;
                file.server_specs = None;
            }
            SweepAxis::Users => {
                let mean = value as u32;
                file.workload.users_min = (mean as f64 / 3.0).round() as u32;
                file.workload.users_max = (mean as f64 * 5.0 / 3.0).round() as u32;
            }
        }
        Ok(())
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub schemes: Vec<Scheme>,
    pub episodes: usize,
    pub eval_episodes: usize,
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("at least one scheme is required".into()));
        }
        if self.axis.is_some() && self.values.is_empty() {
            return Err(Error::InvalidArgument("a sweep needs at least one value".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sweep values must be finite".into()));
        }
        Ok(())
    }
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: String,
    pub value: f64,
    pub scheme: String,
    pub seed: u64,
    /// Mean time-average delay over evaluation episodes (all episodes if none).
    pub mean_delay: Option<f64>,
    pub mean_reward: f64,
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Runs every (value, scheme, seed) combination. Each run writes its CSVs to
/// `<output>/<axis>=<value>/<scheme>/seed<seed>/`; all rows are collected in
/// `<output>/summary.csv`. `progress` is told about each finished run.
pub fn sweep(base: &ConfigFile, spec: &ExperimentSpec, progress: &mut dyn FnMut(&SummaryRow)) -> Result<Vec<SummaryRow>> {
    spec.validate()?;
    let points: Vec<(String, Option<f64>)> = match spec.axis {
        Some(axis) => spec.values.iter().map(|&v| (axis.name().to_string(), Some(v))).collect(),
        None => vec![("none".to_string(), None)],
    };
    let mut rows = Vec::new();
    for (axis_name, value) in &points {
        let mut file = base.clone();
        if let (Some(axis), Some(v)) = (spec.axis, value) {
            axis.apply(&mut file, *v)?;
        }
        let point_dir = match value {
            Some(v) => spec.output.join(format!("{axis_name}={}", format_value(*v))),
            None => spec.output.clone(),
        };
        for &scheme in &spec.schemes {
            for &seed in &spec.seeds {
                file.seed = seed;
                let cfg = file.resolve()?;
                let opts = RunOptions {
                    eval_episodes: spec.eval_episodes,
                    ..RunOptions::new(scheme, spec.episodes)
                };
                let out = run(&cfg, &opts, &mut |_| {})?;
                out.write_dir(&point_dir.join(scheme.name()).join(format!("seed{seed}")))?;
                let row = SummaryRow {
                    axis: axis_name.clone(),
                    value: value.unwrap_or(0.0),
                    scheme: scheme.name().to_string(),
                    seed,
                    mean_delay: out.metrics.summary_delay(),
                    mean_reward: super::metrics::mean(&out.metrics.rewards()).unwrap_or(0.0),
                };
                progress(&row);
                rows.push(row);
            }
        }
    }
    std::fs::create_dir_all(&spec.output)?;
    write_csv(spec.output.join("summary.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub axis: String,
    pub value: f64,
    pub scheme: String,
    pub seeds: usize,
    pub mean_delay: f64,
    pub std_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub reward: f64,
    pub smoothed: f64,
}

/// Per-(axis, value, scheme) mean and sample standard deviation over seeds.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<TableRow> {
    let mut groups: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    let mut values: BTreeMap<u64, f64> = BTreeMap::new();
    for r in rows {
        if let Some(d) = r.mean_delay {
            let key = r.value.to_bits();
            values.insert(key, r.value);
            groups
                .entry((r.axis.clone(), r.scheme.clone(), key))
                .or_default()
                .push(d);
        }
    }
    let mut table: Vec<TableRow> = groups
        .into_iter()
        .map(|((axis, scheme, key), d)| {
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            let var = if d.len() > 1 {
                d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            TableRow {
                axis,
                value: values[&key],
                scheme,
                seeds: d.len(),
                mean_delay: mean,
                std_delay: var.sqrt(),
            }
        })
        .collect();
    table.sort_by(|a, b| {
        a.axis
            .cmp(&b.axis)
            .then(a.value.total_cmp(&b.value))
            .then(a.scheme.cmp(&b.scheme))
    });
    table
}

fn find_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            find_files(&path, name, out)?;
        } else if path.file_name().is_some_and(|n| n == name) {
            out.push(path);
        }
    }
    Ok(())
}

/// Collects every `summary.csv` under `input` into `<axis>_table.csv` files
/// and every `episodes.csv` into a smoothed reward curve. Returns the
/// written paths.
pub fn plotdata(input: &Path, output: &Path, window: usize) -> Result<Vec<PathBuf>> {
    let mut summaries = Vec::new();
    find_files(input, "summary.csv", &mut summaries)?;
    let mut episodes = Vec::new();
    find_files(input, "episodes.csv", &mut episodes)?;
    if summaries.is_empty() && episodes.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no summary.csv or episodes.csv under {}",
            input.display()
        )));
    }
    std::fs::create_dir_all(output)?;
    let mut written = Vec::new();

    let mut rows: Vec<SummaryRow> = Vec::new();
    for path in &summaries {
        rows.extend(read_csv::<SummaryRow>(path)?);
    }
    let table = aggregate(&rows);
    let mut by_axis: BTreeMap<String, Vec<TableRow>> = BTreeMap::new();
    for row in table {
        by_axis.entry(row.axis.clone()).or_default().push(row);
    }
    for (axis, rows) in by_axis {
        let path = output.join(format!("{axis}_table.csv"));
        write_csv(&path, &rows)?;
        written.push(path);
    }

    for path in &episodes {
        let records: Vec<EpisodeRecord> = read_csv(path)?;
        if records.is_empty() {
            continue;
        }
        let rewards: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
        let smoothed = smooth(&rewards, window)?;
        let curve: Vec<CurveRow> = records
            .iter()
            .zip(smoothed)
            .map(|(r, s)| CurveRow {
                episode: r.episode,
                reward: r.mean_reward,
                smoothed: s,
            })
            .collect();
        let rel = path
            .parent()
            .and_then(|p| p.strip_prefix(input).ok())
            .map(|p| p.to_string_lossy().replace(['/', '\\', '='], "_"))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "run".into());
        let out = output.join(format!("curve_{rel}.csv"));
        write_csv(&out, &curve)?;
        written.push(out);
    }
    Ok(written)
}
