//! Run records and their CSV encodings.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

/// One small-timescale step. `slot` counts from the start of the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub episode: usize,
    pub frame: usize,
    pub slot: usize,
    pub tasks: u32,
    /// Slot delay; empty when no task arrived.
    pub delay: Option<f64>,
    pub cloud_delay: Option<f64>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub episode: usize,
    pub frame: usize,
    /// Shared reward of the frame's deployment.
    pub reward: f64,
    /// Total number of (server, service) placements.
    pub deployed: usize,
    /// Mean pre-update loss over the agents that trained this frame.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub phase: Phase,
    pub epsilon: f64,
    pub mean_reward: f64,
    /// Time-average delay over the slots that had arrivals.
    pub mean_delay: Option<f64>,
    pub mean_loss: Option<f64>,
}

/// Per-service delay row; `slot` is the slot index across the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDelayRow {
    pub slot: usize,
    pub service: usize,
    pub service_delay: f64,
    pub slot_delay: Option<f64>,
}

/// Wall-clock seconds, kept apart from the deterministic metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    /// One entry per slot solve.
    pub scheduling: Vec<f64>,
    /// One entry per agent and frame: action selection plus training step.
    pub deployment: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRecord {
    pub slots: Vec<SlotRecord>,
    pub frames: Vec<FrameRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub service_delays: Vec<ServiceDelayRow>,
    pub timings: Timings,
}

impl MetricsRecord {
    /// Mean of the per-episode delays of `phase`.
    pub fn mean_delay(&self, phase: Phase) -> Option<f64> {
        let delays: Vec<f64> = self
            .episodes
            .iter()
            .filter(|e| e.phase == phase)
            .filter_map(|e| e.mean_delay)
            .collect();
        (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64)
    }

    /// Mean delay over evaluation episodes, or over all episodes if there are none.
    pub fn summary_delay(&self) -> Option<f64> {
        self.mean_delay(Phase::Eval).or_else(|| self.mean_delay(Phase::Train))
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.mean_reward).collect()
    }

    /// Writes `slots.csv`, `frames.csv`, `episodes.csv`, `timings.csv` and,
    /// if recorded, `service_delays.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(dir.join("slots.csv"), &self.slots)?;
        write_csv(dir.join("frames.csv"), &self.frames)?;
        write_csv(dir.join("episodes.csv"), &self.episodes)?;
        if !self.service_delays.is_empty() {
            write_csv(dir.join("service_delays.csv"), &self.service_delays)?;
        }
        let mut timings = File::create(dir.join("timings.csv"))?;
        writeln!(timings, "kind,index,seconds")?;
        for (kind, values) in [("scheduling", &self.timings.scheduling), ("deployment", &self.timings.deployment)] {
            for (i, v) in values.iter().enumerate() {
                writeln!(timings, "{kind},{i},{v}")?;
            }
        }
        Ok(())
    }
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Centered moving average; the window shrinks at both ends.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("cannot smooth an empty series".into()));
    }
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let (left, right) = ((window - 1) / 2, window / 2);
    let mut prefix = Vec::with_capacity(series.len() + 1);
    prefix.push(0.0);
    for v in series {
        prefix.push(prefix.last().unwrap() + v);
    }
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(series.len() - 1);
            // Direct summation keeps constant series exact.
            if hi - lo < 64 {
                series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            } else {
                (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1) as f64
            }
        })
        .collect())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_examples() {
        let s = smooth(&[0.0, 10.0, 0.0], 3).unwrap();
        assert!((s[0] - 5.0).abs() < 1e-15);
        assert!((s[1] - 10.0 / 3.0).abs() < 1e-15);
        assert!((s[2] - 5.0).abs() < 1e-15);
        let series = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(smooth(&series, 1).unwrap(), series.to_vec());
        assert_eq!(smooth(&[2.5; 300], 101).unwrap(), vec![2.5; 300]);
        assert!(smooth(&[], 3).is_err());
        assert!(smooth(&[1.0], 0).is_err());
    }

    #[test]
    fn smoothing_matches_direct_average_for_long_windows() {
        let series: Vec<f64> = (0..500).map(|i| ((i * 37) % 11) as f64).collect();
        let fast = smooth(&series, 100).unwrap();
        for i in [0usize, 10, 49, 50, 250, 450, 499] {
            let lo = i.saturating_sub(49);
            let hi = (i + 50).min(499);
            let direct: f64 = series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            assert!((fast[i] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(mean(&[1.0, 2.0]), Some(1.5));
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SlotRecord {
                episode: 0,
                frame: 0,
                slot: 0,
                tasks: 0,
                delay: None,
                cloud_delay: None,
                gain: 0.0,
            },
            SlotRecord {
                episode: 0,
                frame: 0,
                slot: 1,
                tasks: 4,
                delay: Some(0.123),
                cloud_delay: Some(0.2),
                gain: 0.077,
            },
        ];
        let path = dir.path().join("slots.csv");
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("episode,frame,slot,tasks,delay,cloud_delay,gain\n"));
        assert_eq!(read_csv::<SlotRecord>(&path).unwrap(), rows);
    }
}
