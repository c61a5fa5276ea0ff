//! Spatiotemporally non-uniform task arrivals.
//!
//! Each cell has a seeded user population and its own permutation of the
//! Zipf rank order, so different cells favour different services. The
//! permutation optionally rotates by one rank every `rotation_period`
//! frames, which gives request patterns a temporal drift.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub users_min: u32,
    pub users_max: u32,
    pub zipf_exponent: f64,
    /// Probability that a user issues a task in a given slot.
    pub activity: f64,
    /// Frames between one-rank rotations of every cell's popularity order; 0 disables.
    pub rotation_period: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            users_min: 10,
            users_max: 50,
            zipf_exponent: 1.2,
            activity: 0.3,
            rotation_period: 5,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users_min > self.users_max {
            return Err(Error::Config(format!(
                "users_min {} exceeds users_max {}",
                self.users_min, self.users_max
            )));
        }
        if !(self.zipf_exponent >= 0.0) || !self.zipf_exponent.is_finite() {
            return Err(Error::Config("zipf exponent must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.activity) {
            return Err(Error::Config("activity probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Zipf probabilities over ranks `1..=J`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipfPopularity {
    pub exponent: f64,
    pub pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl ZipfPopularity {
    pub fn new(services: usize, exponent: f64) -> Result<Self> {
        let pmf = zipf_pmf(services, exponent)?;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cdf.last_mut().expect("at least one service") = 1.0;
        Ok(ZipfPopularity { exponent, pmf, cdf })
    }

    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    /// Zero-based rank for a uniform draw `u` in `[0, 1)`.
    pub fn rank_for(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

pub fn zipf_pmf(services: usize, exponent: f64) -> Result<Vec<f64>> {
    if services == 0 {
        return Err(Error::InvalidArgument("zipf needs at least one service".into()));
    }
    if !(exponent >= 0.0) {
        return Err(Error::InvalidArgument(format!("zipf exponent {exponent} must be >= 0")));
    }
    let weights: Vec<f64> = (1..=services).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPopulation {
    pub users: Vec<u32>,
}

pub fn sample_populations(workload: &WorkloadConfig, cells: usize, seed: u64) -> Result<CellPopulation> {
    if workload.users_min > workload.users_max {
        return Err(Error::InvalidArgument(format!(
            "population bounds [{}, {}] are reversed",
            workload.users_min, workload.users_max
        )));
    }
    let mut rng = seeding::stream(seed, &[seeding::POPULATION]);
    Ok(CellPopulation {
        users: (0..cells)
            .map(|_| rng.random_range(workload.users_min..=workload.users_max))
            .collect(),
    })
}

/// Task counts `counts[m][j]` for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalMatrix {
    pub slot: usize,
    pub counts: Vec<Vec<u32>>,
}

impl ArrivalMatrix {
    pub fn zeros(slot: usize, cells: usize, services: usize) -> Self {
        ArrivalMatrix {
            slot,
            counts: vec![vec![0; services]; cells],
        }
    }

    pub fn cells(&self) -> usize {
        self.counts.len()
    }

    pub fn services(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    /// Arrivals of `service` at every cell, as reals.
    pub fn service_column(&self, service: usize) -> Vec<f64> {
        self.counts.iter().map(|row| row[service] as f64).collect()
    }

    pub fn service_total(&self, service: usize) -> u32 {
        self.counts.iter().map(|row| row[service]).sum()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().flatten().sum()
    }
}

/// Samples one cell's arrivals given a rank-to-service mapping.
fn sample_cell(
    users: u32,
    popularity: &ZipfPopularity,
    service_at_rank: impl Fn(usize) -> usize,
    activity: f64,
    rng: &mut impl Rng,
    out: &mut [u32],
) {
    for _ in 0..users {
        if rng.random::<f64>() < activity {
            let rank = popularity.rank_for(rng.random::<f64>());
            out[service_at_rank(rank)] += 1;
        }
    }
}

/// Arrivals for one slot under a global (unpermuted) popularity order.
/// Deterministic in `(seed, slot, cell)`.
pub fn generate_arrivals(
    population: &CellPopulation,
    popularity: &ZipfPopularity,
    activity: f64,
    slot: usize,
    seed: u64,
) -> Result<ArrivalMatrix> {
    if !(0.0..=1.0).contains(&activity) {
        return Err(Error::InvalidArgument(format!("activity {activity} outside [0, 1]")));
    }
    let mut matrix = ArrivalMatrix::zeros(slot, population.users.len(), popularity.len());
    for (cell, (&users, row)) in population.users.iter().zip(&mut matrix.counts).enumerate() {
        let mut rng = seeding::stream(seed, &[seeding::ARRIVALS, slot as u64, cell as u64]);
        sample_cell(users, popularity, |r| r, activity, &mut rng, row);
    }
    Ok(matrix)
}

/// The full arrival process of one episode: populations, per-cell rank
/// permutations and the rotation schedule.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    pub population: CellPopulation,
    pub popularity: ZipfPopularity,
    /// `rankings[m][r]` is the service at zero-based rank `r` in cell `m` before rotation.
    pub rankings: Vec<Vec<usize>>,
    activity: f64,
    rotation_period: usize,
    slots_per_frame: usize,
    seed: u64,
}

impl ArrivalProcess {
    pub fn new(cfg: &SystemConfig, seed: u64) -> Result<Self> {
        let cells = cfg.num_cells();
        let services = cfg.num_services();
        let population = sample_populations(&cfg.workload, cells, seed)?;
        let popularity = ZipfPopularity::new(services, cfg.workload.zipf_exponent)?;
        let mut rng = seeding::stream(seed, &[seeding::PERMUTATION]);
        let rankings = (0..cells)
            .map(|_| {
                let mut order: Vec<usize> = (0..services).collect();
                order.shuffle(&mut rng);
                order
            })
            .collect();
        Ok(ArrivalProcess {
            population,
            popularity,
            rankings,
            activity: cfg.workload.activity,
            rotation_period: cfg.workload.rotation_period,
            slots_per_frame: cfg.slots_per_frame,
            seed,
        })
    }

    fn shift(&self, slot: usize) -> usize {
        if self.rotation_period == 0 {
            0
        } else {
            (slot / self.slots_per_frame / self.rotation_period) % self.popularity.len()
        }
    }

    pub fn service_at_rank(&self, cell: usize, rank: usize, slot: usize) -> usize {
        let ranking = &self.rankings[cell];
        ranking[(rank + self.shift(slot)) % ranking.len()]
    }

    /// Probability that a task issued in `cell` during `slot` requests each service.
    pub fn cell_pmf(&self, cell: usize, slot: usize) -> Vec<f64> {
        let mut pmf = vec![0.0; self.popularity.len()];
        for (rank, p) in self.popularity.pmf.iter().enumerate() {
            pmf[self.service_at_rank(cell, rank, slot)] = *p;
        }
        pmf
    }

    pub fn arrivals(&self, slot: usize) -> ArrivalMatrix {
        let mut matrix = ArrivalMatrix::zeros(slot, self.population.users.len(), self.popularity.len());
        for (cell, (&users, row)) in self.population.users.iter().zip(&mut matrix.counts).enumerate() {
            let mut rng = seeding::stream(self.seed, &[seeding::ARRIVALS, slot as u64, cell as u64]);
            sample_cell(
                users,
                &self.popularity,
                |r| self.service_at_rank(cell, r, slot),
                self.activity,
                &mut rng,
                row,
            );
        }
        matrix
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    slot: usize,
    cell: usize,
    service: usize,
    count: u32,
}

/// Writes arrivals as CSV with header `slot,cell,service,count`, one row per entry.
pub fn write_trace<W: Write>(writer: W, trace: &[ArrivalMatrix]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for matrix in trace {
        for (cell, row) in matrix.counts.iter().enumerate() {
            for (service, &count) in row.iter().enumerate() {
                out.serialize(TraceRow {
                    slot: matrix.slot,
                    cell,
                    service,
                    count,
                })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]. Missing entries count as zero;
/// slots are returned in ascending order.
pub fn read_trace<R: Read>(reader: R, cells: usize, services: usize) -> Result<Vec<ArrivalMatrix>> {
    let mut input = csv::Reader::from_reader(reader);
    let mut slots: std::collections::BTreeMap<usize, ArrivalMatrix> = Default::default();
    for row in input.deserialize() {
        let row: TraceRow = row?;
        if row.cell >= cells || row.service >= services {
            return Err(Error::Dimension(format!(
                "trace entry (cell {}, service {}) outside {cells}x{services}",
                row.cell, row.service
            )));
        }
        slots
            .entry(row.slot)
            .or_insert_with(|| ArrivalMatrix::zeros(row.slot, cells, services))
            .counts[row.cell][row.service] = row.count;
    }
    Ok(slots.into_values().collect())
}
