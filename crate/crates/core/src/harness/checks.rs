//! Self-checks against independent references, and timing of both timescales.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use super::metrics::{mean, median};
use super::{run, RunOptions, Scheme};
use crate::config::ConfigFile;
use crate::delay::{quadratic_objective, service_delay, SchedulingPolicy};
use crate::error::Result;
use crate::model::{derive_allocation, DeploymentPlan, ServiceSpec, SystemConfig};
use crate::rl::{exhaustive_select, knapsack_select, q_value};
use crate::scheduler::{brute_force_problem, solve_problem, ServiceProblem, SolverSettings};
use crate::seeding::{self, SimRng};
use crate::workload::ArrivalMatrix;

/// Outcome of one oracle suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    /// Largest observed discrepancy, in the unit stated by `metric`.
    pub worst: f64,
    pub metric: String,
    pub failures: usize,
    pub seconds: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Random 0/1 knapsack instances (up to `max_items` items, integer sizes,
/// values of either sign) solved by dynamic programming and by enumeration.
pub fn knapsack_suite(instances: usize, max_items: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeding::stream(seed, &[seeding::CHECKS, 1]);
    let start = Instant::now();
    let (mut worst, mut failures) = (0.0f64, 0);
    for _ in 0..instances {
        let items = rng.random_range(1..=max_items);
        let values: Vec<f64> = (0..items).map(|_| rng.random_range(-10.0..10.0)).collect();
        let weights: Vec<u32> = (0..items).map(|_| rng.random_range(1..=8)).collect();
        let capacity = rng.random_range(0..=weights.iter().sum::<u32>() as i64);
        let dp = q_value(&values, &knapsack_select(&values, &weights, capacity)?);
        let ex = q_value(&values, &exhaustive_select(&values, &weights, capacity)?);
        let gap = (dp - ex).abs();
        worst = worst.max(gap);
        if dp != ex {
            failures += 1;
        }
    }
    Ok(CheckReport {
        name: "knapsack-vs-exhaustive".into(),
        instances,
        worst,
        metric: "absolute value gap".into(),
        failures,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Two cells, one service, random parameters, placement and arrivals.
pub fn random_scheduling_instance(rng: &mut SimRng) -> Result<(SystemConfig, DeploymentPlan, ArrivalMatrix)> {
    let mut file = ConfigFile {
        cells: 2,
        services: 1,
        service_specs: Some(vec![ServiceSpec {
            data_size: 1,
            task_size: rng.random_range(1.0..20.0),
            cycles: rng.random_range(0.05..1.5),
        }]),
        ..Default::default()
    };
    file.server.compute = rng.random_range(2.0..40.0);
    file.server.cloud_rate = rng.random_range(20.0..200.0);
    file.network.inter_es_bandwidth = file.server.cloud_rate * rng.random_range(1.5..20.0);
    file.network.cloud_compute = rng.random_range(2.0..20.0);
    let cfg = file.resolve()?;
    let rows = (0..2).map(|_| vec![rng.random_bool(0.7)]).collect();
    let plan = DeploymentPlan::from_rows(0, rows);
    let counts = (0..2).map(|_| vec![rng.random_range(0..=10)]).collect();
    Ok((cfg, plan, ArrivalMatrix { slot: 0, counts }))
}

/// Solver against a grid search with the given step; also checks the
/// solver never ends above the all-cloud objective.
pub fn scheduler_suite(instances: usize, grid_step: f64, seed: u64) -> Result<CheckReport> {
    let mut rng = seeding::stream(seed, &[seeding::CHECKS, 2]);
    let settings = SolverSettings::default();
    let start = Instant::now();
    let (mut worst, mut failures) = (f64::NEG_INFINITY, 0);
    for _ in 0..instances {
        let (cfg, plan, arrivals) = random_scheduling_instance(&mut rng)?;
        let alloc = derive_allocation(&plan, &cfg)?;
        let problem = ServiceProblem::new(0, &alloc, &arrivals, &cfg);
        let solved = solve_problem(&problem, &settings, 0)?;
        let (oracle, _) = brute_force_problem(&problem, grid_step)?;
        let excess = solved.objective - oracle;
        worst = worst.max(excess);
        if excess > 1e-3 || solved.objective > solved.cloud_objective {
            failures += 1;
        }
    }
    Ok(CheckReport {
        name: "scheduler-vs-grid".into(),
        instances,
        worst,
        metric: "solver minus grid objective (s)".into(),
        failures,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Random feasible row over the allowed columns.
fn random_row(rng: &mut SimRng, allowed: &[bool]) -> Vec<f64> {
    let mut row: Vec<f64> = allowed
        .iter()
        .map(|&a| if a && rng.random_bool(0.8) { rng.random::<f64>() } else { 0.0 })
        .collect();
    let cloud = row.len() - 1;
    row[cloud] += rng.random::<f64>() * 0.5 + 1e-3;
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    row
}

/// Closed-form quadratic objective against direct per-pair evaluation.
pub fn delay_identity_suite(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = seeding::stream(seed, &[seeding::CHECKS, 3]);
    let start = Instant::now();
    let (mut worst, mut failures) = (0.0f64, 0);
    for _ in 0..instances {
        let cells = rng.random_range(1..=5);
        let services = rng.random_range(1..=4);
        let mut file = ConfigFile {
            cells,
            services,
            seed: rng.random(),
            ..Default::default()
        };
        file.server.compute = rng.random_range(5.0..40.0);
        file.server.storage = 4 * services as u32;
        let cfg = file.resolve()?;
        let rows: Vec<Vec<bool>> = (0..cells)
            .map(|_| (0..services).map(|_| rng.random_bool(0.6)).collect())
            .collect();
        let plan = DeploymentPlan::from_rows(0, rows);
        let alloc = derive_allocation(&plan, &cfg)?;
        let counts = (0..cells)
            .map(|_| (0..services).map(|_| rng.random_range(0..8)).collect())
            .collect();
        let arrivals = ArrivalMatrix { slot: 0, counts };
        for j in 0..services {
            let mut allowed: Vec<bool> = (0..cells).map(|m| plan.is_deployed(m, j)).collect();
            allowed.push(true);
            let probs = (0..cells).map(|_| random_row(&mut rng, &allowed)).collect();
            let policy = SchedulingPolicy::from_rows(j, 0, probs)?;
            let direct = service_delay(&policy, &arrivals, &alloc, &cfg)?;
            let closed = quadratic_objective(&policy, &arrivals, &alloc, &cfg)?;
            let rel = (direct - closed).abs() / direct.abs().max(f64::MIN_POSITIVE);
            let rel = if direct == 0.0 && closed == 0.0 { 0.0 } else { rel };
            worst = worst.max(rel);
            if rel > 1e-9 {
                failures += 1;
            }
        }
    }
    Ok(CheckReport {
        name: "delay-identity".into(),
        instances,
        worst,
        metric: "relative error".into(),
        failures,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn oracle_suites(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        knapsack_suite(200, 16, seed)?,
        scheduler_suite(50, 0.02, seed)?,
        delay_identity_suite(100, seed)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub cells: usize,
    pub services: usize,
    pub hidden: usize,
    pub slot_samples: usize,
    pub slot_mean: f64,
    pub slot_median: f64,
    pub deployment_samples: usize,
    pub deployment_mean: f64,
    pub deployment_median: f64,
}

/// Times a TTOSC run: `warmup` episodes fill the replay buffers, the next
/// `measured` episodes are timed. Deployment samples only include frames in
/// which every agent trained.
pub fn bench(cfg: &SystemConfig, warmup: usize, measured: usize) -> Result<BenchReport> {
    let opts = RunOptions::new(Scheme::Ttosc, warmup + measured.max(1));
    let out = run(cfg, &opts, &mut |_| {})?;
    let m = &out.metrics;
    let slots_per_episode = cfg.frames * cfg.slots_per_frame;
    let deploy_per_episode = cfg.frames * cfg.num_cells();
    let slot_times = &m.timings.scheduling[warmup * slots_per_episode..];
    let deploy_times = &m.timings.deployment[warmup * deploy_per_episode..];
    Ok(BenchReport {
        cells: cfg.num_cells(),
        services: cfg.num_services(),
        hidden: cfg.training.hidden,
        slot_samples: slot_times.len(),
        slot_mean: mean(slot_times).unwrap_or(0.0),
        slot_median: median(slot_times).unwrap_or(0.0),
        deployment_samples: deploy_times.len(),
        deployment_mean: mean(deploy_times).unwrap_or(0.0),
        deployment_median: median(deploy_times).unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_small_counts() {
        assert!(knapsack_suite(30, 10, 1).unwrap().passed());
        let sched = scheduler_suite(5, 0.05, 1).unwrap();
        assert!(sched.passed(), "{sched:?}");
        let ident = delay_identity_suite(20, 1).unwrap();
        assert!(ident.passed(), "{ident:?}");
    }

    #[test]
    fn random_rows_are_feasible() {
        let mut rng = seeding::stream(2, &[seeding::CHECKS]);
        for _ in 0..100 {
            let allowed = vec![true, false, true, true];
            let row = random_row(&mut rng, &allowed);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[1], 0.0);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn bench_reports_both_timescales() {
        let mut file = ConfigFile {
            cells: 2,
            services: 4,
            frames: 4,
            slots_per_frame: 2,
            ..Default::default()
        };
        file.training.hidden = 4;
        file.training.batch_size = 2;
        file.training.buffer_capacity = 16;
        let cfg = file.resolve().unwrap();
        let report = bench(&cfg, 1, 1).unwrap();
        assert_eq!(report.slot_samples, 8);
        assert_eq!(report.deployment_samples, 8);
        assert!(report.slot_median > 0.0 && report.deployment_median > 0.0);
    }
}
