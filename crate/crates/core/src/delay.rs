//! Expected processing delay of tasks under a scheduling policy.
//!
//! Delays are built bottom-up: a source/destination pair, a source server,
//! a service (weighted by where its tasks arrive), a slot (weighted by
//! service volume), and finally the time average over a horizon. A task
//! executing on an edge server shares the service's compute with the
//! expected number of tasks routed there in the same slot.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ResourceAllocation, SystemConfig};
use crate::workload::ArrivalMatrix;

/// Row-sum tolerance for scheduling rows.
pub const ROW_TOLERANCE: f64 = 1e-9;

/// Routing probabilities of one service in one slot. Row `m` holds the
/// distribution of tasks arriving at server `m` over the `M` servers
/// followed by the cloud in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingPolicy {
    pub service: usize,
    pub slot: usize,
    cells: usize,
    probs: Vec<f64>,
}

impl SchedulingPolicy {
    /// Everything goes to the cloud; feasible under any deployment.
    pub fn cloud_only(service: usize, slot: usize, cells: usize) -> Self {
        let mut probs = vec![0.0; cells * (cells + 1)];
        for m in 0..cells {
            probs[m * (cells + 1) + cells] = 1.0;
        }
        SchedulingPolicy {
            service,
            slot,
            cells,
            probs,
        }
    }

    pub fn from_rows(service: usize, slot: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let cells = rows.len();
        if rows.iter().any(|r| r.len() != cells + 1) {
            return Err(Error::Dimension(format!("policy rows must have {} entries", cells + 1)));
        }
        Ok(SchedulingPolicy {
            service,
            slot,
            cells,
            probs: rows.into_iter().flatten().collect(),
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Column index of the cloud.
    pub fn cloud(&self) -> usize {
        self.cells
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.probs[from * (self.cells + 1) + to]
    }

    pub fn set(&mut self, from: usize, to: usize, p: f64) {
        self.probs[from * (self.cells + 1) + to] = p;
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.probs[from * (self.cells + 1)..(from + 1) * (self.cells + 1)]
    }

    pub fn row_mut(&mut self, from: usize) -> &mut [f64] {
        &mut self.probs[from * (self.cells + 1)..(from + 1) * (self.cells + 1)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.cells).map(|m| self.row(m).to_vec()).collect()
    }

    /// Checks one row: entries in `[0, 1]`, sum one, and no mass on servers
    /// that do not host the service.
    pub fn validate_row(&self, from: usize, alloc: &ResourceAllocation) -> Result<()> {
        let row = self.row(from);
        let mut sum = 0.0;
        for (to, &p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "service {} row {from}: probability {p} outside [0, 1]",
                    self.service
                )));
            }
            if to < self.cells && p > 0.0 && !alloc.plan.is_deployed(to, self.service) {
                return Err(Error::InvalidArgument(format!(
                    "service {} row {from}: mass {p} on server {to} which does not host it",
                    self.service
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "service {} row {from} sums to {sum}",
                self.service
            )));
        }
        Ok(())
    }

    pub fn validate(&self, alloc: &ResourceAllocation) -> Result<()> {
        if self.cells != alloc.plan.rows.len() {
            return Err(Error::Dimension(format!(
                "policy has {} rows, plan has {}",
                self.cells,
                alloc.plan.rows.len()
            )));
        }
        (0..self.cells).try_for_each(|m| self.validate_row(m, alloc))
    }
}

/// Expected task count executing on each server: `L[m'] = sum_m p[m][m'] N[m]`.
pub fn destination_loads(policy: &SchedulingPolicy, counts: &[f64]) -> Vec<f64> {
    let cells = policy.cells();
    let mut loads = vec![0.0; cells];
    for (from, &n) in counts.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        for (to, load) in loads.iter_mut().enumerate() {
            *load += policy.get(from, to) * n;
        }
    }
    loads
}

/// Delay of a task sent from `from` to `to`, where `load` tasks share the
/// service's compute on `to`. The transmission term vanishes on the self-link.
pub fn pair_delay(
    from: usize,
    to: usize,
    service: usize,
    load: f64,
    alloc: &ResourceAllocation,
    cfg: &SystemConfig,
) -> Result<f64> {
    let spec = &cfg.services[service];
    let rate = alloc.rate(from, to, service).ok_or_else(|| {
        Error::InvalidArgument(format!("service {service} is not deployed on server {to}"))
    })?;
    let share = alloc.compute_share(to, service);
    if !(share > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "server {to} allocates no compute to service {service}"
        )));
    }
    if !(load >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative load {load}")));
    }
    let transmission = if from == to { 0.0 } else { spec.task_size / rate };
    Ok(transmission + spec.cycles * load / share)
}

/// Delay of a task from `from` processed on the cloud.
pub fn cloud_delay(from: usize, service: usize, cfg: &SystemConfig) -> f64 {
    let spec = &cfg.services[service];
    spec.task_size / cfg.servers[from].cloud_rate + spec.cycles / cfg.network.cloud_compute
}

fn source_delay_with_loads(
    from: usize,
    policy: &SchedulingPolicy,
    loads: &[f64],
    alloc: &ResourceAllocation,
    cfg: &SystemConfig,
) -> Result<f64> {
    let row = policy.row(from);
    let mut delay = 0.0;
    for (to, &p) in row[..policy.cells()].iter().enumerate() {
        if p > 0.0 {
            delay += p * pair_delay(from, to, policy.service, loads[to], alloc, cfg)?;
        }
    }
    let p_cloud = row[policy.cloud()];
    if p_cloud > 0.0 {
        delay += p_cloud * cloud_delay(from, policy.service, cfg);
    }
    Ok(delay)
}

/// Expected delay of a service task arriving at `from`.
pub fn source_delay(
    from: usize,
    policy: &SchedulingPolicy,
    arrivals: &ArrivalMatrix,
    alloc: &ResourceAllocation,
    cfg: &SystemConfig,
) -> Result<f64> {
    policy.validate_row(from, alloc)?;
    let loads = destination_loads(policy, &arrivals.service_column(policy.service));
    source_delay_with_loads(from, policy, &loads, alloc, cfg)
}

/// Expected delay of a task of `policy.service`, weighted by arrival cell.
/// A service with no arrivals has delay 0 and zero weight in the slot.
pub fn service_delay(
    policy: &SchedulingPolicy,
    arrivals: &ArrivalMatrix,
    alloc: &ResourceAllocation,
    cfg: &SystemConfig,
) -> Result<f64> {
    let counts = arrivals.service_column(policy.service);
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    policy.validate(alloc)?;
    let loads = destination_loads(policy, &counts);
    let mut delay = 0.0;
    for (from, &n) in counts.iter().enumerate() {
        if n > 0.0 {
            delay += n / total * source_delay_with_loads(from, policy, &loads, alloc, cfg)?;
        }
    }
    Ok(delay)
}

/// Closed-form convex objective used by the scheduler: transmission terms
/// are linear in the policy and each server contributes `(lambda/f) L^2`.
/// Algebraically identical to [`service_delay`].
pub fn quadratic_objective(
    policy: &SchedulingPolicy,
    arrivals: &ArrivalMatrix,
    alloc: &ResourceAllocation,
    cfg: &SystemConfig,
) -> Result<f64> {
    let service = policy.service;
    let counts = arrivals.service_column(service);
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    policy.validate(alloc)?;
    let spec = &cfg.services[service];
    let loads = destination_loads(policy, &counts);
    let mut sum = 0.0;
    for (to, &load) in loads.iter().enumerate() {
        if !alloc.plan.is_deployed(to, service) {
            continue;
        }
        for (from, &n) in counts.iter().enumerate() {
            let p = policy.get(from, to);
            if from != to && p > 0.0 {
                let rate = alloc.rate(from, to, service).expect("deployed destination");
                sum += n * p * spec.task_size / rate;
            }
        }
        sum += spec.cycles / alloc.compute_share(to, service) * load * load;
    }
    for (from, &n) in counts.iter().enumerate() {
        sum += n * policy.get(from, policy.cloud()) * cloud_delay(from, service, cfg);
    }
    Ok(sum / total)
}

/// Delay of any task in the slot, or `None` when nothing arrived.
pub fn slot_delay(
    policies: &[SchedulingPolicy],
    arrivals: &ArrivalMatrix,
    alloc: &ResourceAllocation,
    cfg: &SystemConfig,
) -> Result<Option<f64>> {
    let total = arrivals.total() as f64;
    if total == 0.0 {
        return Ok(None);
    }
    let mut delay = 0.0;
    for policy in policies {
        let n = arrivals.service_total(policy.service) as f64;
        if n > 0.0 {
            delay += n / total * service_delay(policy, arrivals, alloc, cfg)?;
        }
    }
    Ok(Some(delay))
}

/// Combines already evaluated per-service delays into the slot delay.
pub fn aggregate_slot(service_delays: &[f64], arrivals: &ArrivalMatrix) -> Option<f64> {
    let total = arrivals.total() as f64;
    (total > 0.0).then(|| {
        service_delays
            .iter()
            .enumerate()
            .map(|(j, d)| arrivals.service_total(j) as f64 / total * d)
            .sum()
    })
}

/// Mean of the counted slot delays (slots without arrivals are never passed in).
pub fn time_average(slot_delays: &[f64]) -> Result<f64> {
    if slot_delays.is_empty() {
        return Err(Error::InvalidArgument("time average over an empty horizon".into()));
    }
    Ok(slot_delays.iter().sum::<f64>() / slot_delays.len() as f64)
}

/// Full breakdown of one slot. `pair[j][m][n]` is `None` where service `j`
/// cannot run on `n` (or `m` has no arrivals); column `M` is the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayReport {
    pub slot: usize,
    pub pair: Vec<Vec<Vec<Option<f64>>>>,
    pub source: Vec<Vec<Option<f64>>>,
    pub service: Vec<f64>,
    pub slot_delay: Option<f64>,
}

pub fn evaluate_slot(
    policies: &[SchedulingPolicy],
    arrivals: &ArrivalMatrix,
    alloc: &ResourceAllocation,
    cfg: &SystemConfig,
) -> Result<DelayReport> {
    let cells = cfg.num_cells();
    if policies.len() != cfg.num_services() {
        return Err(Error::Dimension(format!(
            "expected {} policies, got {}",
            cfg.num_services(),
            policies.len()
        )));
    }
    let mut pair = Vec::with_capacity(policies.len());
    let mut source = Vec::with_capacity(policies.len());
    let mut service = Vec::with_capacity(policies.len());
    for policy in policies {
        let j = policy.service;
        let counts = arrivals.service_column(j);
        let loads = destination_loads(policy, &counts);
        let mut pairs = vec![vec![None; cells + 1]; cells];
        let mut sources = vec![None; cells];
        for from in 0..cells {
            if counts[from] == 0.0 {
                continue;
            }
            policy.validate_row(from, alloc)?;
            for to in 0..cells {
                if alloc.plan.is_deployed(to, j) {
                    pairs[from][to] = Some(pair_delay(from, to, j, loads[to], alloc, cfg)?);
                }
            }
            pairs[from][cells] = Some(cloud_delay(from, j, cfg));
            sources[from] = Some(source_delay_with_loads(from, policy, &loads, alloc, cfg)?);
        }
        pair.push(pairs);
        source.push(sources);
        service.push(service_delay(policy, arrivals, alloc, cfg)?);
    }
    let slot_delay = aggregate_slot(&service, arrivals);
    Ok(DelayReport {
        slot: arrivals.slot,
        pair,
        source,
        service,
        slot_delay,
    })
}

#[derive(Serialize)]
struct ServiceDelayRow {
    slot: usize,
    service: usize,
    service_delay: f64,
    slot_delay: f64,
}

/// CSV rows `slot,service,service_delay,slot_delay`; slots without arrivals are skipped.
pub fn write_service_delays<W: Write>(writer: W, reports: &[DelayReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for report in reports {
        let Some(slot_delay) = report.slot_delay else {
            continue;
        };
        for (service, &service_delay) in report.service.iter().enumerate() {
            out.serialize(ServiceDelayRow {
                slot: report.slot,
                service,
                service_delay,
                slot_delay,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::ConfigFile;
    use crate::model::{derive_allocation, DeploymentPlan};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small homogeneous system with explicit service parameters.
    pub(crate) fn system(cells: usize, services: &[(u32, f64, f64)]) -> SystemConfig {
        let mut file = ConfigFile::default();
        file.cells = cells;
        file.services = services.len();
        file.service_specs = Some(
            services
                .iter()
                .map(|&(data_size, task_size, cycles)| crate::model::ServiceSpec {
                    data_size,
                    task_size,
                    cycles,
                })
                .collect(),
        );
        file.resolve().unwrap()
    }

    pub(crate) fn arrivals(counts: Vec<Vec<u32>>) -> ArrivalMatrix {
        ArrivalMatrix { slot: 0, counts }
    }

    /// Random plan, arrivals and feasible policy for one service.
    pub(crate) fn random_instance(
        rng: &mut ChaCha8Rng,
        cells: usize,
    ) -> (SystemConfig, ResourceAllocation, ArrivalMatrix, SchedulingPolicy) {
        let cfg = system(
            cells,
            &[(1, rng.random_range(1.0..16.0), rng.random_range(0.1..1.0)), (1, 4.0, 0.5)],
        );
        let rows = (0..cells).map(|_| vec![rng.random_bool(0.6), rng.random_bool(0.5)]).collect();
        let alloc = derive_allocation(&DeploymentPlan::from_rows(0, rows), &cfg).unwrap();
        let counts = (0..cells).map(|_| vec![rng.random_range(0..8), rng.random_range(0..3)]).collect();
        let arr = arrivals(counts);
        let mut policy = SchedulingPolicy::cloud_only(0, 0, cells);
        for from in 0..cells {
            let mut weights: Vec<f64> = (0..=cells)
                .map(|to| {
                    if to == cells || alloc.plan.is_deployed(to, 0) {
                        rng.random::<f64>()
                    } else {
                        0.0
                    }
                })
                .collect();
            let s: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= s);
            policy.row_mut(from).copy_from_slice(&weights);
        }
        (cfg, alloc, arr, policy)
    }

    #[test]
    fn self_link_has_no_transmission() {
        let mut cfg = system(1, &[(1, 8.0, 1.0)]);
        cfg.servers[0].compute = 5.0;
        let alloc = derive_allocation(&DeploymentPlan::from_rows(0, vec![vec![true]]), &cfg).unwrap();
        assert!((pair_delay(0, 0, 0, 1.0, &alloc, &cfg).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn remote_pair_delay_by_hand() {
        // Destination hosts two services: compute 10/2 = 5, ingress 1000/2 = 500.
        let mut cfg = system(2, &[(1, 8.0, 1.0), (1, 8.0, 1.0)]);
        cfg.servers[1].compute = 10.0;
        let plan = DeploymentPlan::from_rows(0, vec![vec![false, false], vec![true, true]]);
        let alloc = derive_allocation(&plan, &cfg).unwrap();
        let d = pair_delay(0, 1, 0, 2.0, &alloc, &cfg).unwrap();
        assert!((d - 0.416).abs() < 1e-12, "{d}");
        let idle = pair_delay(0, 1, 0, 0.0, &alloc, &cfg).unwrap();
        assert!((idle - 0.016).abs() < 1e-15);
        assert!(pair_delay(1, 0, 0, 1.0, &alloc, &cfg).is_err());
    }

    #[test]
    fn cloud_delay_by_hand() {
        let cfg = system(1, &[(1, 8.0, 1.0)]);
        assert!((cloud_delay(0, 0, &cfg) - 0.18).abs() < 1e-15);
        let tiny = system(1, &[(1, 1e-12, 1.0)]);
        assert!((cloud_delay(0, 0, &tiny) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn source_delay_cases() {
        let cfg = system(2, &[(1, 8.0, 1.0)]);
        let plan = DeploymentPlan::from_rows(0, vec![vec![true], vec![true]]);
        let alloc = derive_allocation(&plan, &cfg).unwrap();
        let arr = arrivals(vec![vec![2], vec![0]]);
        let cloud = SchedulingPolicy::cloud_only(0, 0, 2);
        assert_eq!(source_delay(0, &cloud, &arr, &alloc, &cfg).unwrap(), cloud_delay(0, 0, &cfg));

        let remote = SchedulingPolicy::from_rows(0, 0, vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let expected = pair_delay(0, 1, 0, 2.0, &alloc, &cfg).unwrap();
        assert_eq!(source_delay(0, &remote, &arr, &alloc, &cfg).unwrap(), expected);

        // Half to the cloud, half local: load 1 locally.
        let split = SchedulingPolicy::from_rows(0, 0, vec![vec![0.5, 0.0, 0.5], vec![0.0, 0.0, 1.0]]).unwrap();
        let mean = 0.5 * pair_delay(0, 0, 0, 1.0, &alloc, &cfg).unwrap() + 0.5 * cloud_delay(0, 0, &cfg);
        assert!((source_delay(0, &split, &arr, &alloc, &cfg).unwrap() - mean).abs() < 1e-15);

        let bad = SchedulingPolicy::from_rows(0, 0, vec![vec![0.5, 0.0, 0.4], vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(source_delay(0, &bad, &arr, &alloc, &cfg).is_err());
    }

    #[test]
    fn mass_on_undeployed_server_is_rejected() {
        let cfg = system(2, &[(1, 8.0, 1.0)]);
        let plan = DeploymentPlan::from_rows(0, vec![vec![true], vec![false]]);
        let alloc = derive_allocation(&plan, &cfg).unwrap();
        let p = SchedulingPolicy::from_rows(0, 0, vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(p.validate(&alloc).is_err());
    }

    #[test]
    fn service_delay_weighting() {
        let cfg = system(2, &[(1, 8.0, 1.0)]);
        let alloc = derive_allocation(&DeploymentPlan::empty(0, 2, 1), &cfg).unwrap();
        let cloud = SchedulingPolicy::cloud_only(0, 0, 2);
        // Single source.
        let arr = arrivals(vec![vec![3], vec![0]]);
        assert_eq!(
            service_delay(&cloud, &arr, &alloc, &cfg).unwrap(),
            source_delay(0, &cloud, &arr, &alloc, &cfg).unwrap()
        );
        // Uniform cloud rates: every source sees the same delay.
        let arr = arrivals(vec![vec![1], vec![3]]);
        assert!((service_delay(&cloud, &arr, &alloc, &cfg).unwrap() - cloud_delay(0, 0, &cfg)).abs() < 1e-15);
        // No arrivals: zero.
        assert_eq!(service_delay(&cloud, &arrivals(vec![vec![0], vec![0]]), &alloc, &cfg).unwrap(), 0.0);

        // Weighted mean 0.25 with source delays 0.1 and 0.3: cloud rates chosen per source.
        let mut cfg = system(2, &[(1, 1.0, 1e-9)]);
        cfg.network.cloud_compute = 1e9;
        cfg.servers[0].cloud_rate = 10.0;
        cfg.servers[1].cloud_rate = 1.0 / 0.3;
        let arr = arrivals(vec![vec![1], vec![3]]);
        let d = service_delay(&cloud, &arr, &alloc, &cfg).unwrap();
        assert!((d - 0.25).abs() < 1e-9, "{d}");
    }

    #[test]
    fn slot_aggregation() {
        let cfg = system(1, &[(1, 8.0, 1.0), (1, 16.0, 2.0)]);
        let alloc = derive_allocation(&DeploymentPlan::empty(0, 1, 2), &cfg).unwrap();
        let policies = vec![SchedulingPolicy::cloud_only(0, 0, 1), SchedulingPolicy::cloud_only(1, 0, 1)];
        let one = arrivals(vec![vec![4, 0]]);
        assert_eq!(
            slot_delay(&policies, &one, &alloc, &cfg).unwrap(),
            Some(service_delay(&policies[0], &one, &alloc, &cfg).unwrap())
        );
        // Delays 0.18 and 0.36 with equal counts.
        let both = arrivals(vec![vec![2, 2]]);
        let d = slot_delay(&policies, &both, &alloc, &cfg).unwrap().unwrap();
        assert!((d - 0.27).abs() < 1e-15);
        assert_eq!(slot_delay(&policies, &arrivals(vec![vec![0, 0]]), &alloc, &cfg).unwrap(), None);
    }

    #[test]
    fn time_average_cases() {
        assert_eq!(time_average(&[0.4]).unwrap(), 0.4);
        assert!((time_average(&[0.7; 9]).unwrap() - 0.7).abs() < 1e-15);
        assert!((time_average(&[0.1, 0.3]).unwrap() - 0.2).abs() < 1e-15);
        assert!(time_average(&[]).is_err());
    }

    #[test]
    fn quadratic_objective_special_cases() {
        let cfg = system(2, &[(1, 8.0, 1.0)]);
        let plan = DeploymentPlan::from_rows(0, vec![vec![true], vec![true]]);
        let alloc = derive_allocation(&plan, &cfg).unwrap();
        let arr = arrivals(vec![vec![2], vec![1]]);
        let cloud = SchedulingPolicy::cloud_only(0, 0, 2);
        let expected = (2.0 * cloud_delay(0, 0, &cfg) + cloud_delay(1, 0, &cfg)) / 3.0;
        assert!((quadratic_objective(&cloud, &arr, &alloc, &cfg).unwrap() - expected).abs() < 1e-15);

        let single = system(1, &[(1, 8.0, 1.0)]);
        let alloc = derive_allocation(&DeploymentPlan::from_rows(0, vec![vec![true]]), &single).unwrap();
        let local = SchedulingPolicy::from_rows(0, 0, vec![vec![1.0, 0.0]]).unwrap();
        let v = quadratic_objective(&local, &arrivals(vec![vec![1]]), &alloc, &single).unwrap();
        assert!((v - 1.0 / 20.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let cells = rng.random_range(1..5);
            let (cfg, alloc, arr, policy) = random_instance(&mut rng, cells);
            let direct = service_delay(&policy, &arr, &alloc, &cfg).unwrap();
            let quad = quadratic_objective(&policy, &arr, &alloc, &cfg).unwrap();
            assert!((direct - quad).abs() <= 1e-9 * (1.0 + direct), "{direct} vs {quad}");
        }
    }

    #[test]
    fn report_matches_scalar_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (cfg, alloc, arr, policy) = random_instance(&mut rng, 3);
        let policies = vec![policy, SchedulingPolicy::cloud_only(1, 0, 3)];
        let report = evaluate_slot(&policies, &arr, &alloc, &cfg).unwrap();
        assert_eq!(report.slot_delay, slot_delay(&policies, &arr, &alloc, &cfg).unwrap());
        for from in 0..3 {
            if arr.counts[from][0] > 0 {
                assert_eq!(
                    report.source[0][from],
                    Some(source_delay(from, &policies[0], &arr, &alloc, &cfg).unwrap())
                );
            }
        }
        let mut buf = Vec::new();
        write_service_delays(&mut buf, &[report]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("slot,service,service_delay,slot_delay\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn deterministic_routing_respects_compute_bound() {
        // With one-hot rows every destination carries at least one whole task.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let cells = rng.random_range(1..5);
            let (cfg, alloc, arr, mut policy) = random_instance(&mut rng, cells);
            for from in 0..cells {
                let options: Vec<usize> = (0..=cells)
                    .filter(|&to| to == cells || alloc.plan.is_deployed(to, 0))
                    .collect();
                let pick = options[rng.random_range(0..options.len())];
                let row = policy.row_mut(from);
                row.iter_mut().for_each(|p| *p = 0.0);
                row[pick] = 1.0;
            }
            if arr.service_total(0) == 0 {
                continue;
            }
            let best_f = (0..cells)
                .map(|m| alloc.compute_share(m, 0))
                .fold(cfg.network.cloud_compute, f64::max);
            let bound = cfg.services[0].cycles / best_f;
            let d = service_delay(&policy, &arr, &alloc, &cfg).unwrap();
            assert!(d >= bound - 1e-15, "{d} < {bound}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn permuting_servers_preserves_delay(seed in 0u64..10_000, shift in 1usize..4) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cells = 4;
                let (cfg, alloc, arr, policy) = random_instance(&mut rng, cells);
                let perm: Vec<usize> = (0..cells).map(|m| (m + shift) % cells).collect();
                // new index perm[m] holds old server m
                let mut rows = vec![vec![false; 2]; cells];
                let mut counts = vec![vec![0; 2]; cells];
                let mut prows = vec![vec![0.0; cells + 1]; cells];
                for m in 0..cells {
                    rows[perm[m]] = alloc.plan.rows[m].clone();
                    counts[perm[m]] = arr.counts[m].clone();
                    for n in 0..cells {
                        prows[perm[m]][perm[n]] = policy.get(m, n);
                    }
                    prows[perm[m]][cells] = policy.get(m, cells);
                }
                let alloc2 = derive_allocation(&DeploymentPlan::from_rows(0, rows), &cfg).unwrap();
                let arr2 = arrivals(counts);
                let policy2 = SchedulingPolicy::from_rows(0, 0, prows).unwrap();
                let a = service_delay(&policy, &arr, &alloc, &cfg).unwrap();
                let b = service_delay(&policy2, &arr2, &alloc2, &cfg).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
            }

            #[test]
            fn more_load_never_helps_a_source(seed in 0u64..10_000, bump_at in 0usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (cfg, alloc, arr, policy) = random_instance(&mut rng, 3);
                let mut more = arr.clone();
                more.counts[bump_at][0] += 1;
                for from in 0..3 {
                    let before = source_delay(from, &policy, &arr, &alloc, &cfg).unwrap();
                    let after = source_delay(from, &policy, &more, &alloc, &cfg).unwrap();
                    prop_assert!(after >= before - 1e-15);
                }
                // Total expected delay over all tasks grows as well.
                let total = |a: &ArrivalMatrix| {
                    a.service_total(0) as f64 * service_delay(&policy, a, &alloc, &cfg).unwrap()
                };
                prop_assert!(total(&more) >= total(&arr) - 1e-12);
            }
        }
    }
}
