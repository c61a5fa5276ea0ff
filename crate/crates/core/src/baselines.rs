//! Reference strategies: all-cloud, popularity-driven and greedy deployment,
//! and uniformly random feasible deployment.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::delay::{cloud_delay, pair_delay, quadratic_objective, SchedulingPolicy};
use crate::error::{Error, Result};
use crate::model::{ResourceAllocation, SystemConfig};
use crate::rl::{knapsack_select, random_feasible_action};
use crate::scheduler::{assemble_slot, ServiceSolution, SlotSolution};
use crate::workload::ArrivalMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    #[serde(rename = "cloud")]
    CloudOnly,
    Popularity,
    Greedy,
    Random,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::CloudOnly,
        BaselineKind::Popularity,
        BaselineKind::Greedy,
        BaselineKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::CloudOnly => "cloud",
            BaselineKind::Popularity => "popularity",
            BaselineKind::Greedy => "greedy",
            BaselineKind::Random => "random",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown baseline `{s}`")))
    }
}

/// Every task of every service goes to the cloud.
pub fn cloud_only_policy(arrivals: &ArrivalMatrix) -> Vec<SchedulingPolicy> {
    (0..arrivals.services())
        .map(|j| SchedulingPolicy::cloud_only(j, arrivals.slot, arrivals.cells()))
        .collect()
}

/// Slot result of routing everything to the cloud; the gain is zero.
pub fn cloud_only_slot(alloc: &ResourceAllocation, arrivals: &ArrivalMatrix, cfg: &SystemConfig) -> Result<SlotSolution> {
    let solutions = cloud_only_policy(arrivals)
        .into_iter()
        .map(|policy| {
            let objective = quadratic_objective(&policy, arrivals, alloc, cfg)?;
            Ok(ServiceSolution {
                policy,
                objective,
                cloud_objective: objective,
                iterations: 0,
                history: vec![objective],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_slot(arrivals, solutions))
}

/// Fills storage with the most requested services of the previous frame
/// (ties to the lower index), skipping any that no longer fit. Services
/// that were not requested at all are left out.
pub fn popularity_deployment(counts: &[u32], sizes: &[u32], capacity: u32) -> Result<Vec<bool>> {
    if counts.len() != sizes.len() {
        return Err(Error::Dimension(format!(
            "{} request counts but {} services",
            counts.len(),
            sizes.len()
        )));
    }
    let mut order: Vec<usize> = (0..counts.len()).filter(|&j| counts[j] > 0).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut action = vec![false; counts.len()];
    let mut free = capacity;
    for j in order {
        if sizes[j] <= free {
            action[j] = true;
            free -= sizes[j];
        }
    }
    Ok(action)
}

/// Myopic value-density deployment for `server`: each service is worth its
/// previous-frame request count times the delay saved per task by running
/// it locally instead of in the cloud.
pub fn greedy_deployment(counts: &[u32], server: usize, cfg: &SystemConfig) -> Result<Vec<bool>> {
    if counts.len() != cfg.num_services() {
        return Err(Error::Dimension(format!(
            "{} request counts but {} services",
            counts.len(),
            cfg.num_services()
        )));
    }
    let es = &cfg.servers[server];
    let values: Vec<f64> = cfg
        .services
        .iter()
        .enumerate()
        .map(|(j, spec)| counts[j] as f64 * (cloud_delay(server, j, cfg) - spec.cycles / es.compute))
        .collect();
    let sizes: Vec<u32> = cfg.services.iter().map(|s| s.data_size).collect();
    knapsack_select(&values, &sizes, es.storage as i64)
}

/// Sequential one-hot routing: sources in index order send all their tasks to
/// whichever host (or the cloud) gives them the lowest delay given the load
/// committed by earlier sources. Ties go to the lower server index, then the cloud.
pub fn greedy_routing(
    service: usize,
    alloc: &ResourceAllocation,
    arrivals: &ArrivalMatrix,
    cfg: &SystemConfig,
) -> Result<SchedulingPolicy> {
    let cells = cfg.num_cells();
    let mut policy = SchedulingPolicy::cloud_only(service, arrivals.slot, cells);
    let hosts = alloc.plan.hosts(service);
    let mut loads = vec![0.0; cells];
    for (from, row) in arrivals.counts.iter().enumerate() {
        let n = row[service] as f64;
        if n == 0.0 {
            continue;
        }
        let mut best = (cloud_delay(from, service, cfg), None);
        for &to in &hosts {
            let d = pair_delay(from, to, service, loads[to] + n, alloc, cfg)?;
            if d < best.0 || (d == best.0 && best.1.is_some_and(|b| to < b)) {
                best = (d, Some(to));
            }
        }
        if let Some(to) = best.1 {
            let row = policy.row_mut(from);
            row.fill(0.0);
            row[to] = 1.0;
            loads[to] += n;
        }
    }
    Ok(policy)
}

/// Slot result under [`greedy_routing`] for every service.
pub fn greedy_slot(alloc: &ResourceAllocation, arrivals: &ArrivalMatrix, cfg: &SystemConfig) -> Result<SlotSolution> {
    let solutions = (0..cfg.num_services())
        .map(|j| {
            let policy = greedy_routing(j, alloc, arrivals, cfg)?;
            let objective = quadratic_objective(&policy, arrivals, alloc, cfg)?;
            let cloud = SchedulingPolicy::cloud_only(j, arrivals.slot, cfg.num_cells());
            let cloud_objective = quadratic_objective(&cloud, arrivals, alloc, cfg)?;
            Ok(ServiceSolution {
                policy,
                objective,
                cloud_objective,
                iterations: 0,
                history: vec![cloud_objective, objective],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_slot(arrivals, solutions))
}

/// Uniformly random feasible action per server.
pub fn random_deployment(cfg: &SystemConfig, rng: &mut impl Rng) -> Vec<Vec<bool>> {
    let sizes: Vec<u32> = cfg.services.iter().map(|s| s.data_size).collect();
    cfg.servers
        .iter()
        .map(|es| random_feasible_action(&sizes, es.storage, rng))
        .collect()
}
