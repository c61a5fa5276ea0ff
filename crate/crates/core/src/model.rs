//! Static system entities: services, edge servers, the network, the
//! frame/slot time grid, deployment plans and the equal-split resource
//! allocation that follows from a plan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::TrainingConfig;
use crate::scheduler::SolverSettings;
use crate::workload::WorkloadConfig;

/// A service (application image). Its index in [`SystemConfig::services`] is its id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    /// Storage footprint in integer units (1 unit = 100 MB by default).
    pub data_size: u32,
    /// Megabits per task.
    pub task_size: f64,
    /// Gigacycles per task.
    pub cycles: f64,
}

/// An edge server co-located with the base station of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeServerSpec {
    /// Storage capacity in the same integer units as [`ServiceSpec::data_size`].
    pub storage: u32,
    /// Total CPU capacity, gigacycles per second.
    pub compute: f64,
    /// Backhaul rate to the cloud, megabits per second.
    pub cloud_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Inter-server bandwidth in Mbps, `M x M`. Diagonal entries are ignored:
    /// a server reaches itself at infinite rate.
    pub bandwidth: Vec<Vec<f64>>,
    /// CPU share granted by the cloud to every task, gigacycles per second.
    pub cloud_compute: f64,
}

impl NetworkSpec {
    pub fn uniform(cells: usize, bandwidth: f64, cloud_compute: f64) -> Self {
        NetworkSpec {
            bandwidth: vec![vec![bandwidth; cells]; cells],
            cloud_compute,
        }
    }

    /// Link rate from `from` to `to`; infinite on the self-link.
    pub fn link(&self, from: usize, to: usize) -> f64 {
        if from == to {
            f64::INFINITY
        } else {
            self.bandwidth[from][to]
        }
    }
}

/// Fully resolved, immutable description of one simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub seed: u64,
    /// Slots per frame (`K`).
    pub slots_per_frame: usize,
    /// Frames per episode (`T`).
    pub frames: usize,
    pub services: Vec<ServiceSpec>,
    pub servers: Vec<EdgeServerSpec>,
    pub network: NetworkSpec,
    pub workload: WorkloadConfig,
    pub solver: SolverSettings,
    pub training: TrainingConfig,
}

impl SystemConfig {
    pub fn num_cells(&self) -> usize {
        self.servers.len()
    }

    pub fn num_services(&self) -> usize {
        self.services.len()
    }

    pub fn total_service_storage(&self) -> u32 {
        self.services.iter().map(|s| s.data_size).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_cells();
        let j = self.num_services();
        if m == 0 || j == 0 {
            return Err(Error::Config(format!(
                "need at least one cell and one service, got M={m} J={j}"
            )));
        }
        if self.slots_per_frame == 0 || self.frames == 0 {
            return Err(Error::Config("slots per frame and frames must be >= 1".into()));
        }
        for (idx, s) in self.services.iter().enumerate() {
            if s.data_size < 1 || !(s.task_size > 0.0) || !(s.cycles > 0.0) {
                return Err(Error::Config(format!("service {idx} has non-positive size or cycles")));
            }
        }
        if self.network.bandwidth.len() != m || self.network.bandwidth.iter().any(|r| r.len() != m) {
            return Err(Error::Config(format!("bandwidth matrix must be {m}x{m}")));
        }
        let mut min_link = f64::INFINITY;
        for a in 0..m {
            for b in 0..m {
                if a != b {
                    let bw = self.network.bandwidth[a][b];
                    if !(bw > 0.0) {
                        return Err(Error::Config(format!("bandwidth {a}->{b} must be positive")));
                    }
                    min_link = min_link.min(bw);
                }
            }
        }
        if !(self.network.cloud_compute > 0.0) {
            return Err(Error::Config("cloud compute must be positive".into()));
        }
        for (idx, es) in self.servers.iter().enumerate() {
            if !(es.compute > 0.0) || !(es.cloud_rate > 0.0) {
                return Err(Error::Config(format!("server {idx} needs positive compute and cloud rate")));
            }
            // The backhaul must be the slower path whenever there is a peer to compare with.
            if m > 1 && es.cloud_rate >= min_link {
                return Err(Error::Config(format!(
                    "server {idx}: cloud rate {} must be below the slowest inter-server link {min_link}",
                    es.cloud_rate
                )));
            }
        }
        self.workload.validate()?;
        self.solver.validate()?;
        self.training.validate()?;
        Ok(())
    }
}

/// Global slot index of slot `k` within frame `t`.
pub fn time_index(frame: usize, slot: usize, slots_per_frame: usize) -> Result<usize> {
    if slot >= slots_per_frame {
        return Err(Error::InvalidArgument(format!(
            "slot {slot} out of range for {slots_per_frame} slots per frame"
        )));
    }
    Ok(frame * slots_per_frame + slot)
}

/// Binary service placement for one frame: `rows[m][j]` is true when
/// server `m` hosts service `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub frame: usize,
    pub rows: Vec<Vec<bool>>,
}

impl DeploymentPlan {
    pub fn empty(frame: usize, cells: usize, services: usize) -> Self {
        DeploymentPlan {
            frame,
            rows: vec![vec![false; services]; cells],
        }
    }

    pub fn from_rows(frame: usize, rows: Vec<Vec<bool>>) -> Self {
        DeploymentPlan { frame, rows }
    }

    pub fn is_deployed(&self, server: usize, service: usize) -> bool {
        self.rows[server][service]
    }

    /// Servers hosting `service`, in index order.
    pub fn hosts(&self, service: usize) -> Vec<usize> {
        (0..self.rows.len()).filter(|&m| self.rows[m][service]).collect()
    }

    pub fn deployed_count(&self, server: usize) -> usize {
        self.rows[server].iter().filter(|&&d| d).count()
    }

    fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        let (m, j) = (cfg.num_cells(), cfg.num_services());
        if self.rows.len() != m || self.rows.iter().any(|r| r.len() != j) {
            return Err(Error::Dimension(format!("deployment plan must be {m}x{j}")));
        }
        Ok(())
    }
}

/// A server whose deployed services exceed its storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageViolation {
    pub server: usize,
    pub load: u32,
    pub capacity: u32,
}

/// Storage load of one plan row.
pub fn storage_load(row: &[bool], services: &[ServiceSpec]) -> u32 {
    row.iter()
        .zip(services)
        .filter(|(d, _)| **d)
        .map(|(_, s)| s.data_size)
        .sum()
}

/// Checks the storage constraint of every server. `Ok(vec![])` means feasible;
/// otherwise the report lists each offending server with its load.
pub fn validate_deployment(plan: &DeploymentPlan, cfg: &SystemConfig) -> Result<Vec<StorageViolation>> {
    plan.check_shape(cfg)?;
    Ok(plan
        .rows
        .iter()
        .zip(&cfg.servers)
        .enumerate()
        .filter_map(|(server, (row, es))| {
            let load = storage_load(row, &cfg.services);
            (load > es.storage).then_some(StorageViolation {
                server,
                load,
                capacity: es.storage,
            })
        })
        .collect())
}

/// Equal-split compute and bandwidth shares induced by a deployment plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceAllocation {
    pub plan: DeploymentPlan,
    /// `compute[m][j]`, gigacycles/s; zero where the service is not deployed.
    pub compute: Vec<Vec<f64>>,
    /// `ingress[m][m']`: rate available to each deployed service on the
    /// link `m -> m'`, i.e. `B[m][m'] / n[m']`. Infinite on the diagonal.
    ingress: Vec<Vec<f64>>,
}

impl ResourceAllocation {
    /// Scheduling rate for service `service` tasks sent from `from` to `to`,
    /// or `None` when `to` does not host the service.
    pub fn rate(&self, from: usize, to: usize, service: usize) -> Option<f64> {
        self.plan.rows[to][service].then(|| self.ingress[from][to])
    }

    pub fn compute_share(&self, server: usize, service: usize) -> f64 {
        self.compute[server][service]
    }
}

pub fn derive_allocation(plan: &DeploymentPlan, cfg: &SystemConfig) -> Result<ResourceAllocation> {
    let violations = validate_deployment(plan, cfg)?;
    if let Some(v) = violations.first() {
        return Err(Error::Infeasible(format!(
            "server {} stores {} units but holds only {}",
            v.server, v.load, v.capacity
        )));
    }
    let cells = cfg.num_cells();
    let counts: Vec<usize> = (0..cells).map(|m| plan.deployed_count(m)).collect();
    let compute = plan
        .rows
        .iter()
        .zip(&cfg.servers)
        .zip(&counts)
        .map(|((row, es), &n)| {
            row.iter()
                .map(|&d| if d { es.compute / n as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    let ingress = (0..cells)
        .map(|from| {
            (0..cells)
                .map(|to| {
                    if from == to {
                        f64::INFINITY
                    } else if counts[to] == 0 {
                        0.0
                    } else {
                        cfg.network.bandwidth[from][to] / counts[to] as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(ResourceAllocation {
        plan: plan.clone(),
        compute,
        ingress,
    })
}
