//! JSON configuration document and its resolution into a [`SystemConfig`].
//!
//! Every field has a default, so `{}` is a valid configuration. Service
//! parameters are drawn from the seed unless listed explicitly in
//! `service_specs`; servers are homogeneous unless `server_specs` is given.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EdgeServerSpec, NetworkSpec, ServiceSpec, SystemConfig};
use crate::rl::TrainingConfig;
use crate::scheduler::SolverSettings;
use crate::seeding;
use crate::workload::WorkloadConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceGeneration {
    /// Task size range in megabits, sampled uniformly.
    pub task_size: [f64; 2],
    /// CPU demand range in gigacycles per task, sampled uniformly.
    pub cycles: [f64; 2],
    /// Storage footprint range in units, sampled uniformly over integers (inclusive).
    pub data_size: [u32; 2],
}

impl Default for ServiceGeneration {
    fn default() -> Self {
        ServiceGeneration {
            task_size: [4.0, 16.0],
            cycles: [0.1, 1.0],
            data_size: [1, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerDefaults {
    pub storage: u32,
    pub compute: f64,
    pub cloud_rate: f64,
}

impl Default for ServerDefaults {
    fn default() -> Self {
        ServerDefaults {
            storage: 8,
            compute: 20.0,
            cloud_rate: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkDefaults {
    /// Uniform inter-server bandwidth (Mbps), used unless `bandwidth_matrix` is set.
    pub inter_es_bandwidth: f64,
    pub bandwidth_matrix: Option<Vec<Vec<f64>>>,
    pub cloud_compute: f64,
}

impl Default for NetworkDefaults {
    fn default() -> Self {
        NetworkDefaults {
            inter_es_bandwidth: 1000.0,
            bandwidth_matrix: None,
            cloud_compute: 10.0,
        }
    }
}

/// On-disk configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    /// Number of cells, one edge server each.
    pub cells: usize,
    pub services: usize,
    pub slots_per_frame: usize,
    pub frames: usize,
    pub service_generation: ServiceGeneration,
    pub service_specs: Option<Vec<ServiceSpec>>,
    pub server: ServerDefaults,
    pub server_specs: Option<Vec<EdgeServerSpec>>,
    pub network: NetworkDefaults,
    pub workload: WorkloadConfig,
    pub solver: SolverSettings,
    pub training: TrainingConfig,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            seed: 1,
            cells: 5,
            services: 20,
            slots_per_frame: 10,
            frames: 20,
            service_generation: ServiceGeneration::default(),
            service_specs: None,
            server: ServerDefaults::default(),
            server_specs: None,
            network: NetworkDefaults::default(),
            workload: WorkloadConfig::default(),
            solver: SolverSettings::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl ConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Services as they will be simulated: the explicit list if present,
    /// else `services` draws from the seed.
    pub fn service_list(&self) -> Result<Vec<ServiceSpec>> {
        if let Some(specs) = &self.service_specs {
            if specs.len() != self.services {
                return Err(Error::Config(format!(
                    "service_specs has {} entries but services = {}",
                    specs.len(),
                    self.services
                )));
            }
            return Ok(specs.clone());
        }
        let generation = &self.service_generation;
        let [s_lo, s_hi] = generation.task_size;
        let [c_lo, c_hi] = generation.cycles;
        let [v_lo, v_hi] = generation.data_size;
        if !(s_lo > 0.0 && s_lo <= s_hi) || !(c_lo > 0.0 && c_lo <= c_hi) || !(v_lo >= 1 && v_lo <= v_hi) {
            return Err(Error::Config("service generation ranges must be positive and ordered".into()));
        }
        let mut rng = seeding::stream(self.seed, &[seeding::SERVICES]);
        Ok((0..self.services)
            .map(|_| {
                let task_size = if s_lo == s_hi { s_lo } else { rng.random_range(s_lo..s_hi) };
                let cycles = if c_lo == c_hi { c_lo } else { rng.random_range(c_lo..c_hi) };
                let data_size = rng.random_range(v_lo..=v_hi);
                ServiceSpec {
                    data_size,
                    task_size,
                    cycles,
                }
            })
            .collect())
    }

    pub fn resolve(&self) -> Result<SystemConfig> {
        let services = self.service_list()?;
        let servers = match &self.server_specs {
            Some(list) if list.len() != self.cells => {
                return Err(Error::Config(format!(
                    "server_specs has {} entries but cells = {}",
                    list.len(),
                    self.cells
                )))
            }
            Some(list) => list.clone(),
            None => vec![
                EdgeServerSpec {
                    storage: self.server.storage,
                    compute: self.server.compute,
                    cloud_rate: self.server.cloud_rate,
                };
                self.cells
            ],
        };
        let network = match &self.network.bandwidth_matrix {
            Some(matrix) => NetworkSpec {
                bandwidth: matrix.clone(),
                cloud_compute: self.network.cloud_compute,
            },
            None => NetworkSpec::uniform(self.cells, self.network.inter_es_bandwidth, self.network.cloud_compute),
        };
        let cfg = SystemConfig {
            seed: self.seed,
            slots_per_frame: self.slots_per_frame,
            frames: self.frames,
            services,
            servers,
            network,
            workload: self.workload.clone(),
            solver: self.solver.clone(),
            training: self.training.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
