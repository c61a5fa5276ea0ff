//! Experiment orchestration: the two-timescale training loop, baseline
//! runs, sweeps, benchmarks and oracle checks.

pub mod checks;
pub mod experiments;
pub mod metrics;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{
    cloud_only_slot, greedy_deployment, greedy_slot, popularity_deployment, random_deployment, BaselineKind,
};
use crate::error::{Error, Result};
use crate::model::{derive_allocation, DeploymentPlan, ResourceAllocation, SystemConfig};
use crate::rl::{epsilon_at, random_feasible_action, AgentCheckpoint, DeploymentAgent, Observation, Transition};
use crate::scheduler::{solve_slot, SlotSolution};
use crate::seeding;
use crate::workload::{ArrivalMatrix, ArrivalProcess};

pub use metrics::{smooth, EpisodeRecord, FrameRecord, MetricsRecord, Phase, ServiceDelayRow, SlotRecord, Timings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Ttosc,
    Baseline(BaselineKind),
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Ttosc,
        Scheme::Baseline(BaselineKind::CloudOnly),
        Scheme::Baseline(BaselineKind::Popularity),
        Scheme::Baseline(BaselineKind::Greedy),
        Scheme::Baseline(BaselineKind::Random),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ttosc => "ttosc",
            Scheme::Baseline(kind) => kind.name(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ttosc" {
            Ok(Scheme::Ttosc)
        } else {
            s.parse().map(Scheme::Baseline).map_err(|_| {
                Error::InvalidArgument(format!(
                    "unknown scheme `{s}` (expected ttosc, cloud, popularity, greedy or random)"
                ))
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub scheme: Scheme,
    /// Training episodes for TTOSC; plain episodes for baselines.
    pub episodes: usize,
    /// Episodes run after training without exploration or updates. Baselines
    /// run them as well so both see the same workloads.
    pub eval_episodes: usize,
    pub record_service_delays: bool,
}

impl RunOptions {
    pub fn new(scheme: Scheme, episodes: usize) -> Self {
        RunOptions {
            scheme,
            episodes,
            eval_episodes: 0,
            record_service_delays: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: MetricsRecord,
    /// Trained agents (TTOSC only).
    pub agents: Vec<DeploymentAgent>,
}

impl RunOutput {
    pub fn checkpoints(&self) -> Vec<AgentCheckpoint> {
        self.agents.iter().map(|a| a.checkpoint()).collect()
    }

    /// Writes the metric CSVs and, for TTOSC, one checkpoint per agent.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.metrics.write_dir(dir)?;
        for cp in self.checkpoints() {
            let path = dir.join(format!("agent{}.json", cp.server));
            std::fs::write(path, serde_json::to_string(&cp)?)?;
        }
        Ok(())
    }
}

/// Seed of the workload in episode `episode`.
pub fn episode_seed(cfg: &SystemConfig, episode: usize) -> u64 {
    seeding::derive_seed(cfg.seed, &[seeding::EPISODE, episode as u64])
}

/// Arrivals of every slot of `episode`, as the runner sees them.
pub fn episode_trace(cfg: &SystemConfig, episode: usize) -> Result<Vec<ArrivalMatrix>> {
    let process = ArrivalProcess::new(cfg, episode_seed(cfg, episode))?;
    Ok((0..cfg.frames * cfg.slots_per_frame).map(|slot| process.arrivals(slot)).collect())
}

fn with_context(err: Error, episode: usize, frame: usize) -> Error {
    match err {
        Error::Numerical(msg) => Error::Numerical(format!("episode {episode}, frame {frame}: {msg}")),
        Error::Infeasible(msg) => Error::Infeasible(format!("episode {episode}, frame {frame}: {msg}")),
        other => other,
    }
}

fn observation_scale(cfg: &SystemConfig) -> f64 {
    if cfg.training.normalize_observations {
        cfg.training
            .observation_scale
            .unwrap_or(cfg.workload.users_max.max(1) as f64)
    } else {
        1.0
    }
}

/// Requests per service at `server`, summed over a frame.
fn frame_counts(frame: &[Vec<Vec<u32>>], server: usize, services: usize) -> Vec<u32> {
    let mut counts = vec![0u32; services];
    for slot in frame {
        for (c, &n) in counts.iter_mut().zip(&slot[server]) {
            *c += n;
        }
    }
    counts
}

struct Runner<'a> {
    cfg: &'a SystemConfig,
    opts: &'a RunOptions,
    agents: Vec<DeploymentAgent>,
    metrics: MetricsRecord,
    sizes: Vec<u32>,
    scale: f64,
    global_frame: usize,
    global_slot: usize,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a SystemConfig, opts: &'a RunOptions) -> Self {
        let sizes: Vec<u32> = cfg.services.iter().map(|s| s.data_size).collect();
        let agents = match opts.scheme {
            Scheme::Ttosc => cfg
                .servers
                .iter()
                .enumerate()
                .map(|(m, es)| DeploymentAgent::new(m, sizes.clone(), es.storage, &cfg.training, cfg.seed))
                .collect(),
            Scheme::Baseline(_) => Vec::new(),
        };
        Runner {
            cfg,
            opts,
            agents,
            metrics: MetricsRecord::default(),
            sizes,
            scale: observation_scale(cfg),
            global_frame: 0,
            global_slot: 0,
        }
    }

    /// Returns the plan rows, each server's observation and, for agents, the
    /// time spent selecting each action.
    fn deploy(
        &mut self,
        previous: Option<&[Vec<Vec<u32>>]>,
        epsilon: f64,
        baseline_rng: &mut seeding::SimRng,
    ) -> Result<(Vec<Vec<bool>>, Vec<Option<Observation>>, Vec<f64>)> {
        let cfg = self.cfg;
        let cells = cfg.num_cells();
        let observations: Vec<Option<Observation>> = (0..cells)
            .map(|m| previous.map(|p| Observation::from_counts(p, m, self.scale)))
            .collect();
        let mut select_times = Vec::new();
        let rows = match self.opts.scheme {
            Scheme::Ttosc => {
                let mut rows = Vec::with_capacity(cells);
                for (agent, obs) in self.agents.iter_mut().zip(&observations) {
                    let start = Instant::now();
                    rows.push(agent.select_action(obs.as_ref(), epsilon)?);
                    select_times.push(start.elapsed().as_secs_f64());
                }
                rows
            }
            Scheme::Baseline(BaselineKind::CloudOnly) => vec![vec![false; cfg.num_services()]; cells],
            Scheme::Baseline(BaselineKind::Random) => random_deployment(cfg, baseline_rng),
            Scheme::Baseline(kind) => match previous {
                None => random_deployment(cfg, baseline_rng),
                Some(prev) => (0..cells)
                    .map(|m| {
                        let counts = frame_counts(prev, m, cfg.num_services());
                        if kind == BaselineKind::Popularity {
                            popularity_deployment(&counts, &self.sizes, cfg.servers[m].storage)
                        } else {
                            greedy_deployment(&counts, m, cfg)
                        }
                    })
                    .collect::<Result<_>>()?,
            },
        };
        Ok((rows, observations, select_times))
    }

    fn uses_solver(&self) -> bool {
        !matches!(
            self.opts.scheme,
            Scheme::Baseline(BaselineKind::CloudOnly | BaselineKind::Greedy)
        )
    }

    fn schedule(&self, alloc: &ResourceAllocation, arrivals: &ArrivalMatrix) -> Result<SlotSolution> {
        match self.opts.scheme {
            Scheme::Baseline(BaselineKind::CloudOnly) => cloud_only_slot(alloc, arrivals, self.cfg),
            Scheme::Baseline(BaselineKind::Greedy) => greedy_slot(alloc, arrivals, self.cfg),
            _ => solve_slot(alloc, arrivals, self.cfg, &self.cfg.solver),
        }
    }

    fn episode(&mut self, episode: usize, phase: Phase) -> Result<EpisodeRecord> {
        let cfg = self.cfg;
        let training = phase == Phase::Train && self.opts.scheme == Scheme::Ttosc;
        let epsilon = match (self.opts.scheme, phase) {
            (Scheme::Ttosc, Phase::Train) => epsilon_at(episode, &cfg.training),
            _ => 0.0,
        };
        let process = ArrivalProcess::new(cfg, episode_seed(cfg, episode))?;
        let mut baseline_rng = seeding::stream(cfg.seed, &[seeding::BASELINE, episode as u64]);
        let k_slots = cfg.slots_per_frame;
        let mut previous: Option<Vec<Vec<Vec<u32>>>> = None;
        let mut slot_delays = Vec::new();
        let mut rewards = Vec::with_capacity(cfg.frames);
        let mut losses = Vec::new();

        for frame in 0..cfg.frames {
            let (rows, observations, mut deploy_times) = self
                .deploy(previous.as_deref(), epsilon, &mut baseline_rng)
                .map_err(|e| with_context(e, episode, frame))?;
            let plan = DeploymentPlan::from_rows(frame, rows);
            let alloc = derive_allocation(&plan, cfg).map_err(|e| with_context(e, episode, frame))?;

            let mut reward = 0.0;
            let mut current = Vec::with_capacity(k_slots);
            for k in 0..k_slots {
                let slot = frame * k_slots + k;
                let arrivals = process.arrivals(slot);
                let start = Instant::now();
                let solution = self
                    .schedule(&alloc, &arrivals)
                    .map_err(|e| with_context(e, episode, frame))?;
                self.metrics.timings.scheduling.push(start.elapsed().as_secs_f64());
                // The solver descends from the all-cloud point; greedy routing
                // carries no such guarantee.
                if self.uses_solver() && solution.gain < 0.0 {
                    return Err(Error::Numerical(format!(
                        "episode {episode}, slot {slot}: negative gain {}",
                        solution.gain
                    )));
                }
                reward += solution.gain;
                if let Some(d) = solution.delay {
                    slot_delays.push(d);
                }
                if self.opts.record_service_delays {
                    for (service, &d) in solution.service_delays.iter().enumerate() {
                        self.metrics.service_delays.push(ServiceDelayRow {
                            slot: self.global_slot,
                            service,
                            service_delay: d,
                            slot_delay: solution.delay,
                        });
                    }
                }
                self.metrics.slots.push(SlotRecord {
                    episode,
                    frame,
                    slot,
                    tasks: arrivals.total(),
                    delay: solution.delay,
                    cloud_delay: solution.cloud_delay,
                    gain: solution.gain,
                });
                self.global_slot += 1;
                current.push(arrivals.counts);
            }
            if cfg.training.reward_per_slot {
                reward /= k_slots as f64;
            }

            let mut frame_losses = Vec::new();
            if training {
                for (m, agent) in self.agents.iter_mut().enumerate() {
                    let start = Instant::now();
                    if let Some(state) = observations[m].clone() {
                        agent.remember(Transition {
                            state,
                            action: plan.rows[m].clone(),
                            reward,
                            next_state: Observation::from_counts(&current, m, self.scale),
                        });
                    }
                    if let Some(loss) = agent.train(&cfg.training).map_err(|e| with_context(e, episode, frame))? {
                        frame_losses.push(loss);
                    }
                    deploy_times[m] += start.elapsed().as_secs_f64();
                }
                self.global_frame += 1;
                for agent in &mut self.agents {
                    agent.sync_target(self.global_frame, cfg.training.target_sync);
                }
            }
            self.metrics.timings.deployment.extend(deploy_times);
            let loss = metrics::mean(&frame_losses);
            if let Some(l) = loss {
                losses.push(l);
            }
            self.metrics.frames.push(FrameRecord {
                episode,
                frame,
                reward,
                deployed: plan.rows.iter().map(|r| r.iter().filter(|&&d| d).count()).sum(),
                loss,
            });
            rewards.push(reward);
            previous = Some(current);
        }
        let record = EpisodeRecord {
            episode,
            phase,
            epsilon,
            mean_reward: metrics::mean(&rewards).unwrap_or(0.0),
            mean_delay: (!slot_delays.is_empty())
                .then(|| crate::delay::time_average(&slot_delays))
                .transpose()?,
            mean_loss: metrics::mean(&losses),
        };
        self.metrics.episodes.push(record.clone());
        Ok(record)
    }
}

/// Runs `opts.episodes` (training) then `opts.eval_episodes` episodes,
/// calling `observer` after each one.
pub fn run(cfg: &SystemConfig, opts: &RunOptions, observer: &mut dyn FnMut(&EpisodeRecord)) -> Result<RunOutput> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, opts);
    for episode in 0..opts.episodes + opts.eval_episodes {
        let phase = if episode < opts.episodes { Phase::Train } else { Phase::Eval };
        let record = runner.episode(episode, phase)?;
        observer(&record);
    }
    Ok(RunOutput {
        metrics: runner.metrics,
        agents: runner.agents,
    })
}

pub fn run_ttosc(cfg: &SystemConfig, episodes: usize, eval_episodes: usize) -> Result<RunOutput> {
    let opts = RunOptions {
        eval_episodes,
        ..RunOptions::new(Scheme::Ttosc, episodes)
    };
    run(cfg, &opts, &mut |_| {})
}

pub fn run_baseline(cfg: &SystemConfig, kind: BaselineKind, episodes: usize, eval_episodes: usize) -> Result<RunOutput> {
    let opts = RunOptions {
        eval_episodes,
        ..RunOptions::new(Scheme::Baseline(kind), episodes)
    };
    run(cfg, &opts, &mut |_| {})
}

/// Uniformly random feasible plan; exposed for tools that need a quick plan.
pub fn random_plan(cfg: &SystemConfig, frame: usize, rng: &mut impl rand::Rng) -> DeploymentPlan {
    DeploymentPlan::from_rows(
        frame,
        cfg.servers
            .iter()
            .map(|es| {
                let sizes: Vec<u32> = cfg.services.iter().map(|s| s.data_size).collect();
                random_feasible_action(&sizes, es.storage, rng)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;
    use crate::model::validate_deployment;

    fn smoke_config() -> SystemConfig {
        let mut file = ConfigFile {
            cells: 1,
            services: 2,
            slots_per_frame: 2,
            frames: 2,
            ..Default::default()
        };
        file.training.hidden = 4;
        file.training.batch_size = 1;
        file.training.buffer_capacity = 8;
        file.resolve().unwrap()
    }

    fn small_config() -> SystemConfig {
        let mut file = ConfigFile {
            cells: 3,
            services: 6,
            slots_per_frame: 4,
            frames: 6,
            ..Default::default()
        };
        file.server.storage = 5;
        file.training.hidden = 8;
        file.training.batch_size = 8;
        file.training.buffer_capacity = 64;
        file.training.target_sync = 3;
        file.resolve().unwrap()
    }

    #[test]
    fn episode_trace_matches_recorded_tasks() {
        let cfg = small_config();
        let opts = RunOptions::new(Scheme::Baseline(BaselineKind::CloudOnly), 2);
        let out = run(&cfg, &opts, &mut |_| {}).unwrap();
        for episode in 0..2 {
            let trace = episode_trace(&cfg, episode).unwrap();
            let recorded: Vec<u32> = out.metrics.slots.iter().filter(|s| s.episode == episode).map(|s| s.tasks).collect();
            assert_eq!(trace.iter().map(|a| a.total()).collect::<Vec<_>>(), recorded);
        }
    }

    #[test]
    fn scheme_names() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("ddpg".parse::<Scheme>().is_err());
    }

    #[test]
    fn smallest_loop_runs() {
        let cfg = smoke_config();
        let out = run_ttosc(&cfg, 1, 0).unwrap();
        let m = &out.metrics;
        assert_eq!(m.slots.len(), 4);
        assert_eq!(m.frames.len(), 2);
        assert_eq!(m.episodes.len(), 1);
        assert_eq!(out.agents[0].buffer.len(), 1);
        assert!(m.frames[1].loss.is_some());
        assert_eq!(m.timings.deployment.len(), 2);
        assert!(m.timings.scheduling.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn records_are_consistent_and_gains_non_negative() {
        let cfg = small_config();
        let opts = RunOptions {
            eval_episodes: 1,
            record_service_delays: true,
            ..RunOptions::new(Scheme::Ttosc, 3)
        };
        let mut seen = Vec::new();
        let out = run(&cfg, &opts, &mut |e| seen.push(e.episode)).unwrap();
        let m = &out.metrics;
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert_eq!(m.slots.len(), 4 * 6 * 4);
        assert_eq!(m.frames.len(), 4 * 6);
        assert_eq!(m.service_delays.len(), m.slots.len() * 6);
        assert!(m.slots.iter().all(|s| s.gain >= 0.0));
        assert!(m.frames.iter().all(|f| f.reward >= 0.0));
        assert_eq!(m.episodes[3].phase, Phase::Eval);
        assert_eq!(m.episodes[3].epsilon, 0.0);
        for agent in &out.agents {
            assert!(agent.buffer.iter().all(|t| t.reward >= 0.0));
            assert_eq!(agent.buffer.total_inserted(), 3 * 5);
        }
        // Frame rewards equal the sum of slot gains.
        for (f, chunk) in m.frames.iter().zip(m.slots.chunks(4)) {
            let sum: f64 = chunk.iter().map(|s| s.gain).sum();
            assert!((f.reward - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_seeds_give_identical_metrics() {
        let cfg = small_config();
        for scheme in Scheme::ALL {
            let opts = RunOptions::new(scheme, 2);
            let a = run(&cfg, &opts, &mut |_| {}).unwrap().metrics;
            let b = run(&cfg, &opts, &mut |_| {}).unwrap().metrics;
            assert_eq!(a.slots, b.slots, "{scheme}");
            assert_eq!(a.frames, b.frames, "{scheme}");
            assert_eq!(a.episodes, b.episodes, "{scheme}");
        }
    }

    #[test]
    fn cloud_only_delay_is_pure_cloud() {
        let cfg = small_config();
        let out = run_baseline(&cfg, BaselineKind::CloudOnly, 1, 0).unwrap();
        for s in &out.metrics.slots {
            assert_eq!(s.delay, s.cloud_delay);
            assert_eq!(s.gain, 0.0);
        }
        let delays: Vec<f64> = out.metrics.slots.iter().filter_map(|s| s.delay).collect();
        let expected = crate::delay::time_average(&delays).unwrap();
        assert_eq!(out.metrics.episodes[0].mean_delay, Some(expected));
    }

    #[test]
    fn baselines_share_workloads_and_deploy_feasibly() {
        let cfg = small_config();
        let runs: Vec<MetricsRecord> = BaselineKind::ALL
            .iter()
            .map(|&k| run_baseline(&cfg, k, 2, 0).unwrap().metrics)
            .collect();
        for r in &runs[1..] {
            let tasks: Vec<u32> = r.slots.iter().map(|s| s.tasks).collect();
            assert_eq!(tasks, runs[0].slots.iter().map(|s| s.tasks).collect::<Vec<_>>());
        }
        let mut rng = seeding::stream(1, &[seeding::BASELINE]);
        let plan = random_plan(&cfg, 0, &mut rng);
        assert!(validate_deployment(&plan, &cfg).unwrap().is_empty());
    }

    #[test]
    fn write_dir_emits_expected_files() {
        let cfg = smoke_config();
        let opts = RunOptions {
            record_service_delays: true,
            ..RunOptions::new(Scheme::Ttosc, 1)
        };
        let out = run(&cfg, &opts, &mut |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write_dir(dir.path()).unwrap();
        for name in ["slots.csv", "frames.csv", "episodes.csv", "timings.csv", "service_delays.csv", "agent0.json"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let header = std::fs::read_to_string(dir.path().join("service_delays.csv")).unwrap();
        assert!(header.starts_with("slot,service,service_delay,slot_delay\n"));
    }
}
