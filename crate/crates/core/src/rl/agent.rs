//! One Double-DQN deployment agent per edge server.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::knapsack::knapsack_select;
use super::network::{q_value, AgentNetwork, NetworkGrads, NetworkWeights, Observation};
use super::replay::{ReplayBuffer, Transition};
use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::seeding::{self, SimRng};

const MAX_REJECTIONS: usize = 1000;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub server: usize,
    pub sizes: Vec<u32>,
    pub capacity: u32,
    pub online: NetworkWeights,
    pub target: NetworkWeights,
}

/// Uniformly random action satisfying the storage constraint: Bernoulli(1/2)
/// bits with rejection, falling back to filling by ascending size.
pub fn random_feasible_action(sizes: &[u32], capacity: u32, rng: &mut impl Rng) -> Vec<bool> {
    for _ in 0..MAX_REJECTIONS {
        let action: Vec<bool> = sizes.iter().map(|_| rng.random_bool(0.5)).collect();
        if storage_used(&action, sizes) <= capacity as u64 {
            return action;
        }
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&j| (sizes[j], j));
    let mut action = vec![false; sizes.len()];
    let mut used = 0u64;
    for j in order {
        if used + sizes[j] as u64 <= capacity as u64 {
            action[j] = true;
            used += sizes[j] as u64;
        }
    }
    action
}

pub fn storage_used(action: &[bool], sizes: &[u32]) -> u64 {
    action
        .iter()
        .zip(sizes)
        .filter(|(a, _)| **a)
        .map(|(_, &v)| v as u64)
        .sum()
}

/// Double-DQN targets: the online network picks the next action by knapsack
/// argmax, the target network evaluates it.
pub fn td_targets(
    batch: &[&Transition],
    online: &AgentNetwork,
    target: &AgentNetwork,
    sizes: &[u32],
    capacity: u32,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    if gamma == 0.0 {
        return Ok(batch.iter().map(|t| t.reward).collect());
    }
    let next: Vec<&Observation> = batch.iter().map(|t| &t.next_state).collect();
    let online_values = online.partial_values(&next)?;
    let target_values = target.partial_values(&next)?;
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let row = online_values.row(i);
            let best = knapsack_select(row.as_slice().expect("row-major"), sizes, capacity as i64)?;
            let evaluated = q_value(target_values.row(i).as_slice().expect("row-major"), &best);
            Ok(t.reward + gamma * evaluated)
        })
        .collect()
}

/// Mean squared TD error and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    online: &AgentNetwork,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(f64, NetworkGrads)> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::Dimension(format!(
            "{} transitions but {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let states: Vec<&Observation> = batch.iter().map(|t| &t.state).collect();
    let cache = online.forward_cached(&states)?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_partial = Array2::<f64>::zeros(cache.partial.raw_dim());
    for (i, (t, &y)) in batch.iter().zip(targets).enumerate() {
        let q = q_value(cache.partial.row(i).as_slice().expect("row-major"), &t.action);
        let err = y - q;
        loss += err * err / n;
        let d_q = -2.0 * err / n;
        for (j, &a) in t.action.iter().enumerate() {
            if a {
                d_partial[[i, j]] = d_q;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("training loss is {loss}")));
    }
    Ok((loss, online.backward(&cache, &d_partial)))
}

/// One plain gradient-descent step; returns the loss before the update.
pub fn train_step(
    online: &mut AgentNetwork,
    batch: &[&Transition],
    targets: &[f64],
    learning_rate: f64,
) -> Result<f64> {
    let (loss, grads) = loss_and_gradients(online, batch, targets)?;
    online.apply_gradients(&grads, learning_rate);
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct DeploymentAgent {
    pub server: usize,
    pub online: AgentNetwork,
    pub target: AgentNetwork,
    pub buffer: ReplayBuffer,
    sizes: Vec<u32>,
    capacity: u32,
    explore_rng: SimRng,
    replay_rng: SimRng,
}

impl DeploymentAgent {
    pub fn new(server: usize, sizes: Vec<u32>, capacity: u32, training: &TrainingConfig, seed: u64) -> Self {
        let mut init = seeding::stream(seed, &[seeding::AGENT_INIT, server as u64]);
        let online = AgentNetwork::random(
            sizes.len(),
            training.hidden,
            training.gru_layers,
            training.head_activation,
            &mut init,
        );
        DeploymentAgent {
            server,
            target: online.clone(),
            online,
            buffer: ReplayBuffer::new(training.buffer_capacity),
            sizes,
            capacity,
            explore_rng: seeding::stream(seed, &[seeding::EXPLORATION, server as u64]),
            replay_rng: seeding::stream(seed, &[seeding::REPLAY, server as u64]),
        }
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<Vec<bool>> {
        let values = self.online.partial_values_one(obs)?;
        knapsack_select(&values, &self.sizes, self.capacity as i64)
    }

    /// Epsilon-greedy selection. Without an observation (first frame of an
    /// episode) the action is always random.
    pub fn select_action(&mut self, obs: Option<&Observation>, epsilon: f64) -> Result<Vec<bool>> {
        match obs {
            Some(obs) if self.explore_rng.random::<f64>() >= epsilon => self.greedy_action(obs),
            _ => Ok(random_feasible_action(&self.sizes, self.capacity, &mut self.explore_rng)),
        }
    }

    pub fn remember(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    /// Samples a batch and performs one update if the buffer holds enough
    /// transitions. Returns the pre-update loss.
    pub fn train(&mut self, training: &TrainingConfig) -> Result<Option<f64>> {
        if self.buffer.len() < training.batch_size {
            return Ok(None);
        }
        let batch = self.buffer.sample(training.batch_size, &mut self.replay_rng)?;
        let targets = td_targets(&batch, &self.online, &self.target, &self.sizes, self.capacity, training.gamma)?;
        let loss = train_step(&mut self.online, &batch, &targets, training.learning_rate)?;
        Ok(Some(loss))
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            version: CHECKPOINT_VERSION,
            server: self.server,
            sizes: self.sizes.clone(),
            capacity: self.capacity,
            online: self.online.to_weights(),
            target: self.target.to_weights(),
        }
    }

    /// Restores networks from a checkpoint; the replay buffer starts empty.
    pub fn restore(checkpoint: &AgentCheckpoint, training: &TrainingConfig, seed: u64) -> Result<Self> {
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        let mut agent = DeploymentAgent::new(
            checkpoint.server,
            checkpoint.sizes.clone(),
            checkpoint.capacity,
            training,
            seed,
        );
        agent.online = AgentNetwork::from_weights(&checkpoint.online)?;
        agent.target = AgentNetwork::from_weights(&checkpoint.target)?;
        if agent.online.services() != agent.sizes.len() {
            return Err(Error::Dimension("checkpoint network does not match service count".into()));
        }
        Ok(agent)
    }

    /// Hard copy of the online weights when `frame` is a multiple of `period`.
    pub fn sync_target(&mut self, frame: usize, period: usize) -> bool {
        if period > 0 && frame % period == 0 {
            self.target = self.online.clone();
            true
        } else {
            false
        }
    }
}
