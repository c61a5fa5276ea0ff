//! Agent value network: stacked GRU over the previous frame's request
//! counts, an affine layer producing one partial value per service, and a
//! fixed action-weighted sum giving the state-action value.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{GruCache, GruLayer};
use crate::error::{Error, Result};

/// Request counts of one server over the slots of a frame, `K x J`, already scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub steps: usize,
    pub services: usize,
    pub data: Vec<f64>,
}

impl Observation {
    pub fn new(steps: usize, services: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != steps * services {
            return Err(Error::Dimension(format!(
                "observation needs {steps}x{services} entries, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("observations must be non-negative".into()));
        }
        Ok(Observation { steps, services, data })
    }

    /// Builds the observation of `server` from one frame of arrival counts.
    pub fn from_counts(frame: &[Vec<Vec<u32>>], server: usize, scale: f64) -> Self {
        let services = frame.first().map_or(0, |slot| slot[server].len());
        let data = frame
            .iter()
            .flat_map(|slot| slot[server].iter().map(move |&c| c as f64 / scale))
            .collect();
        Observation {
            steps: frame.len(),
            services,
            data,
        }
    }

    pub fn step(&self, k: usize) -> &[f64] {
        &self.data[k * self.services..(k + 1) * self.services]
    }
}

/// Activation applied to the partial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    #[default]
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNetwork {
    pub layers: Vec<GruLayer>,
    /// `H x J`
    pub w_out: Array2<f64>,
    /// `1 x J`
    pub b_out: Array2<f64>,
    pub activation: HeadActivation,
}

/// Forward activations for a batch, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<GruCache>,
    hidden: Array2<f64>,
    pub partial: Array2<f64>,
}

/// Gradients in the same flat order as [`AgentNetwork::parameters`].
#[derive(Debug, Clone)]
pub struct NetworkGrads(pub Vec<Array2<f64>>);

impl AgentNetwork {
    pub fn random(
        services: usize,
        hidden: usize,
        layers: usize,
        activation: HeadActivation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers.max(1))
            .map(|l| GruLayer::random(if l == 0 { services } else { hidden }, hidden, rng))
            .collect();
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_out = Array2::from_shape_fn((hidden, services), |_| rng.random_range(-bound..bound));
        let b_out = Array2::from_shape_fn((1, services), |_| rng.random_range(-bound..bound));
        AgentNetwork {
            layers,
            w_out,
            b_out,
            activation,
        }
    }

    pub fn services(&self) -> usize {
        self.w_out.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn parameters(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for layer in &self.layers {
            out.extend([&layer.w_input, &layer.w_hidden, &layer.bias]);
        }
        out.extend([&self.w_out, &self.b_out]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for layer in &mut self.layers {
            out.extend([&mut layer.w_input, &mut layer.w_hidden, &mut layer.bias]);
        }
        out.extend([&mut self.w_out, &mut self.b_out]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn check(&self, batch: &[&Observation]) -> Result<usize> {
        let first = batch
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty observation batch".into()))?;
        if batch
            .iter()
            .any(|o| o.services != self.services() || o.steps != first.steps || o.steps == 0)
        {
            return Err(Error::Dimension(format!(
                "observations must share a K x {} shape with K >= 1",
                self.services()
            )));
        }
        Ok(first.steps)
    }

    fn step_inputs(batch: &[&Observation], steps: usize) -> Vec<Array2<f64>> {
        let services = batch[0].services;
        (0..steps)
            .map(|k| {
                let mut x = Array2::zeros((batch.len(), services));
                for (mut row, obs) in x.rows_mut().into_iter().zip(batch) {
                    row.as_slice_mut().expect("row-major").copy_from_slice(obs.step(k));
                }
                x
            })
            .collect()
    }

    /// Final GRU hidden state per observation, `B x H`.
    pub fn encode(&self, batch: &[&Observation]) -> Result<Array2<f64>> {
        let steps = self.check(batch)?;
        let mut seq = Self::step_inputs(batch, steps);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if l == last {
                return Ok(layer.forward(&seq, false).0);
            }
            let (_, cache) = layer.forward(&seq, true);
            seq = cache.expect("cache requested").outputs;
        }
        unreachable!("network has at least one layer")
    }

    /// Partial values `O[b][j]` from encoded hidden states.
    pub fn head(&self, hidden: &Array2<f64>) -> Result<Array2<f64>> {
        if hidden.ncols() != self.hidden() {
            return Err(Error::Dimension(format!(
                "hidden width {} does not match head input {}",
                hidden.ncols(),
                self.hidden()
            )));
        }
        let mut out = hidden.dot(&self.w_out);
        out += &self.b_out;
        if self.activation == HeadActivation::Tanh {
            out.mapv_inplace(f64::tanh);
        }
        Ok(out)
    }

    /// Partial values for a batch of observations, `B x J`.
    pub fn partial_values(&self, batch: &[&Observation]) -> Result<Array2<f64>> {
        self.head(&self.encode(batch)?)
    }

    pub fn partial_values_one(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.partial_values(&[obs])?.row(0).to_vec())
    }

    pub fn forward_cached(&self, batch: &[&Observation]) -> Result<ForwardCache> {
        let steps = self.check(batch)?;
        let mut seq = Self::step_inputs(batch, steps);
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (_, cache) = layer.forward(&seq, true);
            let cache = cache.expect("cache requested");
            seq = cache.outputs.clone();
            caches.push(cache);
        }
        let hidden = seq.pop().expect("at least one step");
        let partial = self.head(&hidden)?;
        Ok(ForwardCache {
            layers: caches,
            hidden,
            partial,
        })
    }

    /// Backpropagates `d_partial` (gradient of the loss with respect to the
    /// partial values) through the head and every GRU layer.
    pub fn backward(&self, cache: &ForwardCache, d_partial: &Array2<f64>) -> NetworkGrads {
        let mut d_pre = d_partial.clone();
        if self.activation == HeadActivation::Tanh {
            d_pre.zip_mut_with(&cache.partial, |g, &o| *g *= 1.0 - o * o);
        }
        let d_w_out = cache.hidden.t().dot(&d_pre);
        let d_b_out = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_hidden = d_pre.dot(&self.w_out.t());

        let steps = cache.layers[0].inputs.len();
        let mut d_outputs: Vec<Option<Array2<f64>>> = vec![None; steps];
        d_outputs[steps - 1] = Some(d_hidden);
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (grads, d_inputs) = layer.backward(&cache.layers[l], &d_outputs, l > 0);
            layer_grads.push(grads);
            if let Some(d_in) = d_inputs {
                d_outputs = d_in.into_iter().map(Some).collect();
            }
        }
        layer_grads.reverse();
        let mut flat = Vec::with_capacity(3 * self.layers.len() + 2);
        for g in layer_grads {
            flat.extend([g.w_input, g.w_hidden, g.bias]);
        }
        flat.extend([d_w_out, d_b_out]);
        NetworkGrads(flat)
    }

    /// Plain gradient-descent update.
    pub fn apply_gradients(&mut self, grads: &NetworkGrads, learning_rate: f64) {
        for (param, grad) in self.parameters_mut().into_iter().zip(&grads.0) {
            param.scaled_add(-learning_rate, grad);
        }
    }

    pub fn to_weights(&self) -> NetworkWeights {
        NetworkWeights {
            services: self.services(),
            hidden: self.hidden(),
            layers: self.layers.len(),
            activation: self.activation,
            tensors: self
                .parameters()
                .iter()
                .map(|p| p.iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_weights(weights: &NetworkWeights) -> Result<Self> {
        let mut net = AgentNetwork {
            layers: (0..weights.layers)
                .map(|l| GruLayer::zeros(if l == 0 { weights.services } else { weights.hidden }, weights.hidden))
                .collect(),
            w_out: Array2::zeros((weights.hidden, weights.services)),
            b_out: Array2::zeros((1, weights.services)),
            activation: weights.activation,
        };
        let params = net.parameters_mut();
        if params.len() != weights.tensors.len() {
            return Err(Error::Dimension(format!(
                "checkpoint has {} tensors, network expects {}",
                weights.tensors.len(),
                params.len()
            )));
        }
        for (param, data) in params.into_iter().zip(&weights.tensors) {
            if param.len() != data.len() {
                return Err(Error::Dimension("checkpoint tensor size mismatch".into()));
            }
            param.iter_mut().zip(data).for_each(|(p, &d)| *p = d);
        }
        Ok(net)
    }
}

/// Serializable snapshot of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkWeights {
    pub services: usize,
    pub hidden: usize,
    pub layers: usize,
    pub activation: HeadActivation,
    /// Row-major parameter tensors in [`AgentNetwork::parameters`] order.
    pub tensors: Vec<Vec<f64>>,
}

/// `Q = sum_j a_j O_j`.
pub fn q_value(partial: &[f64], action: &[bool]) -> f64 {
    partial
        .iter()
        .zip(action)
        .filter(|(_, &a)| a)
        .map(|(o, _)| o)
        .sum()
}
