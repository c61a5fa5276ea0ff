//! Batched GRU layer with hand-written backpropagation through time.
//!
//! Gate layout in every packed matrix is `[update | reset | candidate]`:
//!
//! ```text
//! z  = sigmoid(x Wxz + h Whz + bz)
//! r  = sigmoid(x Wxr + h Whr + br)
//! n  = tanh(x Wxn + (r * h) Whn + bn)
//! h' = (1 - z) * h + z * n
//! ```

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    /// `input x 3H`
    pub w_input: Array2<f64>,
    /// `H x 3H`
    pub w_hidden: Array2<f64>,
    /// `1 x 3H`
    pub bias: Array2<f64>,
}

/// Activations saved for the backward pass, one entry per step.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub inputs: Vec<Array2<f64>>,
    pub h_prev: Vec<Array2<f64>>,
    pub update: Vec<Array2<f64>>,
    pub reset: Vec<Array2<f64>>,
    pub candidate: Vec<Array2<f64>>,
    pub reset_hidden: Vec<Array2<f64>>,
    /// Hidden state after every step.
    pub outputs: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct GruGrads {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub bias: Array2<f64>,
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruLayer {
            w_input: Array2::zeros((input, 3 * hidden)),
            w_hidden: Array2::zeros((hidden, 3 * hidden)),
            bias: Array2::zeros((1, 3 * hidden)),
        }
    }

    /// Uniform initialisation in `[-1/sqrt(H), 1/sqrt(H)]`.
    pub fn random(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut layer = Self::zeros(input, hidden);
        for w in layer
            .w_input
            .iter_mut()
            .chain(layer.w_hidden.iter_mut())
            .chain(layer.bias.iter_mut())
        {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.nrows()
    }

    pub fn input(&self) -> usize {
        self.w_input.nrows()
    }

    /// Runs the recurrence from a zero state over `inputs` (each `B x input`).
    /// Returns the final hidden state and, if requested, the cache.
    pub fn forward(&self, inputs: &[Array2<f64>], keep_cache: bool) -> (Array2<f64>, Option<GruCache>) {
        let hidden = self.hidden();
        let batch = inputs.first().map_or(0, |x| x.nrows());
        let mut h = Array2::<f64>::zeros((batch, hidden));
        let mut cache = keep_cache.then(GruCache::default);
        let w_zr = self.w_hidden.slice(s![.., ..2 * hidden]);
        let w_n = self.w_hidden.slice(s![.., 2 * hidden..]);
        for x in inputs {
            let mut pre = x.dot(&self.w_input);
            pre += &self.bias;
            let hidden_zr = h.dot(&w_zr);
            let mut update = Array2::<f64>::zeros((batch, hidden));
            let mut reset = Array2::<f64>::zeros((batch, hidden));
            Zip::from(&mut update)
                .and(pre.slice(s![.., ..hidden]))
                .and(hidden_zr.slice(s![.., ..hidden]))
                .for_each(|z, &a, &b| *z = sigmoid(a + b));
            Zip::from(&mut reset)
                .and(pre.slice(s![.., hidden..2 * hidden]))
                .and(hidden_zr.slice(s![.., hidden..]))
                .for_each(|r, &a, &b| *r = sigmoid(a + b));
            let reset_hidden = &reset * &h;
            let mut candidate = reset_hidden.dot(&w_n);
            Zip::from(&mut candidate)
                .and(pre.slice(s![.., 2 * hidden..]))
                .for_each(|n, &a| *n = (*n + a).tanh());
            let mut next = Array2::<f64>::zeros((batch, hidden));
            Zip::from(&mut next)
                .and(&h)
                .and(&update)
                .and(&candidate)
                .for_each(|o, &hp, &z, &n| *o = (1.0 - z) * hp + z * n);
            if let Some(c) = cache.as_mut() {
                c.inputs.push(x.clone());
                c.h_prev.push(h);
                c.update.push(update);
                c.reset.push(reset);
                c.candidate.push(candidate);
                c.reset_hidden.push(reset_hidden);
                c.outputs.push(next.clone());
            }
            h = next;
        }
        (h, cache)
    }

    /// Backpropagation through time. `d_outputs[k]` is the loss gradient with
    /// respect to the hidden state after step `k` (`None` for zero). Returns
    /// the parameter gradients and, if `want_inputs`, the input gradients.
    pub fn backward(
        &self,
        cache: &GruCache,
        d_outputs: &[Option<Array2<f64>>],
        want_inputs: bool,
    ) -> (GruGrads, Option<Vec<Array2<f64>>>) {
        let hidden = self.hidden();
        let steps = cache.inputs.len();
        let batch = cache.inputs.first().map_or(0, |x| x.nrows());
        let mut grads = GruGrads {
            w_input: Array2::zeros(self.w_input.raw_dim()),
            w_hidden: Array2::zeros(self.w_hidden.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        };
        let mut d_inputs = want_inputs.then(|| vec![Array2::<f64>::zeros((0, 0)); steps]);
        let w_zr = self.w_hidden.slice(s![.., ..2 * hidden]);
        let w_n = self.w_hidden.slice(s![.., 2 * hidden..]);
        let mut dh = Array2::<f64>::zeros((batch, hidden));
        let mut d_pre = Array2::<f64>::zeros((batch, 3 * hidden));
        for k in (0..steps).rev() {
            if let Some(Some(d)) = d_outputs.get(k) {
                dh += d;
            }
            let h_prev = &cache.h_prev[k];
            let z = &cache.update[k];
            let r = &cache.reset[k];
            let n = &cache.candidate[k];

            let mut dh_prev = Array2::<f64>::zeros((batch, hidden));
            // Candidate pre-activation and direct path through (1 - z).
            {
                let (mut dz_pre, mut rest) = d_pre.view_mut().split_at(Axis(1), hidden);
                let (_, mut dn_pre) = rest.view_mut().split_at(Axis(1), hidden);
                Zip::from(&mut dn_pre)
                    .and(&dh)
                    .and(z)
                    .and(n)
                    .for_each(|o, &g, &z, &n| *o = g * z * (1.0 - n * n));
                Zip::from(&mut dz_pre)
                    .and(&dh)
                    .and(n)
                    .and(h_prev)
                    .and(z)
                    .for_each(|o, &g, &n, &hp, &z| *o = g * (n - hp) * z * (1.0 - z));
                Zip::from(&mut dh_prev).and(&dh).and(z).for_each(|o, &g, &z| *o = g * (1.0 - z));
            }
            let dn_pre = d_pre.slice(s![.., 2 * hidden..]);
            let d_reset_hidden = dn_pre.dot(&w_n.t());
            grads
                .w_hidden
                .slice_mut(s![.., 2 * hidden..])
                .scaled_add(1.0, &cache.reset_hidden[k].t().dot(&dn_pre));
            {
                let mut dr_pre = d_pre.slice_mut(s![.., hidden..2 * hidden]);
                Zip::from(&mut dr_pre)
                    .and(&d_reset_hidden)
                    .and(h_prev)
                    .and(r)
                    .for_each(|o, &g, &hp, &r| *o = g * hp * r * (1.0 - r));
            }
            Zip::from(&mut dh_prev)
                .and(&d_reset_hidden)
                .and(r)
                .for_each(|o, &g, &r| *o += g * r);

            let d_zr: ArrayView2<f64> = d_pre.slice(s![.., ..2 * hidden]);
            grads
                .w_hidden
                .slice_mut(s![.., ..2 * hidden])
                .scaled_add(1.0, &h_prev.t().dot(&d_zr));
            dh_prev += &d_zr.dot(&w_zr.t());

            grads.w_input.scaled_add(1.0, &cache.inputs[k].t().dot(&d_pre));
            grads.bias += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
            if let Some(d_in) = d_inputs.as_mut() {
                d_in[k] = d_pre.dot(&self.w_input.t());
            }
            dh = dh_prev;
        }
        (grads, d_inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_inputs(rng: &mut ChaCha8Rng, steps: usize, batch: usize, input: usize) -> Vec<Array2<f64>> {
        (0..steps)
            .map(|_| Array2::from_shape_fn((batch, input), |_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let layer = GruLayer::zeros(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, _) = layer.forward(&random_inputs(&mut rng, 5, 2, 3), false);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_cell_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = GruLayer::random(2, 3, &mut rng);
        let x = random_inputs(&mut rng, 1, 1, 2);
        let (h, _) = layer.forward(&x, false);
        // With h0 = 0 the reset gate has no effect: h = z * tanh(x Wxn + bn).
        for i in 0..3 {
            let pre = |gate: usize| {
                let col = gate * 3 + i;
                x[0][[0, 0]] * layer.w_input[[0, col]] + x[0][[0, 1]] * layer.w_input[[1, col]] + layer.bias[[0, col]]
            };
            let expected = sigmoid(pre(0)) * pre(2).tanh();
            assert!((h[[0, i]] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = GruLayer::random(3, 4, &mut rng);
        let inputs = random_inputs(&mut rng, 3, 2, 3);
        let probe = Array2::from_shape_fn((2, 4), |_| rng.random_range(-1.0..1.0));
        // Scalar loss: <probe, h_K>.
        let loss = |xs: &[Array2<f64>]| (&layer.forward(xs, false).0 * &probe).sum();
        let (_, cache) = layer.forward(&inputs, true);
        let mut d_out = vec![None; 3];
        d_out[2] = Some(probe.clone());
        let (_, d_in) = layer.backward(cache.as_ref().unwrap(), &d_out, true);
        let d_in = d_in.unwrap();
        let eps = 1e-5;
        for k in 0..3 {
            for idx in 0..6 {
                let (b, i) = (idx / 3, idx % 3);
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k][[b, i]] += eps;
                minus[k][[b, i]] -= eps;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let an = d_in[k][[b, i]];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel <= 1e-4, "step {k} entry {idx}: {fd} vs {an}");
            }
        }
    }
}
