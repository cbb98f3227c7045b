//! URLLC arrival predictor: two LSTM layers with additive attention between
//! them and an affine head, trained on windowed-max labels.
//!
//! Layer 1 reads the `q` most recent counts. At step `j` layer 2 receives the
//! attention read over all layer-1 outputs (queried with its own previous
//! hidden state) concatenated with the layer-1 output of step `j`. The head
//! maps the final layer-2 state to a scalar in count units.

mod attention;
mod format;
mod lstm;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attention::{attend, softmax, Attended, AttentionParams};
pub use format::{read_network, write_network, FORMAT_VERSION};
pub use lstm::{lstm_forward, Gate, GateActivations, LstmLayerParams, LstmOutput, LstmState};
pub use train::{
    evaluate, evaluate_plstm, loss_gradient, train, training_samples, Evaluation, Sample,
    TrainConfig,
};

use crate::error::{invalid, Result};
use attention::AttentionCache;
use lstm::{matvec_t_add, outer_add, StepCache};

/// Layer sizes of a [`PredictorNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkShape {
    /// Number of past slots fed to the network (`q`).
    pub window: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub attention_dim: usize,
    /// `false` builds the ablation that feeds layer-1 outputs straight into
    /// layer 2.
    pub attention: bool,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            window: 5,
            hidden1: 32,
            hidden2: 32,
            attention_dim: 32,
            attention: true,
        }
    }
}

/// All predictor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorNetwork {
    window: usize,
    /// Counts are divided by this before entering layer 1 and the head
    /// output is multiplied by it.
    scale: f64,
    pub(crate) layer1: LstmLayerParams,
    pub(crate) attention: Option<AttentionParams>,
    pub(crate) layer2: LstmLayerParams,
    pub(crate) head_weight: Vec<f64>,
    pub(crate) head_bias: Vec<f64>,
}

impl PredictorNetwork {
    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        if shape.window == 0 {
            return Err(invalid("predictor window must be positive"));
        }
        let layer2_input = if shape.attention {
            2 * shape.hidden1
        } else {
            shape.hidden1
        };
        Ok(Self {
            window: shape.window,
            scale: 1.0,
            layer1: LstmLayerParams::zeros(shape.hidden1, 1)?,
            attention: if shape.attention {
                Some(AttentionParams::zeros(
                    shape.attention_dim,
                    shape.hidden1,
                    shape.hidden2,
                )?)
            } else {
                None
            },
            layer2: LstmLayerParams::zeros(shape.hidden2, layer2_input)?,
            head_weight: vec![0.0; shape.hidden2],
            head_bias: vec![0.0],
        })
    }

    pub fn random<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        net.layer1 = LstmLayerParams::random(shape.hidden1, 1, rng)?;
        if shape.attention {
            net.attention = Some(AttentionParams::random(
                shape.attention_dim,
                shape.hidden1,
                shape.hidden2,
                rng,
            )?);
        }
        net.layer2 = LstmLayerParams::random(shape.hidden2, net.layer2.input_width(), rng)?;
        let k = 1.0 / (shape.hidden2 as f64).sqrt();
        net.head_weight
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-k..k));
        net.head_bias[0] = rng.gen_range(-k..k);
        Ok(net)
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            window: self.window,
            hidden1: self.layer1.hidden_size(),
            hidden2: self.layer2.hidden_size(),
            attention_dim: self.attention.as_ref().map_or(0, |a| a.dim()),
            attention: self.attention.is_some(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn set_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!(
                "normalization scale must be positive, got {scale}"
            )));
        }
        self.scale = scale;
        Ok(())
    }

    pub fn has_attention(&self) -> bool {
        self.attention.is_some()
    }

    pub fn layer1(&self) -> &LstmLayerParams {
        &self.layer1
    }

    pub fn layer2(&self) -> &LstmLayerParams {
        &self.layer2
    }

    pub fn attention(&self) -> Option<&AttentionParams> {
        self.attention.as_ref()
    }

    pub fn head_bias(&self) -> f64 {
        self.head_bias[0]
    }

    pub fn set_head_bias(&mut self, bias: f64) {
        self.head_bias[0] = bias;
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (layer, p) in [("layer1", &self.layer1), ("layer2", &self.layer2)] {
            for g in Gate::ALL {
                out.push((format!("{layer}.w_{}", g.tag()), p.weight(g)));
                out.push((format!("{layer}.b_{}", g.tag()), p.bias(g)));
            }
        }
        if let Some(a) = &self.attention {
            out.push(("attention.score".into(), &a.score));
            out.push(("attention.context".into(), &a.context_proj));
            out.push(("attention.query".into(), &a.query_proj));
        }
        out.push(("head.w".into(), &self.head_weight));
        out.push(("head.b".into(), &self.head_bias));
        out
    }

    /// Mutable view in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (layer, p) in [("layer1", &mut self.layer1), ("layer2", &mut self.layer2)] {
            let LstmLayerParams {
                weights, biases, ..
            } = p;
            for ((g, w), b) in Gate::ALL
                .iter()
                .zip(weights.iter_mut())
                .zip(biases.iter_mut())
            {
                out.push((format!("{layer}.w_{}", g.tag()), w.as_mut_slice()));
                out.push((format!("{layer}.b_{}", g.tag()), b.as_mut_slice()));
            }
        }
        if let Some(a) = &mut self.attention {
            out.push(("attention.score".into(), &mut a.score));
            out.push(("attention.context".into(), &mut a.context_proj));
            out.push(("attention.query".into(), &mut a.query_proj));
        }
        out.push(("head.w".into(), &mut self.head_weight));
        out.push(("head.b".into(), &mut self.head_bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_window(&self, window: &[u32]) -> Result<()> {
        if window.len() != self.window {
            return Err(invalid(format!(
                "predictor expects {} counts, got {}",
                self.window,
                window.len()
            )));
        }
        Ok(())
    }

    fn normalize(&self, window: &[u32]) -> Vec<f64> {
        window.iter().map(|&c| c as f64 / self.scale).collect()
    }

    /// Forward pass on normalized inputs, returning the normalized output and
    /// the activations needed for backpropagation.
    pub(crate) fn forward_cached(&self, inputs: &[f64]) -> (f64, ForwardCache) {
        let h1n = self.layer1.hidden_size();
        let mut h = vec![0.0; h1n];
        let mut c = vec![0.0; h1n];
        let mut layer1 = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let s = self.layer1.step(&h, &c, &[x]);
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            layer1.push(s);
        }
        let context: Vec<Vec<f64>> = layer1.iter().map(|s| s.h.clone()).collect();
        let projected = self
            .attention
            .as_ref()
            .map(|a| a.project_context(&context))
            .unwrap_or_default();

        let h2n = self.layer2.hidden_size();
        let mut h = vec![0.0; h2n];
        let mut c = vec![0.0; h2n];
        let mut layer2 = Vec::with_capacity(inputs.len());
        let mut reads = Vec::new();
        for s1 in &context {
            let x = match &self.attention {
                Some(a) => {
                    let read = a.read(&context, &projected, &h);
                    let mut x = read.z.clone();
                    x.extend_from_slice(s1);
                    reads.push(read);
                    x
                }
                None => s1.clone(),
            };
            let s = self.layer2.step(&h, &c, &x);
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            layer2.push(s);
        }
        let y = self.head_bias[0]
            + self
                .head_weight
                .iter()
                .zip(&h)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        (
            y,
            ForwardCache {
                layer1,
                context,
                reads,
                layer2,
            },
        )
    }

    /// Accumulates `dy · ∂y/∂θ` into `grad` (same shape as `self`).
    pub(crate) fn backward(&self, cache: &ForwardCache, dy: f64, grad: &mut PredictorNetwork) {
        let q = cache.layer1.len();
        let h1n = self.layer1.hidden_size();
        let h2n = self.layer2.hidden_size();
        let h_last = &cache.layer2[q - 1].h;
        for (g, h) in grad.head_weight.iter_mut().zip(h_last) {
            *g += dy * h;
        }
        grad.head_bias[0] += dy;

        let mut dh2: Vec<f64> = self.head_weight.iter().map(|w| dy * w).collect();
        let mut dc2 = vec![0.0; h2n];
        let mut d_context = vec![vec![0.0; h1n]; q];
        let mut d_projected = vec![vec![0.0; self.attention.as_ref().map_or(0, |a| a.dim())]; q];
        for j in (0..q).rev() {
            let (mut dh_prev, dc_prev, dx) =
                self.layer2
                    .step_backward(&cache.layer2[j], &dh2, &dc2, &mut grad.layer2);
            match (&self.attention, grad.attention.as_mut()) {
                (Some(a), Some(ga)) => {
                    let (dz, ds) = dx.split_at(h1n);
                    for (d, v) in d_context[j].iter_mut().zip(ds) {
                        *d += v;
                    }
                    a.read_backward(
                        &cache.reads[j],
                        &cache.context,
                        dz,
                        &mut d_context,
                        &mut d_projected,
                        &mut dh_prev,
                        ga,
                    );
                }
                _ => {
                    for (d, v) in d_context[j].iter_mut().zip(&dx) {
                        *d += v;
                    }
                }
            }
            dh2 = dh_prev;
            dc2 = dc_prev;
        }
        if let (Some(a), Some(ga)) = (&self.attention, grad.attention.as_mut()) {
            for (dp, s) in d_projected.iter().zip(&cache.context) {
                outer_add(&mut ga.context_proj, h1n, dp, s);
            }
            for (dp, dc) in d_projected.iter().zip(d_context.iter_mut()) {
                matvec_t_add(&a.context_proj, h1n, dp, dc);
            }
        }

        let mut dh1 = vec![0.0; h1n];
        let mut dc1 = vec![0.0; h1n];
        for t in (0..q).rev() {
            for (d, v) in dh1.iter_mut().zip(&d_context[t]) {
                *d += v;
            }
            let (dh_prev, dc_prev, _) =
                self.layer1
                    .step_backward(&cache.layer1[t], &dh1, &dc1, &mut grad.layer1);
            dh1 = dh_prev;
            dc1 = dc_prev;
        }
    }

    /// Zeroed copy with identical shape, used as a gradient accumulator.
    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Adds `factor · other` to every parameter.
    pub(crate) fn add_scaled(&mut self, other: &PredictorNetwork, factor: f64) {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += factor * v;
            }
        }
    }
}

pub(crate) struct ForwardCache {
    layer1: Vec<StepCache>,
    context: Vec<Vec<f64>>,
    reads: Vec<AttentionCache>,
    layer2: Vec<StepCache>,
}

/// Network output in count units for the `q` most recent counts.
pub fn forward(net: &PredictorNetwork, window: &[u32]) -> Result<f64> {
    net.check_window(window)?;
    let (y, _) = net.forward_cached(&net.normalize(window));
    Ok(y * net.scale)
}

/// Attention weights used at each layer-2 step, for inspection.
pub fn attention_weights(net: &PredictorNetwork, window: &[u32]) -> Result<Vec<Vec<f64>>> {
    net.check_window(window)?;
    let (_, cache) = net.forward_cached(&net.normalize(window));
    Ok(cache.reads.into_iter().map(|r| r.weights).collect())
}

/// Rounds a raw output up to a device budget: `ceil(max(y, 0))`.
pub fn output_to_count(y: f64) -> u32 {
    if y.is_nan() || y <= 0.0 {
        0
    } else if y >= u32::MAX as f64 {
        u32::MAX
    } else {
        y.ceil() as u32
    }
}

/// Predicted URLLC device count for the next slot.
pub fn predict_count(net: &PredictorNetwork, window: &[u32]) -> Result<u32> {
    Ok(output_to_count(forward(net, window)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(attention: bool, seed: u64) -> PredictorNetwork {
        let shape = NetworkShape {
            window: 4,
            hidden1: 5,
            hidden2: 6,
            attention_dim: 3,
            attention,
        };
        PredictorNetwork::random(shape, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(output_to_count(6.2), 7);
        assert_eq!(output_to_count(-0.3), 0);
        assert_eq!(output_to_count(5.0), 5);
        assert_eq!(output_to_count(f64::NAN), 0);
        assert_eq!(output_to_count(1e300), u32::MAX);
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let net =
            PredictorNetwork::random(NetworkShape::default(), &mut ChaCha8Rng::seed_from_u64(1))
                .unwrap();
        let w = [3, 9, 0, 12, 6];
        let a = forward(&net, &w).unwrap();
        assert_eq!(a.to_bits(), forward(&net, &w).unwrap().to_bits());
        assert!(a.is_finite());
        assert!(forward(&net, &[1000, 0, 1000, 0, 1000])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn output_depends_on_every_input() {
        for attention in [true, false] {
            let net = small(attention, 7);
            let base = [2, 5, 1, 7];
            let y = forward(&net, &base).unwrap();
            for i in 0..base.len() {
                let mut w = base;
                w[i] += 1;
                assert_ne!(forward(&net, &w).unwrap(), y, "input {i}");
            }
        }
    }

    #[test]
    fn window_length_is_checked() {
        let net = small(true, 2);
        assert!(forward(&net, &[1, 2, 3]).is_err());
        assert!(predict_count(&net, &[1, 2, 3, 4, 5]).is_err());
    }

    #[test]
    fn head_bias_alone_sets_output() {
        let mut net = PredictorNetwork::zeros(NetworkShape::default()).unwrap();
        net.set_scale(10.0).unwrap();
        net.set_head_bias(0.62);
        assert!((forward(&net, &[1, 2, 3, 4, 5]).unwrap() - 6.2).abs() < 1e-12);
        assert_eq!(predict_count(&net, &[1, 2, 3, 4, 5]).unwrap(), 7);
    }

    #[test]
    fn per_step_attention_weights_are_distributions() {
        let net = small(true, 11);
        let ws = attention_weights(&net, &[4, 0, 9, 2]).unwrap();
        assert_eq!(ws.len(), 4);
        for w in ws {
            assert_eq!(w.len(), 4);
            assert!(w.iter().all(|&a| a >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(attention_weights(&small(false, 1), &[1, 1, 1, 1])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn tensor_views_agree() {
        let mut net = small(true, 4);
        let names: Vec<String> = net.tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = net.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        // layer1 5*(5+1)*4 + 20, layer2 6*(6+10)*4 + 24, attention 3 + 15 + 18, head 7
        assert_eq!(net.parameter_count(), 140 + 408 + 36 + 7);
        assert_eq!(small(false, 4).shape().attention_dim, 0);
    }
}
