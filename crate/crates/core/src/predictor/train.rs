use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{output_to_count, ForwardCache, PredictorNetwork};
use crate::error::{invalid, Result};
use crate::traffic::{windowed_max, TrafficTrace};

/// Samples per gradient work unit. Fixed so the summation order, and hence
/// the trained weights, do not depend on the thread count.
const GRADIENT_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Labels are the max count over the current slot and the next `horizon`.
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("label horizon must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// One supervised example for slot `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// Counts of slots `t-q .. t`.
    pub window: Vec<u32>,
    /// Max count over slots `t ..= t+horizon`.
    pub label: u32,
    /// Count of slot `t`.
    pub actual: u32,
}

/// Builds every `(window, label)` pair the trace supports.
pub fn training_samples(counts: &[u32], window: usize, horizon: usize) -> Result<Vec<Sample>> {
    if window == 0 {
        return Err(invalid("predictor window must be positive"));
    }
    if counts.len() < window + horizon + 1 {
        return Err(invalid(format!(
            "trace of {} slots is too short for window {window} and horizon {horizon}",
            counts.len()
        )));
    }
    let labels = windowed_max(counts, horizon)?;
    Ok((window..labels.len())
        .map(|t| Sample {
            window: counts[t - window..t].to_vec(),
            label: labels[t],
            actual: counts[t],
        })
        .collect())
}

/// Root-mean-square loss over `samples` in normalized units, with its gradient.
pub fn loss_gradient(
    net: &PredictorNetwork,
    samples: &[Sample],
) -> Result<(f64, PredictorNetwork)> {
    if samples.is_empty() {
        return Err(invalid("loss needs at least one sample"));
    }
    if let Some(s) = samples.iter().find(|s| s.window.len() != net.window()) {
        return Err(invalid(format!(
            "sample window has {} counts, network expects {}",
            s.window.len(),
            net.window()
        )));
    }
    Ok(batch_gradient(net, samples))
}

fn batch_gradient(net: &PredictorNetwork, samples: &[Sample]) -> (f64, PredictorNetwork) {
    let scale = net.scale();
    let passes: Vec<(f64, ForwardCache)> = samples
        .par_iter()
        .map(|s| {
            let x: Vec<f64> = s.window.iter().map(|&c| c as f64 / scale).collect();
            let (y, cache) = net.forward_cached(&x);
            (y - s.label as f64 / scale, cache)
        })
        .collect();
    let mse = passes.iter().map(|(e, _)| e * e).sum::<f64>() / samples.len() as f64;
    let rms = mse.sqrt();
    let mut grad = net.zeros_like();
    if rms == 0.0 {
        return (0.0, grad);
    }
    let denom = samples.len() as f64 * rms;
    let partials: Vec<PredictorNetwork> = passes
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut g = net.zeros_like();
            for (e, cache) in chunk {
                net.backward(cache, e / denom, &mut g);
            }
            g
        })
        .collect();
    for p in &partials {
        grad.add_scaled(p, 1.0);
    }
    (rms, grad)
}

/// Mini-batch gradient descent on the RMS loss against windowed-max labels.
///
/// Sets the network's normalization scale to the largest training label and
/// returns the RMS loss of each epoch in count units, measured on the
/// batches as they are visited.
pub fn train<R: Rng + ?Sized>(
    net: &mut PredictorNetwork,
    trace: &TrafficTrace,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut samples = training_samples(trace.counts(), net.window(), config.horizon)?;
    let max_label = samples.iter().map(|s| s.label).max().unwrap_or(0);
    net.set_scale(f64::from(max_label.max(1)))?;
    let scale = net.scale();

    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        samples.shuffle(rng);
        let mut sum_sq = 0.0;
        for batch in samples.chunks(config.batch_size) {
            let (rms, grad) = batch_gradient(net, batch);
            sum_sq += rms * rms * batch.len() as f64;
            net.add_scaled(&grad, -config.learning_rate);
        }
        history.push((sum_sq / samples.len() as f64).sqrt() * scale);
    }
    Ok(history)
}

/// Held-out prediction quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    /// Fraction of slots whose predicted budget is below the slot's count.
    pub p_lstm: f64,
    /// Same, against the windowed-max label.
    pub p_lstm_peak: f64,
    /// RMS error of the raw output against the windowed-max label, in counts.
    pub rms_error: f64,
    /// RMS error of the raw output against the slot's count.
    pub rms_error_actual: f64,
}

/// Scores the network on every labelled slot of `trace`.
pub fn evaluate(
    net: &PredictorNetwork,
    trace: &TrafficTrace,
    horizon: usize,
) -> Result<Evaluation> {
    let samples = training_samples(trace.counts(), net.window(), horizon)?;
    let outputs: Vec<f64> = samples
        .par_iter()
        .map(|s| super::forward(net, &s.window))
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let mut under = 0usize;
    let mut under_peak = 0usize;
    let mut sq = 0.0;
    let mut sq_actual = 0.0;
    for (s, &y) in samples.iter().zip(&outputs) {
        let budget = output_to_count(y);
        under += usize::from(budget < s.actual);
        under_peak += usize::from(budget < s.label);
        sq += (y - s.label as f64).powi(2);
        sq_actual += (y - s.actual as f64).powi(2);
    }
    Ok(Evaluation {
        samples: samples.len(),
        p_lstm: under as f64 / n,
        p_lstm_peak: under_peak as f64 / n,
        rms_error: (sq / n).sqrt(),
        rms_error_actual: (sq_actual / n).sqrt(),
    })
}

/// Fraction of slots `t >= q` where the predicted budget falls short of the
/// actual count of slot `t`.
pub fn evaluate_plstm(net: &PredictorNetwork, trace: &TrafficTrace) -> Result<f64> {
    let q = net.window();
    let counts = trace.counts();
    if counts.len() <= q {
        return Err(invalid(format!(
            "trace of {} slots is too short for window {q}",
            counts.len()
        )));
    }
    let under: usize = (q..counts.len())
        .into_par_iter()
        .map(|t| super::predict_count(net, &counts[t - q..t]).map(|p| usize::from(p < counts[t])))
        .sum::<Result<usize>>()?;
    Ok(under as f64 / (counts.len() - q) as f64)
}
