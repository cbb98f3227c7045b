//! URLLC arrival traces and the windowed-max labels used to train the
//! arrival predictor. mMTC activation is a fixed count per slot and needs
//! no generator.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Result};

/// Per-slot URLLC arrival counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    urllc_counts: Vec<u32>,
    lambda: f64,
}

impl TrafficTrace {
    pub fn from_counts(urllc_counts: Vec<u32>, lambda: f64) -> Result<Self> {
        if urllc_counts.is_empty() {
            return Err(invalid("a trace needs at least one slot"));
        }
        if !(lambda > 0.0) {
            return Err(invalid(format!(
                "Poisson mean must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            urllc_counts,
            lambda,
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.urllc_counts
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn slot_count(&self) -> usize {
        self.urllc_counts.len()
    }

    /// Splits into `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> Result<(TrafficTrace, TrafficTrace)> {
        if at == 0 || at >= self.slot_count() {
            return Err(invalid(format!(
                "split point {at} must lie strictly inside 0..{}",
                self.slot_count()
            )));
        }
        let (a, b) = self.urllc_counts.split_at(at);
        Ok((
            TrafficTrace::from_counts(a.to_vec(), self.lambda)?,
            TrafficTrace::from_counts(b.to_vec(), self.lambda)?,
        ))
    }

    /// Plain-text form: a `# lambda <mean>` header, then one count per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.urllc_counts.len() * 3 + 16);
        let _ = writeln!(out, "# lambda {}", self.lambda);
        for c in &self.urllc_counts {
            let _ = writeln!(out, "{c}");
        }
        out
    }

    /// Parses [`TrafficTrace::to_text`] output. Without a header the sample
    /// mean stands in for the Poisson mean.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lambda = None;
        let mut counts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("lambda") {
                    lambda = Some(v.trim().parse::<f64>().map_err(|e| Error::ModelFormat {
                        line: i + 1,
                        message: format!("bad lambda: {e}"),
                    })?);
                }
                continue;
            }
            counts.push(line.parse::<u32>().map_err(|e| Error::ModelFormat {
                line: i + 1,
                message: format!("bad count {line:?}: {e}"),
            })?);
        }
        let lambda = match lambda {
            Some(l) => l,
            None if !counts.is_empty() => {
                counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64
            }
            None => 0.0,
        };
        TrafficTrace::from_counts(counts, lambda)
    }
}

/// Draws `slot_count` independent Poisson(`lambda`) arrival counts.
pub fn generate_trace<R: Rng + ?Sized>(
    lambda: f64,
    slot_count: usize,
    rng: &mut R,
) -> Result<TrafficTrace> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!(
            "Poisson mean must be positive, got {lambda}"
        )));
    }
    if slot_count == 0 {
        return Err(invalid("slot_count must be at least 1"));
    }
    let dist = Poisson::new(lambda).map_err(|e| invalid(e.to_string()))?;
    let counts = (0..slot_count).map(|_| dist.sample(rng) as u32).collect();
    TrafficTrace::from_counts(counts, lambda)
}

/// `label[t] = max(counts[t..=t + window])` for every `t` where the window
/// fits, so the output has `len - window` entries.
pub fn windowed_max_labels(trace: &TrafficTrace, window: usize) -> Result<Vec<u32>> {
    windowed_max(trace.counts(), window)
}

pub(crate) fn windowed_max(counts: &[u32], window: usize) -> Result<Vec<u32>> {
    if window == 0 {
        return Err(invalid("label window must be at least 1"));
    }
    if counts.len() <= window {
        return Err(invalid(format!(
            "trace of {} slots is too short for a window of {window}",
            counts.len()
        )));
    }
    Ok(counts
        .windows(window + 1)
        .map(|w| *w.iter().max().expect("non-empty window"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(c: &[u32]) -> TrafficTrace {
        TrafficTrace::from_counts(c.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn poisson_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = generate_trace(6.0, 100_000, &mut rng).unwrap();
        let n = t.slot_count() as f64;
        let mean = t.counts().iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = t
            .counts()
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((5.95..=6.05).contains(&mean), "mean {mean}");
        assert!((var / mean - 1.0).abs() < 0.03, "var {var} mean {mean}");
    }

    #[test]
    fn generate_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(generate_trace(6.0, 1, &mut rng).unwrap().slot_count(), 1);
        assert!(generate_trace(0.0, 10, &mut rng).is_err());
        assert!(generate_trace(-2.0, 10, &mut rng).is_err());
        assert!(generate_trace(6.0, 0, &mut rng).is_err());
    }

    #[test]
    fn windowed_max_examples() {
        assert_eq!(
            windowed_max_labels(&trace(&[2, 5, 1, 3]), 1).unwrap(),
            vec![5, 5, 3]
        );
        assert_eq!(
            windowed_max_labels(&trace(&[4, 4, 4, 4]), 2).unwrap(),
            vec![4, 4]
        );
        assert!(windowed_max_labels(&trace(&[4, 4, 4, 4]), 0).is_err());
        assert!(windowed_max_labels(&trace(&[4, 4]), 2).is_err());
    }

    #[test]
    fn text_round_trip_and_diagnostics() {
        let t = TrafficTrace::from_counts(vec![3, 0, 12, 7], 6.5).unwrap();
        assert_eq!(TrafficTrace::from_text(&t.to_text()).unwrap(), t);
        let err = TrafficTrace::from_text("# lambda 6\n1\nx\n").unwrap_err();
        assert!(matches!(err, Error::ModelFormat { line: 3, .. }));
        let bare = TrafficTrace::from_text("2\n4\n").unwrap();
        assert_eq!(bare.lambda(), 3.0);
    }

    proptest! {
        #[test]
        fn labels_dominate_counts(counts in prop::collection::vec(0u32..20, 2..60), w in 1usize..6) {
            prop_assume!(counts.len() > w);
            let labels = windowed_max(&counts, w).unwrap();
            prop_assert_eq!(labels.len(), counts.len() - w);
            for (t, &l) in labels.iter().enumerate() {
                prop_assert!(l >= counts[t]);
                prop_assert!(l >= counts[t + w]);
            }
        }

        #[test]
        fn labels_ignore_slots_outside_window(
            counts in prop::collection::vec(0u32..20, 8..40),
            w in 1usize..4,
            seed in 0u64..1000,
        ) {
            let labels = windowed_max(&counts, w).unwrap();
            // shuffle everything after the first label's window
            let mut permuted = counts.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            permuted[w + 1..].shuffle(&mut rng);
            let relabeled = windowed_max(&permuted, w).unwrap();
            prop_assert_eq!(labels[0], relabeled[0]);
        }
    }
}
