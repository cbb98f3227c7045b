use rand::Rng;

use super::lstm::{matvec_add, matvec_t_add, outer_add};
use crate::error::{Error, Result};

/// Additive (Bahdanau) attention: `e_j = vᵀ tanh(W_c s_j + W_q h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    dim: usize,
    context_width: usize,
    query_width: usize,
    /// Score vector `v`, length `dim`.
    pub(crate) score: Vec<f64>,
    /// `dim x context_width`, row-major.
    pub(crate) context_proj: Vec<f64>,
    /// `dim x query_width`, row-major.
    pub(crate) query_proj: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(dim: usize, context_width: usize, query_width: usize) -> Result<Self> {
        if dim == 0 || context_width == 0 || query_width == 0 {
            return Err(Error::Dimension(format!(
                "attention sizes must be positive, got dim {dim}, context {context_width}, query {query_width}"
            )));
        }
        Ok(Self {
            dim,
            context_width,
            query_width,
            score: vec![0.0; dim],
            context_proj: vec![0.0; dim * context_width],
            query_proj: vec![0.0; dim * query_width],
        })
    }

    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        context_width: usize,
        query_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(dim, context_width, query_width)?;
        let k = 1.0 / (dim as f64).sqrt();
        for v in [&mut p.score, &mut p.context_proj, &mut p.query_proj] {
            v.iter_mut().for_each(|x| *x = rng.gen_range(-k..k));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_width(&self) -> usize {
        self.context_width
    }

    pub fn query_width(&self) -> usize {
        self.query_width
    }

    pub fn score_vector(&self) -> &[f64] {
        &self.score
    }

    pub fn score_vector_mut(&mut self) -> &mut [f64] {
        &mut self.score
    }

    pub(crate) fn project_context(&self, context: &[Vec<f64>]) -> Vec<Vec<f64>> {
        context
            .iter()
            .map(|s| {
                let mut p = vec![0.0; self.dim];
                matvec_add(&self.context_proj, self.context_width, s, &mut p);
                p
            })
            .collect()
    }

    /// One attention read given pre-projected context.
    pub(crate) fn read(
        &self,
        context: &[Vec<f64>],
        projected: &[Vec<f64>],
        query: &[f64],
    ) -> AttentionCache {
        let mut q = vec![0.0; self.dim];
        matvec_add(&self.query_proj, self.query_width, query, &mut q);
        let activations: Vec<Vec<f64>> = projected
            .iter()
            .map(|p| p.iter().zip(&q).map(|(a, b)| (a + b).tanh()).collect())
            .collect();
        let scores: Vec<f64> = activations
            .iter()
            .map(|t: &Vec<f64>| t.iter().zip(&self.score).map(|(a, b)| a * b).sum())
            .collect();
        let weights = softmax(&scores);
        let mut z = vec![0.0; self.context_width];
        for (s, &a) in context.iter().zip(&weights) {
            for (zi, si) in z.iter_mut().zip(s) {
                *zi += a * si;
            }
        }
        AttentionCache {
            query: query.to_vec(),
            activations,
            scores,
            weights,
            z,
        }
    }

    /// Backpropagates `dz` through one read. Adds to `d_context`,
    /// `d_projected` and `d_query` and accumulates the score and query-side
    /// parameter gradients; the context projection gradient is applied later
    /// from the summed `d_projected`.
    pub(crate) fn read_backward(
        &self,
        cache: &AttentionCache,
        context: &[Vec<f64>],
        dz: &[f64],
        d_context: &mut [Vec<f64>],
        d_projected: &mut [Vec<f64>],
        d_query: &mut [f64],
        grad: &mut AttentionParams,
    ) {
        let da: Vec<f64> = context
            .iter()
            .map(|s| s.iter().zip(dz).map(|(a, b)| a * b).sum())
            .collect();
        for (dc, &a) in d_context.iter_mut().zip(&cache.weights) {
            for (d, g) in dc.iter_mut().zip(dz) {
                *d += a * g;
            }
        }
        let mean: f64 = cache.weights.iter().zip(&da).map(|(a, d)| a * d).sum();
        let mut d_pre_q = vec![0.0; self.dim];
        for (k, t) in cache.activations.iter().enumerate() {
            let de = cache.weights[k] * (da[k] - mean);
            for i in 0..self.dim {
                grad.score[i] += de * t[i];
                let d_pre = de * self.score[i] * (1.0 - t[i] * t[i]);
                d_projected[k][i] += d_pre;
                d_pre_q[i] += d_pre;
            }
        }
        outer_add(
            &mut grad.query_proj,
            self.query_width,
            &d_pre_q,
            &cache.query,
        );
        matvec_t_add(&self.query_proj, self.query_width, &d_pre_q, d_query);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    query: Vec<f64>,
    activations: Vec<Vec<f64>>,
    #[allow(dead_code)]
    scores: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    pub(crate) z: Vec<f64>,
}

/// Result of one attention read.
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    /// Weighted context `z = Σ a_j s_j`.
    pub context: Vec<f64>,
    pub weights: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Attends over `context` (one vector per time step) with `query`.
pub fn attend(params: &AttentionParams, context: &[Vec<f64>], query: &[f64]) -> Result<Attended> {
    if context.is_empty() {
        return Err(Error::InvalidParameter("attention context is empty".into()));
    }
    if let Some(s) = context.iter().find(|s| s.len() != params.context_width) {
        return Err(Error::Dimension(format!(
            "context vector has width {}, expected {}",
            s.len(),
            params.context_width
        )));
    }
    if query.len() != params.query_width {
        return Err(Error::Dimension(format!(
            "query has width {}, expected {}",
            query.len(),
            params.query_width
        )));
    }
    let projected = params.project_context(context);
    let c = params.read(context, &projected, query);
    Ok(Attended {
        context: c.z,
        weights: c.weights,
        scores: c.scores,
    })
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_scores_give_uniform_weights() {
        let p = AttentionParams::zeros(3, 2, 2).unwrap();
        let ctx = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 2.0],
            vec![-1.0, 4.0],
        ];
        let a = attend(&p, &ctx, &[0.3, 0.1]).unwrap();
        for w in &a.weights {
            assert!((w - 0.25).abs() < 1e-15);
        }
        assert!((a.context[0] - 0.5).abs() < 1e-15);
        assert!((a.context[1] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn dominant_score_selects_one_step() {
        let w = softmax(&[0.0, 50.0, 0.0]);
        assert!(1.0 - w[1] < 1e-20);
        assert!(w[0] < 1e-21);

        // a context vector with a large projection along v dominates
        let mut p = AttentionParams::zeros(1, 1, 1).unwrap();
        p.score[0] = 60.0;
        p.context_proj[0] = 10.0;
        let ctx = vec![vec![-1.0], vec![1.0], vec![-0.5]];
        let a = attend(&p, &ctx, &[0.0]).unwrap();
        assert!((a.context[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn input_errors() {
        let p = AttentionParams::zeros(2, 2, 3).unwrap();
        assert!(attend(&p, &[], &[0.0; 3]).is_err());
        assert!(attend(&p, &[vec![0.0; 3]], &[0.0; 3]).is_err());
        assert!(attend(&p, &[vec![0.0; 2]], &[0.0; 2]).is_err());
    }

    proptest! {
        #[test]
        fn weights_form_a_probability_vector(
            seed in any::<u64>(),
            steps in 1usize..12,
            scale in 0.1f64..20.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = AttentionParams::random(4, 3, 2, &mut rng).unwrap();
            p.score.iter_mut().for_each(|v| *v *= scale);
            let ctx: Vec<Vec<f64>> = (0..steps)
                .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let q: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = attend(&p, &ctx, &q).unwrap();
            prop_assert!(a.weights.iter().all(|&w| w >= 0.0));
            prop_assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
