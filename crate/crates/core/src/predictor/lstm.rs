use rand::Rng;

use crate::error::{Error, Result};

/// Gate order used for the weight and bias arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Update = 1,
    Candidate = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Update, Gate::Candidate, Gate::Output];

    pub(crate) fn tag(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Update => "u",
            Gate::Candidate => "c",
            Gate::Output => "o",
        }
    }
}

/// One LSTM layer. Every gate has a `hidden x (hidden + input)` weight matrix,
/// row-major, acting on `[h_prev, x]`, and a bias of length `hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    hidden: usize,
    input: usize,
    pub(crate) weights: [Vec<f64>; 4],
    pub(crate) biases: [Vec<f64>; 4],
}

impl LstmLayerParams {
    pub fn zeros(hidden: usize, input: usize) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(Error::Dimension(format!(
                "LSTM layer needs positive sizes, got hidden {hidden}, input {input}"
            )));
        }
        let w = vec![0.0; hidden * (hidden + input)];
        let b = vec![0.0; hidden];
        Ok(Self {
            hidden,
            input,
            weights: [w.clone(), w.clone(), w.clone(), w],
            biases: [b.clone(), b.clone(), b.clone(), b],
        })
    }

    /// Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) initialization.
    pub fn random<R: Rng + ?Sized>(hidden: usize, input: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(hidden, input)?;
        let k = 1.0 / (hidden as f64).sqrt();
        for v in p.weights.iter_mut().chain(p.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = rng.gen_range(-k..k));
        }
        Ok(p)
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn weight(&self, gate: Gate) -> &[f64] {
        &self.weights[gate as usize]
    }

    pub fn weight_mut(&mut self, gate: Gate) -> &mut [f64] {
        &mut self.weights[gate as usize]
    }

    pub fn bias(&self, gate: Gate) -> &[f64] {
        &self.biases[gate as usize]
    }

    pub fn bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        &mut self.biases[gate as usize]
    }

    fn cols(&self) -> usize {
        self.hidden + self.input
    }

    pub(crate) fn step(&self, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> StepCache {
        let mut v = Vec::with_capacity(self.cols());
        v.extend_from_slice(h_prev);
        v.extend_from_slice(x);
        let gate = |g: Gate| {
            let mut out = self.biases[g as usize].clone();
            matvec_add(&self.weights[g as usize], self.cols(), &v, &mut out);
            out
        };
        let f: Vec<f64> = gate(Gate::Forget).into_iter().map(sigmoid).collect();
        let u: Vec<f64> = gate(Gate::Update).into_iter().map(sigmoid).collect();
        let g: Vec<f64> = gate(Gate::Candidate).into_iter().map(f64::tanh).collect();
        let o: Vec<f64> = gate(Gate::Output).into_iter().map(sigmoid).collect();
        let c: Vec<f64> = (0..self.hidden)
            .map(|i| f[i] * c_prev[i] + u[i] * g[i])
            .collect();
        let tanh_c: Vec<f64> = c.iter().map(|x| x.tanh()).collect();
        let h = (0..self.hidden).map(|i| o[i] * tanh_c[i]).collect();
        StepCache {
            v,
            f,
            u,
            g,
            o,
            c_prev: c_prev.to_vec(),
            c,
            tanh_c,
            h,
        }
    }

    /// Backpropagates one step. `dh` and `dc` are the gradients reaching this
    /// step's outputs. Returns `(dh_prev, dc_prev, dx)`.
    pub(crate) fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc_next: &[f64],
        grad: &mut LstmLayerParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.hidden;
        let cols = self.cols();
        let mut dc_prev = vec![0.0; n];
        let mut pre = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let d_o = dh[i] * cache.tanh_c[i];
            let dc = dc_next[i] + dh[i] * cache.o[i] * (1.0 - cache.tanh_c[i] * cache.tanh_c[i]);
            let d_f = dc * cache.c_prev[i];
            let d_u = dc * cache.g[i];
            let d_g = dc * cache.u[i];
            dc_prev[i] = dc * cache.f[i];
            pre[Gate::Forget as usize][i] = d_f * cache.f[i] * (1.0 - cache.f[i]);
            pre[Gate::Update as usize][i] = d_u * cache.u[i] * (1.0 - cache.u[i]);
            pre[Gate::Candidate as usize][i] = d_g * (1.0 - cache.g[i] * cache.g[i]);
            pre[Gate::Output as usize][i] = d_o * cache.o[i] * (1.0 - cache.o[i]);
        }
        let mut dv = vec![0.0; cols];
        for k in 0..4 {
            let w = &self.weights[k];
            let gw = &mut grad.weights[k];
            for (i, &d) in pre[k].iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.biases[k][i] += d;
                let row = &w[i * cols..(i + 1) * cols];
                let grow = &mut gw[i * cols..(i + 1) * cols];
                for j in 0..cols {
                    grow[j] += d * cache.v[j];
                    dv[j] += d * row[j];
                }
            }
        }
        let dx = dv.split_off(n);
        (dv, dc_prev, dx)
    }
}

/// Activations of one time step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    v: Vec<f64>,
    f: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    pub(crate) c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub(crate) h: Vec<f64>,
}

/// Recurrent state `(h, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(size: usize) -> Self {
        Self {
            hidden: vec![0.0; size],
            cell: vec![0.0; size],
        }
    }
}

/// Gate activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateActivations {
    pub forget: Vec<f64>,
    pub update: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmOutput {
    /// `h` after every input step.
    pub hidden: Vec<Vec<f64>>,
    /// Final cell state.
    pub cell: Vec<f64>,
    pub gates: Vec<GateActivations>,
}

/// Runs the layer over `inputs` starting from `initial`.
pub fn lstm_forward(
    params: &LstmLayerParams,
    inputs: &[Vec<f64>],
    initial: &LstmState,
) -> Result<LstmOutput> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter(
            "LSTM input sequence is empty".into(),
        ));
    }
    let n = params.hidden;
    if initial.hidden.len() != n || initial.cell.len() != n {
        return Err(Error::Dimension(format!(
            "initial state must have size {n}, got h {} and c {}",
            initial.hidden.len(),
            initial.cell.len()
        )));
    }
    if let Some((t, x)) = inputs
        .iter()
        .enumerate()
        .find(|(_, x)| x.len() != params.input)
    {
        return Err(Error::Dimension(format!(
            "input {t} has width {}, expected {}",
            x.len(),
            params.input
        )));
    }
    let mut h = initial.hidden.clone();
    let mut c = initial.cell.clone();
    let mut out = LstmOutput {
        hidden: Vec::with_capacity(inputs.len()),
        cell: Vec::new(),
        gates: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        let s = params.step(&h, &c, x);
        out.gates.push(GateActivations {
            forget: s.f,
            update: s.u,
            candidate: s.g,
            output: s.o,
        });
        h = s.h;
        c = s.c;
        out.hidden.push(h.clone());
    }
    out.cell = c;
    Ok(out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W v` for a row-major `W` with `cols` columns.
pub(crate) fn matvec_add(w: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        *o += dot(row, v);
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += Wᵀ d` for a row-major `W` with `cols` columns.
pub(crate) fn matvec_t_add(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    for (row, &di) in w.chunks_exact(cols).zip(d) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * di;
        }
    }
}

/// `W += d ⊗ v`.
pub(crate) fn outer_add(w: &mut [f64], cols: usize, d: &[f64], v: &[f64]) {
    for (row, &di) in w.chunks_exact_mut(cols).zip(d) {
        for (a, b) in row.iter_mut().zip(v) {
            *a += di * b;
        }
    }
}
