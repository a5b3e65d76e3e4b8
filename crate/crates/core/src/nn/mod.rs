//! Small dense-network toolkit: a flat parameter store, linear layers,
//! MLPs and the Adam optimizer. Backward passes are written by hand.

pub mod ops;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use ops::Activation;

/// Location of one named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All parameters of one network in a single contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub specs: Vec<TensorSpec>,
    pub data: Vec<f64>,
    pub seed: u64,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.offset..s.offset + s.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.specs.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.data[s.offset..s.offset + s.len()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Named arrays, in layout order.
    pub fn named(&self) -> Vec<NamedArray> {
        self.specs
            .iter()
            .map(|s| NamedArray {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: self.data[s.offset..s.offset + s.len()].to_vec(),
            })
            .collect()
    }

    /// Overwrites every tensor from `arrays`; names and shapes must match
    /// this layout exactly.
    pub fn load_named(&mut self, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.specs.len() {
            return Err(Error::config(format!(
                "checkpoint has {} tensors, network expects {}",
                arrays.len(),
                self.specs.len()
            )));
        }
        for (spec, a) in self.specs.iter().zip(arrays) {
            if spec.name != a.name || spec.shape != a.shape || a.data.len() != spec.len() {
                return Err(Error::config(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    spec.name, spec.shape, a.name, a.shape
                )));
            }
            if a.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("tensor {} has non-finite values", a.name)));
            }
            self.data[spec.offset..spec.offset + spec.len()].copy_from_slice(&a.data);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Scaled { fan_in: usize, gain: f64 },
    Normal(f64),
}

/// Allocates tensors in order and initializes them from a seeded stream.
pub struct ParamBuilder {
    specs: Vec<TensorSpec>,
    data: Vec<f64>,
    rng: ChaCha8Rng,
    seed: u64,
    prefix: Vec<String>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        ParamBuilder {
            specs: Vec::new(),
            data: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            prefix: Vec::new(),
        }
    }

    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.prefix.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.prefix.pop();
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> usize {
        let offset = self.data.len();
        let len: usize = shape.iter().product();
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        let std = match init {
            Init::Scaled { fan_in, gain } => gain / (fan_in.max(1) as f64).sqrt(),
            Init::Normal(s) => s,
            _ => 0.0,
        };
        for _ in 0..len {
            let v = match init {
                Init::Zeros => 0.0,
                Init::Const(c) => c,
                _ => {
                    if std == 0.0 {
                        0.0
                    } else {
                        Normal::new(0.0, std).expect("positive std").sample(&mut self.rng)
                    }
                }
            };
            self.data.push(v);
        }
        self.specs.push(TensorSpec {
            name: full,
            shape: shape.to_vec(),
            offset,
        });
        offset
    }

    pub fn linear(&mut self, name: &str, input: usize, output: usize, gain: f64) -> Linear {
        self.push_scope(name);
        let w = self.add("w", &[input, output], Init::Scaled { fan_in: input, gain });
        let b = self.add("b", &[output], Init::Zeros);
        self.pop_scope();
        Linear { w, b, input, output }
    }

    pub fn layernorm(&mut self, name: &str, dim: usize) -> LayerNorm {
        self.push_scope(name);
        let gamma = self.add("gamma", &[dim], Init::Const(1.0));
        let beta = self.add("beta", &[dim], Init::Zeros);
        self.pop_scope();
        LayerNorm { gamma, beta, dim }
    }

    /// `dims = [in, h1, ..., out]`; the last layer gets `out_gain`.
    pub fn mlp(&mut self, name: &str, dims: &[usize], act: Activation, out_gain: f64) -> Mlp {
        self.push_scope(name);
        let hidden_gain = match act {
            Activation::Relu | Activation::Gelu => std::f64::consts::SQRT_2,
            Activation::Tanh => 1.0,
        };
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 2 == dims.len() { out_gain } else { hidden_gain };
                self.linear(&format!("l{i}"), w[0], w[1], gain)
            })
            .collect();
        self.pop_scope();
        Mlp { layers, act }
    }

    /// Overwrites `len` values starting at `offset`.
    pub fn fill(&mut self, offset: usize, len: usize, value: f64) {
        self.data[offset..offset + len].fill(value);
    }

    /// Uniform random draw from the builder's stream (for tests).
    pub fn random(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn finish(self) -> ParamStore {
        ParamStore {
            specs: self.specs,
            data: self.data,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn weight<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.input * self.output]
    }

    pub fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.output]
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = vec![0.0; rows * self.output];
        ops::linear_forward(x, self.weight(p), self.bias(p), rows, self.input, self.output, &mut y);
        y
    }

    /// Accumulates parameter gradients into `g`; returns `dx` if asked.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], rows: usize, want_dx: bool) -> Option<Vec<f64>> {
        let mut dx = want_dx.then(|| vec![0.0; rows * self.input]);
        let (gw, gb) = split_two(g, self.w, self.input * self.output, self.b, self.output);
        ops::linear_backward(x, self.weight(p), dy, rows, self.input, self.output, gw, gb, dx.as_deref_mut());
        dx
    }
}

/// Two disjoint mutable ranges of one buffer.
fn split_two(g: &mut [f64], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [f64], &mut [f64]) {
    if a < b {
        let (lo, hi) = g.split_at_mut(b);
        (&mut lo[a..a + alen], &mut hi[..blen])
    } else {
        let (lo, hi) = g.split_at_mut(a);
        (&mut hi[..alen], &mut lo[b..b + blen])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
    pub dim: usize,
}

pub struct LnTape {
    pub x: Vec<f64>,
    pub stats: Vec<(f64, f64)>,
}

impl LayerNorm {
    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, Vec<(f64, f64)>) {
        let mut y = vec![0.0; x.len()];
        let stats = ops::layernorm_forward(
            x,
            &p[self.gamma..self.gamma + self.dim],
            &p[self.beta..self.beta + self.dim],
            self.dim,
            &mut y,
        );
        (y, stats)
    }

    /// Adds the input gradient into `dx`.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], stats: &[(f64, f64)], dy: &[f64], dx: &mut [f64]) {
        let (gg, gb) = split_two(g, self.gamma, self.dim, self.beta, self.dim);
        ops::layernorm_backward(x, &p[self.gamma..self.gamma + self.dim], stats, dy, self.dim, gg, gb, dx);
    }
}

/// Stack of linear layers with an activation between them (not after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

pub struct MlpTape {
    rows: usize,
    /// Input of every layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").output
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (Vec<f64>, MlpTape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(p, &h, rows);
            inputs.push(h);
            if i + 1 < self.layers.len() {
                pre.push(y.clone());
                for v in y.iter_mut() {
                    *v = self.act.apply(*v);
                }
            }
            h = y;
        }
        (h, MlpTape { rows, inputs, pre })
    }

    pub fn infer(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(p, &h, rows);
            if i + 1 < self.layers.len() {
                for v in y.iter_mut() {
                    *v = self.act.apply(*v);
                }
            }
            h = y;
        }
        h
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], tape: &MlpTape, dy: Vec<f64>, want_dx: bool) -> Option<Vec<f64>> {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                let pre = &tape.pre[i];
                let post = &tape.inputs[i + 1];
                for ((dv, &x), &y) in d.iter_mut().zip(pre).zip(post) {
                    *dv *= self.act.grad(x, y);
                }
            }
            let need = want_dx || i > 0;
            match self.layers[i].backward(p, g, &tape.inputs[i], &d, tape.rows, need) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Inverted dropout mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_gradient_matches_difference() {
        let mut b = ParamBuilder::new(3);
        let mlp = b.mlp("m", &[3, 4, 2], Activation::Tanh, 1.0);
        let mut ps = b.finish();
        let x = vec![0.3, -0.2, 0.9, 0.1, 0.5, -0.7];
        let wts = [0.7, -1.1, 0.4, 0.2];
        let loss = |p: &[f64]| {
            let y = mlp.infer(p, &x, 2);
            y.iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, tape) = mlp.forward(&ps.data, &x, 2);
        let mut g = ps.zeros_like();
        mlp.backward(&ps.data, &mut g, &tape, wts.to_vec(), false);
        for i in 0..ps.len() {
            let orig = ps.data[i];
            ps.data[i] = orig + 1e-6;
            let lp = loss(&ps.data);
            ps.data[i] = orig - 1e-6;
            let lm = loss(&ps.data);
            ps.data[i] = orig;
            assert!(((lp - lm) / 2e-6 - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[2.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn named_roundtrip_and_mismatch() {
        let mut b = ParamBuilder::new(1);
        b.linear("a", 2, 3, 1.0);
        let ps = b.finish();
        let mut other = {
            let mut b = ParamBuilder::new(2);
            b.linear("a", 2, 3, 1.0);
            b.finish()
        };
        other.load_named(&ps.named()).unwrap();
        assert_eq!(other.data, ps.data);
        let mut wrong = {
            let mut b = ParamBuilder::new(2);
            b.linear("a", 3, 3, 1.0);
            b.finish()
        };
        assert!(wrong.load_named(&ps.named()).is_err());
    }
}
