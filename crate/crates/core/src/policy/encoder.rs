//! Per-state token encoders shared by the sequence backbones.

use super::batch::{Batch, PromptSlot};
use crate::nn::{Activation, Init, Mlp, MlpTape, ParamBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct Encoders {
    pub embed: usize,
    pub high_dim: usize,
    pub low_dim: usize,
    pub high: Mlp,
    pub low: Mlp,
    /// Offset and row count of the timestep table.
    pub timestep: Option<(usize, usize)>,
}

pub struct TokenTape {
    tokens: Vec<f64>,
    prompt_rows: usize,
    indices: Vec<usize>,
    high: MlpTape,
    low: MlpTape,
}

impl TokenTape {
    pub fn tokens(&self) -> &[f64] {
        &self.tokens
    }
}

impl Encoders {
    pub fn build(b: &mut ParamBuilder, high_dim: usize, low_dim: usize, embed: usize, timestep_rows: Option<usize>) -> Self {
        let high = b.mlp("enc_high", &[high_dim, embed, embed], Activation::Relu, 1.0);
        let low = b.mlp("enc_low", &[low_dim, embed, embed], Activation::Relu, 1.0);
        let timestep = timestep_rows.map(|rows| (b.add("timestep", &[rows, embed], Init::Normal(0.1)), rows));
        Encoders {
            embed,
            high_dim,
            low_dim,
            high,
            low,
            timestep,
        }
    }

    fn clamp_index(&self, i: usize) -> usize {
        self.timestep.map_or(0, |(_, rows)| i.min(rows - 1))
    }

    /// Tokens in packed order: rows of every non-cached prompt, then the
    /// low tokens of every query.
    pub fn forward(&self, p: &[f64], batch: &Batch<'_>) -> (Vec<f64>, TokenTape) {
        let e = self.embed;
        let mut hs = Vec::new();
        let mut indices = Vec::new();
        for slot in &batch.prompts {
            if let PromptSlot::Input(pi) = slot {
                hs.extend_from_slice(&pi.states);
                indices.extend_from_slice(&pi.indices);
            }
        }
        let prompt_rows = indices.len();
        let (mut ht, high) = self.high.forward(p, &hs, prompt_rows);
        if let Some((off, _)) = self.timestep {
            for (r, &i) in indices.iter().enumerate() {
                let row = off + self.clamp_index(i) * e;
                for (a, b) in ht[r * e..(r + 1) * e].iter_mut().zip(&p[row..row + e]) {
                    *a += b;
                }
            }
        }
        let mut ls = Vec::new();
        for q in &batch.queries {
            ls.extend_from_slice(&q.lows);
        }
        let low_rows = ls.len() / self.low_dim;
        let (lt, low) = self.low.forward(p, &ls, low_rows);
        ht.extend_from_slice(&lt);
        let tape = TokenTape {
            tokens: ht.clone(),
            prompt_rows,
            indices,
            high,
            low,
        };
        (ht, tape)
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], _batch: &Batch<'_>, tape: &TokenTape, dtok: &[f64]) {
        let e = self.embed;
        let split = tape.prompt_rows * e;
        let (dh, dl) = dtok.split_at(split);
        if let Some((off, _)) = self.timestep {
            for (r, &i) in tape.indices.iter().enumerate() {
                let row = off + self.clamp_index(i) * e;
                for (a, b) in g[row..row + e].iter_mut().zip(&dh[r * e..(r + 1) * e]) {
                    *a += b;
                }
            }
        }
        if tape.prompt_rows > 0 {
            self.high.backward(p, g, &tape.high, dh.to_vec(), false);
        }
        if !dl.is_empty() {
            self.low.backward(p, g, &tape.low, dl.to_vec(), false);
        }
    }

    /// Tokens of a standalone prompt (`n × embed`).
    pub fn encode_prompt(&self, p: &[f64], states: &[f64], indices: &[usize]) -> Vec<f64> {
        let e = self.embed;
        let mut t = self.high.infer(p, states, indices.len());
        if let Some((off, _)) = self.timestep {
            for (r, &i) in indices.iter().enumerate() {
                let row = off + self.clamp_index(i) * e;
                for (a, b) in t[r * e..(r + 1) * e].iter_mut().zip(&p[row..row + e]) {
                    *a += b;
                }
            }
        }
        t
    }
}
