//! Stacked LSTM over `[prompt tokens, low tokens]`. The state after the
//! prompt is shared by every query of that prompt.

use rand_chacha::ChaCha8Rng;

use super::batch::{Batch, PromptCache, PromptSlot};
use super::encoder::{Encoders, TokenTape};
use crate::nn::ops::{gemm, sigmoid};
use crate::nn::{dropout_mask, Init, Linear, ParamBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// Input weights and the gate bias; gates are ordered `i, f, g, o`.
    pub wx: Linear,
    pub wh: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmNet {
    pub enc: Encoders,
    pub layers: Vec<LstmLayer>,
    pub dropout: f64,
}

struct LayerTape {
    x: Vec<f64>,
    gates: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub struct LstmTape {
    tokens: TokenTape,
    mask: Option<Vec<f64>>,
    layers: Vec<LayerTape>,
    prompt_rows: Vec<(usize, usize)>,
    query_rows: Vec<usize>,
    k: usize,
}

impl LstmNet {
    pub fn build(b: &mut ParamBuilder, enc: Encoders, dims: &[usize], dropout: f64) -> Self {
        let mut input = enc.embed;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &h)| {
                b.push_scope(format!("lstm{l}"));
                let wx = b.linear("wx", input, 4 * h, 1.0);
                b.fill(wx.b + h, h, 1.0);
                let wh = b.add("wh", &[h, 4 * h], Init::Scaled { fan_in: h, gain: 1.0 });
                b.pop_scope();
                input = h;
                LstmLayer { wx, wh, hidden: h }
            })
            .collect();
        LstmNet { enc, layers, dropout }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.enc.embed, |l| l.hidden)
    }

    fn rows(batch: &Batch<'_>, k: usize) -> (Vec<(usize, usize)>, Vec<usize>, usize) {
        let mut prompt_rows = Vec::with_capacity(batch.prompts.len());
        let mut r = 0;
        for slot in &batch.prompts {
            let n = match slot {
                PromptSlot::Input(p) => p.len(),
                PromptSlot::Cached(_) => 0,
            };
            prompt_rows.push((r, n));
            r += n;
        }
        let query_rows = (0..batch.queries.len()).map(|q| r + q * k).collect();
        (prompt_rows, query_rows, r + batch.queries.len() * k)
    }

    pub fn forward(&self, p: &[f64], batch: &Batch<'_>, k: usize, rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, LstmTape) {
        let (prompt_rows, query_rows, rows) = Self::rows(batch, k);
        let (mut x, tokens) = self.enc.forward(p, batch);
        let mask = match rng {
            Some(rng) if self.dropout > 0.0 => {
                let m = dropout_mask(x.len(), self.dropout, rng);
                for (v, s) in x.iter_mut().zip(&m) {
                    *v *= s;
                }
                Some(m)
            }
            _ => None,
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.hidden;
            let wh = &p[layer.wh..layer.wh + h * 4 * h];
            let zx = layer.wx.forward(p, &x, rows);
            let mut gates = vec![0.0; rows * 4 * h];
            let mut h_prev = vec![0.0; rows * h];
            let mut c_prev = vec![0.0; rows * h];
            let mut tanh_c = vec![0.0; rows * h];
            let mut h_out = vec![0.0; rows * h];
            let mut c_out = vec![0.0; rows * h];
            let mut finals: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(batch.prompts.len());
            for (i, slot) in batch.prompts.iter().enumerate() {
                let (start, n) = prompt_rows[i];
                let (mut hs, mut cs) = match slot {
                    PromptSlot::Cached(PromptCache::Recurrent { h: hc, c: cc }) => (hc[l].clone(), cc[l].clone()),
                    _ => (vec![0.0; h], vec![0.0; h]),
                };
                for r in start..start + n {
                    h_prev[r * h..(r + 1) * h].copy_from_slice(&hs);
                    c_prev[r * h..(r + 1) * h].copy_from_slice(&cs);
                    let z = &mut gates[r * 4 * h..(r + 1) * 4 * h];
                    z.copy_from_slice(&zx[r * 4 * h..(r + 1) * 4 * h]);
                    gemm(1, h, 4 * h, &hs, false, wh, false, z, true);
                    cell(z, &cs, &mut tanh_c[r * h..(r + 1) * h], &mut c_out[r * h..(r + 1) * h], &mut h_out[r * h..(r + 1) * h]);
                    hs.copy_from_slice(&h_out[r * h..(r + 1) * h]);
                    cs.copy_from_slice(&c_out[r * h..(r + 1) * h]);
                }
                finals.push((hs, cs));
            }
            let nq = batch.queries.len();
            let mut hb = vec![0.0; nq * h];
            let mut zb = vec![0.0; nq * 4 * h];
            for a in 0..k {
                for (qi, q) in batch.queries.iter().enumerate() {
                    let r = query_rows[qi] + a;
                    let (hs, cs): (&[f64], &[f64]) = if a == 0 {
                        (&finals[q.prompt].0, &finals[q.prompt].1)
                    } else {
                        (&h_out[(r - 1) * h..r * h], &c_out[(r - 1) * h..r * h])
                    };
                    hb[qi * h..(qi + 1) * h].copy_from_slice(hs);
                    let cs = cs.to_vec();
                    c_prev[r * h..(r + 1) * h].copy_from_slice(&cs);
                    h_prev[r * h..(r + 1) * h].copy_from_slice(&hb[qi * h..(qi + 1) * h]);
                    zb[qi * 4 * h..(qi + 1) * 4 * h].copy_from_slice(&zx[r * 4 * h..(r + 1) * 4 * h]);
                }
                gemm(nq, h, 4 * h, &hb, false, wh, false, &mut zb, true);
                for qi in 0..nq {
                    let r = query_rows[qi] + a;
                    let z = &mut gates[r * 4 * h..(r + 1) * 4 * h];
                    z.copy_from_slice(&zb[qi * 4 * h..(qi + 1) * 4 * h]);
                    let cp = c_prev[r * h..(r + 1) * h].to_vec();
                    cell(z, &cp, &mut tanh_c[r * h..(r + 1) * h], &mut c_out[r * h..(r + 1) * h], &mut h_out[r * h..(r + 1) * h]);
                }
            }
            layers.push(LayerTape {
                x,
                gates,
                h_prev,
                c_prev,
                tanh_c,
            });
            x = h_out;
        }
        let h = self.out_dim();
        let mut emb = Vec::with_capacity(batch.queries.len() * h);
        for &r in &query_rows {
            let last = r + k - 1;
            emb.extend_from_slice(&x[last * h..(last + 1) * h]);
        }
        let tape = LstmTape {
            tokens,
            mask,
            layers,
            prompt_rows,
            query_rows,
            k,
        };
        (emb, tape)
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], batch: &Batch<'_>, tape: &LstmTape, d_emb: &[f64]) {
        let k = tape.k;
        let rows = tape.layers[0].x.len() / self.enc.embed;
        let hl = self.out_dim();
        let mut dh_out = vec![0.0; rows * hl];
        for (qi, &r) in tape.query_rows.iter().enumerate() {
            let last = r + k - 1;
            dh_out[last * hl..(last + 1) * hl].copy_from_slice(&d_emb[qi * hl..(qi + 1) * hl]);
        }
        for (layer, lt) in self.layers.iter().zip(&tape.layers).rev() {
            let h = layer.hidden;
            let wh = &p[layer.wh..layer.wh + h * 4 * h];
            let mut dz = vec![0.0; rows * 4 * h];
            let mut final_dh = vec![vec![0.0; h]; batch.prompts.len()];
            let mut final_dc = vec![vec![0.0; h]; batch.prompts.len()];
            let nq = batch.queries.len();
            let mut carry_h = vec![0.0; nq * h];
            let mut carry_c = vec![0.0; nq * h];
            let mut zb = vec![0.0; nq * 4 * h];
            for a in (0..k).rev() {
                for qi in 0..nq {
                    let r = tape.query_rows[qi] + a;
                    let mut dhv: Vec<f64> = dh_out[r * h..(r + 1) * h].to_vec();
                    for (x, y) in dhv.iter_mut().zip(&carry_h[qi * h..(qi + 1) * h]) {
                        *x += y;
                    }
                    let dcp = cell_backward(
                        &lt.gates[r * 4 * h..(r + 1) * 4 * h],
                        &lt.c_prev[r * h..(r + 1) * h],
                        &lt.tanh_c[r * h..(r + 1) * h],
                        &dhv,
                        &carry_c[qi * h..(qi + 1) * h],
                        &mut dz[r * 4 * h..(r + 1) * 4 * h],
                    );
                    carry_c[qi * h..(qi + 1) * h].copy_from_slice(&dcp);
                    zb[qi * 4 * h..(qi + 1) * 4 * h].copy_from_slice(&dz[r * 4 * h..(r + 1) * 4 * h]);
                }
                gemm(nq, 4 * h, h, &zb, false, wh, true, &mut carry_h, false);
                if a == 0 {
                    for (qi, q) in batch.queries.iter().enumerate() {
                        for i in 0..h {
                            final_dh[q.prompt][i] += carry_h[qi * h + i];
                            final_dc[q.prompt][i] += carry_c[qi * h + i];
                        }
                    }
                }
            }
            for (i, &(start, n)) in tape.prompt_rows.iter().enumerate() {
                let mut ch = std::mem::take(&mut final_dh[i]);
                let mut cc = std::mem::take(&mut final_dc[i]);
                for r in (start..start + n).rev() {
                    for (x, y) in ch.iter_mut().zip(&dh_out[r * h..(r + 1) * h]) {
                        *x += y;
                    }
                    cc = cell_backward(
                        &lt.gates[r * 4 * h..(r + 1) * 4 * h],
                        &lt.c_prev[r * h..(r + 1) * h],
                        &lt.tanh_c[r * h..(r + 1) * h],
                        &ch,
                        &cc,
                        &mut dz[r * 4 * h..(r + 1) * 4 * h],
                    );
                    gemm(1, 4 * h, h, &dz[r * 4 * h..(r + 1) * 4 * h], false, wh, true, &mut ch, false);
                }
            }
            gemm(h, rows, 4 * h, &lt.h_prev, true, &dz, false, &mut g[layer.wh..layer.wh + h * 4 * h], true);
            dh_out = layer
                .wx
                .backward(p, g, &lt.x, &dz, rows, true)
                .expect("dx requested");
        }
        if let Some(m) = &tape.mask {
            for (v, s) in dh_out.iter_mut().zip(m) {
                *v *= s;
            }
        }
        self.enc.backward(p, g, batch, &tape.tokens, &dh_out);
    }

    /// State after the prompt at every layer.
    pub fn cache_prompt(&self, p: &[f64], prompt_only: &Batch<'_>) -> PromptCache {
        let (_, tape) = self.forward(p, prompt_only, 1, None);
        let n = tape.prompt_rows[0].1;
        let mut hs = Vec::new();
        let mut cs = Vec::new();
        for (layer, lt) in self.layers.iter().zip(&tape.layers) {
            let h = layer.hidden;
            if n == 0 {
                hs.push(vec![0.0; h]);
                cs.push(vec![0.0; h]);
                continue;
            }
            let r = n - 1;
            let gates = &lt.gates[r * 4 * h..(r + 1) * 4 * h];
            let c: Vec<f64> = (0..h)
                .map(|i| gates[h + i] * lt.c_prev[r * h + i] + gates[i] * gates[2 * h + i])
                .collect();
            let hv: Vec<f64> = (0..h).map(|i| gates[3 * h + i] * lt.tanh_c[r * h + i]).collect();
            hs.push(hv);
            cs.push(c);
        }
        PromptCache::Recurrent { h: hs, c: cs }
    }
}

/// Activates gates `z` in place and advances one cell.
fn cell(z: &mut [f64], c_prev: &[f64], tanh_c: &mut [f64], c: &mut [f64], h_out: &mut [f64]) {
    let h = c_prev.len();
    for i in 0..h {
        z[i] = sigmoid(z[i]);
        z[h + i] = sigmoid(z[h + i]);
        z[2 * h + i] = z[2 * h + i].tanh();
        z[3 * h + i] = sigmoid(z[3 * h + i]);
        c[i] = z[h + i] * c_prev[i] + z[i] * z[2 * h + i];
        tanh_c[i] = c[i].tanh();
        h_out[i] = z[3 * h + i] * tanh_c[i];
    }
}

/// Writes gate pre-activation gradients into `dz`; returns `dc_prev`.
fn cell_backward(gates: &[f64], c_prev: &[f64], tanh_c: &[f64], dh: &[f64], dc: &[f64], dz: &mut [f64]) -> Vec<f64> {
    let h = c_prev.len();
    let mut dc_prev = vec![0.0; h];
    for i in 0..h {
        let (ig, fg, gg, og) = (gates[i], gates[h + i], gates[2 * h + i], gates[3 * h + i]);
        let dct = dc[i] + dh[i] * og * (1.0 - tanh_c[i] * tanh_c[i]);
        dz[i] = dct * gg * ig * (1.0 - ig);
        dz[h + i] = dct * c_prev[i] * fg * (1.0 - fg);
        dz[2 * h + i] = dct * ig * (1.0 - gg * gg);
        dz[3 * h + i] = dh[i] * tanh_c[i] * og * (1.0 - og);
        dc_prev[i] = dct * fg;
    }
    dc_prev
}
