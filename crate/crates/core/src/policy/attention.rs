//! Pre-norm causal transformer over `[prompt tokens, low tokens]`.

use rand_chacha::ChaCha8Rng;

use super::batch::{Batch, PromptCache, PromptSlot, QueryAttention};
use super::encoder::{Encoders, TokenTape};
use crate::nn::{dropout_mask, ops, LayerNorm, Linear, ParamBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnNet {
    pub enc: Encoders,
    pub d: usize,
    pub heads: usize,
    pub in_proj: Linear,
    pub blocks: Vec<Block>,
    pub ln_f: LayerNorm,
    pub dropout: f64,
}

/// Where row `r` of the packed sequence looks: an optional cached prompt,
/// a range of prompt rows in the batch, then its own segment up to itself.
#[derive(Debug, Clone)]
struct RowCtx {
    cache: Option<usize>,
    prompt: std::ops::Range<usize>,
    own_start: usize,
}

struct LayerTape {
    x: Vec<f64>,
    ln1: Vec<(f64, f64)>,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    att: Vec<f64>,
    mask1: Option<Vec<f64>>,
    x_mid: Vec<f64>,
    ln2: Vec<(f64, f64)>,
    h2: Vec<f64>,
    u: Vec<f64>,
    act: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

pub struct AttnTape {
    tokens: TokenTape,
    rows: usize,
    ctx: Vec<RowCtx>,
    prob_off: Vec<usize>,
    mask0: Option<Vec<f64>>,
    layers: Vec<LayerTape>,
    final_x: Vec<f64>,
    last_rows: Vec<usize>,
    ln_f: Vec<(f64, f64)>,
}

impl AttnTape {
    /// Residual stream after the last block, one row per token.
    pub fn final_rows(&self) -> (&[f64], usize) {
        (&self.final_x, self.rows)
    }

    /// Packed row index of each query's final token.
    pub fn last_rows(&self) -> &[usize] {
        &self.last_rows
    }
}

impl AttnNet {
    pub fn build(b: &mut ParamBuilder, enc: Encoders, d: usize, n_layers: usize, heads: usize, ffn: usize, dropout: f64) -> Self {
        let in_proj = b.linear("in_proj", enc.embed, d, 1.0);
        let residual_gain = 1.0 / (2.0 * n_layers as f64).sqrt();
        let blocks = (0..n_layers)
            .map(|l| {
                b.push_scope(format!("block{l}"));
                let blk = Block {
                    ln1: b.layernorm("ln1", d),
                    qkv: b.linear("qkv", d, 3 * d, 1.0),
                    proj: b.linear("proj", d, d, residual_gain),
                    ln2: b.layernorm("ln2", d),
                    ff1: b.linear("ff1", d, ffn, std::f64::consts::SQRT_2),
                    ff2: b.linear("ff2", ffn, d, residual_gain),
                };
                b.pop_scope();
                blk
            })
            .collect();
        let ln_f = b.layernorm("ln_f", d);
        AttnNet {
            enc,
            d,
            heads,
            in_proj,
            blocks,
            ln_f,
            dropout,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.d
    }

    fn layout(&self, batch: &Batch<'_>, k: usize) -> (Vec<RowCtx>, Vec<usize>, Vec<usize>) {
        let mut ctx = Vec::new();
        let mut prompt_rows = Vec::with_capacity(batch.prompts.len());
        for slot in &batch.prompts {
            let start = ctx.len();
            if let PromptSlot::Input(p) = slot {
                for _ in 0..p.len() {
                    ctx.push(RowCtx {
                        cache: None,
                        prompt: 0..0,
                        own_start: start,
                    });
                }
            }
            prompt_rows.push(start);
        }
        let mut last_rows = Vec::with_capacity(batch.queries.len());
        for q in &batch.queries {
            let start = ctx.len();
            let (cache, prompt) = match batch.prompts[q.prompt] {
                PromptSlot::Input(p) => (None, prompt_rows[q.prompt]..prompt_rows[q.prompt] + p.len()),
                PromptSlot::Cached(_) => (Some(q.prompt), 0..0),
            };
            for _ in 0..k {
                ctx.push(RowCtx {
                    cache,
                    prompt: prompt.clone(),
                    own_start: start,
                });
            }
            last_rows.push(start + k - 1);
        }
        (ctx, prompt_rows, last_rows)
    }

    /// Runs the packed batch. With `rng`, dropout is active. Returns the
    /// final-token embeddings (`queries × d`), the tape, and optionally the
    /// final-token attention of every query.
    pub fn forward(
        &self,
        p: &[f64],
        batch: &Batch<'_>,
        k: usize,
        mut rng: Option<&mut ChaCha8Rng>,
        record_attention: bool,
    ) -> (Vec<f64>, AttnTape, Option<Vec<QueryAttention>>) {
        let d = self.d;
        let (ctx, _, last_rows) = self.layout(batch, k);
        let rows = ctx.len();
        let (tokens, token_tape) = self.enc.forward(p, batch);
        let mut x = self.in_proj.forward(p, &tokens, rows);
        let mask0 = self.maybe_dropout(&mut x, rng.as_deref_mut());

        let mut prob_off = Vec::with_capacity(rows + 1);
        let mut total = 0;
        for (r, c) in ctx.iter().enumerate() {
            prob_off.push(total);
            total += self.heads * (self.cached_len(batch, c) + c.prompt.len() + r + 1 - c.own_start);
        }
        prob_off.push(total);

        let mut layers = Vec::with_capacity(self.blocks.len());
        for (l, blk) in self.blocks.iter().enumerate() {
            let (h1, ln1) = blk.ln1.forward(p, &x);
            let qkv = blk.qkv.forward(p, &h1, rows);
            let mut probs = vec![0.0; total];
            let mut att = vec![0.0; rows * d];
            self.attend(batch, l, &ctx, &prob_off, &qkv, &mut probs, &mut att);
            let mut y = blk.proj.forward(p, &att, rows);
            let mask1 = self.maybe_dropout(&mut y, rng.as_deref_mut());
            let x_mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let (h2, ln2) = blk.ln2.forward(p, &x_mid);
            let u = blk.ff1.forward(p, &h2, rows);
            let act: Vec<f64> = u.iter().map(|&v| ops::gelu(v)).collect();
            let mut y2 = blk.ff2.forward(p, &act, rows);
            let mask2 = self.maybe_dropout(&mut y2, rng.as_deref_mut());
            let x_out: Vec<f64> = x_mid.iter().zip(&y2).map(|(a, b)| a + b).collect();
            layers.push(LayerTape {
                x,
                ln1,
                h1,
                qkv,
                probs,
                att,
                mask1,
                x_mid,
                ln2,
                h2,
                u,
                act,
                mask2,
            });
            x = x_out;
        }

        let mut last = Vec::with_capacity(last_rows.len() * d);
        for &r in &last_rows {
            last.extend_from_slice(&x[r * d..(r + 1) * d]);
        }
        let (emb, ln_f) = self.ln_f.forward(p, &last);

        let attention = record_attention.then(|| {
            last_rows
                .iter()
                .map(|&r| {
                    let c = &ctx[r];
                    let len = self.cached_len(batch, c) + c.prompt.len() + r + 1 - c.own_start;
                    layers
                        .iter()
                        .map(|lt| {
                            (0..self.heads)
                                .map(|h| lt.probs[prob_off[r] + h * len..prob_off[r] + (h + 1) * len].to_vec())
                                .collect()
                        })
                        .collect()
                })
                .collect()
        });

        let tape = AttnTape {
            tokens: token_tape,
            rows,
            ctx,
            prob_off,
            mask0,
            layers,
            final_x: x,
            last_rows,
            ln_f,
        };
        (emb, tape, attention)
    }

    fn maybe_dropout(&self, y: &mut [f64], rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
        let rng = rng?;
        if self.dropout <= 0.0 {
            return None;
        }
        let m = dropout_mask(y.len(), self.dropout, rng);
        for (v, s) in y.iter_mut().zip(&m) {
            *v *= s;
        }
        Some(m)
    }

    fn cached_len(&self, batch: &Batch<'_>, c: &RowCtx) -> usize {
        match c.cache.map(|i| batch.prompts[i]) {
            Some(PromptSlot::Cached(PromptCache::Attention { n, .. })) => *n,
            _ => 0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        batch: &Batch<'_>,
        layer: usize,
        ctx: &[RowCtx],
        prob_off: &[usize],
        qkv: &[f64],
        probs: &mut [f64],
        att: &mut [f64],
    ) {
        let d = self.d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut keys: Vec<(&[f64], &[f64])> = Vec::new();
        for (r, c) in ctx.iter().enumerate() {
            keys.clear();
            if let Some(PromptSlot::Cached(PromptCache::Attention { n, keys: kc, values: vc })) = c.cache.map(|i| &batch.prompts[i]) {
                for j in 0..*n {
                    keys.push((&kc[layer][j * d..(j + 1) * d], &vc[layer][j * d..(j + 1) * d]));
                }
            }
            for j in c.prompt.clone().chain(c.own_start..=r) {
                let row = &qkv[j * 3 * d..(j + 1) * 3 * d];
                keys.push((&row[d..2 * d], &row[2 * d..3 * d]));
            }
            let len = keys.len();
            let q = &qkv[r * 3 * d..r * 3 * d + d];
            for h in 0..self.heads {
                let hs = h * dh..(h + 1) * dh;
                let pr = &mut probs[prob_off[r] + h * len..prob_off[r] + (h + 1) * len];
                for (j, (kj, _)) in keys.iter().enumerate() {
                    pr[j] = dot(&q[hs.clone()], &kj[hs.clone()]) * scale;
                }
                ops::softmax_in_place(pr);
                let out = &mut att[r * d + h * dh..r * d + (h + 1) * dh];
                for (j, (_, vj)) in keys.iter().enumerate() {
                    let w = pr[j];
                    for (o, v) in out.iter_mut().zip(&vj[hs.clone()]) {
                        *o += w * v;
                    }
                }
            }
        }
    }

    /// Back-propagates `d_emb` (`queries × d`) into `g`. The batch must hold
    /// no cached prompts.
    pub fn backward(&self, p: &[f64], g: &mut [f64], batch: &Batch<'_>, tape: &AttnTape, d_emb: &[f64]) {
        let d = self.d;
        let rows = tape.rows;
        let mut last = Vec::with_capacity(tape.last_rows.len() * d);
        for &r in &tape.last_rows {
            last.extend_from_slice(&tape.final_x[r * d..(r + 1) * d]);
        }
        let mut d_last = vec![0.0; last.len()];
        self.ln_f.backward(p, g, &last, &tape.ln_f, d_emb, &mut d_last);
        let mut dx = vec![0.0; rows * d];
        for (i, &r) in tape.last_rows.iter().enumerate() {
            for (a, b) in dx[r * d..(r + 1) * d].iter_mut().zip(&d_last[i * d..(i + 1) * d]) {
                *a += b;
            }
        }

        for (blk, lt) in self.blocks.iter().zip(&tape.layers).rev() {
            // FFN branch.
            let mut dy2 = dx.clone();
            apply_mask(&mut dy2, lt.mask2.as_deref());
            let mut da = blk.ff2.backward(p, g, &lt.act, &dy2, rows, true).expect("dx requested");
            for (dv, &u) in da.iter_mut().zip(&lt.u) {
                *dv *= ops::gelu_grad(u);
            }
            let dh2 = blk.ff1.backward(p, g, &lt.h2, &da, rows, true).expect("dx requested");
            let mut dx_mid = dx;
            blk.ln2.backward(p, g, &lt.x_mid, &lt.ln2, &dh2, &mut dx_mid);
            // Attention branch.
            let mut dy = dx_mid.clone();
            apply_mask(&mut dy, lt.mask1.as_deref());
            let datt = blk.proj.backward(p, g, &lt.att, &dy, rows, true).expect("dx requested");
            let dqkv = self.attend_backward(&tape.ctx, &tape.prob_off, &lt.qkv, &lt.probs, &datt);
            let dh1 = blk.qkv.backward(p, g, &lt.h1, &dqkv, rows, true).expect("dx requested");
            let mut dx_in = dx_mid;
            blk.ln1.backward(p, g, &lt.x, &lt.ln1, &dh1, &mut dx_in);
            dx = dx_in;
        }
        apply_mask(&mut dx, tape.mask0.as_deref());
        let tokens = tape.tokens.tokens();
        let dtok = self.in_proj.backward(p, g, tokens, &dx, rows, true).expect("dx requested");
        self.enc.backward(p, g, batch, &tape.tokens, &dtok);
    }

    fn attend_backward(&self, ctx: &[RowCtx], prob_off: &[usize], qkv: &[f64], probs: &[f64], datt: &[f64]) -> Vec<f64> {
        let d = self.d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dqkv = vec![0.0; qkv.len()];
        let mut key_rows: Vec<usize> = Vec::new();
        let mut dp: Vec<f64> = Vec::new();
        for (r, c) in ctx.iter().enumerate() {
            debug_assert!(c.cache.is_none(), "backward through cached prompts");
            key_rows.clear();
            key_rows.extend(c.prompt.clone().chain(c.own_start..=r));
            let len = key_rows.len();
            for h in 0..self.heads {
                let hs = h * dh;
                let pr = &probs[prob_off[r] + h * len..prob_off[r] + (h + 1) * len];
                let dout = &datt[r * d + hs..r * d + hs + dh];
                dp.clear();
                for (jj, &j) in key_rows.iter().enumerate() {
                    let v = &qkv[j * 3 * d + 2 * d + hs..j * 3 * d + 2 * d + hs + dh];
                    dp.push(dot(dout, v));
                    let dv = &mut dqkv[j * 3 * d + 2 * d + hs..j * 3 * d + 2 * d + hs + dh];
                    for (a, b) in dv.iter_mut().zip(dout) {
                        *a += pr[jj] * b;
                    }
                }
                let s: f64 = pr.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for (jj, &j) in key_rows.iter().enumerate() {
                    let ds = pr[jj] * (dp[jj] - s) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for i in 0..dh {
                        let kj = qkv[j * 3 * d + d + hs + i];
                        let qi = qkv[r * 3 * d + hs + i];
                        dqkv[r * 3 * d + hs + i] += ds * kj;
                        dqkv[j * 3 * d + d + hs + i] += ds * qi;
                    }
                }
            }
        }
        dqkv
    }

    /// Keys and values of every prompt token at every layer.
    pub fn cache_prompt(&self, p: &[f64], batch_with_prompt: &Batch<'_>, k: usize) -> PromptCache {
        let (_, tape, _) = self.forward(p, batch_with_prompt, k, None, false);
        let d = self.d;
        let n = tape.rows;
        let mut keys = Vec::with_capacity(self.blocks.len());
        let mut values = Vec::with_capacity(self.blocks.len());
        for lt in &tape.layers {
            let mut kk = Vec::with_capacity(n * d);
            let mut vv = Vec::with_capacity(n * d);
            for r in 0..n {
                kk.extend_from_slice(&lt.qkv[r * 3 * d + d..r * 3 * d + 2 * d]);
                vv.extend_from_slice(&lt.qkv[r * 3 * d + 2 * d..(r + 1) * 3 * d]);
            }
            keys.push(kk);
            values.push(vv);
        }
        PromptCache::Attention { n, keys, values }
    }
}

fn apply_mask(v: &mut [f64], mask: Option<&[f64]>) {
    if let Some(m) = mask {
        for (a, s) in v.iter_mut().zip(m) {
            *a *= s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
