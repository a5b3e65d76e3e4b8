//! Goal-conditioned MLP baselines: input is the stacked low states and a goal.

use super::batch::Batch;
use crate::nn::{Activation, Mlp, MlpTape, ParamBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct FfNet {
    pub mlp: Mlp,
}

pub struct FfTape {
    mlp: MlpTape,
    pre: Vec<f64>,
}

impl FfNet {
    pub fn build(b: &mut ParamBuilder, input: usize, dims: &[usize]) -> Self {
        let mut all = vec![input];
        all.extend_from_slice(dims);
        FfNet {
            mlp: b.mlp("ff", &all, Activation::Relu, std::f64::consts::SQRT_2),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    fn inputs(batch: &Batch<'_>) -> Vec<f64> {
        let mut x = Vec::new();
        for q in &batch.queries {
            x.extend_from_slice(&q.lows);
            x.extend_from_slice(&q.goal);
        }
        x
    }

    pub fn forward(&self, p: &[f64], batch: &Batch<'_>) -> (Vec<f64>, FfTape) {
        let x = Self::inputs(batch);
        let (pre, mlp) = self.mlp.forward(p, &x, batch.queries.len());
        let out = pre.iter().map(|v| v.max(0.0)).collect();
        (out, FfTape { mlp, pre })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], tape: &FfTape, d_emb: &[f64]) {
        let d: Vec<f64> = d_emb
            .iter()
            .zip(&tape.pre)
            .map(|(dv, &x)| if x > 0.0 { *dv } else { 0.0 })
            .collect();
        self.mlp.backward(p, g, &tape.mlp, d, false);
    }
}
