//! Dense row-major kernels with hand-written backward passes.

/// `c = a · b (+ c if accumulate)` with optional transposes; `a` is `m×k`
/// after transposition, `b` is `k×n`, `c` is `m×n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], trans_a: bool, b: &[f64], trans_b: bool, c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the row-major buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x·w + b` for `x: rows×input`, `w: input×output`.
pub fn linear_forward(x: &[f64], w: &[f64], b: &[f64], rows: usize, input: usize, output: usize, y: &mut [f64]) {
    for r in 0..rows {
        y[r * output..(r + 1) * output].copy_from_slice(b);
    }
    gemm(rows, input, output, x, false, w, false, y, true);
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ dy` and, if given, `dx += dy·wᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    input: usize,
    output: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    gemm(input, rows, output, x, true, dy, false, dw, true);
    for r in 0..rows {
        for (g, d) in db.iter_mut().zip(&dy[r * output..(r + 1) * output]) {
            *g += d;
        }
    }
    if let Some(dx) = dx {
        gemm(rows, output, input, dy, false, w, true, dx, true);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm; returns per-row `(mean, 1/std)`.
pub fn layernorm_forward(x: &[f64], gamma: &[f64], beta: &[f64], dim: usize, y: &mut [f64]) -> Vec<(f64, f64)> {
    let rows = x.len() / dim;
    let mut stats = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().sum::<f64>() / dim as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        let yr = &mut y[r * dim..(r + 1) * dim];
        for i in 0..dim {
            yr[i] = (xr[i] - mean) * rstd * gamma[i] + beta[i];
        }
        stats.push((mean, rstd));
    }
    stats
}

/// Accumulates parameter gradients and adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    x: &[f64],
    gamma: &[f64],
    stats: &[(f64, f64)],
    dy: &[f64],
    dim: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let n = dim as f64;
    for (r, &(mean, rstd)) in stats.iter().enumerate() {
        let xr = &x[r * dim..(r + 1) * dim];
        let dyr = &dy[r * dim..(r + 1) * dim];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..dim {
            let xhat = (xr[i] - mean) * rstd;
            dgamma[i] += dyr[i] * xhat;
            dbeta[i] += dyr[i];
            let dxhat = dyr[i] * gamma[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let dxr = &mut dx[r * dim..(r + 1) * dim];
        for i in 0..dim {
            let xhat = (xr[i] - mean) * rstd;
            let dxhat = dyr[i] * gamma[i];
            dxr[i] += rstd * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Gelu => gelu(x),
        }
    }

    /// Derivative from the pre-activation `x` and output `y`.
    pub fn grad(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Gelu => gelu_grad(x),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// In-place softmax; returns nothing, `v` sums to one afterwards.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut c, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, &at, true, &bt, true, &mut c2, false);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
        gemm(m, k, n, &a, false, &b, false, &mut c2, true);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - 2.0 * y).abs() < 1e-12));
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_backward_matches_difference() {
        let dim = 5;
        let x: Vec<f64> = (0..2 * dim).map(|i| (i as f64 * 0.9).sin() * 2.0).collect();
        let gamma: Vec<f64> = (0..dim).map(|i| 1.0 + 0.1 * i as f64).collect();
        let beta = vec![0.2; dim];
        let wts: Vec<f64> = (0..2 * dim).map(|i| (i as f64 * 0.3).cos()).collect();
        let loss = |x: &[f64]| {
            let mut y = vec![0.0; x.len()];
            layernorm_forward(x, &gamma, &beta, dim, &mut y);
            y.iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut y = vec![0.0; x.len()];
        let stats = layernorm_forward(&x, &gamma, &beta, dim, &mut y);
        let mut dg = vec![0.0; dim];
        let mut db = vec![0.0; dim];
        let mut dx = vec![0.0; x.len()];
        layernorm_backward(&x, &gamma, &stats, &wts, dim, &mut dg, &mut db, &mut dx);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += 1e-6;
            let mut xm = x.clone();
            xm[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }
}
