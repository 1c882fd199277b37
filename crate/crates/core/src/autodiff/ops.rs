//! Forward and backward kernels. All loops accumulate in a fixed order so
//! results are reproducible run to run.

/// `out += a [m,k] @ b [k,n]`, four output rows per pass so each row of
/// `b` is loaded once per four accumulator rows.
fn acc_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    let mut i = 0;
    while i + 4 <= m {
        let window = &mut out[i * n..(i + 4) * n];
        let (r0, rest) = window.split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
            for (j, &bv) in brow.iter().enumerate() {
                r0[j] += v0 * bv;
                r1[j] += v1 * bv;
                r2[j] += v2 * bv;
                r3[j] += v3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
        i += 1;
    }
}

/// `c = a [m,k] @ b [k,n]`
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    acc_nn(a, b, m, k, n, &mut out);
    out
}

/// `out += g [m,n] @ b^T` where `b` is `[k,n]`; accumulates into `out [m,k]`.
/// Materializes `b^T` so the inner loops run over contiguous rows.
pub fn matmul_nt_acc(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    let bt = transpose(b, k, n);
    acc_nn(g, &bt, m, n, k, out);
}

/// `out += a^T @ g` where `a` is `[m,k]`, `g` is `[m,n]`; accumulates into
/// `out [k,n]`. Four input rows per pass.
pub fn matmul_tn_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    let mut i = 0;
    while i + 4 <= m {
        let g0 = &g[i * n..(i + 1) * n];
        let g1 = &g[(i + 1) * n..(i + 2) * n];
        let g2 = &g[(i + 2) * n..(i + 3) * n];
        let g3 = &g[(i + 3) * n..(i + 4) * n];
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let a2 = &a[(i + 2) * k..(i + 3) * k];
        let a3 = &a[(i + 3) * k..(i + 4) * k];
        for p in 0..k {
            let orow = &mut out[p * n..(p + 1) * n];
            let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
            for (j, o) in orow.iter_mut().enumerate() {
                *o += v0 * g0[j] + v1 * g1[j] + v2 * g2[j] + v3 * g3[j];
            }
        }
        i += 4;
    }
    while i < m {
        let grow = &g[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
        i += 1;
    }
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out += a ⊙ b`
pub fn mul_acc(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

pub fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximation GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_inner_tanh(x))
}

pub fn gelu_inner_tanh(x: f64) -> f64 {
    (GELU_C * (x + 0.044715 * x * x * x)).tanh()
}

/// GELU derivative given the forward pass's saved inner tanh.
pub fn gelu_grad_from_tanh(x: f64, t: f64) -> f64 {
    let sech2 = 1.0 - t * t;
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

/// Decompose `shape` around `axis` into (outer, axis, inner) extents.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = around_axis(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| o * len * inner + a * inner + i;
            let mut max = f64::NEG_INFINITY;
            for a in 0..len {
                max = max.max(x[at(a)]);
            }
            let mut sum = 0.0;
            for a in 0..len {
                let e = (x[at(a)] - max).exp();
                out[at(a)] = e;
                sum += e;
            }
            for a in 0..len {
                out[at(a)] /= sum;
            }
        }
    }
    out
}

/// `dx_a += s_a * (g_a - Σ_b g_b s_b)` along `axis`.
pub fn softmax_backward_acc(g: &[f64], s: &[f64], shape: &[usize], axis: usize, out: &mut [f64]) {
    let (outer, len, inner) = around_axis(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| o * len * inner + a * inner + i;
            let mut dot = 0.0;
            for a in 0..len {
                dot += g[at(a)] * s[at(a)];
            }
            for a in 0..len {
                out[at(a)] += s[at(a)] * (g[at(a)] - dot);
            }
        }
    }
}

/// Sum out `axis`; returns (data, shape). A fully reduced tensor gets shape `[1]`.
pub fn reduce_axis_sum(x: &[f64], shape: &[usize], axis: usize) -> (Vec<f64>, Vec<usize>) {
    let (outer, len, inner) = around_axis(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for a in 0..len {
            for i in 0..inner {
                out[o * inner + i] += x[o * len * inner + a * inner + i];
            }
        }
    }
    let mut out_shape: Vec<usize> = shape.to_vec();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    (out, out_shape)
}

/// Inverse of [`reduce_axis_sum`] for gradients: spread `g` back along `axis`
/// scaled by `scale`, accumulating into `out` (which has `shape`).
pub fn spread_axis_acc(g: &[f64], shape: &[usize], axis: usize, scale: f64, out: &mut [f64]) {
    let (outer, len, inner) = around_axis(shape, axis);
    for o in 0..outer {
        for a in 0..len {
            for i in 0..inner {
                out[o * len * inner + a * inner + i] += scale * g[o * inner + i];
            }
        }
    }
}

/// Layer norm over trailing groups of `d` with affine `gamma`/`beta`.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], d: usize, eps: f64) -> Vec<f64> {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / d as f64;
        let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        let orow = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            orow[j] = (row[j] - mean) * inv_std * gamma[j] + beta[j];
        }
    }
    out
}

pub fn layer_norm_backward_x_acc(
    g: &[f64],
    x: &[f64],
    gamma: &[f64],
    d: usize,
    eps: f64,
    out: &mut [f64],
) {
    let rows = x.len() / d;
    let df = d as f64;
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let grow = &g[r * d..(r + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / df;
        let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / df;
        let inv_std = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            xhat[j] = (row[j] - mean) * inv_std;
            dxhat[j] = grow[j] * gamma[j];
        }
        let sum_dxhat: f64 = dxhat.iter().sum();
        let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
        let orow = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            orow[j] += inv_std / df * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
        }
    }
}

pub fn layer_norm_backward_gamma_acc(g: &[f64], x: &[f64], d: usize, eps: f64, out: &mut [f64]) {
    let rows = x.len() / d;
    let df = d as f64;
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let grow = &g[r * d..(r + 1) * d];
        let mean: f64 = row.iter().sum::<f64>() / df;
        let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / df;
        let inv_std = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[j] += grow[j] * (row[j] - mean) * inv_std;
        }
    }
}
