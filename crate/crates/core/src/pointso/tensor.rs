//! Dense row-major kernels used by the regressor, each with its backward.

/// `c = alpha * op(a) * op(b) + beta * c` on row-major storage.
///
/// `a` is `m x k` (or `k x m` when `ta`), `b` is `k x n` (or `n x k` when
/// `tb`); `lda`/`ldb`/`ldc` are row strides, which lets callers address
/// column blocks such as a single attention head.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    lda: usize,
    ta: bool,
    b: &[f64],
    ldb: usize,
    tb: bool,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if tb { (1, ldb as isize) } else { (ldb as isize, 1) };
    let a_extent = if ta { (k.max(1) - 1) * lda + m } else { (m - 1) * lda + k };
    let b_extent = if tb { (n - 1) * ldb + k } else { (k.max(1) - 1) * ldb + n };
    assert!(k == 0 || a.len() >= a_extent, "gemm: a too short");
    assert!(k == 0 || b.len() >= b_extent, "gemm: b too short");
    assert!(c.len() >= (m - 1) * ldc + n, "gemm: c too short");
    // SAFETY: the extents above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `y = x w + b` for `x: rows x i`, `w: i x o`.
pub fn linear(x: &[f64], rows: usize, w: &[f64], b: Option<&[f64]>, i: usize, o: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * o];
    if let Some(b) = b {
        for r in y.chunks_exact_mut(o) {
            r.copy_from_slice(b);
        }
    }
    gemm(rows, i, o, 1.0, x, i, false, w, o, false, if b.is_some() { 1.0 } else { 0.0 }, &mut y, o);
    y
}

/// Backward of [`linear`]: accumulates `dw`, `db` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    rows: usize,
    w: &[f64],
    dy: &[f64],
    i: usize,
    o: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
    need_dx: bool,
) -> Vec<f64> {
    gemm(i, rows, o, 1.0, x, i, true, dy, o, false, 1.0, dw, o);
    if let Some(db) = db {
        for r in dy.chunks_exact(o) {
            for (a, g) in db.iter_mut().zip(r) {
                *a += g;
            }
        }
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; rows * i];
    gemm(rows, o, i, 1.0, dy, o, false, w, o, true, 0.0, &mut dx, i);
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// The `tanh(c (x + a x^3))` term of the tanh-form GELU, via one `exp`.
#[inline]
pub fn gelu_tanh(x: f64) -> f64 {
    let e = (2.0 * GELU_C * (x + GELU_A * x * x * x)).exp();
    1.0 - 2.0 / (e + 1.0)
}

/// Tanh-form Gaussian error linear unit.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_grad_with(x, gelu_tanh(x))
}

/// [`gelu_grad`] given the cached [`gelu_tanh`] value `t`.
#[inline]
pub fn gelu_grad_with(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Applies GELU to `h`, returning the activations and the cached tanh terms.
pub fn gelu_forward(h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = h.iter().map(|&x| gelu_tanh(x)).collect();
    let y = h.iter().zip(&t).map(|(&x, &t)| 0.5 * x * (1.0 + t)).collect();
    (y, t)
}

/// `dy * gelu'(h)` using the tanh terms from [`gelu_forward`].
pub fn gelu_backward(h: &[f64], t: &[f64], dy: &[f64]) -> Vec<f64> {
    dy.iter()
        .zip(h.iter().zip(t))
        .map(|(&g, (&x, &t))| if g == 0.0 { 0.0 } else { g * gelu_grad_with(x, t) })
        .collect()
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row statistics kept for the layer-norm backward.
#[derive(Debug, Clone, Default)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(x: &[f64], d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, NormCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward(
    dy: &[f64],
    d: usize,
    gain: &[f64],
    cache: &NormCache,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let g = &dy[r * d..(r + 1) * d];
        let h = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for j in 0..d {
            dgain[j] += g[j] * h[j];
            dbias[j] += g[j];
            dxhat[j] = g[j] * gain[j];
            mean_dh += dxhat[j];
            mean_dh_h += dxhat[j] * h[j];
        }
        mean_dh /= d as f64;
        mean_dh_h /= d as f64;
        let s = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = s * (dxhat[j] - mean_dh - h[j] * mean_dh_h);
        }
    }
    dx
}

/// In-place row softmax of a `rows x cols` matrix.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Given softmax output `p` and upstream `dp`, returns the gradient w.r.t. the logits.
pub fn softmax_rows_backward(p: &[f64], dp: &[f64], cols: usize) -> Vec<f64> {
    let mut ds = vec![0.0; p.len()];
    for ((pr, gr), out) in p
        .chunks_exact(cols)
        .zip(dp.chunks_exact(cols))
        .zip(ds.chunks_exact_mut(cols))
    {
        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..cols {
            out[j] = pr[j] * (gr[j] - dot);
        }
    }
    ds
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
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

    fn seq(n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + s) * 0.37).sin()).collect()
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (5, 7, 3);
        let a = seq(m * k, 0.0);
        let b = seq(k * n, 1.0);
        let want = naive(m, k, n, &a, &b);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &a, k, false, &b, n, false, 0.0, &mut c, n);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        // Transposed storage of both operands.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &at, m, true, &bt, k, true, 0.0, &mut c2, n);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for i in -40..40 {
            let x = i as f64 * 0.13;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = seq(12, 2.0);
        softmax_rows(&mut x, 4);
        for r in x.chunks(4) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let d = 6;
        let x = seq(2 * d, 0.5);
        let gain = seq(d, 3.0);
        let bias = seq(d, 4.0);
        let w = seq(2 * d, 9.0);
        let f = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, d, &gain, &bias);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, d, &gain, &bias);
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let dx = layer_norm_backward(&w, d, &gain, &cache, &mut dg, &mut db);
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }
}
