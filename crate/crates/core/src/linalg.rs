//! Dense row-major kernels used by the transformer and the MLP heads.
//!
//! Loops are ordered so the innermost index walks contiguous memory.

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out[..m * n].fill(0.0);
    matmul_acc(a, b, out, m, k, n);
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k×n] += aᵀ · d` with `a[m×k]`, `d[m×n]` (weight gradients).
pub fn matmul_tn_acc(a: &[f64], d: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && d.len() >= m * n && out.len() >= k * n);
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &dv) in out[p * n..(p + 1) * n].iter_mut().zip(drow) {
                *o += av * dv;
            }
        }
    }
}

/// `out[m×k] += d[m×n] · wᵀ` with `w[k×n]` (input gradients).
pub fn matmul_nt_acc(d: &[f64], w: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert!(d.len() >= m * n && w.len() >= k * n && out.len() >= m * k);
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(drow, &w[p * n..(p + 1) * n]);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax_in_place(x: &mut [f64]) {
    let lse = log_sum_exp(x);
    for v in x.iter_mut() {
        *v -= lse;
    }
}
