//! Row-major matrix kernels.
//!
//! Inner loops run over contiguous output rows where possible so the
//! compiler can vectorize them; dot products use split accumulators for
//! the same reason.

use crate::Real;

/// `out[m,n] += a[m,k] @ b[k,n]`, or assigns when `accumulate` is false.
pub fn mm_nn<R: Real>(out: &mut [R], a: &[R], b: &[R], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !accumulate {
        out.fill(R::zero());
    }
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let s = a[i * k + kk];
            if s == R::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + s * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] @ transpose(b[n,k])`.
pub fn mm_nt<R: Real>(out: &mut [R], a: &[R], b: &[R], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let d = dot(a_row, &b[j * k..(j + 1) * k]);
            out_row[j] = if accumulate { out_row[j] + d } else { d };
        }
    }
}

/// `out[m,n] += transpose(a[k,m]) @ b[k,n]`.
pub fn mm_tn<R: Real>(out: &mut [R], a: &[R], b: &[R], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !accumulate {
        out.fill(R::zero());
    }
    for kk in 0..k {
        let b_row = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let s = a[kk * m + i];
            if s == R::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + s * bv;
            }
        }
    }
}

/// Dot product with four running sums so the reduction vectorizes.
pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4 * 4;
    let mut s0 = R::zero();
    let mut s1 = R::zero();
    let mut s2 = R::zero();
    let mut s3 = R::zero();
    let mut i = 0;
    while i < chunks {
        s0 = s0 + a[i] * b[i];
        s1 = s1 + a[i + 1] * b[i + 1];
        s2 = s2 + a[i + 2] * b[i + 2];
        s3 = s3 + a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < n {
        s = s + a[i] * b[i];
        i += 1;
    }
    s
}

/// `y += alpha * x`.
pub fn axpy<R: Real>(y: &mut [R], alpha: R, x: &[R]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Adds `bias[n]` to every row of `x[m,n]`.
pub fn add_bias<R: Real>(x: &mut [R], bias: &[R], m: usize, n: usize) {
    debug_assert_eq!(x.len(), m * n);
    debug_assert_eq!(bias.len(), n);
    for i in 0..m {
        let row = &mut x[i * n..(i + 1) * n];
        for (xi, &bi) in row.iter_mut().zip(bias) {
            *xi = *xi + bi;
        }
    }
}

/// `out[n] += column sums of x[m,n]`.
pub fn colsum_acc<R: Real>(out: &mut [R], x: &[R], m: usize, n: usize) {
    debug_assert_eq!(x.len(), m * n);
    debug_assert_eq!(out.len(), n);
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        for (o, &xi) in out.iter_mut().zip(row) {
            *o = *o + xi;
        }
    }
}
