//! Per-sample layer kernels on channel-major (`C x H x W`) buffers.
//!
//! Backward kernels accumulate into their gradient outputs, so callers zero
//! them once per batch.

use super::Scalar;

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for k in 0..chunks {
        let (x, y) = (&a[k * 8..k * 8 + 8], &b[k * 8..k * 8 + 8]);
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for k in chunks * 8..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Rows and columns of the output that read a valid input for tap offset `d`.
#[inline]
fn valid(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize) as usize;
    (lo, hi)
}

/// Unfolding only pays off with several input channels and a plane small
/// enough for the unfolded matrix to stay in cache.
fn use_gemm(cin: usize, plane: usize) -> bool {
    cin >= 4 && plane <= 4096
}

/// Unfold `input` into a `[cin * 9][h * w]` matrix of zero-padded 3x3 taps.
fn im2col<T: Scalar>(input: &[T], cin: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut col = vec![T::zero(); cin * 9 * plane];
    for i in 0..cin {
        let src = &input[i * plane..(i + 1) * plane];
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let dst = &mut col[(i * 9 + tap) * plane..][..plane];
            let (y0, y1) = valid(h, dy);
            let (x0, x1) = valid(w, dx);
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                dst[y * w + x0..y * w + x1].copy_from_slice(s);
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add `col` back onto `grad_in`.
fn col2im<T: Scalar>(col: &[T], cin: usize, h: usize, w: usize, grad_in: &mut [T]) {
    let plane = h * w;
    for i in 0..cin {
        let dst = &mut grad_in[i * plane..(i + 1) * plane];
        for tap in 0..9 {
            let (dy, dx) = (tap as isize / 3 - 1, tap as isize % 3 - 1);
            let src = &col[(i * 9 + tap) * plane..][..plane];
            let (y0, y1) = valid(h, dy);
            let (x0, x1) = valid(w, dx);
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let d = &mut dst[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                for (dv, &sv) in d.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                    *dv += sv;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn direct_forward<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    out: &mut [T],
) {
    let plane = h * w;
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid(w, dx);
                    let wv = weight[((o * cin + i) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        axpy(wv, s, &mut dst[y * w + x0..y * w + x1]);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn direct_backward<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    mut grad_in: Option<&mut [T]>,
    grad_w: &mut [T],
) {
    let plane = h * w;
    for o in 0..cout {
        let g = &grad_out[o * plane..(o + 1) * plane];
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = valid(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = valid(w, dx);
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let off = sy * w + (x0 as isize + dx) as usize;
                        let gr = &g[y * w + x0..y * w + x1];
                        acc += dot(gr, &src[off..off + (x1 - x0)]);
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let gi = &mut gi[i * plane..(i + 1) * plane];
                            axpy(weight[widx], gr, &mut gi[off..off + (x1 - x0)]);
                        }
                    }
                    grad_w[widx] += acc;
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1. Weights are `[cout][cin][3][3]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_forward<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
    out: &mut [T],
) {
    let plane = h * w;
    debug_assert_eq!(input.len(), cin * plane);
    debug_assert_eq!(out.len(), cout * plane);
    for (o, &b) in bias.iter().enumerate().take(cout) {
        out[o * plane..(o + 1) * plane].fill(b);
    }
    if !use_gemm(cin, plane) {
        return direct_forward(input, cin, h, w, weight, cout, out);
    }
    let k = cin * 9;
    let col = im2col(input, cin, h, w);
    T::gemm(cout, k, plane, weight, (k, 1), &col, (plane, 1), T::one(), out, (plane, 1));
}

/// Gradients of [`conv3x3_forward`]. `grad_in` may be skipped for the first layer.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    grad_out: &[T],
    grad_in: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let plane = h * w;
    let k = cin * 9;
    for (o, gb) in grad_b.iter_mut().enumerate().take(cout) {
        *gb += grad_out[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
    }
    if !use_gemm(cin, plane) {
        return direct_backward(input, cin, h, w, weight, cout, grad_out, grad_in, grad_w);
    }
    let col = im2col(input, cin, h, w);
    T::gemm(cout, plane, k, grad_out, (plane, 1), &col, (1, plane), T::one(), grad_w, (k, 1));
    if let Some(gi) = grad_in {
        let mut gcol = vec![T::zero(); k * plane];
        T::gemm(k, cout, plane, weight, (1, k), grad_out, (plane, 1), T::zero(), &mut gcol, (plane, 1));
        col2im(&gcol, cin, h, w, gi);
    }
}

pub fn relu_forward<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient wherever the ReLU output was not positive.
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max-pool, stride 2; odd trailing rows/cols are dropped.
/// Returns the flat input index of each selected maximum.
pub fn maxpool2_forward<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [T],
) -> Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut arg = vec![0usize; c * oh * ow];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * x + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out[o] = input[best];
                arg[o] = best;
            }
        }
    }
    arg
}

pub fn maxpool2_backward<T: Scalar>(argmax: &[usize], grad_out: &[T], grad_in: &mut [T]) {
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad_in[i] += g;
    }
}

/// Fully connected layer. Weights are `[outputs][inputs]`.
pub fn dense_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let n = input.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = bias[j] + dot(&weight[j * n..(j + 1) * n], input);
    }
}

pub fn dense_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_in: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let n = input.len();
    for (j, &g) in grad_out.iter().enumerate() {
        grad_b[j] += g;
        axpy(g, input, &mut grad_w[j * n..(j + 1) * n]);
    }
    if let Some(gi) = grad_in {
        for (j, &g) in grad_out.iter().enumerate() {
            axpy(g, &weight[j * n..(j + 1) * n], gi);
        }
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy on one logit, with the probability clamped to
/// `[1e-7, 1 - 1e-7]`. Returns the loss and its derivative with respect to
/// the logit (zero where the clamp is active).
pub fn bce_with_logit<T: Scalar>(z: T, y: T) -> (T, T) {
    let eps = super::cast::<T>(1e-7);
    let p = sigmoid(z);
    let pc = p.max(eps).min(T::one() - eps);
    let loss = -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
    let grad = if pc == p { p - y } else { T::zero() };
    (loss, grad)
}
