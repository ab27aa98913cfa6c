//! Inner loops for the fixed layer set. Buffers are flat row-major slices;
//! loop orders keep the innermost axis contiguous so it vectorizes.

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four fixed accumulators; reduction order depends only on length.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Unrolls a `[cin, side, side]` image into `[cin*k*k, os*os]` patches.
pub(crate) fn im2col(input: &[f64], cin: usize, side: usize, k: usize, cols: &mut [f64]) {
    let os = side - k + 1;
    let plane = os * os;
    for ci in 0..cin {
        let src = &input[ci * side * side..(ci + 1) * side * side];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let dst = &mut cols[r * plane..(r + 1) * plane];
                for oy in 0..os {
                    let row = &src[(oy + ky) * side + kx..(oy + ky) * side + kx + os];
                    dst[oy * os..(oy + 1) * os].copy_from_slice(row);
                }
            }
        }
    }
}

/// Same patches as [`im2col`] but laid out `[os*os, cin*k*k]`.
pub(crate) fn im2col_transposed(input: &[f64], cin: usize, side: usize, k: usize, out: &mut [f64]) {
    let os = side - k + 1;
    let kk = cin * k * k;
    for oy in 0..os {
        for ox in 0..os {
            let dst = &mut out[(oy * os + ox) * kk..(oy * os + ox + 1) * kk];
            let mut r = 0;
            for ci in 0..cin {
                let src = &input[ci * side * side..(ci + 1) * side * side];
                for ky in 0..k {
                    let base = (oy + ky) * side + ox;
                    dst[r..r + k].copy_from_slice(&src[base..base + k]);
                    r += k;
                }
            }
        }
    }
}

/// Scatters patch gradients `[cin*k*k, os*os]` back onto a `[cin, side, side]` image.
pub(crate) fn col2im_add(dcols: &[f64], cin: usize, side: usize, k: usize, dinput: &mut [f64]) {
    let os = side - k + 1;
    let plane = os * os;
    for ci in 0..cin {
        let dst = &mut dinput[ci * side * side..(ci + 1) * side * side];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let src = &dcols[r * plane..(r + 1) * plane];
                for oy in 0..os {
                    let d = &mut dst[(oy + ky) * side + kx..(oy + ky) * side + kx + os];
                    for (dv, &sv) in d.iter_mut().zip(&src[oy * os..(oy + 1) * os]) {
                        *dv += sv;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub side: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn out_side(&self) -> usize {
        self.side - self.k + 1
    }
    pub fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// One image: `out[co] = bias[co] + W[co] · cols`.
pub(crate) fn conv_forward(
    s: &ConvShape,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    cols: &mut [f64],
    out: &mut [f64],
) {
    let plane = s.out_side() * s.out_side();
    let kk = s.patch();
    im2col(input, s.cin, s.side, s.k, cols);
    for co in 0..s.cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias[co]);
        let w = &weight[co * kk..(co + 1) * kk];
        for (r, &wv) in w.iter().enumerate() {
            axpy(wv, &cols[r * plane..(r + 1) * plane], o);
        }
    }
}

/// One image: accumulates weight/bias gradients and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    s: &ConvShape,
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    cols_t: &mut [f64],
    dcols: &mut [f64],
    dinput: Option<&mut [f64]>,
) {
    let plane = s.out_side() * s.out_side();
    let kk = s.patch();
    im2col_transposed(input, s.cin, s.side, s.k, cols_t);
    for co in 0..s.cout {
        let g = &dout[co * plane..(co + 1) * plane];
        let dw = &mut dweight[co * kk..(co + 1) * kk];
        let mut gb = 0.0;
        for (p, &gv) in g.iter().enumerate() {
            gb += gv;
            axpy(gv, &cols_t[p * kk..(p + 1) * kk], dw);
        }
        dbias[co] += gb;
    }
    if let Some(dinput) = dinput {
        dcols.fill(0.0);
        for co in 0..s.cout {
            let g = &dout[co * plane..(co + 1) * plane];
            let w = &weight[co * kk..(co + 1) * kk];
            for (r, &wv) in w.iter().enumerate() {
                axpy(wv, g, &mut dcols[r * plane..(r + 1) * plane]);
            }
        }
        col2im_add(dcols, s.cin, s.side, s.k, dinput);
    }
}

/// 2×2 stride-2 mean pooling over `[c, side, side]`; odd trailing row/column is dropped.
pub(crate) fn avg_pool(input: &[f64], c: usize, side: usize, out: &mut [f64]) {
    let q = side / 2;
    for ch in 0..c {
        let src = &input[ch * side * side..(ch + 1) * side * side];
        let dst = &mut out[ch * q * q..(ch + 1) * q * q];
        for y in 0..q {
            let r0 = &src[2 * y * side..];
            let r1 = &src[(2 * y + 1) * side..];
            for x in 0..q {
                dst[y * q + x] =
                    0.25 * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
            }
        }
    }
}

pub(crate) fn avg_pool_backward(dout: &[f64], c: usize, side: usize, dinput: &mut [f64]) {
    let q = side / 2;
    dinput.fill(0.0);
    for ch in 0..c {
        let g = &dout[ch * q * q..(ch + 1) * q * q];
        let dst = &mut dinput[ch * side * side..(ch + 1) * side * side];
        for y in 0..q {
            for x in 0..q {
                let v = 0.25 * g[y * q + x];
                dst[2 * y * side + 2 * x] = v;
                dst[2 * y * side + 2 * x + 1] = v;
                dst[(2 * y + 1) * side + 2 * x] = v;
                dst[(2 * y + 1) * side + 2 * x + 1] = v;
            }
        }
    }
}

pub(crate) fn tanh_inplace(v: &mut [f64]) {
    for x in v {
        *x = x.tanh();
    }
}

/// `dz = da * (1 - a²)` given the activation output `a`.
pub(crate) fn tanh_backward(act: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        *g *= 1.0 - a * a;
    }
}

/// `y[b] = bias + x[b] · W` with `W` stored `[in, out]`.
pub(crate) fn dense_in_out(x: &[f64], w: &[f64], bias: &[f64], n_in: usize, y: &mut [f64]) {
    let n_out = bias.len();
    for (xb, yb) in x.chunks_exact(n_in).zip(y.chunks_exact_mut(n_out)) {
        yb.copy_from_slice(bias);
        for (i, &xv) in xb.iter().enumerate() {
            axpy(xv, &w[i * n_out..(i + 1) * n_out], yb);
        }
    }
}

/// Backward of [`dense_in_out`]; accumulates into `dw`/`db`, overwrites `dx`.
pub(crate) fn dense_in_out_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for (xb, gb) in x.chunks_exact(n_in).zip(dy.chunks_exact(n_out)) {
        axpy(1.0, gb, db);
        for (i, &xv) in xb.iter().enumerate() {
            axpy(xv, gb, &mut dw[i * n_out..(i + 1) * n_out]);
        }
    }
    if let Some(dx) = dx {
        for (dxb, gb) in dx.chunks_exact_mut(n_in).zip(dy.chunks_exact(n_out)) {
            for (i, d) in dxb.iter_mut().enumerate() {
                *d = dot(&w[i * n_out..(i + 1) * n_out], gb);
            }
        }
    }
}

/// `y[b][o] = bias[o] + W[o] · x[b]` with `W` stored `[out, in]`.
pub(crate) fn dense_out_in(x: &[f64], w: &[f64], bias: &[f64], n_in: usize, y: &mut [f64]) {
    let n_out = bias.len();
    for (xb, yb) in x.chunks_exact(n_in).zip(y.chunks_exact_mut(n_out)) {
        for (o, yv) in yb.iter_mut().enumerate() {
            *yv = bias[o] + dot(&w[o * n_in..(o + 1) * n_in], xb);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_out_in_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    for (b, (xb, gb)) in x.chunks_exact(n_in).zip(dy.chunks_exact(n_out)).enumerate() {
        axpy(1.0, gb, db);
        for (o, &gv) in gb.iter().enumerate() {
            axpy(gv, xb, &mut dw[o * n_in..(o + 1) * n_in]);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * n_in..(b + 1) * n_in];
            dxb.fill(0.0);
            for (o, &gv) in gb.iter().enumerate() {
                axpy(gv, &w[o * n_in..(o + 1) * n_in], dxb);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn im2col_layouts_agree() {
        let input: Vec<f64> = (0..2 * 5 * 5).map(|i| i as f64).collect();
        let (cin, side, k) = (2, 5, 3);
        let os = side - k + 1;
        let kk = cin * k * k;
        let mut cols = vec![0.0; kk * os * os];
        let mut cols_t = vec![0.0; kk * os * os];
        im2col(&input, cin, side, k, &mut cols);
        im2col_transposed(&input, cin, side, k, &mut cols_t);
        for r in 0..kk {
            for p in 0..os * os {
                assert_eq!(cols[r * os * os + p], cols_t[p * kk + r]);
            }
        }
    }

    #[test]
    fn pooling_drops_odd_edge() {
        let input: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let mut out = vec![0.0; 1];
        avg_pool(&input, 1, 3, &mut out);
        assert_eq!(out[0], (0.0 + 1.0 + 3.0 + 4.0) / 4.0);
        let mut din = vec![9.0; 9];
        avg_pool_backward(&[4.0], 1, 3, &mut din);
        assert_eq!(din, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
