//! Convolution primitives: im2col/col2im plus GEMM, in chunks of output rows
//! so peak memory stays bounded on large inputs.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array4, ArrayView3, ArrayViewMut3, Axis, s};

use crate::scalar::Scalar;

/// Output spatial size of a convolution along one axis.
#[inline]
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Output spatial size of a transposed convolution along one axis.
#[inline]
pub fn convt_out_len(input: usize, k: usize, stride: usize, pad: usize, out_pad: usize) -> usize {
    (input - 1) * stride + k + out_pad - 2 * pad
}

/// Cap on the scratch column matrix, in elements (~24 MB of f32).
const COLS_BUDGET: usize = 6 << 20;

fn rows_per_chunk(cin_kk: usize, out_w: usize, out_h: usize) -> usize {
    (COLS_BUDGET / (cin_kk * out_w).max(1)).clamp(1, out_h)
}

/// Gathers the `k*k` input windows of output rows `r0..r1` into a
/// `(Cin*k*k, (r1-r0)*Wo)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col_chunk<F: Scalar>(
    x: &ArrayView3<'_, F>,
    k: usize,
    stride: usize,
    pad: usize,
    out_w: usize,
    r0: usize,
    r1: usize,
    cols: &mut Array2<F>,
) {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    debug_assert_eq!(cols.shape(), &[cin * k * k, (r1 - r0) * out_w]);
    cols.fill(F::zero());
    for ci in 0..cin {
        for r in 0..k {
            for c in 0..k {
                let row = (ci * k + r) * k + c;
                let mut dst = cols.row_mut(row);
                for (oi, oh) in (r0..r1).enumerate() {
                    let ih = oh * stride + r;
                    if ih < pad || ih >= h + pad {
                        continue;
                    }
                    let ih = ih - pad;
                    for ow in 0..out_w {
                        let iw = ow * stride + c;
                        if iw < pad || iw >= w + pad {
                            continue;
                        }
                        dst[oi * out_w + ow] = x[[ci, ih, iw - pad]];
                    }
                }
            }
        }
    }
}

/// Scatter-adds a `(Cout*k*k, (r1-r0)*Ww)` window matrix back into `out`,
/// where `r0..r1` are the window-grid rows.
#[allow(clippy::too_many_arguments)]
fn col2im_chunk<F: Scalar>(
    cols: &Array2<F>,
    k: usize,
    stride: usize,
    pad: usize,
    grid_w: usize,
    r0: usize,
    r1: usize,
    out: &mut ArrayViewMut3<'_, F>,
) {
    let (cout, h, w) = (out.shape()[0], out.shape()[1], out.shape()[2]);
    debug_assert_eq!(cols.shape(), &[cout * k * k, (r1 - r0) * grid_w]);
    for co in 0..cout {
        for r in 0..k {
            for c in 0..k {
                let row = (co * k + r) * k + c;
                let src = cols.row(row);
                for (gi, gh) in (r0..r1).enumerate() {
                    let oh = gh * stride + r;
                    if oh < pad || oh >= h + pad {
                        continue;
                    }
                    let oh = oh - pad;
                    for gw in 0..grid_w {
                        let ow = gw * stride + c;
                        if ow < pad || ow >= w + pad {
                            continue;
                        }
                        out[[co, oh, ow - pad]] = out[[co, oh, ow - pad]] + src[gi * grid_w + gw];
                    }
                }
            }
        }
    }
}

/// `y[b,co] = sum_ci w[co,ci] * x[b,ci] + bias[co]` with `k`x`k` windows.
pub fn conv2d_forward<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    bias: &Array1<F>,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (batch, cin, h, ww) = x.dim();
    let (cout, wcin, k, _) = w.dim();
    assert_eq!(cin, wcin, "conv input channels {cin} vs weight {wcin}");
    let oh = conv_out_len(h, k, stride, pad);
    let ow = conv_out_len(ww, k, stride, pad);
    let w2 = w.view().into_shape_with_order((cout, cin * k * k)).expect("weights contiguous");
    let mut y = Array4::<F>::zeros((batch, cout, oh, ow));
    let chunk = rows_per_chunk(cin * k * k, ow, oh);
    for b in 0..batch {
        let xb = x.index_axis(Axis(0), b);
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + chunk).min(oh);
            let n = (r1 - r0) * ow;
            let mut cols = Array2::<F>::zeros((cin * k * k, n));
            im2col_chunk(&xb, k, stride, pad, ow, r0, r1, &mut cols);
            let mut y2 = Array2::<F>::zeros((cout, n));
            general_mat_mul(F::one(), &w2, &cols.view(), F::zero(), &mut y2);
            let y3 = y2.into_shape_with_order((cout, r1 - r0, ow)).expect("contiguous");
            y.slice_mut(s![b, .., r0..r1, ..]).assign(&y3);
            r0 = r1;
        }
    }
    let yb = bias.view().into_shape_with_order((1, cout, 1, 1)).expect("bias shape");
    y += &yb;
    y
}

/// Gradient of a convolution with respect to its input.
pub fn conv2d_backward_data<F: Scalar>(
    g: &Array4<F>,
    w: &Array4<F>,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
) -> Array4<F> {
    let (batch, cout, oh, ow) = g.dim();
    let (wcout, cin, k, _) = w.dim();
    assert_eq!(cout, wcout);
    let w2 = w.view().into_shape_with_order((cout, cin * k * k)).expect("weights contiguous");
    let mut dx = Array4::<F>::zeros((batch, cin, in_h, in_w));
    let chunk = rows_per_chunk(cin * k * k, ow, oh);
    for b in 0..batch {
        let mut dxb = dx.index_axis_mut(Axis(0), b);
        let mut r0 = 0;
        while r0 < oh {
            let r1 = (r0 + chunk).min(oh);
            let n = (r1 - r0) * ow;
            let g2 = g
                .slice(s![b, .., r0..r1, ..])
                .to_owned()
                .into_shape_with_order((cout, n))
                .expect("contiguous");
            let mut cols = Array2::<F>::zeros((cin * k * k, n));
            general_mat_mul(F::one(), &w2.t(), &g2.view(), F::zero(), &mut cols);
            col2im_chunk(&cols, k, stride, pad, ow, r0, r1, &mut dxb);
            r0 = r1;
        }
    }
    dx
}

/// Gradient of a convolution with respect to its weights; accumulates into
/// `dw` (callers zero it per step). Returns the bias gradient.
pub fn conv2d_backward_weights<F: Scalar>(
    x: &Array4<F>,
    g: &Array4<F>,
    stride: usize,
    pad: usize,
    k: usize,
    dw: &mut Array4<F>,
) -> Array1<F> {
    let (batch, cin, _, _) = x.dim();
    let (_, cout, oh, ow) = g.dim();
    debug_assert_eq!(dw.dim(), (cout, cin, k, k));
    let chunk = rows_per_chunk(cin * k * k, ow, oh);
    {
        let mut dw2 = dw
            .view_mut()
            .into_shape_with_order((cout, cin * k * k))
            .expect("weights contiguous");
        for b in 0..batch {
            let xb = x.index_axis(Axis(0), b);
            let mut r0 = 0;
            while r0 < oh {
                let r1 = (r0 + chunk).min(oh);
                let n = (r1 - r0) * ow;
                let mut cols = Array2::<F>::zeros((cin * k * k, n));
                im2col_chunk(&xb, k, stride, pad, ow, r0, r1, &mut cols);
                let g2 = g
                    .slice(s![b, .., r0..r1, ..])
                    .to_owned()
                    .into_shape_with_order((cout, n))
                    .expect("contiguous");
                general_mat_mul(F::one(), &g2.view(), &cols.t(), F::one(), &mut dw2);
                r0 = r1;
            }
        }
    }
    let mut db = Array1::<F>::zeros(cout);
    for co in 0..cout {
        db[co] = g.slice(s![.., co, .., ..]).sum();
    }
    db
}

/// Transposed convolution; weights are `(Cin, Cout, k, k)`.
pub fn convt2d_forward<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    bias: &Array1<F>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Array4<F> {
    let (batch, cin, h, ww) = x.dim();
    let (wcin, cout, k, _) = w.dim();
    assert_eq!(cin, wcin, "tconv input channels {cin} vs weight {wcin}");
    let oh = convt_out_len(h, k, stride, pad, out_pad);
    let ow = convt_out_len(ww, k, stride, pad, out_pad);
    // Rows of the scatter matrix are indexed (co, r, c).
    let mut a = Array2::<F>::zeros((cout * k * k, cin));
    for ci in 0..cin {
        for co in 0..cout {
            for r in 0..k {
                for c in 0..k {
                    a[[(co * k + r) * k + c, ci]] = w[[ci, co, r, c]];
                }
            }
        }
    }
    let mut y = Array4::<F>::zeros((batch, cout, oh, ow));
    let chunk = rows_per_chunk(cout * k * k, ww, h);
    for b in 0..batch {
        let xb = x.index_axis(Axis(0), b);
        let mut yb = y.index_axis_mut(Axis(0), b);
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + chunk).min(h);
            let n = (r1 - r0) * ww;
            let x2 = xb
                .slice(s![.., r0..r1, ..])
                .to_owned()
                .into_shape_with_order((cin, n))
                .expect("contiguous");
            let mut m = Array2::<F>::zeros((cout * k * k, n));
            general_mat_mul(F::one(), &a.view(), &x2.view(), F::zero(), &mut m);
            col2im_chunk(&m, k, stride, pad, ww, r0, r1, &mut yb);
            r0 = r1;
        }
    }
    let yb = bias.view().into_shape_with_order((1, cout, 1, 1)).expect("bias shape");
    y += &yb;
    y
}

/// Gradient of a transposed convolution with respect to its input.
pub fn convt2d_backward_data<F: Scalar>(
    g: &Array4<F>,
    w: &Array4<F>,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
) -> Array4<F> {
    let (batch, cout, _, _) = g.dim();
    let (cin, wcout, k, _) = w.dim();
    assert_eq!(cout, wcout);
    let w2 = w.view().into_shape_with_order((cin, cout * k * k)).expect("weights contiguous");
    let mut dx = Array4::<F>::zeros((batch, cin, in_h, in_w));
    let chunk = rows_per_chunk(cout * k * k, in_w, in_h);
    for b in 0..batch {
        let gb = g.index_axis(Axis(0), b);
        let mut r0 = 0;
        while r0 < in_h {
            let r1 = (r0 + chunk).min(in_h);
            let n = (r1 - r0) * in_w;
            let mut cols = Array2::<F>::zeros((cout * k * k, n));
            im2col_chunk(&gb, k, stride, pad, in_w, r0, r1, &mut cols);
            let mut d2 = Array2::<F>::zeros((cin, n));
            general_mat_mul(F::one(), &w2, &cols.view(), F::zero(), &mut d2);
            let d3 = d2.into_shape_with_order((cin, r1 - r0, in_w)).expect("contiguous");
            dx.slice_mut(s![b, .., r0..r1, ..]).assign(&d3);
            r0 = r1;
        }
    }
    dx
}

/// Weight/bias gradients of a transposed convolution; accumulates into `dw`.
pub fn convt2d_backward_weights<F: Scalar>(
    x: &Array4<F>,
    g: &Array4<F>,
    stride: usize,
    pad: usize,
    k: usize,
    dw: &mut Array4<F>,
) -> Array1<F> {
    let (batch, cin, h, ww) = x.dim();
    let (_, cout, _, _) = g.dim();
    debug_assert_eq!(dw.dim(), (cin, cout, k, k));
    {
        let mut dw2 = dw
            .view_mut()
            .into_shape_with_order((cin, cout * k * k))
            .expect("weights contiguous");
        let chunk = rows_per_chunk(cout * k * k, ww, h);
        for b in 0..batch {
            let gb = g.index_axis(Axis(0), b);
            let xb = x.index_axis(Axis(0), b);
            let mut r0 = 0;
            while r0 < h {
                let r1 = (r0 + chunk).min(h);
                let n = (r1 - r0) * ww;
                let mut cols = Array2::<F>::zeros((cout * k * k, n));
                im2col_chunk(&gb, k, stride, pad, ww, r0, r1, &mut cols);
                let x2 = xb
                    .slice(s![.., r0..r1, ..])
                    .to_owned()
                    .into_shape_with_order((cin, n))
                    .expect("contiguous");
                general_mat_mul(F::one(), &x2.view(), &cols.t(), F::one(), &mut dw2);
                r0 = r1;
            }
        }
    }
    let mut db = Array1::<F>::zeros(cout);
    for co in 0..cout {
        db[co] = g.slice(s![.., co, .., ..]).sum();
    }
    db
}

/// Raster-causal kernel mask for the context models: positions strictly
/// before the center in raster order are 1, the center and everything after
/// are 0.
pub fn causal_mask<F: Scalar>(k: usize) -> Array2<F> {
    let mut m = Array2::<F>::zeros((k, k));
    let center = k / 2;
    for r in 0..k {
        for c in 0..k {
            if r < center || (r == center && c < center) {
                m[[r, c]] = F::one();
            }
        }
    }
    m
}

/// Reference convolution: direct summation, used only to validate the
/// GEMM path in tests.
pub fn conv2d_reference<F: Scalar>(
    x: &Array4<F>,
    w: &Array4<F>,
    bias: &Array1<F>,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (batch, cin, h, ww) = x.dim();
    let (cout, _, k, _) = w.dim();
    let oh = conv_out_len(h, k, stride, pad);
    let ow = conv_out_len(ww, k, stride, pad);
    let mut y = Array4::<F>::zeros((batch, cout, oh, ow));
    for b in 0..batch {
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for r in 0..k {
                            for c in 0..k {
                                let ih = i * stride + r;
                                let iw = j * stride + c;
                                if ih < pad || iw < pad || ih - pad >= h || iw - pad >= ww {
                                    continue;
                                }
                                acc = acc + x[[b, ci, ih - pad, iw - pad]] * w[[co, ci, r, c]];
                            }
                        }
                    }
                    y[[b, co, i, j]] = acc;
                }
            }
        }
    }
    y
}

pub fn zeros1<F: Scalar>(n: usize) -> Array1<F> {
    Array1::from_elem(n, F::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn filled(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut state = seed;
        Array::from_shape_fn(shape, |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn gemm_conv_matches_reference() {
        for &(k, stride, pad) in &[(5usize, 2usize, 2usize), (3, 1, 1), (1, 1, 0), (5, 1, 2)] {
            let x = filled((2, 3, 12, 10), 7 + k as u64);
            let w = filled((4, 3, k, k), 11);
            let b = Array1::from_shape_fn(4, |i| i as f64 * 0.1);
            let got = conv2d_forward(&x, &w, &b, stride, pad);
            let want = conv2d_reference(&x, &w, &b, stride, pad);
            let err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-10, "k={k} s={stride} p={pad}: max err {err}");
        }
    }

    #[test]
    fn tconv_inverts_shapes() {
        let x = filled((1, 4, 6, 5), 3);
        let w = filled((4, 2, 5, 5), 5);
        let b = zeros1::<f64>(2);
        let y = convt2d_forward(&x, &w, &b, 2, 2, 1);
        assert_eq!(y.dim(), (1, 2, 12, 10));
    }

    #[test]
    fn tconv_matches_scatter_reference() {
        let x = filled((2, 3, 4, 4), 17);
        let w = filled((3, 2, 5, 5), 19);
        let b = Array1::from_shape_fn(2, |i| 0.3 - i as f64 * 0.2);
        let (stride, pad, out_pad) = (2, 2, 1);
        let got = convt2d_forward(&x, &w, &b, stride, pad, out_pad);
        // Direct scatter.
        let (batch, cin, h, ww) = x.dim();
        let (_, cout, k, _) = w.dim();
        let oh = convt_out_len(h, k, stride, pad, out_pad);
        let ow = convt_out_len(ww, k, stride, pad, out_pad);
        let mut want = Array4::<f64>::zeros((batch, cout, oh, ow));
        for bi in 0..batch {
            for ci in 0..cin {
                for i in 0..h {
                    for j in 0..ww {
                        for co in 0..cout {
                            for r in 0..k {
                                for c in 0..k {
                                    let (ohp, owp) = (i * stride + r, j * stride + c);
                                    if ohp < pad || owp < pad {
                                        continue;
                                    }
                                    let (y0, x0) = (ohp - pad, owp - pad);
                                    if y0 >= oh || x0 >= ow {
                                        continue;
                                    }
                                    want[[bi, co, y0, x0]] += x[[bi, ci, i, j]] * w[[ci, co, r, c]];
                                }
                            }
                        }
                    }
                }
            }
        }
        for co in 0..cout {
            want.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + b[co]);
        }
        let err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "max err {err}");
    }

    #[test]
    fn causal_mask_shape() {
        let m: Array2<f64> = causal_mask(5);
        assert_eq!(m[[2, 1]], 1.0);
        assert_eq!(m[[2, 2]], 0.0); // center excluded
        assert_eq!(m[[2, 3]], 0.0);
        assert_eq!(m[[3, 0]], 0.0);
        assert_eq!(m[[0, 4]], 1.0);
        assert_eq!(m.sum(), 12.0);
    }
}
