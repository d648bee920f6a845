//! Dense array kernels behind the tape ops: im2col convolution, pooling,
//! nearest-neighbor upsampling. All shapes are NCHW, all dtypes f64, all
//! hot loops run over contiguous slices.

use ndarray::{Array1, Array2, Array4, ArrayView4, Axis};

/// Output spatial size of a convolution.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfolds one sample (C, H, W) into its block of the batched patch
/// matrix (C*kh*kw, N*oh*ow): row stride `row_len`, column offset
/// `col_off`. `x_n` is the contiguous plane block of that sample.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x_n: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    col: &mut [f64],
    row_len: usize,
    col_off: usize,
) {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    for ci in 0..c {
        let plane = &x_n[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let out_row = &mut col[row * row_len + col_off..row * row_len + col_off + oh * ow];
                for oy in 0..oh {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut out_row[oy * ow..(oy + 1) * ow];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    if stride == 1 {
                        // contiguous span copy for the valid range
                        let shift = kx as isize - pad as isize;
                        let ox_lo = (-shift).max(0) as usize;
                        let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                        dst[..ox_lo].fill(0.0);
                        dst[ox_hi..].fill(0.0);
                        if ox_hi > ox_lo {
                            let src_lo = (ox_lo as isize + shift) as usize;
                            dst[ox_lo..ox_hi].copy_from_slice(&src_row[src_lo..src_lo + (ox_hi - ox_lo)]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let sx = (ox * stride + kx) as isize - pad as isize;
                            *d = if sx < 0 || sx >= w as isize { 0.0 } else { src_row[sx as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Folds one sample's block of the batched patch-gradient matrix back
/// onto that sample's plane block.
#[allow(clippy::too_many_arguments)]
fn col2im_accumulate(
    col: &[f64],
    out_n: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    row_len: usize,
    col_off: usize,
) {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    for ci in 0..c {
        let plane = &mut out_n[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src_rows = &col[row * row_len + col_off..row * row_len + col_off + oh * ow];
                for oy in 0..oh {
                    let sy = (oy * stride + ky) as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &src_rows[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let shift = kx as isize - pad as isize;
                        let ox_lo = (-shift).max(0) as usize;
                        let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                        for ox in ox_lo..ox_hi {
                            dst_row[(ox as isize + shift) as usize] += src[ox];
                        }
                    } else {
                        for (ox, &g) in src.iter().enumerate() {
                            let sx = (ox * stride + kx) as isize - pad as isize;
                            if sx >= 0 && sx < w as isize {
                                dst_row[sx as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

// Gathers (N, O, oh, ow) gradients into an (O, N*oh*ow) matrix.
fn grad_to_matrix(g_slice: &[f64], nb: usize, o: usize, ohw: usize) -> Array2<f64> {
    let mut m = vec![0.0; o * nb * ohw];
    for n in 0..nb {
        for oc in 0..o {
            let src = &g_slice[(n * o + oc) * ohw..(n * o + oc + 1) * ohw];
            m[oc * nb * ohw + n * ohw..oc * nb * ohw + (n + 1) * ohw].copy_from_slice(src);
        }
    }
    Array2::from_shape_vec((o, nb * ohw), m).unwrap()
}

/// Forward convolution, NCHW x OIHW -> NOHW. All samples share one GEMM;
/// the unfolded patch matrix stays cache-blocked inside the GEMM.
pub fn conv2d_forward(x: &ArrayView4<'_, f64>, w: &ArrayView4<'_, f64>, stride: usize, pad: usize) -> Array4<f64> {
    let (_, c, _, _) = x.dim();
    let (_, wc, _, _) = w.dim();
    assert_eq!(c, wc, "channel mismatch: input {c}, weight {wc}");
    conv2d_forward_gemm(x, w, stride, pad)
}

fn conv2d_forward_gemm(x: &ArrayView4<'_, f64>, w: &ArrayView4<'_, f64>, stride: usize, pad: usize) -> Array4<f64> {
    let (nb, c, h, wd) = x.dim();
    let (o, wc, kh, kw) = w.dim();
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(wd, kw, stride, pad);
    let ohw = oh * ow;

    let x_std = x.as_standard_layout();
    let x_slice = x_std.as_slice().unwrap();
    let w_std = w.as_standard_layout();
    let w_mat = w_std.to_shape((o, wc * kh * kw)).unwrap();

    let mut col = Array2::zeros((wc * kh * kw, nb * ohw));
    let col_slice = col.as_slice_mut().unwrap();
    let chw = c * h * wd;
    for n in 0..nb {
        im2col(
            &x_slice[n * chw..(n + 1) * chw],
            c, h, wd, kh, kw, stride, pad,
            col_slice, nb * ohw, n * ohw,
        );
    }
    let prod = w_mat.dot(&col); // (o, nb*ohw)
    let prod_slice = prod.as_slice().unwrap();

    let mut y = Array4::zeros((nb, o, oh, ow));
    let y_slice = y.as_slice_mut().unwrap();
    for n in 0..nb {
        for oc in 0..o {
            let src = &prod_slice[oc * nb * ohw + n * ohw..oc * nb * ohw + (n + 1) * ohw];
            y_slice[(n * o + oc) * ohw..(n * o + oc + 1) * ohw].copy_from_slice(src);
        }
    }
    y
}

/// Gradient wrt the convolution input.
pub fn conv2d_backward_input(
    w: &ArrayView4<'_, f64>,
    grad_y: &ArrayView4<'_, f64>,
    x_dims: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    conv2d_backward_input_gemm(w, grad_y, x_dims, stride, pad)
}

fn conv2d_backward_input_gemm(
    w: &ArrayView4<'_, f64>,
    grad_y: &ArrayView4<'_, f64>,
    x_dims: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (nb, c, h, wd) = x_dims;
    let (o, _, kh, kw) = w.dim();
    let (_, _, oh, ow) = grad_y.dim();
    let ohw = oh * ow;

    let w_std = w.as_standard_layout();
    let w_mat = w_std.to_shape((o, c * kh * kw)).unwrap();
    let w_t = w_mat.t().as_standard_layout().to_owned(); // (c*kh*kw, o)
    let g_std = grad_y.as_standard_layout();
    let g_mat = grad_to_matrix(g_std.as_slice().unwrap(), nb, o, ohw);

    let col_grad = w_t.dot(&g_mat); // (c*kh*kw, nb*ohw)
    let col_slice = col_grad.as_slice().unwrap();

    let mut gx = Array4::zeros(x_dims);
    let gx_slice = gx.as_slice_mut().unwrap();
    let chw = c * h * wd;
    for n in 0..nb {
        col2im_accumulate(
            col_slice,
            &mut gx_slice[n * chw..(n + 1) * chw],
            c, h, wd, kh, kw, stride, pad,
            nb * ohw, n * ohw,
        );
    }
    gx
}

/// Gradient wrt the convolution weights.
pub fn conv2d_backward_weight(
    x: &ArrayView4<'_, f64>,
    grad_y: &ArrayView4<'_, f64>,
    w_dims: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    conv2d_backward_weight_gemm(x, grad_y, w_dims, stride, pad)
}

fn conv2d_backward_weight_gemm(
    x: &ArrayView4<'_, f64>,
    grad_y: &ArrayView4<'_, f64>,
    w_dims: (usize, usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (nb, c, h, wd) = x.dim();
    let (o, _, kh, kw) = w_dims;
    let (_, _, oh, ow) = grad_y.dim();
    let ohw = oh * ow;

    let x_std = x.as_standard_layout();
    let x_slice = x_std.as_slice().unwrap();
    let g_std = grad_y.as_standard_layout();
    let g_mat = grad_to_matrix(g_std.as_slice().unwrap(), nb, o, ohw);

    let mut col = Array2::zeros((c * kh * kw, nb * ohw));
    let col_slice = col.as_slice_mut().unwrap();
    let chw = c * h * wd;
    for n in 0..nb {
        im2col(
            &x_slice[n * chw..(n + 1) * chw],
            c, h, wd, kh, kw, stride, pad,
            col_slice, nb * ohw, n * ohw,
        );
    }
    let gw_mat = g_mat.dot(&col.t()); // (o, c*kh*kw)
    gw_mat
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order(w_dims)
        .unwrap()
}

/// 2x2 max pooling with stride 2. Returns the pooled map and flat argmax
/// indices (into the input H*W plane) for the backward scatter.
pub fn max_pool2_forward(x: &ArrayView4<'_, f64>) -> (Array4<f64>, Vec<u32>) {
    let (nb, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 requires even dims, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().unwrap();
    let mut y = Array4::zeros((nb, c, oh, ow));
    let ys = y.as_slice_mut().unwrap();
    let mut idx = vec![0u32; nb * c * oh * ow];
    let mut k = 0;
    for nc in 0..nb * c {
        let plane = &xs[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            let top = &plane[(oy * 2) * w..(oy * 2 + 1) * w];
            let bot = &plane[(oy * 2 + 1) * w..(oy * 2 + 2) * w];
            for ox in 0..ow {
                let x0 = ox * 2;
                let candidates = [
                    (top[x0], (oy * 2) * w + x0),
                    (top[x0 + 1], (oy * 2) * w + x0 + 1),
                    (bot[x0], (oy * 2 + 1) * w + x0),
                    (bot[x0 + 1], (oy * 2 + 1) * w + x0 + 1),
                ];
                let mut best = candidates[0];
                for &cand in &candidates[1..] {
                    if cand.0 > best.0 {
                        best = cand;
                    }
                }
                ys[k] = best.0;
                idx[k] = best.1 as u32;
                k += 1;
            }
        }
    }
    (y, idx)
}

/// Scatter pooled gradients back to the argmax positions.
pub fn max_pool2_backward(
    grad_y: &ArrayView4<'_, f64>,
    idx: &[u32],
    x_dims: (usize, usize, usize, usize),
) -> Array4<f64> {
    let (nb, c, h, w) = x_dims;
    let (_, _, oh, ow) = grad_y.dim();
    let g_std = grad_y.as_standard_layout();
    let gs = g_std.as_slice().unwrap();
    let mut gx = Array4::zeros(x_dims);
    let gxs = gx.as_slice_mut().unwrap();
    let mut k = 0;
    for nc in 0..nb * c {
        let plane = &mut gxs[nc * h * w..(nc + 1) * h * w];
        for _ in 0..oh * ow {
            plane[idx[k] as usize] += gs[k];
            k += 1;
        }
    }
    gx
}

/// Nearest-neighbor x2 upsample.
pub fn upsample2_forward(x: &ArrayView4<'_, f64>) -> Array4<f64> {
    let (nb, c, h, w) = x.dim();
    let x_std = x.as_standard_layout();
    let xs = x_std.as_slice().unwrap();
    let mut y = Array4::zeros((nb, c, h * 2, w * 2));
    let ys = y.as_slice_mut().unwrap();
    let w2 = w * 2;
    for nc in 0..nb * c {
        let src = &xs[nc * h * w..(nc + 1) * h * w];
        let dst = &mut ys[nc * h * w * 4..(nc + 1) * h * w * 4];
        for sy in 0..h {
            let row = &src[sy * w..(sy + 1) * w];
            let (top, bot) = dst[sy * 2 * w2..(sy * 2 + 2) * w2].split_at_mut(w2);
            for (sx, &v) in row.iter().enumerate() {
                top[sx * 2] = v;
                top[sx * 2 + 1] = v;
                bot[sx * 2] = v;
                bot[sx * 2 + 1] = v;
            }
        }
    }
    y
}

/// Backward of nearest x2 upsample: 2x2 block sums.
pub fn upsample2_backward(grad_y: &ArrayView4<'_, f64>) -> Array4<f64> {
    let (nb, c, h2, w2) = grad_y.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let g_std = grad_y.as_standard_layout();
    let gs = g_std.as_slice().unwrap();
    let mut gx = Array4::zeros((nb, c, h, w));
    let gxs = gx.as_slice_mut().unwrap();
    for nc in 0..nb * c {
        let src = &gs[nc * h2 * w2..(nc + 1) * h2 * w2];
        let dst = &mut gxs[nc * h * w..(nc + 1) * h * w];
        for sy in 0..h {
            let top = &src[(sy * 2) * w2..(sy * 2 + 1) * w2];
            let bot = &src[(sy * 2 + 1) * w2..(sy * 2 + 2) * w2];
            let out = &mut dst[sy * w..(sy + 1) * w];
            for sx in 0..w {
                out[sx] = top[sx * 2] + top[sx * 2 + 1] + bot[sx * 2] + bot[sx * 2 + 1];
            }
        }
    }
    gx
}

/// Per-channel reduction over (N, H, W), used by bias and norm gradients.
pub fn sum_over_nhw(g: &ArrayView4<'_, f64>) -> Array1<f64> {
    let (nb, c, h, w) = g.dim();
    let g_std = g.as_standard_layout();
    let gs = g_std.as_slice().unwrap();
    let mut out = Array1::zeros(c);
    for n in 0..nb {
        for ci in 0..c {
            let plane = &gs[(n * c + ci) * h * w..(n * c + ci + 1) * h * w];
            out[ci] += plane.iter().sum::<f64>();
        }
    }
    out
}
