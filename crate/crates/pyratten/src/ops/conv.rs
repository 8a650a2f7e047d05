//! 2-D convolution and transposed convolution, lowered to GEMM through
//! im2col / col2im.

use super::gemm;
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{ConvSpec, Elem, Tensor};

/// Output extent of a convolution along one axis, or an error when it would
/// drop below one.
pub fn conv2d_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "convolution output extent < 1: input {input} + 2*pad {pad} < kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Gathers sliding windows of one batch item into a (C*kh*kw, oh*ow) matrix,
/// zero-filling out-of-bounds taps.
fn im2col(
    item: &[Elem],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<Elem> {
    let mut col = vec![0.0; c * kh * kw * oh * ow];
    for ci in 0..c {
        let plane = &item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if stride == 1 {
                        // Contiguous segment: ix = ox + kx - pad stays in bounds
                        // for ox in [lo, hi).
                        let lo = pad.saturating_sub(kx);
                        let hi = (w + pad - kx).min(ow);
                        if lo < hi {
                            let src_lo = lo + kx - pad;
                            dst[lo..hi].copy_from_slice(&src_row[src_lo..src_lo + hi - lo]);
                        }
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a (C*kh*kw, oh*ow) matrix back onto one batch item.
fn col2im(
    col: &[Elem],
    item: &mut [Elem],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    for ci in 0..c {
        let plane = &mut item[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &col[row + oy * ow..row + (oy + 1) * ow];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kx);
                        let hi = (w + pad - kx).min(ow);
                        for ox in lo..hi {
                            dst_row[ox + kx - pad] += src[ox];
                        }
                    } else {
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_input(x: &Tensor, spec: &ConvSpec) -> Result<()> {
    if x.channels() != spec.c_in() {
        return Err(Error::Dim(format!(
            "conv2d input has {} channels but the kernel expects {}",
            x.channels(),
            spec.c_in()
        )));
    }
    Ok(())
}

/// Cross-correlation with zero padding and per-output-channel bias.
pub fn conv2d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    check_conv_input(x, spec)?;
    let [n, c, h, w] = x.shape();
    let (kh, kw, stride, pad) = (spec.kh(), spec.kw(), spec.stride, spec.pad);
    let oh = conv2d_out_extent(h, kh, stride, pad)?;
    let ow = conv2d_out_extent(w, kw, stride, pad)?;
    let (m, k, sp) = (spec.c_out(), c * kh * kw, oh * ow);

    let mut out = Tensor::zeros(n, m, oh, ow);
    let per_in = c * h * w;
    let per_out = m * sp;
    let xdata = x.data();
    let wdata = spec.weight.data();
    if n == 1 {
        // Single item: split the GEMM over output-channel row blocks instead.
        let col = im2col(xdata, c, h, w, kh, kw, stride, pad, oh, ow);
        let rows = m.div_ceil(parallel::threads()).max(1);
        parallel::run_chunks(out.data_mut(), rows * sp, |i, out_rows| {
            let m_blk = out_rows.len() / sp;
            let w_blk = &wdata[i * rows * k..i * rows * k + m_blk * k];
            gemm(m_blk, k, sp, 1.0, w_blk, false, &col, false, 0.0, out_rows);
        });
    } else {
        parallel::run_chunks(out.data_mut(), per_out, |i, out_item| {
            let col = im2col(&xdata[i * per_in..(i + 1) * per_in], c, h, w, kh, kw, stride, pad, oh, ow);
            gemm(m, k, sp, 1.0, wdata, false, &col, false, 0.0, out_item);
        });
    }
    if let Some(bias) = &spec.bias {
        let b = bias.data();
        for item in out.data_mut().chunks_mut(per_out) {
            for (co, plane) in item.chunks_mut(sp).enumerate() {
                let bv = b[co];
                for v in plane {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
///
/// Pass `need_gx = false` to skip the input gradient (e.g. leaf images).
pub fn conv2d_backward(
    x: &Tensor,
    spec: &ConvSpec,
    gout: &Tensor,
    need_gx: bool,
    need_gw: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
    let [n, c, h, w] = x.shape();
    let (kh, kw, stride, pad) = (spec.kh(), spec.kw(), spec.stride, spec.pad);
    let [gn, m, oh, ow] = gout.shape();
    debug_assert_eq!(gn, n);
    debug_assert_eq!(m, spec.c_out());
    let (k, sp) = (c * kh * kw, oh * ow);
    let per_in = c * h * w;
    let per_out = m * sp;
    let wdata = spec.weight.data();
    let gdata = gout.data();

    let gx = if need_gx {
        let mut gx = Tensor::zeros(n, c, h, w);
        parallel::run_chunks(gx.data_mut(), per_in, |i, gx_item| {
            let gout_item = &gdata[i * per_out..(i + 1) * per_out];
            let mut col = vec![0.0; k * sp];
            // col = W^T (k×m) * gout (m×sp); the weight buffer is (m×k).
            gemm(k, m, sp, 1.0, wdata, true, gout_item, false, 0.0, &mut col);
            col2im(&col, gx_item, c, h, w, kh, kw, stride, pad, oh, ow);
        });
        Some(gx)
    } else {
        None
    };

    let (gw, gb) = if need_gw {
        let mut gw = Tensor::zeros(m, c, kh, kw);
        let xdata = x.data();
        if n == 1 {
            let col = im2col(xdata, c, h, w, kh, kw, stride, pad, oh, ow);
            let rows = m.div_ceil(parallel::threads()).max(1);
            parallel::run_chunks(gw.data_mut(), rows * k, |i, gw_rows| {
                let m_blk = gw_rows.len() / k;
                let g_blk = &gdata[i * rows * sp..i * rows * sp + m_blk * sp];
                gemm(m_blk, sp, k, 1.0, g_blk, false, &col, true, 0.0, gw_rows);
            });
        } else {
            for i in 0..n {
                let col = im2col(&xdata[i * per_in..(i + 1) * per_in], c, h, w, kh, kw, stride, pad, oh, ow);
                let gout_item = &gdata[i * per_out..(i + 1) * per_out];
                // gw (m×k) += gout (m×sp) * col^T (sp×k)
                gemm(m, sp, k, 1.0, gout_item, false, &col, true, 1.0, gw.data_mut());
            }
        }
        let gb = if spec.bias.is_some() {
            let mut gb = Tensor::zeros(1, m, 1, 1);
            for item in gdata.chunks(per_out) {
                for (co, plane) in item.chunks(sp).enumerate() {
                    gb.data_mut()[co] += plane.iter().sum::<Elem>();
                }
            }
            Some(gb)
        } else {
            None
        };
        (Some(gw), gb)
    } else {
        (None, None)
    };
    Ok((gx, gw, gb))
}

/// Transposed convolution: each input scalar scatters the kernel into the
/// output and overlaps accumulate. Exact adjoint of [`conv2d`] with the same
/// spec. Bias is rejected: a `ConvSpec` bias is sized for the convolution's
/// output channels, which a transposed convolution does not produce.
pub fn conv_transpose2d(score: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    if score.channels() != spec.c_out() {
        return Err(Error::Dim(format!(
            "conv_transpose2d input has {} channels but the kernel produces {}",
            score.channels(),
            spec.c_out()
        )));
    }
    if spec.bias.is_some() {
        return Err(Error::Config(
            "conv_transpose2d does not accept a bias (it is sized for conv2d outputs)".into(),
        ));
    }
    let [n, m, h, w] = score.shape();
    let c = spec.c_in();
    let (kh, kw, stride, pad) = (spec.kh(), spec.kw(), spec.stride, spec.pad);
    let oh = ((h - 1) * stride + kh).checked_sub(2 * pad).filter(|&e| e >= 1);
    let ow = ((w - 1) * stride + kw).checked_sub(2 * pad).filter(|&e| e >= 1);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Geometry(format!(
                "conv_transpose2d output extent < 1 for input {h}x{w}, kernel {kh}x{kw}, pad {pad}"
            )))
        }
    };
    let (k, sp) = (c * kh * kw, h * w);
    let per_in = m * sp;
    let per_out = c * oh * ow;
    let sdata = score.data();
    let wdata = spec.weight.data();
    let mut out = Tensor::zeros(n, c, oh, ow);
    if n == 1 {
        // The col rows are independent; only the scatter must stay serial.
        let mut col = vec![0.0; k * sp];
        let rows = k.div_ceil(parallel::threads()).max(1);
        parallel::run_chunks(&mut col, rows * sp, |i, col_rows| {
            let k_blk = col_rows.len() / sp;
            // Row block of W^T = column block of the (m×k) weight buffer.
            super::gemm_strided(
                k_blk,
                m,
                sp,
                1.0,
                &wdata[i * rows..],
                1,
                k as isize,
                sdata,
                sp as isize,
                1,
                0.0,
                col_rows,
            );
        });
        col2im(&col, out.data_mut(), c, oh, ow, kh, kw, stride, pad, h, w);
    } else {
        parallel::run_chunks(out.data_mut(), per_out, |i, out_item| {
            let s_item = &sdata[i * per_in..(i + 1) * per_in];
            let mut col = vec![0.0; k * sp];
            gemm(k, m, sp, 1.0, wdata, true, s_item, false, 0.0, &mut col);
            col2im(&col, out_item, c, oh, ow, kh, kw, stride, pad, h, w);
        });
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d`] with respect to the score input and the
/// kernel bank.
pub fn conv_transpose2d_backward(
    score: &Tensor,
    spec: &ConvSpec,
    gout: &Tensor,
    need_gs: bool,
    need_gw: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let [n, m, h, w] = score.shape();
    let c = spec.c_in();
    let (kh, kw, stride, pad) = (spec.kh(), spec.kw(), spec.stride, spec.pad);
    let [_, _, oh, ow] = gout.shape();
    let (k, sp) = (c * kh * kw, h * w);
    let per_in = m * sp;
    let per_out = c * oh * ow;
    let gdata = gout.data();
    let wdata = spec.weight.data();

    // Both gradients consume im2col(gout); share it for single items.
    let shared_col = if n == 1 && (need_gs || need_gw) {
        Some(im2col(gdata, c, oh, ow, kh, kw, stride, pad, h, w))
    } else {
        None
    };

    let gs = if need_gs {
        let mut gs = Tensor::zeros(n, m, h, w);
        if let Some(col) = &shared_col {
            let rows = m.div_ceil(parallel::threads()).max(1);
            parallel::run_chunks(gs.data_mut(), rows * sp, |i, gs_rows| {
                let m_blk = gs_rows.len() / sp;
                let w_blk = &wdata[i * rows * k..i * rows * k + m_blk * k];
                gemm(m_blk, k, sp, 1.0, w_blk, false, col, false, 0.0, gs_rows);
            });
        } else {
            parallel::run_chunks(gs.data_mut(), per_in, |i, gs_item| {
                let col = im2col(&gdata[i * per_out..(i + 1) * per_out], c, oh, ow, kh, kw, stride, pad, h, w);
                gemm(m, k, sp, 1.0, wdata, false, &col, false, 0.0, gs_item);
            });
        }
        Some(gs)
    } else {
        None
    };

    let gw = if need_gw {
        let mut gw = Tensor::zeros(m, c, kh, kw);
        let sdata = score.data();
        if let Some(col) = &shared_col {
            let rows = m.div_ceil(parallel::threads()).max(1);
            parallel::run_chunks(gw.data_mut(), rows * k, |i, gw_rows| {
                let m_blk = gw_rows.len() / k;
                let s_blk = &sdata[i * rows * sp..i * rows * sp + m_blk * sp];
                gemm(m_blk, sp, k, 1.0, s_blk, false, col, true, 0.0, gw_rows);
            });
        } else {
            for i in 0..n {
                let col = im2col(&gdata[i * per_out..(i + 1) * per_out], c, oh, ow, kh, kw, stride, pad, h, w);
                let s_item = &sdata[i * per_in..(i + 1) * per_in];
                gemm(m, sp, k, 1.0, s_item, false, &col, true, 1.0, gw.data_mut());
            }
        }
        Some(gw)
    } else {
        None
    };
    Ok((gs, gw))
}
