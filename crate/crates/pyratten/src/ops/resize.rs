//! Bicubic rescaling with the Catmull-Rom kernel (a = -0.5), pixel-center
//! alignment and edge-clamped sampling. Linear in the input, so the backward
//! pass is the transpose of the same sampling matrix.

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Catmull-Rom cubic (Keys kernel with a = -0.5).
fn cubic(s: f64) -> f64 {
    const A: f64 = -0.5;
    let s = s.abs();
    if s <= 1.0 {
        (A + 2.0) * s * s * s - (A + 3.0) * s * s + 1.0
    } else if s < 2.0 {
        A * s * s * s - 5.0 * A * s * s + 8.0 * A * s - 4.0 * A
    } else {
        0.0
    }
}

/// Rounded output extent for a scale factor, or an error when it vanishes.
pub fn bicubic_out_extent(input: usize, scale: f64) -> Result<usize> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("scale must be > 0, got {scale}")));
    }
    let out = (input as f64 * scale).round() as usize;
    if out < 1 {
        return Err(Error::Geometry(format!(
            "scale {scale} maps extent {input} to zero"
        )));
    }
    Ok(out)
}

/// Four clamped source taps and their weights for every output index.
fn plan(in_len: usize, out_len: usize) -> Vec<([usize; 4], [Elem; 4])> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for tap in 0..4 {
                let i = base as isize + tap as isize - 1;
                idx[tap] = i.clamp(0, in_len as isize - 1) as usize;
                w[tap] = cubic(t - (tap as f64 - 1.0)) as Elem;
            }
            (idx, w)
        })
        .collect()
}

pub fn bicubic_resize(x: &Tensor, scale: f64) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    let oh = bicubic_out_extent(h, scale)?;
    let ow = bicubic_out_extent(w, scale)?;
    let rows = plan(h, oh);
    let cols = plan(w, ow);

    // Vertical pass into (n, c, oh, w), then horizontal into (n, c, oh, ow).
    let mut tmp = vec![0.0; n * c * oh * w];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut tmp[p * oh * w..(p + 1) * oh * w];
        for (oy, (idx, wt)) in rows.iter().enumerate() {
            let out_row = &mut dst[oy * w..(oy + 1) * w];
            for tap in 0..4 {
                let s = &src[idx[tap] * w..(idx[tap] + 1) * w];
                let wv = wt[tap];
                for (o, sv) in out_row.iter_mut().zip(s) {
                    *o += wv * sv;
                }
            }
        }
    }
    let mut out = Tensor::zeros(n, c, oh, ow);
    for p in 0..n * c {
        let src = &tmp[p * oh * w..(p + 1) * oh * w];
        let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let src_row = &src[oy * w..(oy + 1) * w];
            let out_row = &mut dst[oy * ow..(oy + 1) * ow];
            for (ox, (idx, wt)) in cols.iter().enumerate() {
                out_row[ox] = wt[0] * src_row[idx[0]]
                    + wt[1] * src_row[idx[1]]
                    + wt[2] * src_row[idx[2]]
                    + wt[3] * src_row[idx[3]];
            }
        }
    }
    Ok(out)
}

/// Transpose of the sampling matrix applied to the output gradient.
pub fn bicubic_resize_backward(in_shape: [usize; 4], _scale: f64, gout: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = in_shape;
    let [_, _, oh, ow] = gout.shape();
    let rows = plan(h, oh);
    let cols = plan(w, ow);

    // Reverse horizontal pass into (n, c, oh, w), then reverse vertical.
    let mut tmp = vec![0.0; n * c * oh * w];
    for p in 0..n * c {
        let src = &gout.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut tmp[p * oh * w..(p + 1) * oh * w];
        for oy in 0..oh {
            let g_row = &src[oy * ow..(oy + 1) * ow];
            let t_row = &mut dst[oy * w..(oy + 1) * w];
            for (ox, (idx, wt)) in cols.iter().enumerate() {
                let g = g_row[ox];
                for tap in 0..4 {
                    t_row[idx[tap]] += wt[tap] * g;
                }
            }
        }
    }
    let mut gx = Tensor::zeros(n, c, h, w);
    for p in 0..n * c {
        let src = &tmp[p * oh * w..(p + 1) * oh * w];
        let dst = &mut gx.data_mut()[p * h * w..(p + 1) * h * w];
        for (oy, (idx, wt)) in rows.iter().enumerate() {
            let t_row = &src[oy * w..(oy + 1) * w];
            for tap in 0..4 {
                let d = &mut dst[idx[tap] * w..(idx[tap] + 1) * w];
                let wv = wt[tap];
                for (dv, tv) in d.iter_mut().zip(t_row) {
                    *dv += wv * tv;
                }
            }
        }
    }
    Ok(gx)
}
