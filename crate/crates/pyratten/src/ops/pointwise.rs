//! Elementwise operators, softmax, losses and layout ops (concat / slice /
//! broadcast division).

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "{what} requires identical shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward(x: &Tensor, gout: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(gout.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn scale(x: &Tensor, k: Elem) -> Tensor {
    x.map(|v| k * v)
}

/// Mean absolute difference over all elements, as a scalar tensor.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same_shape(pred, target, "l1_loss")?;
    let sum: Elem = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(Tensor::scalar(sum / pred.len() as Elem))
}

/// d/d pred of the mean absolute difference: sign(pred - target) / count.
pub fn l1_loss_backward(pred: &Tensor, target: &Tensor, gout: Elem) -> Tensor {
    let scale = gout / pred.len() as Elem;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape")
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

fn axis_check(axis: usize) -> Result<()> {
    if axis >= 4 {
        return Err(Error::Config(format!(
            "softmax axis must be in 0..4, got {axis}"
        )));
    }
    Ok(())
}

/// exp(x) with subnormal results flushed to zero. Terms this far below the
/// row maximum carry no weight at working precision, and subnormal operands
/// would slow every downstream kernel by orders of magnitude.
#[inline]
pub(crate) fn softmax_exp(x: Elem) -> Elem {
    #[cfg(not(feature = "f64"))]
    const CUTOFF: Elem = -87.0;
    #[cfg(feature = "f64")]
    const CUTOFF: Elem = -708.0;
    if x < CUTOFF {
        0.0
    } else {
        x.exp()
    }
}

/// Max-subtracted softmax along one axis.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    axis_check(axis)?;
    let shape = x.shape();
    let mut out = Tensor::zeros(shape[0], shape[1], shape[2], shape[3]);
    if axis == 1 {
        // Channel softmax is the hot path (attention scores): three
        // plane-sweeps keep every inner loop unit-stride.
        let [n, c, h, w] = shape;
        let plane = h * w;
        for ni in 0..n {
            let src = &x.data()[ni * c * plane..(ni + 1) * c * plane];
            let dst = &mut out.data_mut()[ni * c * plane..(ni + 1) * c * plane];
            let mut maxes = vec![Elem::NEG_INFINITY; plane];
            for ci in 0..c {
                for (m, &v) in maxes.iter_mut().zip(&src[ci * plane..(ci + 1) * plane]) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
            let mut sums = vec![0.0 as Elem; plane];
            for ci in 0..c {
                let s = &src[ci * plane..(ci + 1) * plane];
                let d = &mut dst[ci * plane..(ci + 1) * plane];
                for j in 0..plane {
                    let e = softmax_exp(s[j] - maxes[j]);
                    d[j] = e;
                    sums[j] += e;
                }
            }
            for ci in 0..c {
                let d = &mut dst[ci * plane..(ci + 1) * plane];
                for j in 0..plane {
                    d[j] /= sums[j];
                }
            }
        }
        return Ok(out);
    }
    let strides = [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ];
    let len = shape[axis];
    let stride = strides[axis];
    let mut others = [0, 1, 2, 3].to_vec();
    others.retain(|&d| d != axis);
    for i0 in 0..shape[others[0]] {
        for i1 in 0..shape[others[1]] {
            for i2 in 0..shape[others[2]] {
                let base = i0 * strides[others[0]] + i1 * strides[others[1]] + i2 * strides[others[2]];
                let mut max = Elem::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(x.data()[base + j * stride]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = softmax_exp(x.data()[base + j * stride] - max);
                    out.data_mut()[base + j * stride] = e;
                    sum += e;
                }
                for j in 0..len {
                    out.data_mut()[base + j * stride] /= sum;
                }
            }
        }
    }
    Ok(out)
}

/// Backward through softmax given its output: a ⊙ (g − Σ a⊙g along axis).
pub fn softmax_backward(out: &Tensor, gout: &Tensor, axis: usize) -> Result<Tensor> {
    axis_check(axis)?;
    let shape = out.shape();
    let mut gin = Tensor::zeros(shape[0], shape[1], shape[2], shape[3]);
    if axis == 1 {
        let [n, c, h, w] = shape;
        let plane = h * w;
        for ni in 0..n {
            let a = &out.data()[ni * c * plane..(ni + 1) * c * plane];
            let g = &gout.data()[ni * c * plane..(ni + 1) * c * plane];
            let dst = &mut gin.data_mut()[ni * c * plane..(ni + 1) * c * plane];
            let mut dots = vec![0.0 as Elem; plane];
            for ci in 0..c {
                let ap = &a[ci * plane..(ci + 1) * plane];
                let gp = &g[ci * plane..(ci + 1) * plane];
                for j in 0..plane {
                    dots[j] += ap[j] * gp[j];
                }
            }
            for ci in 0..c {
                let ap = &a[ci * plane..(ci + 1) * plane];
                let gp = &g[ci * plane..(ci + 1) * plane];
                let d = &mut dst[ci * plane..(ci + 1) * plane];
                for j in 0..plane {
                    d[j] = ap[j] * (gp[j] - dots[j]);
                }
            }
        }
        return Ok(gin);
    }
    let strides = [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ];
    let len = shape[axis];
    let stride = strides[axis];
    let mut others = [0, 1, 2, 3].to_vec();
    others.retain(|&d| d != axis);
    for i0 in 0..shape[others[0]] {
        for i1 in 0..shape[others[1]] {
            for i2 in 0..shape[others[2]] {
                let base = i0 * strides[others[0]] + i1 * strides[others[1]] + i2 * strides[others[2]];
                let mut dot = 0.0;
                for j in 0..len {
                    dot += out.data()[base + j * stride] * gout.data()[base + j * stride];
                }
                for j in 0..len {
                    let idx = base + j * stride;
                    gin.data_mut()[idx] = out.data()[idx] * (gout.data()[idx] - dot);
                }
            }
        }
    }
    Ok(gin)
}

/// Concatenates along the channel axis; all other extents must match.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Dim("concat of zero tensors".into()));
    }
    let [n, _, h, w] = parts[0].shape();
    let mut c_total = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Dim(format!(
                "concat_channels extent mismatch: {:?} vs {:?}",
                parts[0].shape(),
                p.shape()
            )));
        }
        c_total += pc;
    }
    let mut out = Tensor::zeros(n, c_total, h, w);
    let plane = h * w;
    for ni in 0..n {
        let mut c_off = 0;
        for p in parts {
            let pc = p.channels();
            let src = &p.data()[ni * pc * plane..(ni + 1) * pc * plane];
            let dst_start = (ni * c_total + c_off) * plane;
            out.data_mut()[dst_start..dst_start + pc * plane].copy_from_slice(src);
            c_off += pc;
        }
    }
    Ok(out)
}

/// Channel window [offset, offset + len).
pub fn slice_channels(x: &Tensor, offset: usize, len: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if offset + len > c {
        return Err(Error::Dim(format!(
            "channel slice {offset}..{} out of {c}",
            offset + len
        )));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(n, len, h, w);
    for ni in 0..n {
        let src = &x.data()[(ni * c + offset) * plane..(ni * c + offset + len) * plane];
        out.data_mut()[ni * len * plane..(ni + 1) * len * plane].copy_from_slice(src);
    }
    Ok(out)
}

pub fn concat_batch(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Dim("concat of zero tensors".into()));
    }
    let [_, c, h, w] = parts[0].shape();
    let mut n_total = 0;
    for p in parts {
        let [pn, pc, ph, pw] = p.shape();
        if (pc, ph, pw) != (c, h, w) {
            return Err(Error::Dim(format!(
                "concat_batch extent mismatch: {:?} vs {:?}",
                parts[0].shape(),
                p.shape()
            )));
        }
        n_total += pn;
    }
    let mut data = Vec::with_capacity(n_total * c * h * w);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec([n_total, c, h, w], data)
}

pub fn slice_batch(x: &Tensor, offset: usize, len: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if offset + len > n {
        return Err(Error::Dim(format!(
            "batch slice {offset}..{} out of {n}",
            offset + len
        )));
    }
    let per = c * h * w;
    Tensor::from_vec(
        [len, c, h, w],
        x.data()[offset * per..(offset + len) * per].to_vec(),
    )
}

/// Divides every channel of `num` by the single-channel map `den`.
pub fn div_bcast(num: &Tensor, den: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = num.shape();
    if den.shape() != [n, 1, h, w] {
        return Err(Error::Dim(format!(
            "div_bcast denominator must be ({n}, 1, {h}, {w}), got {:?}",
            den.shape()
        )));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(n, c, h, w);
    for ni in 0..n {
        let d = &den.data()[ni * plane..(ni + 1) * plane];
        for ci in 0..c {
            let start = (ni * c + ci) * plane;
            let src = &num.data()[start..start + plane];
            let dst = &mut out.data_mut()[start..start + plane];
            for j in 0..plane {
                dst[j] = src[j] / d[j];
            }
        }
    }
    Ok(out)
}

/// Gradients of [`div_bcast`]: d/dnum = g/den, d/dden = -Σ_c g·num / den².
pub fn div_bcast_backward(
    num: &Tensor,
    den: &Tensor,
    gout: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = num.shape();
    let plane = h * w;
    let mut gnum = Tensor::zeros(n, c, h, w);
    let mut gden = Tensor::zeros(n, 1, h, w);
    for ni in 0..n {
        let d = &den.data()[ni * plane..(ni + 1) * plane];
        let gd = &mut gden.data_mut()[ni * plane..(ni + 1) * plane];
        for ci in 0..c {
            let start = (ni * c + ci) * plane;
            let nv = &num.data()[start..start + plane];
            let g = &gout.data()[start..start + plane];
            let gn = &mut gnum.data_mut()[start..start + plane];
            for j in 0..plane {
                gn[j] = g[j] / d[j];
                gd[j] -= g[j] * nv[j] / (d[j] * d[j]);
            }
        }
    }
    Ok((gnum, gden))
}
