//! Stride-1, zero-padded patch extraction: one (C, r, r) patch centered at
//! every spatial position, stacked as a weight bank usable as conv kernels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Extracts the (H*W, C, r, r) patch bank of a batch-1 feature map.
pub fn patch_bank(z: &Tensor, r: usize) -> Result<Tensor> {
    if z.batch() != 1 {
        return Err(Error::Dim(format!(
            "patch extraction expects batch 1, got {}",
            z.batch()
        )));
    }
    if r % 2 == 0 || r == 0 {
        return Err(Error::Config(format!("patch size must be odd, got {r}")));
    }
    let [_, c, h, w] = z.shape();
    let half = r / 2;
    let mut bank = Tensor::zeros(h * w, c, r, r);
    let zdata = z.data();
    let bdata = bank.data_mut();
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            // Valid dx range of the patch row: sx = px + dx - half in [0, w).
            let dx_lo = half.saturating_sub(px);
            let dx_hi = (w + half - px).min(r);
            for ci in 0..c {
                let plane = &zdata[ci * h * w..(ci + 1) * h * w];
                let patch = &mut bdata[(p * c + ci) * r * r..(p * c + ci + 1) * r * r];
                for dy in 0..r {
                    let sy = py as isize + dy as isize - half as isize;
                    if sy < 0 || sy >= h as isize || dx_lo >= dx_hi {
                        continue;
                    }
                    let src = sy as usize * w + px + dx_lo - half;
                    patch[dy * r + dx_lo..dy * r + dx_hi]
                        .copy_from_slice(&plane[src..src + dx_hi - dx_lo]);
                }
            }
        }
    }
    Ok(bank)
}

/// Scatter-adds a bank gradient back onto the source map.
pub fn patch_bank_backward(z_shape: [usize; 4], r: usize, gbank: &Tensor) -> Tensor {
    let [_, c, h, w] = z_shape;
    let half = r / 2;
    let mut gz = Tensor::zeros(1, c, h, w);
    let gdata = gbank.data();
    let zdata = gz.data_mut();
    for py in 0..h {
        for px in 0..w {
            let p = py * w + px;
            let dx_lo = half.saturating_sub(px);
            let dx_hi = (w + half - px).min(r);
            for ci in 0..c {
                let plane = &mut zdata[ci * h * w..(ci + 1) * h * w];
                let patch = &gdata[(p * c + ci) * r * r..(p * c + ci + 1) * r * r];
                for dy in 0..r {
                    let sy = py as isize + dy as isize - half as isize;
                    if sy < 0 || sy >= h as isize || dx_lo >= dx_hi {
                        continue;
                    }
                    let dst = sy as usize * w + px + dx_lo - half;
                    for (d, s) in plane[dst..dst + dx_hi - dx_lo]
                        .iter_mut()
                        .zip(&patch[dy * r + dx_lo..dy * r + dx_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
    gz
}
