//! First-order reverse-mode tape over the operator set.
//!
//! A [`Graph`] owns every tensor produced while building a straight-line
//! computation; [`Var`] handles index into it. Replaying the recorded ops in
//! reverse accumulates (`+=`) into every input gradient exactly once per
//! recorded use. Ops whose inputs all have `requires_grad == false` are not
//! recorded, so the same builders serve inference.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{ConvSpec, Elem, Tensor};

/// Handle to a tensor stored on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Rec {
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out: Var,
    },
    ConvT2d {
        s: Var,
        w: Var,
        stride: usize,
        pad: usize,
        out: Var,
    },
    Bicubic {
        x: Var,
        scale: f64,
        out: Var,
    },
    Softmax {
        axis: usize,
        out: Var,
        x: Var,
    },
    Relu {
        x: Var,
        out: Var,
    },
    Add {
        a: Var,
        b: Var,
        out: Var,
    },
    Sub {
        a: Var,
        b: Var,
        out: Var,
    },
    Scale {
        x: Var,
        k: Elem,
        out: Var,
    },
    SumAll {
        x: Var,
        out: Var,
    },
    L1 {
        pred: Var,
        target: Var,
        out: Var,
    },
    ConcatCh {
        parts: Vec<Var>,
        out: Var,
    },
    SliceCh {
        x: Var,
        offset: usize,
        len: usize,
        out: Var,
    },
    ConcatBatch {
        parts: Vec<Var>,
        out: Var,
    },
    SliceBatch {
        x: Var,
        offset: usize,
        len: usize,
        out: Var,
    },
    DivBcast {
        num: Var,
        den: Var,
        out: Var,
    },
    PatchBank {
        z: Var,
        r: usize,
        out: Var,
    },
    Attention {
        f: Var,
        g: Var,
        t: Var,
        weights: Vec<Elem>,
        out: Var,
    },
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<Elem>>>,
    requires: Vec<bool>,
    recs: Vec<Rec>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Inserts a tensor; `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires_grad);
        Var(self.values.len() - 1)
    }

    /// Inserts a constant (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Accumulated gradient of `v` after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[Elem]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v` wrapped as a tensor of the same shape.
    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_vec(self.values[v.0].shape(), g.clone()).expect("same shape"))
    }

    fn push(&mut self, value: Tensor, requires: bool) -> Var {
        self.leaf(value, requires)
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    // ---- recorded operators -------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let bias = b.map(|bv| self.values[bv.0].clone());
        let spec = ConvSpec::new(self.values[w.0].clone(), bias, stride, pad)?;
        let out = ops::conv2d(&self.values[x.0], &spec)?;
        let mut ins = vec![x, w];
        if let Some(bv) = b {
            ins.push(bv);
        }
        let requires = self.any_requires(&ins);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Conv2d { x, w, b, stride, pad, out });
        }
        Ok(out)
    }

    pub fn conv_transpose2d(&mut self, s: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let spec = ConvSpec::new(self.values[w.0].clone(), None, stride, pad)?;
        let out = ops::conv_transpose2d(&self.values[s.0], &spec)?;
        let requires = self.any_requires(&[s, w]);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::ConvT2d { s, w, stride, pad, out });
        }
        Ok(out)
    }

    pub fn bicubic_resize(&mut self, x: Var, scale: f64) -> Result<Var> {
        let out = ops::bicubic_resize(&self.values[x.0], scale)?;
        let requires = self.requires[x.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Bicubic { x, scale, out });
        }
        Ok(out)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = ops::softmax(&self.values[x.0], axis)?;
        let requires = self.requires[x.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Softmax { axis, out, x });
        }
        Ok(out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(&self.values[x.0]);
        let requires = self.requires[x.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Relu { x, out });
        }
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(&self.values[a.0], &self.values[b.0])?;
        let requires = self.any_requires(&[a, b]);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Add { a, b, out });
        }
        Ok(out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(&self.values[a.0], &self.values[b.0])?;
        let requires = self.any_requires(&[a, b]);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Sub { a, b, out });
        }
        Ok(out)
    }

    pub fn scale(&mut self, x: Var, k: Elem) -> Var {
        let out = ops::scale(&self.values[x.0], k);
        let requires = self.requires[x.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Scale { x, k, out });
        }
        out
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = ops::sum_all(&self.values[x.0]);
        let requires = self.requires[x.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::SumAll { x, out });
        }
        out
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let out = ops::l1_loss(&self.values[pred.0], &self.values[target.0])?;
        let requires = self.any_requires(&[pred, target]);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::L1 { pred, target, out });
        }
        Ok(out)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| &self.values[v.0]).collect();
        let out = ops::concat_channels(&tensors)?;
        let requires = self.any_requires(parts);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::ConcatCh { parts: parts.to_vec(), out });
        }
        Ok(out)
    }

    pub fn slice_channels(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        let out = ops::slice_channels(&self.values[x.0], offset, len)?;
        let requires = self.requires[x.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::SliceCh { x, offset, len, out });
        }
        Ok(out)
    }

    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| &self.values[v.0]).collect();
        let out = ops::concat_batch(&tensors)?;
        let requires = self.any_requires(parts);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::ConcatBatch { parts: parts.to_vec(), out });
        }
        Ok(out)
    }

    pub fn slice_batch(&mut self, x: Var, offset: usize, len: usize) -> Result<Var> {
        let out = ops::slice_batch(&self.values[x.0], offset, len)?;
        let requires = self.requires[x.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::SliceBatch { x, offset, len, out });
        }
        Ok(out)
    }

    pub fn div_bcast(&mut self, num: Var, den: Var) -> Result<Var> {
        let out = ops::div_bcast(&self.values[num.0], &self.values[den.0])?;
        let requires = self.any_requires(&[num, den]);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::DivBcast { num, den, out });
        }
        Ok(out)
    }

    pub fn patch_bank(&mut self, z: Var, r: usize) -> Result<Var> {
        let out = ops::patch_bank(&self.values[z.0], r)?;
        let requires = self.requires[z.0];
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::PatchBank { z, r, out });
        }
        Ok(out)
    }

    pub fn attention_core(&mut self, f: Var, g: Var, t: Var) -> Result<Var> {
        let (out, weights) =
            ops::attention_core(&self.values[f.0], &self.values[g.0], &self.values[t.0])?;
        let requires = self.any_requires(&[f, g, t]);
        let out = self.push(out, requires);
        if requires {
            self.recs.push(Rec::Attention { f, g, t, weights, out });
        }
        Ok(out)
    }

    // ---- backward -----------------------------------------------------------

    fn accumulate(&mut self, v: Var, delta: &[Elem]) {
        // A var without requires_grad is a constant leaf or the output of an
        // unrecorded op; its gradient is never read.
        if !self.requires[v.0] {
            return;
        }
        let len = self.values[v.0].len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        for (g, d) in slot.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Runs reverse accumulation from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.values[root.0].shape() != [1, 1, 1, 1] {
            return Err(Error::Dim(format!(
                "backward root must be a scalar tensor, got {:?}",
                self.values[root.0].shape()
            )));
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..self.recs.len()).rev() {
            // The output grad is final once we reach the rec that produced it
            // (consumers sit later on the tape and were already replayed).
            let out_var = match &self.recs[i] {
                Rec::Conv2d { out, .. }
                | Rec::ConvT2d { out, .. }
                | Rec::Bicubic { out, .. }
                | Rec::Softmax { out, .. }
                | Rec::Relu { out, .. }
                | Rec::Add { out, .. }
                | Rec::Sub { out, .. }
                | Rec::Scale { out, .. }
                | Rec::SumAll { out, .. }
                | Rec::L1 { out, .. }
                | Rec::ConcatCh { out, .. }
                | Rec::SliceCh { out, .. }
                | Rec::ConcatBatch { out, .. }
                | Rec::SliceBatch { out, .. }
                | Rec::DivBcast { out, .. }
                | Rec::PatchBank { out, .. }
                | Rec::Attention { out, .. } => *out,
            };
            let Some(gout_vec) = self.grads[out_var.0].clone() else {
                continue; // not on the path to the root
            };
            let gout = Tensor::from_vec(self.values[out_var.0].shape(), gout_vec)
                .expect("grad shape matches value");
            self.replay(i, &gout)?;
        }
        Ok(())
    }

    fn replay(&mut self, rec_index: usize, gout: &Tensor) -> Result<()> {
        // Recs are taken apart by value where cheap; tensors are cloned out of
        // `values` only when the kernel needs them whole.
        match &self.recs[rec_index] {
            &Rec::Conv2d { x, w, b, stride, pad, .. } => {
                let spec = ConvSpec::new(
                    self.values[w.0].clone(),
                    b.map(|bv| self.values[bv.0].clone()),
                    stride,
                    pad,
                )?;
                let need_gx = self.requires[x.0];
                let need_gw = self.requires[w.0] || b.is_some_and(|bv| self.requires[bv.0]);
                let (gx, gw, gb) =
                    ops::conv2d_backward(&self.values[x.0], &spec, gout, need_gx, need_gw)?;
                if let Some(gx) = gx {
                    self.accumulate(x, gx.data());
                }
                if let (Some(gw), true) = (gw, self.requires[w.0]) {
                    self.accumulate(w, gw.data());
                }
                if let (Some(gb), Some(bv)) = (gb, b) {
                    if self.requires[bv.0] {
                        self.accumulate(bv, gb.data());
                    }
                }
            }
            &Rec::ConvT2d { s, w, stride, pad, .. } => {
                let spec = ConvSpec::new(self.values[w.0].clone(), None, stride, pad)?;
                let need_gs = self.requires[s.0];
                let need_gw = self.requires[w.0];
                let (gs, gw) =
                    ops::conv_transpose2d_backward(&self.values[s.0], &spec, gout, need_gs, need_gw)?;
                if let Some(gs) = gs {
                    self.accumulate(s, gs.data());
                }
                if let Some(gw) = gw {
                    self.accumulate(w, gw.data());
                }
            }
            &Rec::Bicubic { x, scale, .. } => {
                let gx = ops::bicubic_resize_backward(self.values[x.0].shape(), scale, gout)?;
                self.accumulate(x, gx.data());
            }
            &Rec::Softmax { axis, out, x } => {
                let gx = ops::softmax_backward(&self.values[out.0], gout, axis)?;
                self.accumulate(x, gx.data());
            }
            &Rec::Relu { x, .. } => {
                let gx = ops::relu_backward(&self.values[x.0], gout);
                self.accumulate(x, gx.data());
            }
            &Rec::Add { a, b, .. } => {
                self.accumulate(a, gout.data());
                self.accumulate(b, gout.data());
            }
            &Rec::Sub { a, b, .. } => {
                self.accumulate(a, gout.data());
                let neg: Vec<Elem> = gout.data().iter().map(|&g| -g).collect();
                self.accumulate(b, &neg);
            }
            &Rec::Scale { x, k, .. } => {
                let gx: Vec<Elem> = gout.data().iter().map(|&g| k * g).collect();
                self.accumulate(x, &gx);
            }
            &Rec::SumAll { x, .. } => {
                let g = gout.data()[0];
                let gx = vec![g; self.values[x.0].len()];
                self.accumulate(x, &gx);
            }
            &Rec::L1 { pred, target, .. } => {
                let g = gout.data()[0];
                if self.requires[pred.0] {
                    let gp =
                        ops::l1_loss_backward(&self.values[pred.0], &self.values[target.0], g);
                    self.accumulate(pred, gp.data());
                }
                if self.requires[target.0] {
                    let gt =
                        ops::l1_loss_backward(&self.values[target.0], &self.values[pred.0], g);
                    self.accumulate(target, gt.data());
                }
            }
            Rec::ConcatCh { parts, .. } => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let c = self.values[p.0].channels();
                    let gp = ops::slice_channels(gout, offset, c)?;
                    self.accumulate(p, gp.data());
                    offset += c;
                }
            }
            &Rec::SliceCh { x, offset, len, .. } => {
                // Zero-pad the slice gradient back into place.
                let [n, c, h, w] = self.values[x.0].shape();
                let mut gx = vec![0.0; n * c * h * w];
                let plane = h * w;
                for ni in 0..n {
                    let dst = (ni * c + offset) * plane;
                    let src = ni * len * plane;
                    gx[dst..dst + len * plane]
                        .copy_from_slice(&gout.data()[src..src + len * plane]);
                }
                self.accumulate(x, &gx);
            }
            Rec::ConcatBatch { parts, .. } => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let n = self.values[p.0].batch();
                    let gp = ops::slice_batch(gout, offset, n)?;
                    self.accumulate(p, gp.data());
                    offset += n;
                }
            }
            &Rec::SliceBatch { x, offset, len, .. } => {
                let [n, c, h, w] = self.values[x.0].shape();
                let per = c * h * w;
                let mut gx = vec![0.0; n * per];
                gx[offset * per..(offset + len) * per].copy_from_slice(gout.data());
                self.accumulate(x, &gx);
            }
            &Rec::DivBcast { num, den, .. } => {
                let (gn, gd) =
                    ops::div_bcast_backward(&self.values[num.0], &self.values[den.0], gout)?;
                if self.requires[num.0] {
                    self.accumulate(num, gn.data());
                }
                if self.requires[den.0] {
                    self.accumulate(den, gd.data());
                }
            }
            &Rec::PatchBank { z, r, .. } => {
                let gz = ops::patch_bank_backward(self.values[z.0].shape(), r, gout);
                self.accumulate(z, gz.data());
            }
            Rec::Attention { f, g, t, weights, .. } => {
                let (f, g, t) = (*f, *g, *t);
                let (gf, gg, gt) = {
                    let weights = weights.clone();
                    ops::attention_core_backward(
                        &self.values[f.0],
                        &self.values[g.0],
                        &self.values[t.0],
                        &weights,
                        gout,
                    )?
                };
                if self.requires[f.0] {
                    self.accumulate(f, gf.data());
                }
                if self.requires[g.0] {
                    self.accumulate(g, gg.data());
                }
                if self.requires[t.0] {
                    self.accumulate(t, gt.data());
                }
            }
        }
        Ok(())
    }
}
