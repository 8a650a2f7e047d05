//! Fused position attention: embedded-Gaussian scores between query and key
//! embeddings, row softmax, then a weighted sum of the value map.
//!
//! Queries come from `f` (1, E, Hq, Wq); keys/values from `g`/`t`
//! (1, E, Hk, Wk) / (1, C, Hk, Wk), which may have different spatial extents
//! than the queries (keys from a downscaled descriptor map).

use super::gemm;
use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Forward pass. Returns the output (1, C, Hq, Wq) and the softmax weight
/// matrix (Q x K rows of query weights), which the backward pass reuses.
pub fn attention_core(f: &Tensor, g: &Tensor, t: &Tensor) -> Result<(Tensor, Vec<Elem>)> {
    let [fb, e, hq, wq] = f.shape();
    let [gb, ge, hk, wk] = g.shape();
    let [tb, c, th, tw] = t.shape();
    if fb != 1 || gb != 1 || tb != 1 {
        return Err(Error::Dim("attention core expects batch-1 inputs".into()));
    }
    if ge != e {
        return Err(Error::Dim(format!(
            "query embedding has {e} channels but keys have {ge}"
        )));
    }
    if (th, tw) != (hk, wk) {
        return Err(Error::Dim(format!(
            "value map is {th}x{tw} but keys are {hk}x{wk}"
        )));
    }
    let q = hq * wq;
    let k = hk * wk;

    // scores[q_, k_] = Σ_e f[e, q_] * g[e, k_]
    let mut scores = vec![0.0 as Elem; q * k];
    gemm(q, e, k, 1.0, f.data(), true, g.data(), false, 0.0, &mut scores);

    // Row softmax, max-subtracted.
    for row in scores.chunks_mut(k) {
        let max = row.iter().cloned().fold(Elem::NEG_INFINITY, Elem::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = super::pointwise::softmax_exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    // y[c_, q_] = Σ_k t[c_, k_] * A[q_, k_]
    let mut out = Tensor::zeros(1, c, hq, wq);
    gemm(c, k, q, 1.0, t.data(), false, &scores, true, 0.0, out.data_mut());
    Ok((out, scores))
}

/// Backward pass given the saved softmax weights.
/// Returns (grad_f, grad_g, grad_t).
pub fn attention_core_backward(
    f: &Tensor,
    g: &Tensor,
    t: &Tensor,
    weights: &[Elem],
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [_, e, hq, wq] = f.shape();
    let [_, _, hk, wk] = g.shape();
    let c = t.channels();
    let q = hq * wq;
    let k = hk * wk;

    // gt[c_, k_] = Σ_q gout[c_, q_] * A[q_, k_]
    let mut gt = Tensor::zeros(1, c, hk, wk);
    gemm(c, q, k, 1.0, gout.data(), false, weights, false, 0.0, gt.data_mut());

    // gA[q_, k_] = Σ_c gout[c_, q_] * t[c_, k_]
    let mut ga = vec![0.0 as Elem; q * k];
    gemm(q, c, k, 1.0, gout.data(), true, t.data(), false, 0.0, &mut ga);

    // Softmax backward per row: gs = A ⊙ (gA − <A, gA>).
    let mut gs = vec![0.0 as Elem; q * k];
    for qi in 0..q {
        let a = &weights[qi * k..(qi + 1) * k];
        let gar = &ga[qi * k..(qi + 1) * k];
        let dot: Elem = a.iter().zip(gar).map(|(x, y)| x * y).sum();
        let out = &mut gs[qi * k..(qi + 1) * k];
        for j in 0..k {
            out[j] = a[j] * (gar[j] - dot);
        }
    }

    // gf[e_, q_] = Σ_k g[e_, k_] * gs[q_, k_]
    let mut gf = Tensor::zeros(1, e, hq, wq);
    gemm(e, k, q, 1.0, g.data(), false, &gs, true, 0.0, gf.data_mut());

    // gg[e_, k_] = Σ_q f[e_, q_] * gs[q_, k_]
    let mut gg = Tensor::zeros(1, e, hk, wk);
    gemm(e, q, k, 1.0, f.data(), false, &gs, false, 0.0, gg.data_mut());

    Ok((gf, gg, gt))
}
