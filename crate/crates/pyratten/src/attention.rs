//! Non-local attention operators: classic single-scale attention, attention
//! against one downscaled descriptor map, and pyramid attention with
//! block matching over a multi-scale feature pyramid.
//!
//! Pyramid attention follows the convolutional recipe: match scores are a
//! convolution of the embedded query map against r×r patches extracted from
//! each pyramid level's key embedding, a joint softmax runs across the union
//! of all levels' positions, and aggregation is a transposed convolution with
//! the corresponding value patches, normalized by the scattered weight mass.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops;
use crate::rng::Rng;
use crate::tensor::{ConvSpec, Elem, Tensor};
use serde::{Deserialize, Serialize};

/// Attention hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidAttentionConfig {
    /// Pyramid scale factors, each in (0, 1].
    pub scales: Vec<f64>,
    /// Odd side length of the matching neighborhood.
    pub patch_size: usize,
    /// Width of the query/key embeddings.
    pub embed_channels: usize,
    /// Width of the feature maps entering the module.
    pub feature_channels: usize,
}

impl Default for PyramidAttentionConfig {
    fn default() -> Self {
        PyramidAttentionConfig {
            scales: vec![1.0, 0.9, 0.8, 0.7, 0.6],
            patch_size: 3,
            embed_channels: 32,
            feature_channels: 64,
        }
    }
}

impl PyramidAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("attention needs at least one scale".into()));
        }
        for &s in &self.scales {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Config(format!(
                    "pyramid scales must lie in (0, 1], got {s}"
                )));
            }
        }
        if self.patch_size % 2 == 0 || self.patch_size == 0 {
            return Err(Error::Config(format!(
                "patch size must be odd and positive, got {}",
                self.patch_size
            )));
        }
        if self.embed_channels == 0 || self.embed_channels > self.feature_channels {
            return Err(Error::Config(format!(
                "embed channels must be in 1..={}, got {}",
                self.feature_channels, self.embed_channels
            )));
        }
        Ok(())
    }
}

/// Learned projections: 1×1 query/key embeddings and the value transform.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_f: ConvSpec,
    pub w_g: ConvSpec,
    pub w_theta: ConvSpec,
}

impl AttentionParams {
    /// He-uniform initialization matching the config's widths; the query/key
    /// embeddings are damped so the r²·E-term match scores start near unit
    /// scale instead of saturating the softmax.
    pub fn init(cfg: &PyramidAttentionConfig, rng: &mut Rng) -> Self {
        let he = |c_out: usize, c_in: usize, gain: f64, rng: &mut Rng| {
            let limit = gain * (6.0 / c_in as f64).sqrt();
            let data = (0..c_out * c_in)
                .map(|_| rng.range(-limit, limit) as Elem)
                .collect();
            ConvSpec::new(
                Tensor::from_vec([c_out, c_in, 1, 1], data).expect("shape"),
                Some(Tensor::zeros(1, c_out, 1, 1)),
                1,
                0,
            )
            .expect("valid spec")
        };
        let (c, e) = (cfg.feature_channels, cfg.embed_channels);
        let gain = crate::network::embedding_gain(cfg);
        AttentionParams {
            w_f: he(e, c, gain, rng),
            w_g: he(e, c, gain, rng),
            w_theta: he(c, c, 1.0, rng),
        }
    }

    pub fn validate(&self, cfg: &PyramidAttentionConfig) -> Result<()> {
        let (c, e) = (cfg.feature_channels, cfg.embed_channels);
        let check = |spec: &ConvSpec, c_out: usize, c_in: usize, name: &str| {
            if spec.c_out() != c_out || spec.c_in() != c_in {
                return Err(Error::Dim(format!(
                    "{name} must map {c_in} -> {c_out} channels, got {} -> {}",
                    spec.c_in(),
                    spec.c_out()
                )));
            }
            Ok(())
        };
        check(&self.w_f, e, c, "w_f")?;
        check(&self.w_g, e, c, "w_g")?;
        check(&self.w_theta, c, c, "w_theta")
    }
}

/// Patch bank with provenance: one (C, r, r) patch per spatial position of a
/// pyramid level, usable directly as convolution kernels.
#[derive(Clone, Debug)]
pub struct PatchStack {
    /// (P, C, r, r) weight bank, P = level height × level width.
    pub bank: Tensor,
    /// Index of the source pyramid level.
    pub level: usize,
    /// Source (row, col) of each patch center, in level coordinates.
    pub origins: Vec<(usize, usize)>,
}

/// Stride-1, zero-padded extraction of one patch per position.
pub fn extract_patches(z: &Tensor, r: usize) -> Result<PatchStack> {
    let bank = ops::patch_bank(z, r)?;
    let [_, _, h, w] = z.shape();
    let origins = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    Ok(PatchStack {
        bank,
        level: 0,
        origins,
    })
}

/// One descriptor map per scale; scale 1.0 returns the input untouched.
pub fn build_pyramid(x: &Tensor, scales: &[f64]) -> Result<Vec<Tensor>> {
    scales
        .iter()
        .map(|&s| {
            if s == 1.0 {
                Ok(x.clone())
            } else {
                ops::bicubic_resize(x, s)
            }
        })
        .collect()
}

/// Attention parameter handles on a graph.
pub struct GraphAttentionParams {
    pub w_f: Var,
    pub b_f: Option<Var>,
    pub w_g: Var,
    pub b_g: Option<Var>,
    pub w_theta: Var,
    pub b_theta: Option<Var>,
}

/// Inserts the projection weights as graph leaves.
pub fn params_into_graph(
    g: &mut Graph,
    params: &AttentionParams,
    requires_grad: bool,
) -> GraphAttentionParams {
    let mut leaf = |spec: &ConvSpec| {
        let w = g.leaf(spec.weight.clone(), requires_grad);
        let b = spec.bias.as_ref().map(|b| g.leaf(b.clone(), requires_grad));
        (w, b)
    };
    let (w_f, b_f) = leaf(&params.w_f);
    let (w_g, b_g) = leaf(&params.w_g);
    let (w_theta, b_theta) = leaf(&params.w_theta);
    GraphAttentionParams {
        w_f,
        b_f,
        w_g,
        b_g,
        w_theta,
        b_theta,
    }
}

fn check_feature_channels(g: &Graph, x: Var, p: &GraphAttentionParams) -> Result<()> {
    let have = g.value(x).channels();
    let want = g.value(p.w_f).shape()[1];
    if have != want {
        return Err(Error::Dim(format!(
            "attention input has {have} channels but the embeddings expect {want}"
        )));
    }
    Ok(())
}

/// Classic non-local attention: keys and values from the input itself.
pub fn nonlocal_attention_graph(g: &mut Graph, x: Var, p: &GraphAttentionParams) -> Result<Var> {
    scale_agnostic_attention_graph(g, x, 1.0, p)
}

/// Attention against one downscaled descriptor map (keys/values from
/// `bicubic(x, s)`, queries from `x`).
pub fn scale_agnostic_attention_graph(
    g: &mut Graph,
    x: Var,
    s: f64,
    p: &GraphAttentionParams,
) -> Result<Var> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Config(format!("scale must lie in (0, 1], got {s}")));
    }
    check_feature_channels(g, x, p)?;
    let n = g.value(x).batch();
    let z = g.bicubic_resize(x, s)?;
    let f = g.conv2d(x, p.w_f, p.b_f, 1, 0)?;
    let keys = g.conv2d(z, p.w_g, p.b_g, 1, 0)?;
    let values = g.conv2d(z, p.w_theta, p.b_theta, 1, 0)?;
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let fi = g.slice_batch(f, i, 1)?;
        let ki = g.slice_batch(keys, i, 1)?;
        let vi = g.slice_batch(values, i, 1)?;
        items.push(g.attention_core(fi, ki, vi)?);
    }
    if items.len() == 1 {
        Ok(items[0])
    } else {
        g.concat_batch(&items)
    }
}

/// Pyramid attention: block-matched scores against every pyramid level, one
/// joint softmax over the union of positions, patch aggregation by transposed
/// convolution with weight-mass normalization.
pub fn pyramid_attention_graph(
    g: &mut Graph,
    x: Var,
    cfg: &PyramidAttentionConfig,
    p: &GraphAttentionParams,
) -> Result<Var> {
    cfg.validate()?;
    check_feature_channels(g, x, p)?;
    let n = g.value(x).batch();
    let r = cfg.patch_size;
    let pad = r / 2;

    let f = g.conv2d(x, p.w_f, p.b_f, 1, 0)?;
    let mut level_keys = Vec::new();
    let mut level_values = Vec::new();
    let mut level_hw = Vec::new();
    for &s in &cfg.scales {
        let z = if s == 1.0 { x } else { g.bicubic_resize(x, s)? };
        let [_, _, h, w] = g.value(z).shape();
        level_keys.push(g.conv2d(z, p.w_g, p.b_g, 1, 0)?);
        level_values.push(g.conv2d(z, p.w_theta, p.b_theta, 1, 0)?);
        level_hw.push((h, w));
    }

    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let fi = g.slice_batch(f, i, 1)?;
        // One patch bank per level, stacked along the patch axis so matching,
        // aggregation and the weight-mass map each run as a single kernel and
        // the softmax over the stacked channel axis is the joint softmax
        // across the whole pyramid.
        let mut kbanks = Vec::with_capacity(cfg.scales.len());
        let mut vbanks = Vec::with_capacity(cfg.scales.len());
        let mut obanks = Vec::with_capacity(cfg.scales.len());
        for (li, keys) in level_keys.iter().enumerate() {
            let ki = g.slice_batch(*keys, i, 1)?;
            kbanks.push(g.patch_bank(ki, r)?);
            let vi = g.slice_batch(level_values[li], i, 1)?;
            vbanks.push(g.patch_bank(vi, r)?);
            let (h, w) = level_hw[li];
            let ones = g.constant(Tensor::full([1, 1, h, w], 1.0));
            obanks.push(g.patch_bank(ones, r)?);
        }
        let kbank = if kbanks.len() == 1 { kbanks[0] } else { g.concat_batch(&kbanks)? };
        let vbank = if vbanks.len() == 1 { vbanks[0] } else { g.concat_batch(&vbanks)? };
        let obank = if obanks.len() == 1 { obanks[0] } else { g.concat_batch(&obanks)? };

        let scores = g.conv2d(fi, kbank, None, 1, pad)?;
        let weights = g.softmax(scores, 1)?;
        // Transposed convolution scatters each query's matched value patches
        // around it; dividing by the scattered weight mass keeps overlapping
        // contributions a convex combination.
        let y = g.conv_transpose2d(weights, vbank, 1, pad)?;
        let mass = g.conv_transpose2d(weights, obank, 1, pad)?;
        items.push(g.div_bcast(y, mass)?);
    }
    if items.len() == 1 {
        Ok(items[0])
    } else {
        g.concat_batch(&items)
    }
}

fn run_pure<F>(x: &Tensor, params: &AttentionParams, build: F) -> Result<Tensor>
where
    F: FnOnce(&mut Graph, Var, &GraphAttentionParams) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let p = params_into_graph(&mut g, params, false);
    let y = build(&mut g, xv, &p)?;
    Ok(g.value(y).clone())
}

/// Classic non-local attention (inference entry point).
pub fn nonlocal_attention(x: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    run_pure(x, params, |g, xv, p| nonlocal_attention_graph(g, xv, p))
}

/// Scale-agnostic attention (inference entry point).
pub fn scale_agnostic_attention(x: &Tensor, s: f64, params: &AttentionParams) -> Result<Tensor> {
    run_pure(x, params, |g, xv, p| {
        scale_agnostic_attention_graph(g, xv, s, p)
    })
}

/// Pyramid attention (inference entry point).
pub fn pyramid_attention(
    x: &Tensor,
    cfg: &PyramidAttentionConfig,
    params: &AttentionParams,
) -> Result<Tensor> {
    run_pure(x, params, |g, xv, p| {
        pyramid_attention_graph(g, xv, cfg, p)
    })
}

/// Post-softmax weights of one query position, split per pyramid level.
#[derive(Clone, Debug)]
pub struct LevelScores {
    pub scale: f64,
    pub height: usize,
    pub width: usize,
    /// Row-major weights over the level's positions.
    pub weights: Vec<Elem>,
}

#[derive(Clone, Debug)]
pub struct AttentionScores {
    pub levels: Vec<LevelScores>,
}

impl AttentionScores {
    /// Sum over every level and position; 1 up to rounding.
    pub fn total(&self) -> Elem {
        self.levels
            .iter()
            .map(|l| l.weights.iter().sum::<Elem>())
            .sum()
    }
}

/// Computes the attention distribution of a single query position across the
/// whole pyramid.
pub fn attention_scores(
    x: &Tensor,
    cfg: &PyramidAttentionConfig,
    params: &AttentionParams,
    query: (usize, usize),
) -> Result<AttentionScores> {
    cfg.validate()?;
    params.validate(cfg)?;
    if x.batch() != 1 {
        return Err(Error::Dim(format!(
            "attention_scores expects a single image, got batch {}",
            x.batch()
        )));
    }
    if x.channels() != cfg.feature_channels {
        return Err(Error::Dim(format!(
            "input has {} channels but the config expects {}",
            x.channels(),
            cfg.feature_channels
        )));
    }
    let [_, _, h, w] = x.shape();
    let (qy, qx) = query;
    if qy >= h || qx >= w {
        return Err(Error::Config(format!(
            "query position ({qy}, {qx}) outside {h}x{w} feature map"
        )));
    }
    let r = cfg.patch_size;
    let half = (r / 2) as isize;
    let e = cfg.embed_channels;

    let f = ops::conv2d(x, &params.w_f)?;
    // Zero-padded query patch of the embedded map.
    let mut fpatch = vec![0.0 as Elem; e * r * r];
    for ci in 0..e {
        for dy in 0..r {
            let sy = qy as isize + dy as isize - half;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for dx in 0..r {
                let sx = qx as isize + dx as isize - half;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                fpatch[(ci * r + dy) * r + dx] = f.at(0, ci, sy as usize, sx as usize);
            }
        }
    }

    // Raw scores per level: dot of the query patch with every key patch.
    let mut raw: Vec<(f64, usize, usize, Vec<Elem>)> = Vec::new();
    for (li, &s) in cfg.scales.iter().enumerate() {
        let z = if s == 1.0 {
            x.clone()
        } else {
            ops::bicubic_resize(x, s)?
        };
        let keys = ops::conv2d(&z, &params.w_g)?;
        let mut stack = extract_patches(&keys, r)?;
        stack.level = li;
        let [p_count, _, _, _] = stack.bank.shape();
        let per = e * r * r;
        let mut scores = Vec::with_capacity(p_count);
        for pi in 0..p_count {
            let patch = &stack.bank.data()[pi * per..(pi + 1) * per];
            scores.push(patch.iter().zip(&fpatch).map(|(a, b)| a * b).sum());
        }
        let [_, _, zh, zw] = z.shape();
        raw.push((s, zh, zw, scores));
    }

    // Joint softmax across the union of all levels' positions.
    let max = raw
        .iter()
        .flat_map(|(_, _, _, v)| v.iter().cloned())
        .fold(Elem::NEG_INFINITY, Elem::max);
    let mut total = 0.0;
    for (_, _, _, v) in raw.iter_mut() {
        for s in v.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
    }
    let levels = raw
        .into_iter()
        .map(|(scale, height, width, mut weights)| {
            for v in weights.iter_mut() {
                *v /= total;
            }
            LevelScores {
                scale,
                height,
                width,
                weights,
            }
        })
        .collect();
    Ok(AttentionScores { levels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal() as Elem).collect()).unwrap()
    }

    fn tiny_cfg(scales: &[f64], r: usize, c: usize, e: usize) -> PyramidAttentionConfig {
        PyramidAttentionConfig {
            scales: scales.to_vec(),
            patch_size: r,
            embed_channels: e,
            feature_channels: c,
        }
    }

    /// Identity value transform (no bias) for symmetry tests.
    fn identity_theta(params: &mut AttentionParams, c: usize) {
        let mut eye = Tensor::zeros(c, c, 1, 1);
        for i in 0..c {
            eye.set(i, i, 0, 0, 1.0);
        }
        params.w_theta = ConvSpec::new(eye, Some(Tensor::zeros(1, c, 1, 1)), 1, 0).unwrap();
    }

    #[test]
    fn config_default_matches_published_hyperparameters() {
        let cfg = PyramidAttentionConfig::default();
        assert_eq!(cfg.scales, vec![1.0, 0.9, 0.8, 0.7, 0.6]);
        assert_eq!(cfg.patch_size, 3);
        assert_eq!(cfg.embed_channels, 32);
        assert_eq!(cfg.feature_channels, 64);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = tiny_cfg(&[1.0], 3, 8, 4);
        cfg.scales = vec![];
        assert!(cfg.validate().is_err());
        cfg = tiny_cfg(&[1.5], 3, 8, 4);
        assert!(cfg.validate().is_err());
        cfg = tiny_cfg(&[1.0], 2, 8, 4);
        assert!(cfg.validate().is_err());
        cfg = tiny_cfg(&[1.0], 3, 8, 16);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn build_pyramid_extents_match_rounding() {
        let x = Tensor::zeros(1, 64, 40, 40);
        let levels = build_pyramid(&x, &[1.0, 0.9, 0.8, 0.7, 0.6]).unwrap();
        let extents: Vec<usize> = levels.iter().map(|l| l.height()).collect();
        assert_eq!(extents, vec![40, 36, 32, 28, 24]);
        for l in &levels {
            assert_eq!(l.height(), l.width());
        }
    }

    #[test]
    fn build_pyramid_single_scale_returns_the_input() {
        let mut rng = Rng::seed_from(1);
        let x = rand_tensor([1, 3, 5, 5], &mut rng);
        let levels = build_pyramid(&x, &[1.0]).unwrap();
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].data(), x.data());
    }

    #[test]
    fn build_pyramid_keeps_constants_constant() {
        let x = Tensor::full([1, 2, 10, 10], 0.75);
        for level in build_pyramid(&x, &[1.0, 0.9, 0.8, 0.7, 0.6]).unwrap() {
            for &v in level.data() {
                assert!((v - 0.75).abs() < 1e-5);
            }
        }
    }

    /// Brute-force Eq.-1 reference: explicit double loop over positions.
    fn nonlocal_reference(x: &Tensor, params: &AttentionParams) -> Tensor {
        let f = ops::conv2d(x, &params.w_f).unwrap();
        let g = ops::conv2d(x, &params.w_g).unwrap();
        let t = ops::conv2d(x, &params.w_theta).unwrap();
        let [_, e, h, w] = f.shape();
        let c = t.channels();
        let hw = h * w;
        let mut out = Tensor::zeros(1, c, h, w);
        for qi in 0..hw {
            let mut scores = vec![0.0 as Elem; hw];
            for (ki, s) in scores.iter_mut().enumerate() {
                for ei in 0..e {
                    *s += f.data()[ei * hw + qi] * g.data()[ei * hw + ki];
                }
            }
            let max = scores.iter().cloned().fold(Elem::NEG_INFINITY, Elem::max);
            let exps: Vec<Elem> = scores.iter().map(|&v| (v - max).exp()).collect();
            let z: Elem = exps.iter().sum();
            for ci in 0..c {
                let mut acc = 0.0;
                for ki in 0..hw {
                    acc += exps[ki] / z * t.data()[ci * hw + ki];
                }
                out.data_mut()[ci * hw + qi] = acc;
            }
        }
        out
    }

    #[test]
    fn nonlocal_matches_double_loop_reference() {
        let mut rng = Rng::seed_from(3);
        let cfg = tiny_cfg(&[1.0], 1, 4, 4);
        let params = AttentionParams::init(&cfg, &mut rng);
        let x = rand_tensor([1, 4, 4, 4], &mut rng);
        let got = nonlocal_attention(&x, &params).unwrap();
        let want = nonlocal_reference(&x, &params);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn nonlocal_constant_input_with_identity_theta_is_identity() {
        let mut rng = Rng::seed_from(4);
        let cfg = tiny_cfg(&[1.0], 1, 3, 2);
        let mut params = AttentionParams::init(&cfg, &mut rng);
        identity_theta(&mut params, 3);
        let x = Tensor::full([1, 3, 5, 5], 1.25);
        let y = nonlocal_attention(&x, &params).unwrap();
        for &v in y.data() {
            assert!((v - 1.25).abs() < 1e-5);
        }
    }

    #[test]
    fn nonlocal_zero_embeddings_average_theta() {
        let mut rng = Rng::seed_from(5);
        let cfg = tiny_cfg(&[1.0], 1, 3, 2);
        let mut params = AttentionParams::init(&cfg, &mut rng);
        params.w_f = ConvSpec::new(Tensor::zeros(2, 3, 1, 1), None, 1, 0).unwrap();
        params.w_g = ConvSpec::new(Tensor::zeros(2, 3, 1, 1), None, 1, 0).unwrap();
        let x = rand_tensor([1, 3, 4, 4], &mut rng);
        let y = nonlocal_attention(&x, &params).unwrap();
        let theta = ops::conv2d(&x, &params.w_theta).unwrap();
        for ci in 0..3 {
            let mean: Elem = theta.data()[ci * 16..(ci + 1) * 16].iter().sum::<Elem>() / 16.0;
            for qi in 0..16 {
                assert!((y.data()[ci * 16 + qi] - mean).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn nonlocal_channel_mismatch_errors() {
        let mut rng = Rng::seed_from(6);
        let cfg = tiny_cfg(&[1.0], 1, 4, 2);
        let params = AttentionParams::init(&cfg, &mut rng);
        let x = Tensor::zeros(1, 3, 4, 4);
        assert!(matches!(
            nonlocal_attention(&x, &params),
            Err(Error::Dim(_))
        ));
    }

    /// Brute-force Eq.-3 reference over the descriptor map.
    fn scale_agnostic_reference(x: &Tensor, s: f64, params: &AttentionParams) -> Tensor {
        let z = if s == 1.0 {
            x.clone()
        } else {
            ops::bicubic_resize(x, s).unwrap()
        };
        let f = ops::conv2d(x, &params.w_f).unwrap();
        let g = ops::conv2d(&z, &params.w_g).unwrap();
        let t = ops::conv2d(&z, &params.w_theta).unwrap();
        let [_, e, h, w] = f.shape();
        let [_, _, zh, zw] = g.shape();
        let (q, k) = (h * w, zh * zw);
        let c = t.channels();
        let mut out = Tensor::zeros(1, c, h, w);
        for qi in 0..q {
            let mut scores = vec![0.0 as Elem; k];
            for (ki, sc) in scores.iter_mut().enumerate() {
                for ei in 0..e {
                    *sc += f.data()[ei * q + qi] * g.data()[ei * k + ki];
                }
            }
            let max = scores.iter().cloned().fold(Elem::NEG_INFINITY, Elem::max);
            let exps: Vec<Elem> = scores.iter().map(|&v| (v - max).exp()).collect();
            let zsum: Elem = exps.iter().sum();
            for ci in 0..c {
                let mut acc = 0.0;
                for ki in 0..k {
                    acc += exps[ki] / zsum * t.data()[ci * k + ki];
                }
                out.data_mut()[ci * q + qi] = acc;
            }
        }
        out
    }

    #[test]
    fn scale_agnostic_at_one_equals_nonlocal() {
        let mut rng = Rng::seed_from(7);
        let cfg = tiny_cfg(&[1.0], 1, 4, 3);
        let params = AttentionParams::init(&cfg, &mut rng);
        let x = rand_tensor([1, 4, 5, 5], &mut rng);
        let a = scale_agnostic_attention(&x, 1.0, &params).unwrap();
        let b = nonlocal_attention(&x, &params).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn scale_agnostic_matches_reference_at_half_scale() {
        let mut rng = Rng::seed_from(8);
        let cfg = tiny_cfg(&[1.0], 1, 4, 3);
        let params = AttentionParams::init(&cfg, &mut rng);
        let x = rand_tensor([1, 4, 8, 8], &mut rng);
        let got = scale_agnostic_attention(&x, 0.5, &params).unwrap();
        let want = scale_agnostic_reference(&x, 0.5, &params);
        assert_eq!(got.shape(), x.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn scale_agnostic_constant_symmetry() {
        let mut rng = Rng::seed_from(9);
        let cfg = tiny_cfg(&[1.0], 1, 2, 2);
        let mut params = AttentionParams::init(&cfg, &mut rng);
        identity_theta(&mut params, 2);
        let x = Tensor::full([1, 2, 6, 6], -0.5);
        let y = scale_agnostic_attention(&x, 0.6, &params).unwrap();
        for &v in y.data() {
            assert!((v + 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn extract_patches_requires_batch_one() {
        let z = Tensor::zeros(2, 1, 3, 3);
        assert!(extract_patches(&z, 3).is_err());
    }

    #[test]
    fn extract_patches_provenance() {
        let z = Tensor::zeros(1, 2, 3, 4);
        let stack = extract_patches(&z, 3).unwrap();
        assert_eq!(stack.origins.len(), 12);
        assert_eq!(stack.origins[0], (0, 0));
        assert_eq!(stack.origins[11], (2, 3));
    }
}
