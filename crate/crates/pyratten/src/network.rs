//! Residual restoration network: head convolution, a trunk of residual
//! blocks without normalization layers, pyramid attention at configurable
//! positions, a body-end convolution, a global feature skip and a tail
//! convolution back to image space.

use crate::attention::{
    pyramid_attention_graph, AttentionParams, GraphAttentionParams, PyramidAttentionConfig,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops;
use crate::rng::Rng;
use crate::tensor::{ConvSpec, Elem, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Architecture description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub feature_channels: usize,
    pub num_blocks: usize,
    /// Pyramid attention runs after each listed block; 0 means before the
    /// first block, `num_blocks` after the last.
    pub attention_positions: Vec<usize>,
    pub attention: PyramidAttentionConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            in_channels: 3,
            feature_channels: 64,
            num_blocks: 80,
            attention_positions: vec![40],
            attention: PyramidAttentionConfig::default(),
        }
    }
}

impl NetworkConfig {
    /// The 8-block small variant.
    pub fn small() -> Self {
        NetworkConfig {
            num_blocks: 8,
            attention_positions: vec![4],
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks < 1 {
            return Err(Error::Config("num_blocks must be >= 1".into()));
        }
        if self.in_channels < 1 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        for &p in &self.attention_positions {
            if p > self.num_blocks {
                return Err(Error::Config(format!(
                    "attention position {p} outside 0..={}",
                    self.num_blocks
                )));
            }
        }
        if self.attention.feature_channels != self.feature_channels {
            return Err(Error::Config(format!(
                "attention feature_channels {} must equal network feature_channels {}",
                self.attention.feature_channels, self.feature_channels
            )));
        }
        self.attention.validate()
    }

    /// Attention positions, sorted and deduplicated.
    fn positions(&self) -> Vec<usize> {
        let mut p = self.attention_positions.clone();
        p.sort_unstable();
        p.dedup();
        p
    }
}

/// Ordered map of named learnable parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.entries[i].1 = value;
        } else {
            self.index.insert(name.clone(), self.entries.len());
            self.entries.push((name, value));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    /// Deterministic insertion-order iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }
}

fn he_uniform(shape: [usize; 4], fan_in: usize, gain: f64, rng: &mut Rng) -> Tensor {
    let limit = gain * (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.range(-limit, limit) as Elem).collect())
        .expect("shape")
}

fn insert_conv(
    store: &mut ParamStore,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    gain: f64,
    rng: &mut Rng,
) {
    let fan_in = c_in * k * k;
    store.insert(
        format!("{name}.weight"),
        he_uniform([c_out, c_in, k, k], fan_in, gain, rng),
    );
    store.insert(format!("{name}.bias"), Tensor::zeros(1, c_out, 1, 1));
}

/// Init gain for the query/key embeddings. Plain He-uniform makes the
/// r²·E-term match scores start with a huge variance, saturating the joint
/// softmax into hard attention; damping both embeddings by (E·r²)^(-1/4)
/// starts the scores near unit scale.
pub(crate) fn embedding_gain(cfg: &PyramidAttentionConfig) -> f64 {
    let terms = (cfg.embed_channels * cfg.patch_size * cfg.patch_size) as f64;
    terms.powf(-0.25)
}

/// He-uniform weights and zero biases for the whole network, inserted in
/// forward order under a fixed naming scheme.
pub fn init_params(cfg: &NetworkConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = Rng::seed_from(seed);
    let mut store = ParamStore::new();
    let c = cfg.feature_channels;
    let e = cfg.attention.embed_channels;
    let embed_gain = embedding_gain(&cfg.attention);
    insert_conv(&mut store, "head", c, cfg.in_channels, 3, 1.0, &mut rng);
    let positions = cfg.positions();
    let insert_attention = |store: &mut ParamStore, pos: usize, rng: &mut Rng| {
        insert_conv(store, &format!("attn{pos}.w_f"), e, c, 1, embed_gain, rng);
        insert_conv(store, &format!("attn{pos}.w_g"), e, c, 1, embed_gain, rng);
        insert_conv(store, &format!("attn{pos}.w_theta"), c, c, 1, 1.0, rng);
    };
    if positions.contains(&0) {
        insert_attention(&mut store, 0, &mut rng);
    }
    for b in 1..=cfg.num_blocks {
        insert_conv(&mut store, &format!("block{b}.conv1"), c, c, 3, 1.0, &mut rng);
        insert_conv(&mut store, &format!("block{b}.conv2"), c, c, 3, 1.0, &mut rng);
        if positions.contains(&b) {
            insert_attention(&mut store, b, &mut rng);
        }
    }
    insert_conv(&mut store, "body_end", c, c, 3, 1.0, &mut rng);
    insert_conv(&mut store, "tail", cfg.in_channels, c, 3, 1.0, &mut rng);
    Ok(store)
}

/// Exact learnable scalar count of the assembled model.
pub fn count_params(cfg: &NetworkConfig) -> usize {
    let c = cfg.feature_channels;
    let e = cfg.attention.embed_channels;
    let conv = |c_out: usize, c_in: usize, k: usize| c_out * c_in * k * k + c_out;
    let head = conv(c, cfg.in_channels, 3);
    let block = 2 * conv(c, c, 3);
    let attention = conv(e, c, 1) + conv(e, c, 1) + conv(c, c, 1);
    let body_end = conv(c, c, 3);
    let tail = conv(cfg.in_channels, c, 3);
    let mut positions = cfg.attention_positions.clone();
    positions.sort_unstable();
    positions.dedup();
    head + cfg.num_blocks * block + positions.len() * attention + body_end + tail
}

/// Parameter handles on a graph, in store order.
pub struct GraphParams {
    vars: Vec<Var>,
    by_name: HashMap<String, Var>,
}

impl GraphParams {
    /// Leafs every parameter into the graph.
    pub fn new(g: &mut Graph, store: &ParamStore, requires_grad: bool) -> Self {
        let mut vars = Vec::with_capacity(store.len());
        let mut by_name = HashMap::new();
        for (name, value) in store.iter() {
            let v = g.leaf(value.clone(), requires_grad);
            vars.push(v);
            by_name.insert(name.to_string(), v);
        }
        GraphParams { vars, by_name }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    fn conv(&self, name: &str) -> Result<(Var, Option<Var>)> {
        Ok((
            self.var(&format!("{name}.weight"))?,
            Some(self.var(&format!("{name}.bias"))?),
        ))
    }

    fn attention(&self, pos: usize) -> Result<GraphAttentionParams> {
        let (w_f, b_f) = self.conv(&format!("attn{pos}.w_f"))?;
        let (w_g, b_g) = self.conv(&format!("attn{pos}.w_g"))?;
        let (w_theta, b_theta) = self.conv(&format!("attn{pos}.w_theta"))?;
        Ok(GraphAttentionParams {
            w_f,
            b_f,
            w_g,
            b_g,
            w_theta,
            b_theta,
        })
    }

    /// Graph vars in store order (for gradient collection).
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// x + conv3x3(relu(conv3x3(x))), padding 1, no normalization, no scaling.
pub fn residual_block_graph(
    g: &mut Graph,
    x: Var,
    w1: Var,
    b1: Option<Var>,
    w2: Var,
    b2: Option<Var>,
) -> Result<Var> {
    let h = g.conv2d(x, w1, b1, 1, 1)?;
    let h = g.relu(h);
    let h = g.conv2d(h, w2, b2, 1, 1)?;
    g.add(x, h)
}

/// Pure residual block over a parameter store entry pair.
pub fn residual_block(x: &Tensor, conv1: &ConvSpec, conv2: &ConvSpec) -> Result<Tensor> {
    let h = ops::conv2d(x, conv1)?;
    let h = ops::relu(&h);
    let h = ops::conv2d(&h, conv2)?;
    ops::add(x, &h)
}

fn check_geometry(cfg: &NetworkConfig, h: usize, w: usize) -> Result<()> {
    for &s in &cfg.attention.scales {
        let min = (h.min(w) as f64 * s).round() as usize;
        if min < 2 {
            return Err(Error::Geometry(format!(
                "input {h}x{w} is too small for pyramid scale {s} (level extent {min} < 2)"
            )));
        }
    }
    Ok(())
}

/// Full forward pass on a graph.
pub fn panet_forward_graph(
    g: &mut Graph,
    img: Var,
    cfg: &NetworkConfig,
    params: &GraphParams,
) -> Result<Var> {
    cfg.validate()?;
    let [_, c, h, w] = g.value(img).shape();
    if c != cfg.in_channels {
        return Err(Error::Dim(format!(
            "network expects {} input channels, got {c}",
            cfg.in_channels
        )));
    }
    if !cfg.attention_positions.is_empty() {
        check_geometry(cfg, h, w)?;
    }
    let positions = cfg.positions();

    let (hw, hb) = params.conv("head")?;
    let first = g.conv2d(img, hw, hb, 1, 1)?;
    let mut feat = first;
    // Attention sites follow the standard non-local block deployment: the
    // module's response is added to the stream it read from.
    if positions.contains(&0) {
        let p = params.attention(0)?;
        let a = pyramid_attention_graph(g, feat, &cfg.attention, &p)?;
        feat = g.add(feat, a)?;
    }
    for b in 1..=cfg.num_blocks {
        let (w1, b1) = params.conv(&format!("block{b}.conv1"))?;
        let (w2, b2) = params.conv(&format!("block{b}.conv2"))?;
        feat = residual_block_graph(g, feat, w1, b1, w2, b2)?;
        if positions.contains(&b) {
            let p = params.attention(b)?;
            let a = pyramid_attention_graph(g, feat, &cfg.attention, &p)?;
            feat = g.add(feat, a)?;
        }
    }
    let (bw, bb) = params.conv("body_end")?;
    let body = g.conv2d(feat, bw, bb, 1, 1)?;
    let fused = g.add(body, first)?;
    let (tw, tb) = params.conv("tail")?;
    g.conv2d(fused, tw, tb, 1, 1)
}

/// Inference forward pass.
pub fn panet_forward(img: &Tensor, cfg: &NetworkConfig, store: &ParamStore) -> Result<Tensor> {
    let mut g = Graph::new();
    let iv = g.constant(img.clone());
    let params = GraphParams::new(&mut g, store, false);
    let out = panet_forward_graph(&mut g, iv, cfg, &params)?;
    Ok(g.value(out).clone())
}

/// Feature map entering the first attention site (for score export).
pub fn feature_at_first_attention(
    img: &Tensor,
    cfg: &NetworkConfig,
    store: &ParamStore,
) -> Result<Tensor> {
    cfg.validate()?;
    let positions = cfg.positions();
    let Some(&site) = positions.first() else {
        return Err(Error::Config(
            "the network has no attention positions".into(),
        ));
    };
    let mut g = Graph::new();
    let iv = g.constant(img.clone());
    let params = GraphParams::new(&mut g, store, false);
    let (hw, hb) = params.conv("head")?;
    let mut feat = g.conv2d(iv, hw, hb, 1, 1)?;
    for b in 1..=site {
        let (w1, b1) = params.conv(&format!("block{b}.conv1"))?;
        let (w2, b2) = params.conv(&format!("block{b}.conv2"))?;
        feat = residual_block_graph(&mut g, feat, w1, b1, w2, b2)?;
    }
    Ok(g.value(feat).clone())
}

/// Attention parameters of the first attention site, as specs.
pub fn attention_params_at_first_site(
    cfg: &NetworkConfig,
    store: &ParamStore,
) -> Result<AttentionParams> {
    let positions = cfg.positions();
    let Some(&site) = positions.first() else {
        return Err(Error::Config(
            "the network has no attention positions".into(),
        ));
    };
    let spec = |name: String| -> Result<ConvSpec> {
        let w = store
            .get(&format!("{name}.weight"))
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}.weight'")))?;
        let b = store.get(&format!("{name}.bias"));
        ConvSpec::new(w.clone(), b.cloned(), 1, 0)
    };
    Ok(AttentionParams {
        w_f: spec(format!("attn{site}.w_f"))?,
        w_g: spec(format!("attn{site}.w_g"))?,
        w_theta: spec(format!("attn{site}.w_theta"))?,
    })
}

/// Reconstruction objective (mean absolute error).
pub fn loss(pred: &Tensor, target: &Tensor) -> Result<Elem> {
    Ok(ops::l1_loss(pred, target)?.data()[0])
}

/// Restores a whole image by tiling: each `tile`×`tile` core region is
/// computed from a context window extended by `margin` on every side, so
/// attention sees surroundings while memory stays bounded.
pub fn restore_tiled(
    img: &Tensor,
    cfg: &NetworkConfig,
    store: &ParamStore,
    tile: usize,
    margin: usize,
) -> Result<Tensor> {
    let [n, c, h, w] = img.shape();
    if n != 1 {
        return Err(Error::Dim("tiled restore expects a single image".into()));
    }
    if tile == 0 {
        return Err(Error::Config("tile size must be >= 1".into()));
    }
    if h <= tile + 2 * margin && w <= tile + 2 * margin {
        return panet_forward(img, cfg, store);
    }
    let mut out = Tensor::zeros(1, c, h, w);
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + tile).min(h);
        let cy0 = y0.saturating_sub(margin);
        let cy1 = (y1 + margin).min(h);
        let mut x0 = 0;
        while x0 < w {
            let x1 = (x0 + tile).min(w);
            let cx0 = x0.saturating_sub(margin);
            let cx1 = (x1 + margin).min(w);
            let mut patch = Tensor::zeros(1, c, cy1 - cy0, cx1 - cx0);
            for ci in 0..c {
                for yy in cy0..cy1 {
                    for xx in cx0..cx1 {
                        patch.set(0, ci, yy - cy0, xx - cx0, img.at(0, ci, yy, xx));
                    }
                }
            }
            let restored = panet_forward(&patch, cfg, store)?;
            for ci in 0..c {
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        out.set(0, ci, yy, xx, restored.at(0, ci, yy - cy0, xx - cx0));
                    }
                }
            }
            x0 = x1;
        }
        y0 = y1;
    }
    Ok(out)
}
