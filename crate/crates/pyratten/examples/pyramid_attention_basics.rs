//! The three attention operators on a random feature map: classic non-local,
//! scale-agnostic against one downscaled descriptor map, and the full
//! block-matched pyramid operator.
//!
//!     cargo run --release --example pyramid_attention_basics

use pyratten::attention::{
    build_pyramid, nonlocal_attention, pyramid_attention, scale_agnostic_attention,
    AttentionParams, PyramidAttentionConfig,
};
use pyratten::rng::Rng;
use pyratten::tensor::{Elem, Tensor};

fn main() {
    let cfg = PyramidAttentionConfig {
        scales: vec![1.0, 0.9, 0.8, 0.7, 0.6],
        patch_size: 3,
        embed_channels: 8,
        feature_channels: 16,
    };
    let mut rng = Rng::seed_from(7);
    let params = AttentionParams::init(&cfg, &mut rng);
    let x = Tensor::from_vec(
        [1, 16, 20, 20],
        (0..16 * 400).map(|_| rng.normal() as Elem).collect(),
    )
    .unwrap();

    let levels = build_pyramid(&x, &cfg.scales).unwrap();
    println!("feature pyramid over a 20x20 map:");
    for (s, l) in cfg.scales.iter().zip(&levels) {
        println!("  scale {s}: {}x{}", l.height(), l.width());
    }

    let nl = nonlocal_attention(&x, &params).unwrap();
    let sa = scale_agnostic_attention(&x, 0.6, &params).unwrap();
    let pa = pyramid_attention(&x, &cfg, &params).unwrap();
    let norm = |t: &Tensor| {
        (t.data().iter().map(|v| v * v).sum::<Elem>() / t.len() as Elem).sqrt()
    };
    println!("\nrms of each response (shapes all {:?}):", pa.shape());
    println!("  non-local       {:.4}", norm(&nl));
    println!("  scale-agnostic  {:.4}", norm(&sa));
    println!("  pyramid         {:.4}", norm(&pa));

    // With a single scale and 1x1 patches the pyramid operator degenerates to
    // the classic non-local operator.
    let degenerate = PyramidAttentionConfig {
        scales: vec![1.0],
        patch_size: 1,
        ..cfg
    };
    let pa1 = pyramid_attention(&x, &degenerate, &params).unwrap();
    let max_diff = pa1
        .data()
        .iter()
        .zip(nl.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0 as Elem, Elem::max);
    println!("\npyramid(S = {{1}}, r = 1) vs non-local: max diff {max_diff:.2e}");

    // Block matching (r = 3) is a genuinely different operator.
    let block = PyramidAttentionConfig {
        scales: vec![1.0],
        patch_size: 3,
        ..degenerate
    };
    let pa3 = pyramid_attention(&x, &block, &params).unwrap();
    let block_diff = pa3
        .data()
        .iter()
        .zip(nl.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0 as Elem, Elem::max);
    println!("pyramid(S = {{1}}, r = 3) vs non-local: max diff {block_diff:.2e}");
}
