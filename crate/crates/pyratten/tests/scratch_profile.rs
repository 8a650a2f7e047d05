use pyratten::attention::{
    params_into_graph, pyramid_attention_graph, AttentionParams, PyramidAttentionConfig,
};
use pyratten::graph::Graph;
use pyratten::rng::Rng;
use pyratten::tensor::{Elem, Tensor};
use std::time::Instant;

#[test]
#[ignore]
fn profile_attention() {
    let cfg = PyramidAttentionConfig {
        scales: vec![1.0, 0.9, 0.8, 0.7, 0.6],
        patch_size: 3,
        embed_channels: 8,
        feature_channels: 16,
    };
    let mut rng = Rng::seed_from(1);
    let params = AttentionParams::init(&cfg, &mut rng);
    let x = Tensor::from_vec(
        [1, 16, 24, 24],
        (0..16 * 576).map(|_| rng.normal() as Elem).collect(),
    )
    .unwrap();

    // Forward only (no recording).
    let t0 = Instant::now();
    let reps = 10;
    for _ in 0..reps {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let p = params_into_graph(&mut g, &params, false);
        let _ = pyramid_attention_graph(&mut g, xv, &cfg, &p).unwrap();
    }
    println!("forward (inference): {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // Forward with recording.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let p = params_into_graph(&mut g, &params, true);
        let _ = pyramid_attention_graph(&mut g, xv, &cfg, &p).unwrap();
    }
    println!("forward (recorded): {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // Forward + backward.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone(), true);
        let p = params_into_graph(&mut g, &params, true);
        let y = pyramid_attention_graph(&mut g, xv, &cfg, &p).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
    }
    println!("forward+backward:   {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}
