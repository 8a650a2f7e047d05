use pyratten::attention::PyramidAttentionConfig;
use pyratten::dataset::{synthetic_self_similar, Dataset};
use pyratten::graph::Graph;
use pyratten::network::{self, GraphParams, NetworkConfig};
use pyratten::ops;
use pyratten::rng::Rng;
use pyratten::tensor::{ConvSpec, Elem, Tensor};
use pyratten::train::{adam_step, lr_at, sample_batch, AdamState, TrainConfig};

fn net(attn: bool) -> NetworkConfig {
    NetworkConfig {
        in_channels: 3,
        feature_channels: 16,
        num_blocks: 4,
        attention_positions: if attn { vec![2] } else { vec![] },
        attention: PyramidAttentionConfig {
            scales: vec![1.0, 0.9, 0.8, 0.7, 0.6],
            patch_size: 3,
            embed_channels: 8,
            feature_channels: 16,
        },
    }
}

#[test]
#[ignore]
fn diagnose() {
    let images = synthetic_self_similar(10, 96, 77);
    let ds = Dataset::from_images(
        images
            .into_iter()
            .enumerate()
            .map(|(i, img)| (format!("t{i}.png"), img))
            .collect(),
    );
    let cfg = TrainConfig {
        batch_size: 2,
        patch_size: 24,
        lr0: 1e-3,
        lr_halve_every: 4,
        epochs: 1,
        steps_per_epoch: 1,
        seed: 1,
        sigma: 30.0,
        ..TrainConfig::default()
    };
    let ncfg = net(true);
    let mut store = network::init_params(&ncfg, cfg.seed).unwrap();
    let mut adam = AdamState::new(&store);
    let mut rng = Rng::seed_from(cfg.seed ^ 0x7061_7261);

    let steps: usize = std::env::var("DIAG_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(100);
    for step in 0..steps {
        let (clean, noisy) = sample_batch(&ds, &cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let input = g.constant(noisy.clone());
        let target = g.constant(clean);
        let params = GraphParams::new(&mut g, &store, true);
        let pred = network::panet_forward_graph(&mut g, input, &ncfg, &params).unwrap();
        let loss = g.l1_loss(pred, target).unwrap();
        let lv = g.value(loss).data()[0];
        g.backward(loss).unwrap();
        let grads: Vec<Option<Tensor>> = params.vars().iter().map(|&v| g.grad_tensor(v)).collect();

        if step % 25 == 0 || step + 1 == steps {
            // Score statistics at the attention site.
            let feat = network::feature_at_first_attention(
                &noisy.batch_item(0),
                &ncfg,
                &store,
            )
            .unwrap();
            let ap = network::attention_params_at_first_site(&ncfg, &store).unwrap();
            let f = ops::conv2d(&feat, &ap.w_f).unwrap();
            let keys = ops::conv2d(&feat, &ap.w_g).unwrap();
            let fbank = ops::patch_bank(&keys, 3).unwrap();
            let spec = ConvSpec::new(fbank, None, 1, 1).unwrap();
            let scores = ops::conv2d(&f, &spec).unwrap();
            let smax = scores.data().iter().cloned().fold(Elem::MIN, Elem::max);
            let smean = scores.data().iter().sum::<Elem>() / scores.len() as Elem;
            let svar = scores
                .data()
                .iter()
                .map(|v| (v - smean) * (v - smean))
                .sum::<Elem>()
                / scores.len() as Elem;
            // Peak softmax weight at a few positions.
            let soft = ops::softmax(&scores, 1).unwrap();
            let [_, c, h, w] = soft.shape();
            let mut peak_avg = 0.0;
            for p in 0..h * w {
                let mut peak = 0.0 as Elem;
                for ci in 0..c {
                    peak = peak.max(soft.data()[ci * h * w + p]);
                }
                peak_avg += peak;
            }
            peak_avg /= (h * w) as Elem;

            let gn = |name: &str| -> Elem {
                let idx = store.names().iter().position(|n| n == name).unwrap();
                grads[idx]
                    .as_ref()
                    .map(|t| (t.data().iter().map(|v| v * v).sum::<Elem>() / t.len() as Elem).sqrt())
                    .unwrap_or(0.0)
            };
            println!(
                "step {step:>4}: loss {lv:.4} | score std {:.2} max {smax:.2} | peak w {peak_avg:.3} | g(w_f) {:.2e} g(w_theta) {:.2e} g(b1.c1) {:.2e}",
                svar.sqrt(),
                gn("attn2.w_f.weight"),
                gn("attn2.w_theta.weight"),
                gn("block1.conv1.weight"),
            );
        }
        adam_step(&mut store, &grads, &mut adam, lr_at(0, &cfg), &cfg).unwrap();
    }
}
