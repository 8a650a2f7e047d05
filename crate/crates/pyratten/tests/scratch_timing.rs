use pyratten::attention::PyramidAttentionConfig;
use pyratten::dataset::{synthetic_self_similar, Dataset};
use pyratten::imageio::Image;
use pyratten::metrics;
use pyratten::network::{restore_tiled, NetworkConfig};
use pyratten::rng::Rng;
use pyratten::train::{add_awgn, train, TrainConfig};

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

fn crop_center(img: &Image, size: usize) -> Image {
    let x0 = (img.width - size) / 2;
    let y0 = (img.height - size) / 2;
    let mut data = Vec::with_capacity(size * size * img.channels);
    for y in 0..size {
        for x in 0..size {
            for c in 0..img.channels {
                data.push(img.sample(x0 + x, y0 + y, c));
            }
        }
    }
    Image::new(size, size, img.channels, data).unwrap()
}

#[test]
#[ignore]
fn ab_probe() {
    let all = synthetic_self_similar(13, 96, 77);
    let train_set = Dataset::from_images(
        all[..10]
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, img)| (format!("train{i}.png"), img))
            .collect(),
    );
    let eval_imgs: Vec<Image> = all[10..].iter().map(|img| crop_center(img, 48)).collect();

    let seed: u64 = std::env::var("AB_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
    let steps: usize = std::env::var("AB_STEPS").ok().and_then(|v| v.parse().ok()).unwrap_or(200);
    let cfg = TrainConfig {
        batch_size: 4,
        patch_size: 20,
        lr0: 1e-3,
        lr_halve_every: 4,
        epochs: 10,
        steps_per_epoch: steps,
        seed,
        sigma: 30.0,
        ..TrainConfig::default()
    };

    let mut noisy_psnr = 0.0;
    for (i, img) in eval_imgs.iter().enumerate() {
        let clean = img.to_tensor();
        let mut rng = Rng::seed_from(1000 + i as u64);
        let noisy = add_awgn(&clean, 30.0, &mut rng);
        noisy_psnr += metrics::psnr(img, &Image::from_tensor(&noisy).unwrap()).unwrap();
    }
    println!("noisy PSNR: {:.3}", noisy_psnr / eval_imgs.len() as f64);

    for attn in [false, true] {
        let t0 = std::time::Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let report = train(&train_set, &net(attn), &cfg, dir.path(), None, true).unwrap();
        let ckpt = pyratten::checkpoint::Checkpoint::load(&report.checkpoint_path).unwrap();
        let mut psnr = 0.0;
        for (i, img) in eval_imgs.iter().enumerate() {
            let clean = img.to_tensor();
            let mut rng = Rng::seed_from(1000 + i as u64);
            let noisy = add_awgn(&clean, 30.0, &mut rng);
            let restored = restore_tiled(&noisy, &ckpt.config, &ckpt.store, 48, 12).unwrap();
            psnr += metrics::psnr(img, &Image::from_tensor(&restored).unwrap()).unwrap();
        }
        let curve: Vec<String> = report.log.iter().map(|e| format!("{:.4}", e.train_loss)).collect();
        println!(
            "seed {seed} attn={attn}: PSNR {:.3} dB, loss {:.4}, {:.0}s | curve {}",
            psnr / eval_imgs.len() as f64,
            report.final_loss,
            t0.elapsed().as_secs_f64(),
            curve.join(" ")
        );
    }
}
