//! Trains a small denoiser on synthetic self-similar images and reports the
//! per-epoch loss plus held-out PSNR before and after restoration.
//!
//!     cargo run --release --example train_tiny_denoiser

use pyratten::attention::PyramidAttentionConfig;
use pyratten::checkpoint::Checkpoint;
use pyratten::dataset::{synthetic_self_similar, Dataset};
use pyratten::imageio::Image;
use pyratten::metrics::psnr;
use pyratten::network::{restore_tiled, NetworkConfig};
use pyratten::rng::Rng;
use pyratten::train::{add_awgn, train, TrainConfig};

fn main() {
    let images = synthetic_self_similar(6, 64, 42);
    let (train_imgs, eval_img) = images.split_at(5);
    let dataset = Dataset::from_images(
        train_imgs
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, img)| (format!("img{i}.png"), img))
            .collect(),
    );

    let net = NetworkConfig {
        in_channels: 3,
        feature_channels: 16,
        num_blocks: 4,
        attention_positions: vec![2],
        attention: PyramidAttentionConfig {
            scales: vec![1.0, 0.9, 0.8, 0.7, 0.6],
            patch_size: 3,
            embed_channels: 8,
            feature_channels: 16,
        },
    };
    let cfg = TrainConfig {
        batch_size: 2,
        patch_size: 24,
        lr0: 5e-4,
        lr_halve_every: 3,
        sigma: 30.0,
        epochs: 5,
        steps_per_epoch: 60,
        seed: 1,
        ..TrainConfig::default()
    };

    let out = std::env::temp_dir().join("pyratten_tiny_denoiser");
    println!("training a 4-block, 16-channel model with one pyramid attention...");
    let report = train(&dataset, &net, &cfg, &out, None, false).expect("training runs");

    let ckpt = Checkpoint::load(&report.checkpoint_path).expect("checkpoint loads");
    let clean = &eval_img[0];
    let mut rng = Rng::seed_from(99);
    let noisy_t = add_awgn(&clean.to_tensor(), cfg.sigma, &mut rng);
    let noisy = Image::from_tensor(&noisy_t).unwrap();
    let restored_t = restore_tiled(&noisy_t, &ckpt.config, &ckpt.store, 48, 12).unwrap();
    let restored = Image::from_tensor(&restored_t).unwrap();
    println!(
        "\nheld-out image: noisy {:.2} dB -> restored {:.2} dB",
        psnr(clean, &noisy).unwrap(),
        psnr(clean, &restored).unwrap()
    );
    println!("checkpoint: {}", report.checkpoint_path.display());
}
