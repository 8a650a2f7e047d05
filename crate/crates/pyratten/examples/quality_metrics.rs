//! PSNR and SSIM on a noisy image pair.
//!
//!     cargo run --release --example quality_metrics

use pyratten::dataset::synthetic_self_similar;
use pyratten::imageio::Image;
use pyratten::metrics::{psnr, ssim};
use pyratten::rng::Rng;
use pyratten::train::add_awgn;

fn main() {
    let clean = &synthetic_self_similar(1, 64, 3)[0];
    println!("sigma |   PSNR (dB) |  SSIM");
    println!("------+-------------+-------");
    for sigma in [0.0, 10.0, 30.0, 50.0, 70.0] {
        let mut rng = Rng::seed_from(17);
        let noisy_t = add_awgn(&clean.to_tensor(), sigma, &mut rng);
        let noisy = Image::from_tensor(&noisy_t).unwrap();
        println!(
            "{sigma:>5} | {:>11.4} | {:.4}",
            psnr(clean, &noisy).unwrap(),
            ssim(clean, &noisy).unwrap()
        );
    }
}
