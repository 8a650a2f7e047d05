//! Restoration quality metrics over 8-bit images: PSNR and single-scale SSIM
//! (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03, L = 255).

use crate::error::{Error, Result};
use crate::imageio::Image;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::Dim(format!(
            "images differ: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all samples; +∞ for equal images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Separable Gaussian filter over valid positions (no padding).
fn blur_valid(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let win = gaussian_window();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // Horizontal pass.
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &wv) in win.iter().enumerate() {
                acc += wv * plane[y * w + x + t];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &wv) in win.iter().enumerate() {
                acc += wv * tmp[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Structural similarity index, computed per channel and averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Geometry(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.width, a.height
        )));
    }
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for ci in 0..a.channels {
        let xa: Vec<f64> = (0..w * h)
            .map(|i| a.data[i * a.channels + ci] as f64)
            .collect();
        let xb: Vec<f64> = (0..w * h)
            .map(|i| b.data[i * b.channels + ci] as f64)
            .collect();
        let sq_a: Vec<f64> = xa.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = xb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| x * y).collect();

        let (mu_a, ow, oh) = blur_valid(&xa, w, h);
        let (mu_b, _, _) = blur_valid(&xb, w, h);
        let (m_aa, _, _) = blur_valid(&sq_a, w, h);
        let (m_bb, _, _) = blur_valid(&sq_b, w, h);
        let (m_ab, _, _) = blur_valid(&ab, w, h);

        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / a.channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = Rng::seed_from(seed);
        let data = (0..w * h * c).map(|_| rng.below(256) as u8).collect();
        Image::new(w, h, c, data).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let img = random_image(8, 8, 3, 1);
        assert!(psnr(&img, &img).unwrap().is_infinite());
    }

    #[test]
    fn psnr_off_by_one_everywhere() {
        let a = random_image(16, 16, 3, 2);
        let data = a
            .data
            .iter()
            .map(|&v| if v == 255 { 254 } else { v + 1 })
            .collect();
        let b = Image::new(16, 16, 3, data).unwrap();
        let got = psnr(&a, &b).unwrap();
        assert!((got - 48.1308).abs() < 1e-3, "{got}");
    }

    #[test]
    fn psnr_matches_loop_reference_and_is_symmetric() {
        let a = random_image(12, 9, 3, 3);
        let b = random_image(12, 9, 3, 4);
        let mut se = 0.0f64;
        for i in 0..a.data.len() {
            let d = a.data[i] as f64 - b.data[i] as f64;
            se += d * d;
        }
        let want = 10.0 * (255.0f64 * 255.0 / (se / a.data.len() as f64)).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6);
        assert_eq!(got, psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_dimension_mismatch() {
        let a = random_image(4, 4, 3, 5);
        let b = random_image(4, 5, 3, 5);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let img = random_image(16, 16, 3, 6);
        let got = ssim(&img, &img).unwrap();
        assert!((got - 1.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn ssim_negative_image_scores_below_one() {
        let img = random_image(16, 16, 1, 7);
        let neg = Image::new(16, 16, 1, img.data.iter().map(|&v| 255 - v).collect()).unwrap();
        assert!(ssim(&img, &neg).unwrap() < 1.0);
    }

    #[test]
    fn ssim_too_small_image_is_geometry_error() {
        let img = random_image(8, 8, 1, 8);
        assert!(matches!(ssim(&img, &img), Err(Error::Geometry(_))));
    }

    /// Direct (non-separable) windowed reference implementation.
    fn ssim_reference(a: &Image, b: &Image) -> f64 {
        let win1d = gaussian_window();
        let mut win = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
        for y in 0..SSIM_WINDOW {
            for x in 0..SSIM_WINDOW {
                win[y][x] = win1d[y] * win1d[x];
            }
        }
        let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
        let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
        let (w, h, c) = (a.width, a.height, a.channels);
        let mut total = 0.0;
        for ci in 0..c {
            let mut acc = 0.0;
            let mut count = 0;
            for oy in 0..=(h - SSIM_WINDOW) {
                for ox in 0..=(w - SSIM_WINDOW) {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            ma += win[dy][dx] * a.sample(ox + dx, oy + dy, ci) as f64;
                            mb += win[dy][dx] * b.sample(ox + dx, oy + dy, ci) as f64;
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let xa = a.sample(ox + dx, oy + dy, ci) as f64;
                            let xb = b.sample(ox + dx, oy + dy, ci) as f64;
                            va += win[dy][dx] * xa * xa;
                            vb += win[dy][dx] * xb * xb;
                            cov += win[dy][dx] * xa * xb;
                        }
                    }
                    va -= ma * ma;
                    vb -= mb * mb;
                    cov -= ma * mb;
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / c as f64
    }

    #[test]
    fn ssim_matches_direct_reference_on_fixed_pair() {
        let a = random_image(16, 16, 3, 9);
        let b = random_image(16, 16, 3, 10);
        let got = ssim(&a, &b).unwrap();
        let want = ssim_reference(&a, &b);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(14, 18, 1, 11);
        let b = random_image(14, 18, 1, 12);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
    }
}
