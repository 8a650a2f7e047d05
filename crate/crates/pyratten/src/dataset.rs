//! Training/evaluation datasets: directories of PNGs, plus a synthetic
//! generator of self-similar images for desk-scale experiments.

use crate::error::{Error, Result};
use crate::imageio::{load_png, Image};
use crate::rng::Rng;
use std::path::Path;

/// A set of named images held in memory.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    entries: Vec<(String, Image)>,
}

impl Dataset {
    pub fn from_images(entries: Vec<(String, Image)>) -> Self {
        Dataset { entries }
    }

    /// Loads every `.png` in a directory, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Dataset(format!(
                "no .png files found in {}",
                dir.display()
            )));
        }
        let mut entries = Vec::with_capacity(paths.len());
        for p in paths {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            entries.push((name, load_png(&p)?));
        }
        Ok(Dataset { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> (&str, &Image) {
        let (n, img) = &self.entries[i];
        (n.as_str(), img)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Image)> {
        self.entries.iter().map(|(n, i)| (n.as_str(), i))
    }
}

/// Generates RGB images whose content recurs exactly, at the original size
/// and at magnified copies, the regime where non-local and cross-scale
/// matching have something to find: a random motif tiled in horizontal bands
/// at increasing magnification, plus a sharp grating or checker layer.
pub fn synthetic_self_similar(count: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut rng = Rng::seed_from(seed);
    (0..count)
        .map(|_| {
            // Random motif sampled bilinearly so magnified copies stay the
            // "same pattern at a larger scale". Dense control points keep the
            // texture near pixel-sharp, where plain smoothing cannot denoise
            // but matching exact recurrences can.
            const M: usize = 14;
            let motif: Vec<f64> = (0..M * M).map(|_| rng.uniform()).collect();
            let sample_motif = |u: f64, v: f64| -> f64 {
                let (u, v) = (u.rem_euclid(1.0) * M as f64, v.rem_euclid(1.0) * M as f64);
                let (i0, j0) = (u.floor() as usize % M, v.floor() as usize % M);
                let (i1, j1) = ((i0 + 1) % M, (j0 + 1) % M);
                let (fu, fv) = (u.fract(), v.fract());
                let a = motif[j0 * M + i0] * (1.0 - fu) + motif[j0 * M + i1] * fu;
                let b = motif[j1 * M + i0] * (1.0 - fu) + motif[j1 * M + i1] * fu;
                a * (1.0 - fv) + b * fv
            };

            // Three bands tile the motif at magnifications 1.0, ~1.4, ~1.8.
            let base_period = 8.0 + rng.uniform() * 6.0;
            let magnifications = [1.0, 1.3 + rng.uniform() * 0.3, 1.7 + rng.uniform() * 0.3];
            let mut field = vec![0.0f64; size * size];
            let band = (size + 2) / 3;
            for y in 0..size {
                let mag = magnifications[(y / band).min(2)];
                let p = base_period * mag;
                for x in 0..size {
                    field[y * size + x] = sample_motif(x as f64 / p, y as f64 / p);
                }
            }

            // Sharp global layer: thin grating or fine checker.
            let amp = 0.4 + rng.uniform() * 0.4;
            let period = 3.0 + rng.uniform() * 5.0;
            let angle = rng.uniform() * std::f64::consts::PI;
            let (ca, sa) = (angle.cos(), angle.sin());
            let checker = rng.below(2) == 0;
            for y in 0..size {
                for x in 0..size {
                    let u = ca * x as f64 + sa * y as f64;
                    let v = if checker {
                        let c = ((x as f64 / period).floor() as i64
                            + (y as f64 / period).floor() as i64)
                            & 1;
                        if c == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        // Thin bright lines on a dark background.
                        if (u / period).fract().abs() < 0.34 {
                            1.0
                        } else {
                            0.0
                        }
                    };
                    field[y * size + x] += amp * v;
                }
            }

            let max = field.iter().cloned().fold(f64::MIN, f64::max);
            let min = field.iter().cloned().fold(f64::MAX, f64::min);
            let span = (max - min).max(1e-9);
            let tint = [
                0.75 + rng.uniform() * 0.25,
                0.75 + rng.uniform() * 0.25,
                0.75 + rng.uniform() * 0.25,
            ];
            let mut data = vec![0u8; size * size * 3];
            for y in 0..size {
                for x in 0..size {
                    let v = (field[y * size + x] - min) / span;
                    for c in 0..3 {
                        data[(y * size + x) * 3 + c] = (v * tint[c] * 255.0).round() as u8;
                    }
                }
            }
            Image::new(size, size, 3, data).expect("consistent extents")
        })
        .collect()
}
