//! Attention-map export: the post-softmax weight distribution of one query
//! position, written per pyramid level as a normalized grayscale PNG plus the
//! raw values as CSV, with a JSON index tying everything together.

use crate::attention::{attention_scores, AttentionScores};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::imageio::{save_png, Image};
use crate::network;
use crate::tensor::Tensor;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Files written for one export.
pub struct ExportedMaps {
    pub index_path: PathBuf,
    pub pngs: Vec<PathBuf>,
    pub csvs: Vec<PathBuf>,
    pub scores: AttentionScores,
}

/// Runs the network up to the first attention site, computes that site's
/// attention distribution for `query`, and writes one PNG + CSV per level
/// plus `index.json` into `out_dir`.
pub fn export_attention_maps(
    ckpt: &Checkpoint,
    img: &Tensor,
    query: (usize, usize),
    out_dir: impl AsRef<Path>,
) -> Result<ExportedMaps> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let feature = network::feature_at_first_attention(img, &ckpt.config, &ckpt.store)?;
    let params = network::attention_params_at_first_site(&ckpt.config, &ckpt.store)?;
    let scores = attention_scores(&feature, &ckpt.config.attention, &params, query)?;

    let mut pngs = Vec::new();
    let mut csvs = Vec::new();
    let mut index_levels = Vec::new();
    for (li, level) in scores.levels.iter().enumerate() {
        // Min-max normalized PNG for visibility; raw values live in the CSV.
        let lo = level.weights.iter().cloned().fold(f64::MAX as _, crate::tensor::Elem::min);
        let hi = level.weights.iter().cloned().fold(f64::MIN as _, crate::tensor::Elem::max);
        let span = hi - lo;
        let pixels: Vec<u8> = level
            .weights
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    (((v - lo) / span) * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        let png_path = out_dir.join(format!("level{li}.png"));
        save_png(
            &png_path,
            &Image::new(level.width, level.height, 1, pixels)?,
        )?;
        pngs.push(png_path);

        let csv_path = out_dir.join(format!("level{li}.csv"));
        let mut csv = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        for row in level.weights.chunks(level.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(csv, "{}", line.join(",")).map_err(|e| Error::io(&csv_path, e))?;
        }
        csvs.push(csv_path);

        index_levels.push(serde_json::json!({
            "level": li,
            "scale": level.scale,
            "height": level.height,
            "width": level.width,
            "sum_of_weights": level.weights.iter().map(|&v| v as f64).sum::<f64>(),
        }));
    }

    let index_path = out_dir.join("index.json");
    let index = serde_json::json!({
        "query": { "x": query.1, "y": query.0 },
        "levels": index_levels,
        "total_weight": scores.total() as f64,
    });
    std::fs::write(
        &index_path,
        serde_json::to_string_pretty(&index)
            .map_err(|e| Error::Config(format!("cannot serialize index: {e}")))?,
    )
    .map_err(|e| Error::io(&index_path, e))?;

    Ok(ExportedMaps {
        index_path,
        pngs,
        csvs,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::PyramidAttentionConfig;
    use crate::network::{init_params, NetworkConfig};
    use crate::tensor::Elem;

    fn tiny_ckpt() -> Checkpoint {
        let cfg = NetworkConfig {
            in_channels: 3,
            feature_channels: 8,
            num_blocks: 2,
            attention_positions: vec![1],
            attention: PyramidAttentionConfig {
                scales: vec![1.0, 0.6],
                patch_size: 3,
                embed_channels: 4,
                feature_channels: 8,
            },
        };
        Checkpoint {
            store: init_params(&cfg, 17).unwrap(),
            config: cfg,
            train_sigma: Some(30.0),
        }
    }

    #[test]
    fn export_writes_per_level_files_and_valid_index() {
        let ckpt = tiny_ckpt();
        let mut rng = crate::rng::Rng::seed_from(18);
        let img = Tensor::from_vec(
            [1, 3, 10, 10],
            (0..300).map(|_| rng.normal() as Elem * 0.2 + 0.5).collect(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = export_attention_maps(&ckpt, &img, (4, 5), dir.path()).unwrap();
        assert_eq!(out.pngs.len(), 2);
        assert_eq!(out.csvs.len(), 2);
        assert!(out.index_path.exists());
        // Level PNG extents follow round(H*s).
        let lvl1 = crate::imageio::load_png(&out.pngs[1]).unwrap();
        assert_eq!((lvl1.width, lvl1.height), (6, 6));
        // Raw weights across levels sum to 1.
        assert!((out.scores.total() - 1.0).abs() < 1e-5);
        // CSV parses back to the same count of values.
        let csv = std::fs::read_to_string(&out.csvs[0]).unwrap();
        let count = csv
            .lines()
            .map(|l| l.split(',').count())
            .sum::<usize>();
        assert_eq!(count, 100);
        let idx: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out.index_path).unwrap()).unwrap();
        assert_eq!(idx["levels"].as_array().unwrap().len(), 2);
        assert!((idx["total_weight"].as_f64().unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn constant_image_gives_uniform_maps() {
        // Zero parameters keep the feature map constant through the trunk
        // (zero-padded 3x3 convs would otherwise disturb the borders), so the
        // exported distribution must be exactly uniform.
        let mut ckpt = tiny_ckpt();
        for name in ckpt.store.names() {
            let s = ckpt.store.get(&name).unwrap().shape();
            ckpt.store
                .insert(name, Tensor::zeros(s[0], s[1], s[2], s[3]));
        }
        let img = Tensor::full([1, 3, 8, 8], 0.5);
        let dir = tempfile::tempdir().unwrap();
        let out = export_attention_maps(&ckpt, &img, (3, 3), dir.path()).unwrap();
        let total_positions: usize = out
            .scores
            .levels
            .iter()
            .map(|l| l.height * l.width)
            .sum();
        let want = 1.0 / total_positions as Elem;
        for level in &out.scores.levels {
            for &v in &level.weights {
                assert!(
                    (v - want).abs() < 1e-6,
                    "weight {v} differs from uniform {want}"
                );
            }
        }
    }

    #[test]
    fn out_of_bounds_query_errors() {
        let ckpt = tiny_ckpt();
        let img = Tensor::full([1, 3, 8, 8], 0.5);
        let dir = tempfile::tempdir().unwrap();
        assert!(export_attention_maps(&ckpt, &img, (99, 0), dir.path()).is_err());
    }
}
