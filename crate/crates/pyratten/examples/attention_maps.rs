//! Exports the attention distribution of one query position over every
//! pyramid level: normalized PNGs, raw CSVs and a JSON index.
//!
//!     cargo run --release --example attention_maps

use pyratten::checkpoint::Checkpoint;
use pyratten::dataset::synthetic_self_similar;
use pyratten::export::export_attention_maps;
use pyratten::network::{init_params, NetworkConfig};

fn main() {
    // A fresh small network; a trained checkpoint works the same way.
    let cfg = NetworkConfig {
        feature_channels: 16,
        num_blocks: 4,
        attention_positions: vec![2],
        attention: pyratten::attention::PyramidAttentionConfig {
            scales: vec![1.0, 0.9, 0.8, 0.7, 0.6],
            patch_size: 3,
            embed_channels: 8,
            feature_channels: 16,
        },
        ..NetworkConfig::default()
    };
    let ckpt = Checkpoint {
        store: init_params(&cfg, 5).expect("valid config"),
        config: cfg,
        train_sigma: None,
    };

    let img = &synthetic_self_similar(1, 48, 11)[0];
    let out_dir = std::env::temp_dir().join("pyratten_attention_maps");
    let query = (24, 24);
    let maps = export_attention_maps(&ckpt, &img.to_tensor(), query, &out_dir)
        .expect("export succeeds");

    println!("query position (row, col) = {query:?}");
    for (i, level) in maps.scores.levels.iter().enumerate() {
        let peak = level
            .weights
            .iter()
            .cloned()
            .fold(f32::NEG_INFINITY as pyratten::Elem, pyratten::Elem::max);
        println!(
            "level {i}: scale {:.1}, {}x{}, peak weight {peak:.2e}",
            level.scale, level.height, level.width
        );
    }
    println!(
        "total weight over all levels: {:.6}",
        maps.scores.total()
    );
    println!("wrote {}", maps.index_path.display());
}
