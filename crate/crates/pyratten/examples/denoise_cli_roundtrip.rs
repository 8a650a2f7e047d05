//! End-to-end pass through the command-line surface: write a dataset, train,
//! evaluate, denoise one image and export attention maps, all through
//! `cli::run` exactly as the `pyratten` binary would.
//!
//!     cargo run --release --example denoise_cli_roundtrip

use pyratten::cli;
use pyratten::dataset::synthetic_self_similar;
use pyratten::imageio::save_png;

fn run(args: &[&str]) {
    let mut argv = vec!["pyratten"];
    argv.extend_from_slice(args);
    println!("\n$ {}", argv.join(" "));
    let code = cli::run(argv);
    assert_eq!(code, 0, "command failed with exit code {code}");
}

fn main() {
    let root = std::env::temp_dir().join("pyratten_cli_roundtrip");
    let data = root.join("data");
    let out = root.join("run");
    std::fs::create_dir_all(&data).unwrap();
    for (i, img) in synthetic_self_similar(4, 48, 23).iter().enumerate() {
        save_png(data.join(format!("img{i}.png")), img).unwrap();
    }
    let data = data.to_str().unwrap().to_string();
    let out = out.to_str().unwrap().to_string();
    let ckpt = format!("{out}/model.pant");

    run(&["params"]);
    run(&[
        "train",
        "--data", &data,
        "--out", &out,
        "--sigma", "30",
        "--set", "network.num_blocks=2",
        "--set", "network.feature_channels=8",
        "--set", "network.attention_positions=[1]",
        "--set", "network.attention.feature_channels=8",
        "--set", "network.attention.embed_channels=4",
        "--set", "network.attention.scales=[1.0,0.6]",
        "--set", "train.epochs=2",
        "--set", "train.steps_per_epoch=20",
        "--set", "train.batch_size=2",
        "--set", "train.patch_size=16",
        "--set", "train.lr0=0.001",
    ]);
    run(&["eval", "--ckpt", &ckpt, "--data", &data, "--sigma", "30"]);
    run(&[
        "denoise",
        "--ckpt", &ckpt,
        "--input", &format!("{data}/img0.png"),
        "--output", &format!("{out}/restored.png"),
        "--sigma", "30",
    ]);
    run(&[
        "attnmap",
        "--ckpt", &ckpt,
        "--input", &format!("{data}/img0.png"),
        "--pos", "20,20",
        "--out", &format!("{out}/maps"),
    ]);
    println!("\nall artifacts under {root:?}");
}
