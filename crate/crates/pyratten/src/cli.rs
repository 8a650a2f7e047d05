//! Command line: train / denoise / eval / attnmap / gradcheck / params.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O error, 3 failed
//! gradient check.

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::export::export_attention_maps;
use crate::gradcheck;
use crate::imageio::{load_png, save_png, Image};
use crate::metrics;
use crate::network::{self, NetworkConfig};
use crate::rng::Rng;
use crate::tensor::Elem;
use crate::train::{self, TrainConfig};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "pyratten",
    about = "Pyramid attention image restoration: training, denoising and diagnostics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser on a directory of PNGs.
    Train(TrainArgs),
    /// Restore one image with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Mean PSNR/SSIM of a checkpoint over a directory of PNGs.
    Eval(EvalArgs),
    /// Export the attention distribution of one query position.
    Attnmap(AttnmapArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print the exact learnable parameter count of a configuration.
    Params(ParamsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config with "network" and "train" sections (defaults apply).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of training PNGs.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: PathBuf,
    /// Noise standard deviation (0-255); overrides the config.
    #[arg(long)]
    sigma: Option<f64>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config overrides, e.g. --set train.epochs=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Noise to add before restoring (0-255 units).
    #[arg(long, conflicts_with = "no_noise")]
    sigma: Option<f64>,
    /// Restore the input as-is without adding noise.
    #[arg(long)]
    no_noise: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tile core size for bounded-memory restoration.
    #[arg(long, default_value_t = 48)]
    tile: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 48)]
    tile: usize,
}

#[derive(Args)]
struct AttnmapArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Query position as X,Y (column, row).
    #[arg(long)]
    pos: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check a single operator instead of the whole suite.
    #[arg(long)]
    op: Option<String>,
    /// Central-difference step.
    #[arg(long)]
    eps: Option<Elem>,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Top-level JSON config document.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RootConfig {
    network: NetworkConfig,
    train: TrainConfig,
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RootConfig> {
    let mut value: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad JSON in {}: {e}", p.display())))?
        }
        None => serde_json::json!({}),
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not KEY=VALUE")))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cursor = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if i + 1 == parts.len() {
                cursor[part] = parsed.clone();
            } else {
                if cursor.get(*part).is_none() {
                    cursor[part] = serde_json::json!({});
                }
                cursor = cursor.get_mut(*part).expect("just inserted");
            }
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

fn parse_pos(s: &str) -> Result<(usize, usize)> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("--pos must be X,Y, got '{s}'")))?;
    let x: usize = x
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad X in --pos '{s}'")))?;
    let y: usize = y
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad Y in --pos '{s}'")))?;
    Ok((y, x))
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(sigma) = args.sigma {
        cfg.train.sigma = sigma;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let dataset = Dataset::from_dir(&args.data)?;
    let report = train::train(&dataset, &cfg.network, &cfg.train, &args.out, None, false)?;
    eprintln!(
        "wrote {} (final loss {:.6})",
        report.checkpoint_path.display(),
        report.final_loss
    );
    Ok(0)
}

fn cmd_denoise(args: &DenoiseArgs) -> Result<i32> {
    if args.sigma.is_none() && !args.no_noise {
        return Err(Error::Config(
            "denoise needs either --sigma or --no-noise".into(),
        ));
    }
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let img = load_png(&args.input)?;
    if img.channels != ckpt.config.in_channels {
        return Err(Error::Dim(format!(
            "image has {} channels but the model expects {}",
            img.channels, ckpt.config.in_channels
        )));
    }
    let clean = img.to_tensor();
    let input = match args.sigma {
        Some(sigma) => {
            if let Some(trained) = ckpt.train_sigma {
                if (trained - sigma).abs() > 1e-9 {
                    eprintln!(
                        "warning: checkpoint was trained for sigma {trained}, denoising at {sigma}"
                    );
                }
            }
            let mut rng = Rng::seed_from(args.seed);
            train::add_awgn(&clean, sigma, &mut rng)
        }
        None => clean,
    };
    let restored = network::restore_tiled(&input, &ckpt.config, &ckpt.store, args.tile, 12)?;
    save_png(&args.output, &Image::from_tensor(&restored)?)?;
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    if let Some(trained) = ckpt.train_sigma {
        if (trained - args.sigma).abs() > 1e-9 {
            eprintln!(
                "warning: checkpoint was trained for sigma {trained}, evaluating at {}",
                args.sigma
            );
        }
    }
    let dataset = Dataset::from_dir(&args.data)?;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (i, (_, img)) in dataset.iter().enumerate() {
        let clean = img.to_tensor();
        let mut rng = Rng::seed_from(args.seed ^ (0xe5a1 + i as u64));
        let noisy = train::add_awgn(&clean, args.sigma, &mut rng);
        let restored =
            network::restore_tiled(&noisy, &ckpt.config, &ckpt.store, args.tile, 12)?;
        let restored_img = Image::from_tensor(&restored)?;
        psnr_sum += metrics::psnr(img, &restored_img)?;
        ssim_sum += metrics::ssim(img, &restored_img)?;
    }
    let n = dataset.len() as f64;
    // Hand-rolled so an infinite PSNR prints as "inf" (JSON numbers cannot).
    println!(
        "{{\"sigma\": {}, \"psnr_db\": {}, \"ssim\": {}, \"images\": {}}}",
        args.sigma,
        psnr_sum / n,
        ssim_sum / n,
        dataset.len()
    );
    Ok(0)
}

fn cmd_attnmap(args: &AttnmapArgs) -> Result<i32> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let img = load_png(&args.input)?;
    let query = parse_pos(&args.pos)?;
    let out = export_attention_maps(&ckpt, &img.to_tensor(), query, &args.out)?;
    eprintln!(
        "wrote {} levels to {}",
        out.pngs.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let eps = args.eps.unwrap_or_else(gradcheck::default_eps);
    let results = gradcheck::run_suite(eps, args.op.as_deref())?;
    let mut all_ok = true;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<26} max_rel_err {:>12.3e}   tolerance {:>8.1e}   {status}",
            r.op, r.max_rel_err, r.tolerance
        );
        all_ok &= r.passed();
    }
    Ok(if all_ok { 0 } else { 3 })
}

fn cmd_params(args: &ParamsArgs) -> Result<i32> {
    let cfg = load_config(args.config.as_deref(), &[])?;
    cfg.network.validate()?;
    println!("{}", network::count_params(&cfg.network));
    Ok(0)
}

/// Parses argv and runs one command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Attnmap(a) => cmd_attnmap(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Params(a) => cmd_params(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_reproduce_published_architecture() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg.network.num_blocks, 80);
        assert_eq!(network::count_params(&cfg.network), 5_957_251);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.patch_size, 48);
        assert_eq!(cfg.train.lr0, 1e-4);
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"network": {"num_blocks": 4}}"#).unwrap();
        let cfg = load_config(
            Some(&path),
            &[
                "network.num_blocks=6".into(),
                "train.sigma=50".into(),
                "network.attention.scales=[1.0,0.5]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.network.num_blocks, 6);
        assert_eq!(cfg.train.sigma, 50.0);
        assert_eq!(cfg.network.attention.scales, vec![1.0, 0.5]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"nertwork": {}}"#).unwrap();
        assert!(matches!(
            load_config(Some(&path), &[]),
            Err(Error::Config(_))
        ));
        // Also via an override introducing an unknown key.
        assert!(load_config(None, &["train.warp_speed=9".into()]).is_err());
    }

    #[test]
    fn pos_parsing() {
        assert_eq!(parse_pos("3,4").unwrap(), (4, 3));
        assert!(parse_pos("3").is_err());
        assert!(parse_pos("a,b").is_err());
    }
}
