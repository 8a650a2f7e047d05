//! Desk-scale denoising trainer: random crops with dihedral augmentation,
//! additive white Gaussian noise, Adam with a halving learning-rate schedule,
//! line-delimited JSON logging and periodic checkpoints.

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::imageio::Image;
use crate::metrics;
use crate::network::{self, GraphParams, NetworkConfig, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Elem, Tensor};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Optimizer, schedule, augmentation and noise settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr0: f64,
    /// Learning rate halves after every this many epochs.
    pub lr_halve_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Noise standard deviation in 0-255 units.
    pub sigma: f64,
    pub epochs: usize,
    /// Optimizer steps per epoch (an epoch over random crops has no natural
    /// length).
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            patch_size: 48,
            lr0: 1e-4,
            lr_halve_every: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            sigma: 30.0,
            epochs: 1,
            steps_per_epoch: 1000,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patch_size < 1 {
            return Err(Error::Config("patch_size must be >= 1".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::Config("sigma must be >= 0".into()));
        }
        if self.epochs < 1 || self.steps_per_epoch < 1 {
            return Err(Error::Config(
                "epochs and steps_per_epoch must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at an epoch: lr0 · 0.5^⌊epoch / halve_every⌋.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((epoch / cfg.lr_halve_every) as i32)
}

/// One of the eight dihedral transforms of a square crop: two bits of flip
/// select, two bits of quarter-turn count.
pub fn dihedral(crop: &Tensor, transform: usize) -> Tensor {
    let [n, c, h, w] = crop.shape();
    debug_assert_eq!(h, w, "dihedral transforms expect square crops");
    let flip = transform & 4 != 0;
    let rot = transform & 3;
    let mut out = Tensor::zeros(n, c, h, w);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let (mut sy, mut sx) = (y, x);
                    // Inverse rotation maps output coords back to the source.
                    for _ in 0..rot {
                        let (ny, nx) = (sx, h - 1 - sy);
                        sy = ny;
                        sx = nx;
                    }
                    if flip {
                        sx = w - 1 - sx;
                    }
                    out.set(ni, ci, y, x, crop.at(ni, ci, sy, sx));
                }
            }
        }
    }
    out
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma255 / 255`; the
/// result is intentionally not clipped.
pub fn add_awgn(x: &Tensor, sigma255: f64, rng: &mut Rng) -> Tensor {
    if sigma255 == 0.0 {
        return x.clone();
    }
    let s = sigma255 / 255.0;
    let data = x
        .data()
        .iter()
        .map(|&v| v + (rng.normal() * s) as Elem)
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Draws a batch of augmented crops and their noisy counterparts.
pub fn sample_batch(
    dataset: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    if dataset.is_empty() {
        return Err(Error::Dataset("the dataset is empty".into()));
    }
    let p = cfg.patch_size;
    let mut crops = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let (name, img) = dataset.get(rng.below(dataset.len()));
        if img.width < p || img.height < p {
            return Err(Error::Dataset(format!(
                "image '{name}' ({}x{}) is smaller than the {p}x{p} patch",
                img.width, img.height
            )));
        }
        let ox = rng.below(img.width - p + 1);
        let oy = rng.below(img.height - p + 1);
        let c = img.channels;
        let mut crop = Tensor::zeros(1, c, p, p);
        for ci in 0..c {
            for y in 0..p {
                for x in 0..p {
                    crop.set(
                        0,
                        ci,
                        y,
                        x,
                        img.sample(ox + x, oy + y, ci) as Elem / 255.0,
                    );
                }
            }
        }
        if cfg.augment {
            crop = dihedral(&crop, rng.below(8));
        }
        crops.push(crop);
    }
    let refs: Vec<&Tensor> = crops.iter().collect();
    let clean = crate::ops::concat_batch(&refs)?;
    let noisy = add_awgn(&clean, cfg.sigma, rng);
    Ok((clean, noisy))
}

/// Bias-corrected first/second moment state, aligned with the store order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<Elem>>,
    v: Vec<Vec<Elem>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let v = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over the whole store. `grads[i]` pairs with the i-th store
/// entry; `None` (unreached parameter) leaves moments and value untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let names = store.names();
    if grads.len() != names.len() {
        return Err(Error::Dim(format!(
            "{} gradients for {} parameters",
            grads.len(),
            names.len()
        )));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let (b1, b2, eps) = (cfg.beta1 as Elem, cfg.beta2 as Elem, cfg.eps as Elem);
    for (i, name) in names.iter().enumerate() {
        let Some(grad) = &grads[i] else { continue };
        let param = store.get_mut(name).expect("name from store");
        if grad.shape() != param.shape() {
            return Err(Error::Dim(format!(
                "gradient shape {:?} does not match parameter '{name}' {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let lr_t = (lr * bc2.sqrt() / bc1) as Elem;
        for ((pv, &g), (mv, vv)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = b1 * *mv + (1.0 - b1) * g;
            *vv = b2 * *vv + (1.0 - b2) * g * g;
            *pv -= lr_t * *mv / (vv.sqrt() + eps);
        }
    }
    Ok(())
}

/// One line of the per-epoch log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_psnr_db: Option<f64>,
}

/// Everything a training run leaves behind.
pub struct TrainReport {
    pub checkpoint_path: PathBuf,
    pub log: Vec<EpochLog>,
    pub final_loss: f64,
}

/// Runs the full training loop and writes `train_log.jsonl` plus checkpoints
/// under `out_dir`. Fully deterministic for a fixed seed.
pub fn train(
    dataset: &Dataset,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    out_dir: impl AsRef<Path>,
    eval_set: Option<&Dataset>,
    quiet: bool,
) -> Result<TrainReport> {
    net_cfg.validate()?;
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file =
        std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let mut store = network::init_params(net_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&store);
    let mut rng = Rng::seed_from(cfg.seed ^ 0x7061_7261);
    let ckpt_every = (cfg.epochs / 10).max(1);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut final_loss = 0.0;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut loss_sum = 0.0f64;
        for _ in 0..cfg.steps_per_epoch {
            let (clean, noisy) = sample_batch(dataset, cfg, &mut rng)?;
            let mut g = Graph::new();
            let input = g.constant(noisy);
            let target = g.constant(clean);
            let params = GraphParams::new(&mut g, &store, true);
            let pred = network::panet_forward_graph(&mut g, input, net_cfg, &params)?;
            let loss = g.l1_loss(pred, target)?;
            let loss_val = g.value(loss).data()[0] as f64;
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss_val} at epoch {epoch}, step {} (lr {lr})",
                    adam.step_count() + 1
                )));
            }
            g.backward(loss)?;
            let grads: Vec<Option<Tensor>> =
                params.vars().iter().map(|&v| g.grad_tensor(v)).collect();
            adam_step(&mut store, &grads, &mut adam, lr, cfg)?;
            loss_sum += loss_val;
        }
        let train_loss = loss_sum / cfg.steps_per_epoch as f64;
        final_loss = train_loss;

        let eval_psnr_db = match eval_set {
            Some(set) => Some(evaluate_psnr(set, net_cfg, &store, cfg.sigma, cfg.seed)?),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            eval_psnr_db,
        };
        let line = serde_json::to_string(&entry)
            .map_err(|e| Error::Config(format!("cannot serialize log line: {e}")))?;
        if !quiet {
            println!("{line}");
        }
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log.push(entry);

        if (epoch + 1) % ckpt_every == 0 && epoch + 1 < cfg.epochs {
            let snap = Checkpoint {
                store: store.clone(),
                config: net_cfg.clone(),
                train_sigma: Some(cfg.sigma),
            };
            snap.save(out_dir.join(format!("ckpt_epoch{}.pant", epoch + 1)))?;
        }
    }

    let checkpoint_path = out_dir.join("model.pant");
    Checkpoint {
        store,
        config: net_cfg.clone(),
        train_sigma: Some(cfg.sigma),
    }
    .save(&checkpoint_path)?;
    Ok(TrainReport {
        checkpoint_path,
        log,
        final_loss,
    })
}

/// Mean PSNR of the restored images over a held-out set, with noise drawn
/// from a seed derived deterministically per image.
pub fn evaluate_psnr(
    set: &Dataset,
    net_cfg: &NetworkConfig,
    store: &ParamStore,
    sigma: f64,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, (_, img)) in set.iter().enumerate() {
        let clean = img.to_tensor();
        let mut rng = Rng::seed_from(seed ^ (0xe5a1 + i as u64));
        let noisy = add_awgn(&clean, sigma, &mut rng);
        let restored = network::restore_tiled(&noisy, net_cfg, store, 48, 12)?;
        let restored_img = Image::from_tensor(&restored)?;
        total += metrics::psnr(img, &restored_img)?;
    }
    Ok(total / set.len() as f64)
}
