//! Seeded training loop and single-image inference.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::{apply_crop, draw_crop, Pair};
use crate::error::{Error, Result};
use crate::loss::{compact_targets, position_features, superpixel_loss, LossConfig};
use crate::maps::RgbImage;
use crate::net::{image_features, save_checkpoint, stack_batch, EsmNet, ForwardOptions};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::spix::{decode_hard, init_grid, SuperpixelMap};
use crate::tensor::Tensor;
use crate::vision::{bal_encode, distance_field, BalConfig, BalTarget};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    /// Write a checkpoint every this many iterations (0: final one only).
    pub checkpoint_every: u64,
    /// Random horizontal flips of training crops.
    pub flip: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { iterations: 1000, checkpoint_every: 0, flip: true, adam: AdamConfig::default() }
    }
}

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub lr: f64,
    pub total: f64,
    pub ce_part: f64,
    pub pos_part: f64,
}

/// Everything the loop needs besides the data and the network.
#[derive(Clone, Copy, Debug)]
pub struct TrainSetup<'a> {
    pub bal: &'a BalConfig,
    pub loss: &'a LossConfig,
    pub train: &'a TrainConfig,
    pub seed: u64,
    /// Destination of `loss.csv` and checkpoints, if any.
    pub out_dir: Option<&'a Path>,
}

/// Boundary-aware targets for a label map.
pub fn encode_targets(pair: &Pair, bal: &BalConfig) -> Result<BalTarget> {
    let field = distance_field(&pair.labels, bal.connectivity)?;
    bal_encode(&pair.labels, &field, bal)
}

/// Sample index of draw `t`: epochs walk seeded permutations of the dataset.
fn sample_index(len: usize, t: u64, seed: u64, cache: &mut Option<(u64, Vec<usize>)>) -> usize {
    let epoch = t / len as u64;
    if cache.as_ref().map(|c| c.0) != Some(epoch) {
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        *cache = Some((epoch, order));
    }
    cache.as_ref().expect("filled above").1[(t % len as u64) as usize]
}

fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:06}.ckpt"))
}

/// Runs `setup.train.iterations` Adam steps on random crops of `dataset`.
/// Returns the loss log; `on_step` sees every record as it is produced.
pub fn train<F>(dataset: &[Pair], net: &mut EsmNet<f32>, setup: TrainSetup<'_>, mut on_step: F) -> Result<Vec<LossRecord>>
where
    F: FnMut(&LossRecord),
{
    let TrainSetup { bal, loss: cfg, train: tcfg, seed, out_dir } = setup;
    if dataset.is_empty() {
        return Err(Error::Usage("training needs at least one sample".into()));
    }
    cfg.validate()?;
    bal.validate()?;
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("loss.csv");
            let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "iteration,lr,total,ce_part,pos_part").map_err(|e| Error::io(&p, e))?;
            Some((p, f))
        }
        None => None,
    };
    let grid = init_grid(cfg.crop, cfg.crop, cfg.s)?;
    let positions = position_features::<f32>(cfg.batch, cfg.crop, cfg.crop);
    let channels = net.config().in_channels;
    let mut state = AdamState::new();
    let mut order = None;
    let mut log = Vec::with_capacity(tcfg.iterations as usize);

    for it in 0..tcfg.iterations {
        let mut feats = Vec::with_capacity(cfg.batch);
        let mut targets = Vec::with_capacity(cfg.batch);
        for j in 0..cfg.batch {
            let t = it * cfg.batch as u64 + j as u64;
            let idx = sample_index(dataset.len(), t, seed, &mut order);
            let crop_seed = seed ^ t.wrapping_add(1).wrapping_mul(0xd1b5_4a32_d192_ed03);
            let (w, h) = (dataset[idx].image.width(), dataset[idx].image.height());
            let mut spec = draw_crop(w, h, cfg.crop, crop_seed)?;
            spec.flip &= tcfg.flip;
            let sample = apply_crop(&dataset[idx], spec)?;
            feats.push(image_features::<f32>(&sample.image, channels)?);
            targets.push(encode_targets(&sample, bal)?);
        }
        let (target, _) = compact_targets::<f32>(&targets)?;

        let mut tape = Tape::new();
        let x = tape.constant(stack_batch(&feats)?);
        let pass = net.forward(&mut tape, x, ForwardOptions::train())?;
        let tv = tape.constant(target);
        let pv = tape.constant(positions.clone());
        let parts = superpixel_loss(&mut tape, pass.acts.q, tv, pv, &grid, cfg).map_err(|e| at_iteration(e, it))?;
        let record = LossRecord {
            iteration: it,
            lr: cfg.lr_at(it),
            total: tape.value(parts.total).data()[0] as f64,
            ce_part: tape.value(parts.ce).data()[0] as f64,
            pos_part: tape.value(parts.pos).data()[0] as f64,
        };
        tape.backward(parts.total)?;
        {
            let grads: Vec<&[f32]> =
                pass.param_vars.iter().map(|&v| tape.grad(v).expect("parameters always receive gradients")).collect();
            adam_step(net.params_mut(), &grads, &mut state, record.lr, &tcfg.adam).map_err(|e| at_iteration(e, it))?;
        }
        net.update_running_stats(&pass);

        if let Some((p, f)) = log_file.as_mut() {
            writeln!(f, "{},{},{},{},{}", record.iteration, record.lr, record.total, record.ce_part, record.pos_part)
                .map_err(|e| Error::io(p.as_path(), e))?;
        }
        if let Some(dir) = out_dir {
            if tcfg.checkpoint_every > 0 && (it + 1) % tcfg.checkpoint_every == 0 {
                save_checkpoint(&checkpoint_path(dir, it + 1), net, it + 1)?;
            }
        }
        on_step(&record);
        log.push(record);
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("final.ckpt"), net, tcfg.iterations)?;
    }
    Ok(log)
}

fn at_iteration(e: Error, it: u64) -> Error {
    match e {
        Error::NonFinite { context, detail } => {
            Error::NonFinite { context: format!("training iteration {it}: {context}"), detail }
        }
        other => other,
    }
}

/// Association map of one image (eval-mode network), 1×9×H×W.
pub fn predict_assoc(net: &EsmNet<f32>, image: &RgbImage) -> Result<Tensor<f32>> {
    net.predict(image_features(image, net.config().in_channels)?)
}

/// Hard superpixels of one image at sampling interval `s`.
pub fn segment_image(net: &EsmNet<f32>, image: &RgbImage, s: usize) -> Result<SuperpixelMap> {
    let q = predict_assoc(net, image)?;
    decode_hard(&q, &init_grid(image.height(), image.width(), s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSceneConfig};
    use crate::net::NetConfig;

    fn small() -> (Vec<Pair>, LossConfig, BalConfig) {
        let cfg = SyntheticSceneConfig { width: 32, height: 32, seed: 4, ..Default::default() };
        let data = vec![gen_synthetic(&cfg).unwrap(), gen_synthetic(&SyntheticSceneConfig { seed: 5, ..cfg }).unwrap()];
        let loss = LossConfig { crop: 32, batch: 2, s: 8, lr: 1e-3, ..LossConfig::default() };
        (data, loss, BalConfig::default())
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (data, loss, bal) = small();
        let loss = LossConfig { lr: 0.0, ..loss };
        let tc = TrainConfig { iterations: 2, ..Default::default() };
        let mut net = EsmNet::<f32>::init_weights(&NetConfig::default(), 1).unwrap();
        let before = net.params().to_vec();
        train(&data, &mut net, TrainSetup { bal: &bal, loss: &loss, train: &tc, seed: 3, out_dir: None }, |_| {}).unwrap();
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn same_seed_same_log_and_files() {
        let (data, loss, bal) = small();
        let tc = TrainConfig { iterations: 3, checkpoint_every: 2, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let run = |sub: &str| {
            let mut net = EsmNet::<f32>::init_weights(&NetConfig::default(), 1).unwrap();
            let out = dir.path().join(sub);
            let setup = TrainSetup { bal: &bal, loss: &loss, train: &tc, seed: 9, out_dir: Some(&out) };
            let log = train(&data, &mut net, setup, |_| {}).unwrap();
            (log, fs::read(out.join("loss.csv")).unwrap())
        };
        let (a, fa) = run("a");
        let (b, fb) = run("b");
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        assert!(dir.path().join("a/checkpoint_000002.ckpt").is_file());
        assert!(dir.path().join("a/final.ckpt").is_file());
        assert_eq!(String::from_utf8(fa).unwrap().lines().count(), 4);
    }

    #[test]
    fn sample_order_covers_each_epoch() {
        let mut cache = None;
        let mut seen: Vec<usize> = (0..5).map(|t| sample_index(5, t, 1, &mut cache)).collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }
}
