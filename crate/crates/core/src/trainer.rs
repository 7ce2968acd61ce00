//! Two-stage training: stage 1 learns the shared encoders with the cross-MI
//! objective, stage 2 freezes them and learns the exclusive encoders against
//! a joint-vs-marginal discriminator.
//!
//! Training is resumable: the data order and every negative pairing are
//! functions of `(seed, stage, step)`, and the step is the optimizer's own
//! counter, so a bundle loaded from a checkpoint continues exactly where the
//! saved run was.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Session, Tensor};
use crate::checkpoint::save_checkpoint;
use crate::config::TrainConfig;
use crate::data::PairDataset;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelDims, Stage};
use crate::objectives::{
    adversarial_losses, exclusive_stage_loss, make_negative_pairing, shared_stage_loss, ExclusivePairings,
    COMPONENT_NAMES,
};

/// File names inside a run directory.
pub const SHARED_LOG: &str = "train_shared.csv";
pub const EXCLUSIVE_LOG: &str = "train_exclusive.csv";
pub const DISC_LOG: &str = "disc.csv";
pub const STAGE1_CHECKPOINT: &str = "stage1.midz";
pub const STAGE2_CHECKPOINT: &str = "stage2.midz";

/// SplitMix64 finalizer over a sequence of words.
pub fn mix_seed(words: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &w in words {
        let mut z = h ^ w.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Clone, Copy)]
enum Purpose {
    Order = 1,
    MiX = 2,
    MiY = 3,
    AdvX = 4,
    AdvY = 5,
}

fn stage_tag(stage: Stage) -> u64 {
    match stage {
        Stage::Shared => 1,
        Stage::Exclusive => 2,
    }
}

/// Dataset indices of the batch used at `step`. Each epoch is a fresh
/// shuffle of the whole set; the incomplete tail batch is dropped.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, stage: Stage, step: u64) -> Result<Vec<usize>> {
    if n < batch_size {
        return Err(Error::Config(format!(
            "dataset has {n} pairs, fewer than one batch of {batch_size}"
        )));
    }
    let per_epoch = (n / batch_size) as u64;
    let epoch = step / per_epoch;
    let k = (step % per_epoch) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let s = mix_seed(&[seed, stage_tag(stage), Purpose::Order as u64, epoch]);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    Ok(order[k * batch_size..(k + 1) * batch_size].to_vec())
}

fn pairing_seed(seed: u64, stage: Stage, step: u64, purpose: Purpose) -> u64 {
    mix_seed(&[seed, stage_tag(stage), purpose as u64, step])
}

/// Per-step values recorded during training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// `(step, components in COMPONENT_NAMES order)`.
    pub components: Vec<(u64, Vec<f32>)>,
    /// `(step, discriminator loss, discriminator accuracy)`, stage 2 only.
    pub disc: Vec<(u64, f32, f32)>,
}

/// Where a run writes logs and checkpoints. Without an output directory
/// nothing touches the disk.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
    last_good: Option<PathBuf>,
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunOutput {
            dir: Some(dir.into()),
            last_good: None,
        }
    }

    pub fn none() -> Self {
        RunOutput::default()
    }

    pub fn last_good(&self) -> Option<&Path> {
        self.last_good.as_deref()
    }

    fn append(&self, file: &str, header: &str, line: &str) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let path = dir.join(file);
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{header}")?;
        }
        writeln!(f, "{line}")?;
        Ok(())
    }

    fn checkpoint(&mut self, bundle: &ModelBundle, name: &str) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        save_checkpoint(bundle, &path)?;
        self.last_good = Some(path);
        Ok(())
    }
}

fn csv_row(step: u64, values: &[f32]) -> String {
    let mut s = step.to_string();
    for v in values {
        s.push(',');
        s.push_str(&v.to_string());
    }
    s
}

fn component_header() -> String {
    std::iter::once("step").chain(COMPONENT_NAMES).collect::<Vec<_>>().join(",")
}

/// Turns a non-finite failure into a numerical abort naming the last good
/// checkpoint; other errors pass through.
fn numerical(step: u64, out: &RunOutput) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) => Error::Numerical {
            step,
            msg: e.to_string(),
            last_good: out.last_good.clone(),
        },
        other => other,
    }
}

/// Model dimensions for `data` under `config`.
pub fn model_dims(data: &PairDataset, config: &TrainConfig) -> ModelDims {
    ModelDims {
        height: data.height,
        width: data.width,
        channels: data.channels,
        shared_dim: config.shared_dim,
        exclusive_dim: config.exclusive_dim,
    }
}

/// A fresh stage-1 bundle for `data`.
pub fn new_bundle(data: &PairDataset, config: &TrainConfig) -> ModelBundle {
    ModelBundle::new(model_dims(data, config), config.weight_sharing, config.seed, config.lr)
}

fn check_data(bundle: &ModelBundle, data: &PairDataset) -> Result<()> {
    let d = &bundle.dims;
    if (d.height, d.width, d.channels) != (data.height, data.width, data.channels) {
        return Err(Error::Config(format!(
            "model expects {}x{}x{} images, dataset has {}x{}x{}",
            d.height, d.width, d.channels, data.height, data.width, data.channels
        )));
    }
    Ok(())
}

/// Runs stage 1 until the shared optimizer has taken `config.steps_shared`
/// steps, then writes the stage-1 checkpoint.
pub fn train_shared(
    bundle: &mut ModelBundle,
    data: &PairDataset,
    config: &TrainConfig,
    out: &mut RunOutput,
) -> Result<TrainLog> {
    config.validate()?;
    check_data(bundle, data)?;
    if bundle.stage != Stage::Shared {
        return Err(Error::Config("train_shared needs a stage-1 model".into()));
    }
    let trainable: Vec<String> = bundle.nets.stage1().into_iter().collect();
    let trainable: Vec<&str> = trainable.iter().map(String::as_str).collect();
    let mut log = TrainLog::default();
    let header = component_header();
    while bundle.opt_shared.steps() < config.steps_shared {
        let step = bundle.opt_shared.steps();
        let idx = batch_indices(data.len(), config.batch_size, config.seed, Stage::Shared, step)?;
        let batch = data.batch(&idx)?;
        let px = make_negative_pairing(idx.len(), pairing_seed(config.seed, Stage::Shared, step, Purpose::MiX))?;
        let py = make_negative_pairing(idx.len(), pairing_seed(config.seed, Stage::Shared, step, Purpose::MiY))?;
        let (row, grads) = {
            let on_err = numerical(step, out);
            let mut s = Session::new(&bundle.params, &trainable);
            let x = s.g.constant(batch.images_x).map_err(&on_err)?;
            let y = s.g.constant(batch.images_y).map_err(&on_err)?;
            let nets = bundle.nets.shared_stage();
            let o = shared_stage_loss(&mut s, &nets, x, y, &config.coeffs, &px, &py, !config.non_ssr)
                .map_err(&on_err)?;
            let loss = s.g.neg(o.objective).map_err(&on_err)?;
            (o.components.row(), s.backward(loss).map_err(&on_err)?)
        };
        bundle
            .opt_shared
            .step(&mut bundle.params, &grads)
            .map_err(numerical(step, out))?;
        let done = step + 1;
        out.append(SHARED_LOG, &header, &csv_row(done, &row))?;
        if done % 100 == 0 || done == config.steps_shared {
            info!("stage 1 step {done}: objective {:.4} L1 {:.4}", row[7], row[4]);
        }
        log.components.push((done, row));
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
            out.checkpoint(bundle, &format!("stage1_step{done}.midz"))?;
        }
    }
    out.checkpoint(bundle, STAGE1_CHECKPOINT)?;
    Ok(log)
}

/// Runs stage 2 until `config.steps_exclusive` batches are done. A stage-1
/// bundle is switched to stage 2 (freezing its shared encoders) first.
pub fn train_exclusive(
    bundle: &mut ModelBundle,
    data: &PairDataset,
    config: &TrainConfig,
    out: &mut RunOutput,
) -> Result<TrainLog> {
    config.validate()?;
    check_data(bundle, data)?;
    if bundle.stage == Stage::Shared {
        bundle.enter_exclusive_stage();
    }
    let enc_side: Vec<String> = bundle.nets.stage2_encoder_side().into_iter().collect();
    let enc_side: Vec<&str> = enc_side.iter().map(String::as_str).collect();
    let discs: Vec<String> = bundle.nets.discriminators().into_iter().collect();
    let discs: Vec<&str> = discs.iter().map(String::as_str).collect();
    let mut log = TrainLog::default();
    let header = component_header();
    while bundle.opt_exclusive.steps() < config.steps_exclusive {
        let step = bundle.opt_exclusive.steps();
        if bundle.opt_disc.steps() != step {
            return Err(Error::Config(format!(
                "optimizer step counters disagree: encoder {step}, discriminator {}",
                bundle.opt_disc.steps()
            )));
        }
        let idx = batch_indices(data.len(), config.batch_size, config.seed, Stage::Exclusive, step)?;
        let batch = data.batch(&idx)?;
        let pair = |p| make_negative_pairing(idx.len(), pairing_seed(config.seed, Stage::Exclusive, step, p));
        let pairings = ExclusivePairings {
            mi_x: pair(Purpose::MiX)?,
            mi_y: pair(Purpose::MiY)?,
            adv_x: pair(Purpose::AdvX)?,
            adv_y: pair(Purpose::AdvY)?,
        };

        // discriminator step: encoders are fixed functions here
        let (disc_loss, disc_acc, grads) = {
            let on_err = numerical(step, out);
            let mut s = Session::new(&bundle.params, &discs);
            let nets = bundle.nets.exclusive_stage();
            let mut total = None;
            let mut acc = 0.0;
            for (img, sh, ex, disc, p) in [
                (&batch.images_x, nets.shared_x, nets.enc_x, nets.disc_x, &pairings.adv_x),
                (&batch.images_y, nets.shared_y, nets.enc_y, nets.disc_y, &pairings.adv_y),
            ] {
                let v = s.g.constant(img.clone()).map_err(&on_err)?;
                let (_, shared) = sh.encode(&mut s, v).map_err(&on_err)?;
                let (_, excl) = ex.encode(&mut s, v).map_err(&on_err)?;
                let adv = adversarial_losses(&mut s, disc, shared, excl, p, config.non_saturating).map_err(&on_err)?;
                acc += adv.disc_accuracy / 2.0;
                total = Some(match total {
                    Some(t) => s.g.add(t, adv.disc_loss).map_err(&on_err)?,
                    None => adv.disc_loss,
                });
            }
            let total = total.expect("two domains");
            let value = s.g.value(total).item();
            (value, acc, s.backward(total).map_err(&on_err)?)
        };
        bundle.opt_disc.step(&mut bundle.params, &grads).map_err(numerical(step, out))?;

        // encoder and statistics-network step against the updated discriminator
        let (row, grads) = {
            let on_err = numerical(step, out);
            let mut s = Session::new(&bundle.params, &enc_side);
            let x = s.g.constant(batch.images_x).map_err(&on_err)?;
            let y = s.g.constant(batch.images_y).map_err(&on_err)?;
            let nets = bundle.nets.exclusive_stage();
            let o = exclusive_stage_loss(&mut s, &nets, x, y, &config.coeffs, &pairings, config.non_saturating)
                .map_err(&on_err)?;
            let loss = s.g.neg(o.objective).map_err(&on_err)?;
            (o.components.row(), s.backward(loss).map_err(&on_err)?)
        };
        bundle
            .opt_exclusive
            .step(&mut bundle.params, &grads)
            .map_err(numerical(step, out))?;

        let done = step + 1;
        out.append(EXCLUSIVE_LOG, &header, &csv_row(done, &row))?;
        out.append(DISC_LOG, "step,disc_loss,disc_accuracy", &csv_row(done, &[disc_loss, disc_acc]))?;
        if done % 100 == 0 || done == config.steps_exclusive {
            info!("stage 2 step {done}: objective {:.4} disc acc {:.3}", row[7], disc_acc);
        }
        log.components.push((done, row));
        log.disc.push((done, disc_loss, disc_acc));
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
            out.checkpoint(bundle, &format!("stage2_step{done}.midz"))?;
        }
    }
    out.checkpoint(bundle, STAGE2_CHECKPOINT)?;
    Ok(log)
}

/// Both stages from scratch.
pub fn train_full(data: &PairDataset, config: &TrainConfig, out: &mut RunOutput) -> Result<(ModelBundle, TrainLog, TrainLog)> {
    let mut bundle = new_bundle(data, config);
    let l1 = train_shared(&mut bundle, data, config, out)?;
    let l2 = train_exclusive(&mut bundle, data, config, out)?;
    Ok((bundle, l1, l2))
}

/// Representations of a set of images, computed in chunks.
pub fn encode_images(bundle: &ModelBundle, images: &[&[f32]], which: Representation, domain: Domain) -> Result<Vec<Vec<f32>>> {
    const CHUNK: usize = 256;
    let shape = bundle.dims.image_shape();
    let nets = &bundle.nets;
    let (sh, ex) = match domain {
        Domain::X => (&nets.sh_enc_x, &nets.ex_enc_x),
        Domain::Y => (&nets.sh_enc_y, &nets.ex_enc_y),
    };
    if which != Representation::Shared && bundle.stage != Stage::Exclusive {
        return Err(Error::Config("exclusive representations need a stage-2 model".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let mut s = Session::inference(&bundle.params);
        let x = s.g.constant(Tensor::stack_rows(chunk, &shape)?)?;
        let rep = match which {
            Representation::Shared => sh.encode(&mut s, x)?.1,
            Representation::Exclusive => ex.encode(&mut s, x)?.1,
            Representation::Full => {
                let a = sh.encode(&mut s, x)?.1;
                let b = ex.encode(&mut s, x)?.1;
                s.g.concat(&[a, b], 1)?
            }
        };
        let t = s.g.value(rep);
        out.extend((0..t.shape()[0]).map(|i| t.row(i).to_vec()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Representation {
    Shared,
    Exclusive,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    X,
    Y,
}

#[cfg(test)]
mod tests;
