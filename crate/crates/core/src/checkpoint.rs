//! The `MIDZ1` checkpoint: a flat list of named float32 tensors.
//!
//! ```text
//! magic   5 bytes "MIDZ1"
//! repeated until end of file:
//!   u32 name length, name bytes (UTF-8), u32 rank, rank * u32 extents,
//!   prod(extents) * f32 data
//! ```
//!
//! All integers and floats are little-endian. Besides the network
//! parameters a model checkpoint holds `meta.*` records (dimensions, stage,
//! seed) and `adam.<optimizer>.*` records (step counter, hyperparameters,
//! moments). Integers are stored as 16-bit chunks so every value is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::{Adam, AdamConfig, Tensor};
use crate::data::format::Reader;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelDims, Stage};

pub const MAGIC: &[u8; 5] = b"MIDZ1";

pub fn write_tensors<'a>(path: impl AsRef<Path>, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    // write-then-rename so a crash never leaves a half-written checkpoint
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, "read_checkpoint");
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format {
            context: "read_checkpoint",
            offset: 0,
            msg: "bad magic or version, expected MIDZ1".into(),
        });
    }
    let mut out = Vec::new();
    while !r.at_end() {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| r.error("tensor extents overflow"))?;
        let data = r.f32s(n, "tensor data")?;
        let t = Tensor::new(shape, data).map_err(|e| r.error(format!("tensor `{name}`: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

fn encode_u64(v: u64) -> Tensor {
    Tensor::from_vec((0..4).map(|k| ((v >> (16 * k)) & 0xffff) as f32).collect())
}

fn decode_u64(t: &Tensor, what: &str) -> Result<u64> {
    if t.shape() != [4] {
        return Err(Error::Config(format!("checkpoint record {what} has shape {:?}", t.shape())));
    }
    let mut v = 0u64;
    for (k, &chunk) in t.data().iter().enumerate() {
        if !(0.0..65536.0).contains(&chunk) || chunk.fract() != 0.0 {
            return Err(Error::Config(format!("checkpoint record {what} is corrupt")));
        }
        v |= (chunk as u64) << (16 * k);
    }
    Ok(v)
}

const OPTIMIZERS: [&str; 3] = ["shared", "exclusive", "disc"];

fn optimizer<'a>(b: &'a ModelBundle, which: &str) -> &'a Adam {
    match which {
        "shared" => &b.opt_shared,
        "exclusive" => &b.opt_exclusive,
        _ => &b.opt_disc,
    }
}

/// Serializes every parameter, the optimizer states and the metadata.
pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let d = &bundle.dims;
    let mut records: Vec<(String, Tensor)> = vec![
        (
            "meta.dims".into(),
            Tensor::from_vec([d.height, d.width, d.channels, d.shared_dim, d.exclusive_dim].map(|v| v as f32).to_vec()),
        ),
        (
            "meta.stage".into(),
            Tensor::from_vec(vec![match bundle.stage {
                Stage::Shared => 1.0,
                Stage::Exclusive => 2.0,
            }]),
        ),
        ("meta.weight_sharing".into(), Tensor::from_vec(vec![bundle.weight_sharing as u8 as f32])),
        ("meta.seed".into(), encode_u64(bundle.seed)),
    ];
    for which in OPTIMIZERS {
        let opt = optimizer(bundle, which);
        let c = opt.config;
        records.push((format!("adam.{which}.config"), Tensor::from_vec(vec![c.lr, c.beta1, c.beta2, c.eps])));
        records.push((format!("adam.{which}.steps"), encode_u64(opt.steps())));
        for name in opt.tracked() {
            let shape = bundle.params.get(name).map(|t| t.shape().to_vec()).unwrap_or_default();
            let m = Tensor::new(shape.clone(), opt.first_moment(name).unwrap().to_vec())?;
            let v = Tensor::new(shape, opt.second_moment(name).unwrap().to_vec())?;
            records.push((format!("adam.{which}.m.{name}"), m));
            records.push((format!("adam.{which}.v.{name}"), v));
        }
    }
    let params = bundle.params.iter().map(|(k, t)| (k.as_str(), t));
    let extra = records.iter().map(|(k, t)| (k.as_str(), t));
    write_tensors(path, params.chain(extra))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let mut records: BTreeMap<String, Tensor> = read_tensors(path)?.into_iter().collect();
    fn take_from(records: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
        records
            .remove(name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing record `{name}`")))
    }
    let dims = take_from(&mut records, "meta.dims")?;
    let dims: Vec<usize> = dims.data().iter().map(|&v| v as usize).collect();
    if dims.len() != 5 {
        return Err(Error::Config("checkpoint record meta.dims must hold 5 values".into()));
    }
    let dims = ModelDims {
        height: dims[0],
        width: dims[1],
        channels: dims[2],
        shared_dim: dims[3],
        exclusive_dim: dims[4],
    };
    let stage = match take_from(&mut records, "meta.stage")?.data() {
        [v] if *v == 1.0 => Stage::Shared,
        [v] if *v == 2.0 => Stage::Exclusive,
        other => return Err(Error::Config(format!("invalid stage marker {other:?}"))),
    };
    let weight_sharing = take_from(&mut records, "meta.weight_sharing")?.data() == [1.0];
    let seed = decode_u64(&take_from(&mut records, "meta.seed")?, "meta.seed")?;

    let mut bundle = ModelBundle::new(dims, weight_sharing, seed, 1e-4);
    if stage == Stage::Exclusive {
        bundle.enter_exclusive_stage();
    }
    for which in OPTIMIZERS {
        let c = take_from(&mut records, &format!("adam.{which}.config"))?;
        let [lr, beta1, beta2, eps] = c.data() else {
            return Err(Error::Config(format!("adam.{which}.config must hold 4 values")));
        };
        let mut opt = Adam::new(AdamConfig {
            lr: *lr,
            beta1: *beta1,
            beta2: *beta2,
            eps: *eps,
        });
        let steps = decode_u64(&take_from(&mut records, &format!("adam.{which}.steps"))?, "adam steps")?;
        let prefix_m = format!("adam.{which}.m.");
        let names: Vec<String> = records
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix_m).map(str::to_string))
            .collect();
        for name in names {
            let m = take_from(&mut records, &format!("{prefix_m}{name}"))?;
            let v = take_from(&mut records, &format!("adam.{which}.v.{name}"))?;
            opt.restore(steps, name, m.into_data(), v.into_data());
        }
        opt.set_steps(steps);
        match which {
            "shared" => bundle.opt_shared = opt,
            "exclusive" => bundle.opt_exclusive = opt,
            _ => bundle.opt_disc = opt,
        }
    }
    // what remains are parameters; they must match the architecture exactly
    let expected: Vec<String> = bundle.params.iter().map(|(k, _)| k.clone()).collect();
    for name in &expected {
        let t = take_from(&mut records, name)?;
        let slot = bundle.params.get_mut(name).expect("listed above");
        if slot.shape() != t.shape() {
            return Err(Error::shape("load_checkpoint", slot.shape(), t.shape()));
        }
        *slot = t;
    }
    if let Some(extra) = records.keys().next() {
        return Err(Error::Config(format!("checkpoint holds unexpected record `{extra}`")));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Session;

    fn dims() -> ModelDims {
        ModelDims {
            height: 32,
            width: 32,
            channels: 3,
            shared_dim: 16,
            exclusive_dim: 4,
        }
    }

    fn touched_bundle(stage2: bool) -> ModelBundle {
        let mut b = ModelBundle::new(dims(), false, 0xDEAD_BEEF_1234_5678, 3e-4);
        if stage2 {
            b.enter_exclusive_stage();
        }
        // one fake update so the optimizer state is non-trivial
        let names: Vec<&str> = vec!["sh_enc_x"];
        let grads = {
            let mut s = Session::new(&b.params, &names);
            let w = s.param("sh_enc_x.fc.w").unwrap();
            let sq = s.g.mul(w, w).unwrap();
            let l = s.g.mean_all(sq).unwrap();
            s.backward(l).unwrap()
        };
        if !stage2 {
            b.opt_shared.step(&mut b.params, &grads).unwrap();
        }
        b
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for stage2 in [false, true] {
            let b = touched_bundle(stage2);
            let p1 = dir.path().join("a.midz");
            let p2 = dir.path().join("b.midz");
            save_checkpoint(&b, &p1).unwrap();
            let back = load_checkpoint(&p1).unwrap();
            assert_eq!(back, b);
            save_checkpoint(&back, &p2).unwrap();
            assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn stage_two_checkpoint_restores_the_freeze_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.midz");
        save_checkpoint(&touched_bundle(true), &p).unwrap();
        let b = load_checkpoint(&p).unwrap();
        assert_eq!(b.stage, Stage::Exclusive);
        assert!(b.params.frozen().contains("sh_enc_x"));
    }

    #[test]
    fn wrong_magic_and_truncation_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.midz");
        save_checkpoint(&touched_bundle(false), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let mut bad = bytes.clone();
        bad[4] = b'2';
        fs::write(&p, &bad).unwrap();
        assert!(load_checkpoint(&p).unwrap_err().to_string().contains("MIDZ1"));
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn integers_survive_float_encoding() {
        for v in [0, 1, 65535, 65536, u64::MAX, 0x0123_4567_89AB_CDEF] {
            assert_eq!(decode_u64(&encode_u64(v), "x").unwrap(), v);
        }
    }
}
