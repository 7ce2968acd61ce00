//! Run configuration as flat `key=value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are exactly
//! [`CONFIG_KEYS`]; anything else is rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::objectives::LossCoefficients;

pub const CONFIG_KEYS: [&str; 18] = [
    "dataset",
    "n_pairs",
    "batch_size",
    "lr",
    "steps_shared",
    "steps_exclusive",
    "shared_dim",
    "exclusive_dim",
    "alpha_sh",
    "beta_sh",
    "gamma",
    "alpha_ex",
    "beta_ex",
    "lambda_adv",
    "seed",
    "weight_sharing",
    "non_ssr",
    "out_dir",
];

/// Everything the trainer needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f32,
    pub steps_shared: u64,
    pub steps_exclusive: u64,
    pub shared_dim: usize,
    pub exclusive_dim: usize,
    pub seed: u64,
    pub coeffs: LossCoefficients,
    pub weight_sharing: bool,
    /// Pair each image with its own shared code instead of the other one's.
    pub non_ssr: bool,
    /// Encoder side minimizes `-log D` on joint samples instead of the
    /// min-max value.
    pub non_saturating: bool,
    /// Save a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-4,
            steps_shared: 3000,
            steps_exclusive: 3000,
            shared_dim: 64,
            exclusive_dim: 8,
            seed: 0,
            coeffs: LossCoefficients::default(),
            weight_sharing: false,
            non_ssr: false,
            non_saturating: false,
            checkpoint_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.coeffs.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.shared_dim == 0 || self.exclusive_dim == 0 {
            return Err(Error::Config("representation sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    /// Training pairs use indices `0..n_pairs`; evaluation pairs follow.
    pub n_pairs: usize,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Glyph,
            n_pairs: 10_000,
            out_dir: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for key `{key}` (expected true or false)"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = value.parse()?,
            "n_pairs" => self.n_pairs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "steps_shared" => t.steps_shared = parse(key, value)?,
            "steps_exclusive" => t.steps_exclusive = parse(key, value)?,
            "shared_dim" => t.shared_dim = parse(key, value)?,
            "exclusive_dim" => t.exclusive_dim = parse(key, value)?,
            "alpha_sh" => t.coeffs.alpha_sh = parse(key, value)?,
            "beta_sh" => t.coeffs.beta_sh = parse(key, value)?,
            "gamma" => t.coeffs.gamma = parse(key, value)?,
            "alpha_ex" => t.coeffs.alpha_ex = parse(key, value)?,
            "beta_ex" => t.coeffs.beta_ex = parse(key, value)?,
            "lambda_adv" => t.coeffs.lambda_adv = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "weight_sharing" => t.weight_sharing = parse_bool(key, value)?,
            "non_ssr" => t.non_ssr = parse_bool(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let c = &t.coeffs;
        Ok(match key {
            "dataset" => match self.dataset {
                DatasetKind::Glyph => "glyph".into(),
                DatasetKind::FactorGrid => "factor-grid".into(),
            },
            "n_pairs" => self.n_pairs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "steps_shared" => t.steps_shared.to_string(),
            "steps_exclusive" => t.steps_exclusive.to_string(),
            "shared_dim" => t.shared_dim.to_string(),
            "exclusive_dim" => t.exclusive_dim.to_string(),
            "alpha_sh" => c.alpha_sh.to_string(),
            "beta_sh" => c.beta_sh.to_string(),
            "gamma" => c.gamma.to_string(),
            "alpha_ex" => c.alpha_ex.to_string(),
            "beta_ex" => c.beta_ex.to_string(),
            "lambda_adv" => c.lambda_adv.to_string(),
            "seed" => t.seed.to_string(),
            "weight_sharing" => t.weight_sharing.to_string(),
            "non_ssr" => t.non_ssr.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    /// Applies `key=value` lines on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip_prefix(&e))))?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical text: every key in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            writeln!(s, "{key}={}", self.get(key).expect("known key")).unwrap();
        }
        s
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config: ").map(str::to_string).unwrap_or(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.coeffs.alpha_sh, 0.5);
        assert_eq!(c.train.coeffs.beta_sh, 1.0);
        assert_eq!(c.train.coeffs.gamma, 0.1);
        assert_eq!(c.train.coeffs.alpha_ex, 0.5);
        assert_eq!(c.train.coeffs.beta_ex, 1.0);
    }

    #[test]
    fn text_round_trips() {
        let mut c = RunConfig::default();
        c.set("dataset", "factor-grid").unwrap();
        c.set("lambda_adv", "0.005").unwrap();
        c.set("weight_sharing", "true").unwrap();
        c.set("out_dir", "/tmp/x y").unwrap();
        let back = RunConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
        assert_eq!(c.to_text().lines().count(), CONFIG_KEYS.len());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = RunConfig::parse_str("# run\n\nseed = 7\n  n_pairs=100\n").unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.n_pairs, 100);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_named() {
        let e = RunConfig::parse_str("seed=1\nlearning_rate=3\n").unwrap_err().to_string();
        assert!(e.contains("learning_rate") && e.contains("line 2"), "{e}");
        let e = RunConfig::parse_str("batch_size=many").unwrap_err().to_string();
        assert!(e.contains("batch_size") && e.contains("many"), "{e}");
        assert!(RunConfig::parse_str("gamma=-1").is_err());
        assert!(RunConfig::parse_str("no equals sign").is_err());
        assert!(RunConfig::parse_str("dataset=mnist").is_err());
    }
}
