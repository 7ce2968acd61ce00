//! Procedural paired-image datasets with known shared and exclusive factors.

pub mod factor;
pub(crate) mod format;
pub mod glyph;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use factor::{gen_factor_pair, FactorGridConfig};
pub use format::{read_dataset, write_dataset, MAGIC};
pub use glyph::{gen_glyph_pair, GlyphPairConfig, Placement};

pub type Rgb = [f32; 3];

pub(crate) fn hsv(hue_deg: f32, s: f32, v: f32) -> Rgb {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Generator stream for one pair; depends only on `(seed, index)`.
pub(crate) fn pixel_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Glyph,
    FactorGrid,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glyph" => Ok(DatasetKind::Glyph),
            "factor-grid" => Ok(DatasetKind::FactorGrid),
            other => Err(Error::Config(format!("unknown dataset `{other}` (expected glyph or factor-grid)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
    /// Equal across the two images of every pair.
    pub shared: bool,
}

impl DatasetKind {
    pub fn factors(self) -> Vec<Factor> {
        match self {
            DatasetKind::Glyph => vec![
                Factor {
                    name: "glyph".into(),
                    cardinality: glyph::NUM_GLYPHS,
                    shared: true,
                },
                Factor {
                    name: "color".into(),
                    cardinality: glyph::NUM_COLORS,
                    shared: false,
                },
            ],
            DatasetKind::FactorGrid => (0..6)
                .map(|k| Factor {
                    name: factor::FACTOR_NAMES[k].into(),
                    cardinality: factor::CARDINALITIES[k],
                    shared: factor::SHARED[k],
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub size: usize,
    pub seed: u64,
    pub single_domain: bool,
}

impl DataConfig {
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        DataConfig {
            kind,
            size: 32,
            seed,
            single_domain: false,
        }
    }

    /// One pair: `(x, y, labels_x, labels_y)`.
    pub fn pair(&self, index: u64) -> (Vec<f32>, Vec<f32>, Vec<i32>, Vec<i32>) {
        match self.kind {
            DatasetKind::Glyph => {
                let cfg = GlyphPairConfig {
                    size: self.size,
                    seed: self.seed,
                    single_domain: self.single_domain,
                };
                let (x, y, lx, ly) = gen_glyph_pair(&cfg, index);
                (x, y, lx.to_vec(), ly.to_vec())
            }
            DatasetKind::FactorGrid => {
                let cfg = FactorGridConfig {
                    size: self.size,
                    seed: self.seed,
                };
                let (x, y, lx, ly) = gen_factor_pair(&cfg, index);
                (x, y, lx.to_vec(), ly.to_vec())
            }
        }
    }
}

/// A set of image pairs stored as flat row-major arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub kind: DatasetKind,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub factors: Vec<Factor>,
    images_x: Vec<f32>,
    images_y: Vec<f32>,
    labels_x: Vec<i32>,
    labels_y: Vec<i32>,
}

/// A batch of pairs ready for the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub images_x: Tensor,
    pub images_y: Tensor,
    /// `labels[i][k]` is factor `k` of row `i`.
    pub labels_x: Vec<Vec<i32>>,
    pub labels_y: Vec<Vec<i32>>,
}

impl PairDataset {
    /// Pairs with indices `start .. start + n`.
    pub fn generate(config: &DataConfig, start: u64, n: usize) -> Self {
        let mut ds = PairDataset::empty(config.kind, config.size, config.size, 3);
        for i in 0..n as u64 {
            let (x, y, lx, ly) = config.pair(start + i);
            ds.images_x.extend(x);
            ds.images_y.extend(y);
            ds.labels_x.extend(lx);
            ds.labels_y.extend(ly);
        }
        ds
    }

    pub fn empty(kind: DatasetKind, height: usize, width: usize, channels: usize) -> Self {
        PairDataset {
            kind,
            height,
            width,
            channels,
            factors: kind.factors(),
            images_x: Vec::new(),
            images_y: Vec::new(),
            labels_x: Vec::new(),
            labels_y: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        kind: DatasetKind,
        height: usize,
        width: usize,
        channels: usize,
        factors: Vec<Factor>,
        images_x: Vec<f32>,
        images_y: Vec<f32>,
        labels_x: Vec<i32>,
        labels_y: Vec<i32>,
    ) -> Self {
        PairDataset {
            kind,
            height,
            width,
            channels,
            factors,
            images_x,
            images_y,
            labels_x,
            labels_y,
        }
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        if self.factors.is_empty() {
            return self.images_x.len() / self.image_len().max(1);
        }
        self.labels_x.len() / self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_x(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images_x[i * n..(i + 1) * n]
    }

    pub fn image_y(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images_y[i * n..(i + 1) * n]
    }

    pub fn labels_x(&self, i: usize) -> &[i32] {
        let f = self.factors.len();
        &self.labels_x[i * f..(i + 1) * f]
    }

    pub fn labels_y(&self, i: usize) -> &[i32] {
        let f = self.factors.len();
        &self.labels_y[i * f..(i + 1) * f]
    }

    pub(crate) fn raw(&self) -> (&[f32], &[f32], &[i32], &[i32]) {
        (&self.images_x, &self.images_y, &self.labels_x, &self.labels_y)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<PairBatch> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid("batch", format!("index {bad} out of range for {} pairs", self.len())));
        }
        let shape = [self.height, self.width, self.channels];
        let xs: Vec<&[f32]> = indices.iter().map(|&i| self.image_x(i)).collect();
        let ys: Vec<&[f32]> = indices.iter().map(|&i| self.image_y(i)).collect();
        Ok(PairBatch {
            images_x: Tensor::stack_rows(&xs, &shape)?,
            images_y: Tensor::stack_rows(&ys, &shape)?,
            labels_x: indices.iter().map(|&i| self.labels_x(i).to_vec()).collect(),
            labels_y: indices.iter().map(|&i| self.labels_y(i).to_vec()).collect(),
        })
    }

    /// Index of a factor by name.
    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }
}
