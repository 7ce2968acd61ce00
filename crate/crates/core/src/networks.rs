//! Encoders, statistics networks and the joint-vs-marginal discriminator.
//!
//! All networks are pure functions of `(params, inputs)`: they hold only a
//! parameter-name prefix and their configuration, and read weights from the
//! [`ParamStore`] bound to the current [`Session`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Session, Tensor, Var};
use crate::error::{Error, Result};

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;
const LEAK: f32 = 0.2;

pub const GLOBAL_HIDDEN: usize = 512;
pub const LOCAL_HIDDEN: usize = 256;
pub const DISC_HIDDEN: usize = 256;

/// DCGAN-style encoder geometry. The first `split` conv layers form the
/// feature extractor `C`; the remaining convs plus the final linear layer
/// form the head `f`, so the encoder is `f(C(x))`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub rep_dim: usize,
    pub conv_channels: Vec<usize>,
    pub split: usize,
}

impl EncoderConfig {
    pub fn new(height: usize, width: usize, channels: usize, rep_dim: usize) -> Self {
        EncoderConfig {
            height,
            width,
            channels,
            rep_dim,
            conv_channels: vec![32, 64, 128],
            split: 2,
        }
    }

    fn spatial_after(&self, layers: usize) -> (usize, usize) {
        let shrink = |s: usize| (s + 2 * PAD - KERNEL) / STRIDE + 1;
        (0..layers).fold((self.height, self.width), |(h, w), _| (shrink(h), shrink(w)))
    }

    /// `(h', w', c')` of the feature map `C(x)`.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.spatial_after(self.split);
        (h, w, self.conv_channels[self.split - 1])
    }

    fn head_input_len(&self) -> usize {
        let n = self.conv_channels.len();
        let (h, w) = self.spatial_after(n);
        h * w * self.conv_channels[n - 1]
    }
}

/// Deterministic per-tensor stream: the same (seed, name) always yields the
/// same initial values, independent of which other tensors exist.
fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17))
}

/// Bound gain of weights feeding a (leaky) rectifier with negative slope
/// `slope`: keeps activation variance constant through the layer (He).
fn rectified(slope: f32) -> f32 {
    (6.0 / (1.0 + slope * slope)).sqrt()
}

/// Bound gain of output layers and biases.
const LINEAR: f32 = 1.0;

/// Uniform in `[-gain/sqrt(fan_in), gain/sqrt(fan_in)]`.
fn init_uniform(store: &mut ParamStore, seed: u64, name: String, shape: &[usize], fan_in: usize, gain: f32) {
    let bound = gain / (fan_in as f32).sqrt();
    let mut rng = init_rng(seed, &name);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    store.insert(name, Tensor::from_parts(shape.to_vec(), data));
}

fn linear(s: &mut Session, x: Var, prefix: &str) -> Result<Var> {
    let w = s.param(&format!("{prefix}.w"))?;
    let b = s.param(&format!("{prefix}.b"))?;
    let y = s.g.matmul(x, w)?;
    s.g.add(y, b)
}

fn conv(s: &mut Session, x: Var, prefix: &str, stride: usize, pad: usize) -> Result<Var> {
    let w = s.param(&format!("{prefix}.w"))?;
    let b = s.param(&format!("{prefix}.b"))?;
    let y = s.g.conv2d(x, w, stride, pad)?;
    s.g.add(y, b)
}

fn expect_rows(op: &'static str, s: &Session, a: Var, b: Var) -> Result<usize> {
    let (sa, sb) = (s.g.shape(a), s.g.shape(b));
    if sa.is_empty() || sb.is_empty() || sa[0] != sb[0] {
        return Err(Error::shape(op, sa, sb));
    }
    Ok(sa[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub prefix: String,
    pub config: EncoderConfig,
}

impl Encoder {
    pub fn new(prefix: impl Into<String>, config: EncoderConfig) -> Self {
        Encoder {
            prefix: prefix.into(),
            config,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let c = &self.config;
        let mut in_c = c.channels;
        for (i, &out_c) in c.conv_channels.iter().enumerate() {
            let fan_in = KERNEL * KERNEL * in_c;
            let p = format!("{}.conv{}", self.prefix, i + 1);
            init_uniform(store, seed, format!("{p}.w"), &[KERNEL, KERNEL, in_c, out_c], fan_in, rectified(LEAK));
            init_uniform(store, seed, format!("{p}.b"), &[out_c], fan_in, LINEAR);
            in_c = out_c;
        }
        let fan_in = c.head_input_len();
        let p = format!("{}.fc", self.prefix);
        init_uniform(store, seed, format!("{p}.w"), &[fan_in, c.rep_dim], fan_in, LINEAR);
        init_uniform(store, seed, format!("{p}.b"), &[c.rep_dim], fan_in, LINEAR);
    }

    fn conv_stack(&self, s: &mut Session, mut h: Var, layers: std::ops::Range<usize>) -> Result<Var> {
        for i in layers {
            h = conv(s, h, &format!("{}.conv{}", self.prefix, i + 1), STRIDE, PAD)?;
            h = s.g.leaky_relu(h, LEAK)?;
        }
        Ok(h)
    }

    /// The feature extractor `C`: `(B, H, W, Ch) -> (B, h', w', c')`.
    pub fn features(&self, s: &mut Session, x: Var) -> Result<Var> {
        let c = &self.config;
        let shape = s.g.shape(x);
        if shape.len() != 4 || shape[1..] != [c.height, c.width, c.channels] {
            return Err(Error::shape("encode", shape, &[0, c.height, c.width, c.channels]));
        }
        self.conv_stack(s, x, 0..c.split)
    }

    /// The head `f`: feature map to a flat `(B, rep_dim)` representation.
    pub fn head(&self, s: &mut Session, feature_map: Var) -> Result<Var> {
        let n = self.config.conv_channels.len();
        let h = self.conv_stack(s, feature_map, self.config.split..n)?;
        let h = s.g.flatten(h)?;
        linear(s, h, &format!("{}.fc", self.prefix))
    }

    /// Returns `(C(x), f(C(x)))`.
    pub fn encode(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        let fm = self.features(s, x)?;
        let rep = self.head(s, fm)?;
        Ok((fm, rep))
    }
}

/// Global statistics network: `T(C(x), z)` with one score per row.
///
/// The feature-map summary is computed once and can be reused for both the
/// aligned and the shuffled representation.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalStatNet {
    pub prefix: String,
    pub feature_len: usize,
    pub z_dim: usize,
}

impl GlobalStatNet {
    pub fn new(prefix: impl Into<String>, feature_shape: (usize, usize, usize), z_dim: usize) -> Self {
        GlobalStatNet {
            prefix: prefix.into(),
            feature_len: feature_shape.0 * feature_shape.1 * feature_shape.2,
            z_dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let p = &self.prefix;
        let fl = self.feature_len;
        init_uniform(store, seed, format!("{p}.summary.w"), &[fl, GLOBAL_HIDDEN], fl, rectified(0.0));
        init_uniform(store, seed, format!("{p}.summary.b"), &[GLOBAL_HIDDEN], fl, LINEAR);
        let fan = GLOBAL_HIDDEN + self.z_dim;
        init_uniform(store, seed, format!("{p}.hidden.w"), &[fan, GLOBAL_HIDDEN], fan, rectified(0.0));
        init_uniform(store, seed, format!("{p}.hidden.b"), &[GLOBAL_HIDDEN], fan, LINEAR);
        init_uniform(store, seed, format!("{p}.out.w"), &[GLOBAL_HIDDEN, 1], GLOBAL_HIDDEN, LINEAR);
        init_uniform(store, seed, format!("{p}.out.b"), &[1], GLOBAL_HIDDEN, LINEAR);
    }

    pub fn summarize(&self, s: &mut Session, feature_map: Var) -> Result<Var> {
        let flat = s.g.flatten(feature_map)?;
        if s.g.shape(flat)[1] != self.feature_len {
            return Err(Error::shape("global_score", s.g.shape(feature_map), &[self.feature_len]));
        }
        let h = linear(s, flat, &format!("{}.summary", self.prefix))?;
        s.g.relu(h)
    }

    pub fn score_summary(&self, s: &mut Session, summary: Var, z: Var) -> Result<Var> {
        let b = expect_rows("global_score", s, summary, z)?;
        if s.g.shape(z) != [b, self.z_dim] {
            return Err(Error::shape("global_score", s.g.shape(z), &[b, self.z_dim]));
        }
        let joined = s.g.concat(&[summary, z], 1)?;
        let h = linear(s, joined, &format!("{}.hidden", self.prefix))?;
        let h = s.g.relu(h)?;
        let out = linear(s, h, &format!("{}.out", self.prefix))?;
        s.g.reshape(out, &[b])
    }

    /// One unbounded score per row of `(feature_map, z)`.
    pub fn global_score(&self, s: &mut Session, feature_map: Var, z: Var) -> Result<Var> {
        expect_rows("global_score", s, feature_map, z)?;
        let summary = self.summarize(s, feature_map)?;
        self.score_summary(s, summary, z)
    }
}

/// Local statistics network: `z` is appended to every spatial location of
/// `C(x)` and scored by three 1x1 convolutions.
///
/// The first layer's weight is stored as two blocks, one for the feature
/// channels and one for `z`. Applying them separately and adding is the same
/// linear map as convolving the concatenation, and lets the feature block be
/// shared between aligned and shuffled `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalStatNet {
    pub prefix: String,
    pub feature_channels: usize,
    pub z_dim: usize,
}

impl LocalStatNet {
    pub fn new(prefix: impl Into<String>, feature_shape: (usize, usize, usize), z_dim: usize) -> Self {
        LocalStatNet {
            prefix: prefix.into(),
            feature_channels: feature_shape.2,
            z_dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let p = &self.prefix;
        let (c, zd, h) = (self.feature_channels, self.z_dim, LOCAL_HIDDEN);
        init_uniform(store, seed, format!("{p}.l1.w_fm"), &[1, 1, c, h], c + zd, rectified(0.0));
        init_uniform(store, seed, format!("{p}.l1.w_z"), &[zd, h], c + zd, rectified(0.0));
        init_uniform(store, seed, format!("{p}.l1.b"), &[h], c + zd, LINEAR);
        init_uniform(store, seed, format!("{p}.l2.w"), &[1, 1, h, h], h, rectified(0.0));
        init_uniform(store, seed, format!("{p}.l2.b"), &[h], h, LINEAR);
        init_uniform(store, seed, format!("{p}.l3.w"), &[1, 1, h, 1], h, LINEAR);
        init_uniform(store, seed, format!("{p}.l3.b"), &[1], h, LINEAR);
    }

    /// Feature-channel block of the first layer, `(B, h', w', hidden)`.
    pub fn project_features(&self, s: &mut Session, feature_map: Var) -> Result<Var> {
        let shape = s.g.shape(feature_map);
        if shape.len() != 4 || shape[3] != self.feature_channels {
            return Err(Error::shape("local_scores", shape, &[0, 0, 0, self.feature_channels]));
        }
        let w = s.param(&format!("{}.l1.w_fm", self.prefix))?;
        s.g.conv2d(feature_map, w, 1, 0)
    }

    pub fn score_projected(&self, s: &mut Session, projected: Var, z: Var) -> Result<Var> {
        let b = expect_rows("local_scores", s, projected, z)?;
        if s.g.shape(z) != [b, self.z_dim] {
            return Err(Error::shape("local_scores", s.g.shape(z), &[b, self.z_dim]));
        }
        let (h, w) = (s.g.shape(projected)[1], s.g.shape(projected)[2]);
        let p = &self.prefix;
        let wz = s.param(&format!("{p}.l1.w_z"))?;
        let zp = s.g.matmul(z, wz)?;
        let zp = s.g.reshape(zp, &[b, 1, 1, LOCAL_HIDDEN])?;
        let x = s.g.add(projected, zp)?;
        let b1 = s.param(&format!("{p}.l1.b"))?;
        let x = s.g.add(x, b1)?;
        let x = s.g.relu(x)?;
        let x = conv(s, x, &format!("{p}.l2"), 1, 0)?;
        let x = s.g.relu(x)?;
        let x = conv(s, x, &format!("{p}.l3"), 1, 0)?;
        s.g.reshape(x, &[b, h, w])
    }

    /// Score map `(B, h', w')`, one score per location of `C(x)`.
    pub fn local_scores(&self, s: &mut Session, feature_map: Var, z: Var) -> Result<Var> {
        expect_rows("local_scores", s, feature_map, z)?;
        let projected = self.project_features(s, feature_map)?;
        self.score_projected(s, projected, z)
    }
}

/// Three-layer fully connected classifier over `(S, E)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub prefix: String,
    pub shared_dim: usize,
    pub exclusive_dim: usize,
}

impl Discriminator {
    pub fn new(prefix: impl Into<String>, shared_dim: usize, exclusive_dim: usize) -> Self {
        Discriminator {
            prefix: prefix.into(),
            shared_dim,
            exclusive_dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let p = &self.prefix;
        let d = self.shared_dim + self.exclusive_dim;
        init_uniform(store, seed, format!("{p}.l1.w"), &[d, DISC_HIDDEN], d, rectified(0.0));
        init_uniform(store, seed, format!("{p}.l1.b"), &[DISC_HIDDEN], d, LINEAR);
        init_uniform(store, seed, format!("{p}.l2.w"), &[DISC_HIDDEN, DISC_HIDDEN], DISC_HIDDEN, rectified(0.0));
        init_uniform(store, seed, format!("{p}.l2.b"), &[DISC_HIDDEN], DISC_HIDDEN, LINEAR);
        init_uniform(store, seed, format!("{p}.l3.w"), &[DISC_HIDDEN, 1], DISC_HIDDEN, LINEAR);
        init_uniform(store, seed, format!("{p}.l3.b"), &[1], DISC_HIDDEN, LINEAR);
    }

    /// Pre-sigmoid outputs, one per row.
    pub fn logits(&self, s: &mut Session, shared: Var, exclusive: Var) -> Result<Var> {
        let b = expect_rows("discriminate", s, shared, exclusive)?;
        let (ss, se) = (s.g.shape(shared), s.g.shape(exclusive));
        if ss != [b, self.shared_dim] || se != [b, self.exclusive_dim] {
            return Err(Error::shape("discriminate", ss, se));
        }
        let x = s.g.concat(&[shared, exclusive], 1)?;
        let p = &self.prefix;
        let x = linear(s, x, &format!("{p}.l1"))?;
        let x = s.g.relu(x)?;
        let x = linear(s, x, &format!("{p}.l2"))?;
        let x = s.g.relu(x)?;
        let x = linear(s, x, &format!("{p}.l3"))?;
        s.g.reshape(x, &[b])
    }

    /// Probability that each row comes from the product of marginals.
    ///
    /// A read-out only: values are kept inside the open interval `(0, 1)`
    /// even where the `f32` sigmoid would round to an endpoint. Losses use
    /// [`Discriminator::logits`] instead.
    pub fn discriminate(&self, s: &mut Session, shared: Var, exclusive: Var) -> Result<Vec<f32>> {
        let logits = self.logits(s, shared, exclusive)?;
        let p = s.g.sigmoid(logits)?;
        const TOP: f32 = 1.0 - f32::EPSILON / 2.0;
        Ok(s.g
            .value(p)
            .data()
            .iter()
            .map(|&v| v.clamp(f32::MIN_POSITIVE, TOP))
            .collect())
    }
}

/// Zeroes the final layer of a network so that its output is constant.
pub fn zero_final_layer(store: &mut ParamStore, prefix: &str) {
    for suffix in ["out.w", "out.b", "l3.w", "l3.b"] {
        if let Some(t) = store.get_mut(&format!("{prefix}.{suffix}")) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(b: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * 32 * 32 * 3;
        Tensor::new(vec![b, 32, 32, 3], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn reps(b: usize, d: usize, scale: f32, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![b, d], (0..b * d).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    fn encoder(rep: usize) -> (Encoder, ParamStore) {
        let enc = Encoder::new("enc", EncoderConfig::new(32, 32, 3, rep));
        let mut store = ParamStore::new();
        enc.init(&mut store, 11);
        (enc, store)
    }

    #[test]
    fn shared_encoding_shapes() {
        let (enc, store) = encoder(64);
        let mut s = Session::inference(&store);
        let x = s.g.constant(images(64, 1)).unwrap();
        let (fm, rep) = enc.encode(&mut s, x).unwrap();
        assert_eq!(s.g.shape(rep), &[64, 64]);
        assert_eq!(s.g.shape(fm), &[64, 8, 8, 64]);
        assert_eq!(enc.config.feature_shape(), (8, 8, 64));
    }

    #[test]
    fn exclusive_encoding_shapes() {
        for dim in [8, 64] {
            let (enc, store) = encoder(dim);
            let mut s = Session::inference(&store);
            let x = s.g.constant(images(5, 2)).unwrap();
            let (_, rep) = enc.encode(&mut s, x).unwrap();
            assert_eq!(s.g.shape(rep), &[5, dim]);
        }
    }

    #[test]
    fn encoder_factorizes_into_head_of_features() {
        let (enc, store) = encoder(16);
        let mut s = Session::inference(&store);
        let x = s.g.constant(images(4, 3)).unwrap();
        let (_, rep) = enc.encode(&mut s, x).unwrap();
        let c = enc.features(&mut s, x).unwrap();
        let f = enc.head(&mut s, c).unwrap();
        assert_eq!(s.g.value(rep), s.g.value(f));
    }

    #[test]
    fn encoding_is_deterministic_and_checks_shape() {
        let (enc, store) = encoder(16);
        let run = || {
            let mut s = Session::inference(&store);
            let x = s.g.constant(images(3, 4)).unwrap();
            let (_, rep) = enc.encode(&mut s, x).unwrap();
            s.g.value(rep).clone()
        };
        assert_eq!(run(), run());
        let mut s = Session::inference(&store);
        let bad = s.g.constant(Tensor::zeros(&[2, 16, 16, 3])).unwrap();
        assert!(matches!(enc.encode(&mut s, bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn exclusive_encoder_ignores_other_networks() {
        let mut store = ParamStore::new();
        let shared = Encoder::new("sh", EncoderConfig::new(32, 32, 3, 16));
        let excl = Encoder::new("ex", EncoderConfig::new(32, 32, 3, 8));
        shared.init(&mut store, 1);
        excl.init(&mut store, 1);
        let run = |store: &ParamStore| {
            let mut s = Session::inference(store);
            let x = s.g.constant(images(2, 5)).unwrap();
            let (_, e) = excl.encode(&mut s, x).unwrap();
            s.g.value(e).clone()
        };
        let before = run(&store);
        shared.init(&mut store, 999);
        assert_eq!(before, run(&store));
    }

    #[test]
    fn zeroed_scorers_output_constants() {
        let fshape = (8, 8, 64);
        let glob = GlobalStatNet::new("g", fshape, 64);
        let loc = LocalStatNet::new("l", fshape, 64);
        let disc = Discriminator::new("d", 64, 8);
        let mut store = ParamStore::new();
        glob.init(&mut store, 3);
        loc.init(&mut store, 3);
        disc.init(&mut store, 3);
        for p in ["g", "l", "d"] {
            zero_final_layer(&mut store, p);
        }
        let mut s = Session::inference(&store);
        let fm = s.g.constant(reps(64, 8 * 8 * 64, 1.0, 1).reshape(&[64, 8, 8, 64]).unwrap()).unwrap();
        let z = s.g.constant(reps(64, 64, 1.0, 2)).unwrap();
        let e = s.g.constant(reps(64, 8, 1.0, 3)).unwrap();
        let gs = glob.global_score(&mut s, fm, z).unwrap();
        assert_eq!(s.g.shape(gs), &[64]);
        assert!(s.g.value(gs).data().iter().all(|&v| v == 0.0));
        let ls = loc.local_scores(&mut s, fm, z).unwrap();
        assert_eq!(s.g.shape(ls), &[64, 8, 8]);
        assert!(s.g.value(ls).data().iter().all(|&v| v == 0.0));
        let p = disc.discriminate(&mut s, z, e).unwrap();
        assert_eq!(p.len(), 64);
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn local_first_layer_equals_convolving_the_concatenation() {
        let fshape = (3, 3, 4);
        let loc = LocalStatNet::new("l", fshape, 5);
        let mut store = ParamStore::new();
        loc.init(&mut store, 7);
        let fm_t = reps(2, 36, 1.0, 1).reshape(&[2, 3, 3, 4]).unwrap();
        let z_t = reps(2, 5, 1.0, 2);
        let mut s = Session::inference(&store);
        let fm = s.g.constant(fm_t.clone()).unwrap();
        let z = s.g.constant(z_t.clone()).unwrap();
        let proj = loc.project_features(&mut s, fm).unwrap();
        let zw = s.param("l.l1.w_z").unwrap();
        let zp = s.g.matmul(z, zw).unwrap();
        let zp = s.g.reshape(zp, &[2, 1, 1, LOCAL_HIDDEN]).unwrap();
        let split = s.g.add(proj, zp).unwrap();

        // literal form: tile z over locations, concat on channels, one 1x1 conv
        let mut tiled = Vec::new();
        for b in 0..2 {
            for _ in 0..9 {
                tiled.extend_from_slice(z_t.row(b));
            }
        }
        let tiled = s.g.constant(Tensor::new(vec![2, 3, 3, 5], tiled).unwrap()).unwrap();
        let cat = s.g.concat(&[fm, tiled], 3).unwrap();
        let wfm = store.get("l.l1.w_fm").unwrap().data().to_vec();
        let wz = store.get("l.l1.w_z").unwrap().data().to_vec();
        let joint = Tensor::new(vec![1, 1, 9, LOCAL_HIDDEN], [wfm, wz].concat()).unwrap();
        let joint = s.g.constant(joint).unwrap();
        let literal = s.g.conv2d(cat, joint, 1, 0).unwrap();
        for (a, b) in s.g.value(split).data().iter().zip(s.g.value(literal).data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn local_map_rows_are_independent() {
        let fshape = (8, 8, 64);
        let loc = LocalStatNet::new("l", fshape, 16);
        let mut store = ParamStore::new();
        loc.init(&mut store, 5);
        let fm_t = reps(4, 8 * 8 * 64, 1.0, 9).reshape(&[4, 8, 8, 64]).unwrap();
        let z_t = reps(4, 16, 1.0, 10);
        let run = |z_t: Tensor| {
            let mut s = Session::inference(&store);
            let fm = s.g.constant(fm_t.clone()).unwrap();
            let z = s.g.constant(z_t).unwrap();
            let m = loc.local_scores(&mut s, fm, z).unwrap();
            s.g.value(m).clone()
        };
        let base = run(z_t.clone());
        let mut changed = z_t.clone();
        changed.data_mut()[2 * 16..3 * 16].iter_mut().for_each(|v| *v += 1.0);
        let other = run(changed);
        for row in 0..4 {
            let same = base.row(row) == other.row(row);
            assert_eq!(same, row != 2, "row {row}");
        }
    }

    #[test]
    fn discriminator_output_stays_open_for_huge_inputs() {
        let disc = Discriminator::new("d", 64, 8);
        let mut store = ParamStore::new();
        disc.init(&mut store, 21);
        let mut s = Session::inference(&store);
        let sv = s.g.constant(reps(64, 64, 1e3, 1)).unwrap();
        let ev = s.g.constant(reps(64, 8, 1e3, 2)).unwrap();
        let p = disc.discriminate(&mut s, sv, ev).unwrap();
        assert_eq!(p.len(), 64);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn scorers_reject_mismatched_batches() {
        let glob = GlobalStatNet::new("g", (8, 8, 64), 64);
        let mut store = ParamStore::new();
        glob.init(&mut store, 1);
        let mut s = Session::inference(&store);
        let fm = s.g.constant(Tensor::zeros(&[3, 8, 8, 64])).unwrap();
        let z = s.g.constant(Tensor::zeros(&[2, 64])).unwrap();
        assert!(glob.global_score(&mut s, fm, z).is_err());
        let z_bad = s.g.constant(Tensor::zeros(&[3, 10])).unwrap();
        assert!(glob.global_score(&mut s, fm, z_bad).is_err());
    }
}
