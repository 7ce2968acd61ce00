//! Sanity check of the JSD estimator on correlated 2-D Gaussians, where the
//! true mutual information is `-0.5 ln(1 - rho^2)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Session, Tensor};
use crate::error::{Error, Result};
use crate::objectives::{jsd_bound_value, jsd_mi_lower_bound, make_negative_pairing};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBoundConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr: f32,
    /// Samples used for the final (held-out) bound estimate.
    pub eval_samples: usize,
}

impl Default for GaussianBoundConfig {
    fn default() -> Self {
        GaussianBoundConfig {
            steps: 2000,
            batch_size: 256,
            hidden: 64,
            lr: 1e-3,
            eval_samples: 8192,
        }
    }
}

/// Closed-form MI in nats of a bivariate standard normal with correlation `rho`.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

/// `n` samples `(x, z)` with unit variances and correlation `rho`.
pub fn gaussian_pairs(n: usize, rho: f32, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<f32>) {
    let c = (1.0 - rho * rho).max(0.0).sqrt();
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f32 = StandardNormal.sample(rng);
        let b: f32 = StandardNormal.sample(rng);
        x.push(a);
        z.push(rho * a + c * b);
    }
    (x, z)
}

const SCORER: &str = "scorer";

fn init_scorer(hidden: usize, rng: &mut ChaCha8Rng) -> ParamStore {
    use rand::Rng;
    let mut store = ParamStore::new();
    let mut layer = |name: &str, fan_in: usize, fan_out: usize, store: &mut ParamStore| {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        store.insert(format!("{SCORER}.{name}.w"), Tensor::new(vec![fan_in, fan_out], w).unwrap());
        store.insert(format!("{SCORER}.{name}.b"), Tensor::zeros(&[fan_out]));
    };
    layer("l1", 2, hidden, &mut store);
    layer("l2", hidden, hidden, &mut store);
    layer("l3", hidden, 1, &mut store);
    store
}

fn scores(s: &mut Session, x: &[f32], z: &[f32]) -> Result<crate::autodiff::Var> {
    let n = x.len();
    let pairs: Vec<f32> = x.iter().zip(z).flat_map(|(&a, &b)| [a, b]).collect();
    let mut h = s.g.constant(Tensor::new(vec![n, 2], pairs)?)?;
    for (i, l) in ["l1", "l2", "l3"].iter().enumerate() {
        let w = s.param(&format!("{SCORER}.{l}.w"))?;
        let b = s.param(&format!("{SCORER}.{l}.b"))?;
        h = s.g.matmul(h, w)?;
        h = s.g.add(h, b)?;
        if i < 2 {
            h = s.g.relu(h)?;
        }
    }
    s.g.reshape(h, &[n])
}

/// Trains a small MLP scorer to maximize the JSD bound on `(x, z)` pairs
/// with correlation `rho`, then returns the bound on fresh samples.
pub fn trained_gaussian_bound(rho: f32, config: &GaussianBoundConfig, seed: u64) -> Result<f64> {
    if !(-1.0 < rho && rho < 1.0) {
        return Err(Error::invalid("trained_gaussian_bound", format!("rho must be in (-1, 1), got {rho}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = init_scorer(config.hidden, &mut rng);
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr));
    let shuffled = |z: &[f32], seed: u64| -> Result<Vec<f32>> {
        let p = make_negative_pairing(z.len(), seed)?;
        Ok(p.as_slice().iter().map(|&j| z[j]).collect())
    };
    for step in 0..config.steps {
        let (x, z) = gaussian_pairs(config.batch_size, rho, &mut rng);
        let z_neg = shuffled(&z, seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))?;
        let mut s = Session::new(&store, &[SCORER]);
        let pos = scores(&mut s, &x, &z)?;
        let neg = scores(&mut s, &x, &z_neg)?;
        let bound = jsd_mi_lower_bound(&mut s.g, pos, neg)?;
        let loss = s.g.neg(bound)?;
        let grads = s.backward(loss)?;
        opt.step(&mut store, &grads)?;
    }
    let (x, z) = gaussian_pairs(config.eval_samples, rho, &mut rng);
    let z_neg = shuffled(&z, !seed)?;
    let mut s = Session::inference(&store);
    let pos = scores(&mut s, &x, &z)?;
    let neg = scores(&mut s, &x, &z_neg)?;
    jsd_bound_value(s.g.value(pos).data(), s.g.value(neg).data())
}
