//! Small MLP classifiers trained on frozen representations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Session, Tensor, Var};
use crate::error::{Error, Result};

pub const HIDDEN_LAYERS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub lr: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of rows used for training; the rest is held out.
    pub train_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            lr: 1e-3,
            steps: 3000,
            batch_size: 128,
            seed: 0,
            train_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub params: ParamStore,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub n_classes: usize,
    pub train_rows: usize,
    pub test_rows: usize,
}

const NET: &str = "probe";

/// Deterministic split of `0..n` into train and test indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5_A5A5_A5A5));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    // both sides non-empty whenever there are at least two rows
    let n_train = if n >= 2 { n_train.clamp(1, n - 1) } else { n };
    let test = idx.split_off(n_train);
    (idx, test)
}

fn init(input: usize, hidden: usize, classes: usize, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut store = ParamStore::new();
    let dims = [(input, hidden), (hidden, hidden), (hidden, classes)];
    for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let b = 1.0 / (fan_in as f32).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-b..b)).collect();
        store.insert(format!("{NET}.l{i}.w"), Tensor::new(vec![fan_in, fan_out], w).unwrap());
        store.insert(format!("{NET}.l{i}.b"), Tensor::zeros(&[fan_out]));
    }
    store
}

fn logits(s: &mut Session, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..=HIDDEN_LAYERS {
        let w = s.param(&format!("{NET}.l{i}.w"))?;
        let b = s.param(&format!("{NET}.l{i}.b"))?;
        h = s.g.matmul(h, w)?;
        h = s.g.add(h, b)?;
        if i < HIDDEN_LAYERS {
            h = s.g.relu(h)?;
        }
    }
    Ok(h)
}

/// Per-dimension mean and standard deviation of the given rows.
fn standardizer(rows: &[&[f32]]) -> (Vec<f32>, Vec<f32>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0f64; d];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r.iter()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for r in rows {
        for ((s, &v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let std = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-6 {
                sd as f32
            } else {
                1.0
            }
        })
        .collect();
    (mean.iter().map(|&m| m as f32).collect(), std)
}

fn matrix(rows: &[&[f32]], mean: &[f32], std: &[f32]) -> Result<Tensor> {
    let d = mean.len();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend(r.iter().zip(mean).zip(std).map(|((&v, m), s)| (v - m) / s));
    }
    Tensor::new(vec![rows.len(), d], data)
}

fn accuracy(store: &ParamStore, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut s = Session::inference(store);
    let xv = s.g.constant(x.clone())?;
    let out = logits(&mut s, xv)?;
    let t = s.g.value(out);
    let correct = (0..labels.len())
        .filter(|&i| {
            let row = t.row(i);
            let argmax = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            argmax == labels[i]
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Trains a 2-hidden-layer classifier on the training split of
/// `(reps, labels)` and reports its accuracy on the held-out split.
pub fn train_probe(reps: &[Vec<f32>], labels: &[i32], n_classes: usize, config: &ProbeConfig) -> Result<ProbeResult> {
    if reps.len() != labels.len() {
        return Err(Error::invalid(
            "train_probe",
            format!("{} representations but {} labels", reps.len(), labels.len()),
        ));
    }
    if reps.len() < 2 {
        return Err(Error::invalid("train_probe", "need at least two rows"));
    }
    let dim = reps[0].len();
    if dim == 0 || reps.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("train_probe", "representations must share one positive length"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < 0 || l as usize >= n_classes) {
        return Err(Error::invalid("train_probe", format!("label {bad} outside 0..{n_classes}")));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::invalid("train_probe", "labels contain a single class"));
    }
    let (train, test) = split_indices(reps.len(), config.train_fraction, config.seed);
    let train_rows: Vec<&[f32]> = train.iter().map(|&i| reps[i].as_slice()).collect();
    let test_rows: Vec<&[f32]> = test.iter().map(|&i| reps[i].as_slice()).collect();
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i] as usize).collect();
    let test_labels: Vec<usize> = test.iter().map(|&i| labels[i] as usize).collect();
    let (mean, std) = standardizer(&train_rows);
    let x_train = matrix(&train_rows, &mean, &std)?;
    let x_test = matrix(&test_rows, &mean, &std)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = init(dim, config.hidden, n_classes, &mut rng);
    let mut opt = Adam::new(AdamConfig::with_lr(config.lr));
    let batch = config.batch_size.min(train.len()).max(1);
    for _ in 0..config.steps {
        let rows: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..train.len())).collect();
        let xb: Vec<&[f32]> = rows.iter().map(|&r| x_train.row(r)).collect();
        let mut onehot = vec![0.0f32; batch * n_classes];
        for (k, &r) in rows.iter().enumerate() {
            onehot[k * n_classes + train_labels[r]] = 1.0;
        }
        let mut s = Session::new(&store, &[NET]);
        let xv = s.g.constant(Tensor::stack_rows(&xb, &[dim])?)?;
        let target = s.g.constant(Tensor::new(vec![batch, n_classes], onehot)?)?;
        let out = logits(&mut s, xv)?;
        let lsm = s.g.log_softmax(out)?;
        let picked = s.g.mul(lsm, target)?;
        let total = s.g.sum(picked, &[1])?;
        let nll = s.g.mean_all(total)?;
        let loss = s.g.neg(nll)?;
        let grads = s.backward(loss)?;
        opt.step(&mut store, &grads)?;
    }
    let train_accuracy = accuracy(&store, &x_train, &train_labels)?;
    let test_accuracy = accuracy(&store, &x_test, &test_labels)?;
    Ok(ProbeResult {
        params: store,
        train_accuracy,
        test_accuracy,
        n_classes,
        train_rows: train.len(),
        test_rows: test.len(),
    })
}
