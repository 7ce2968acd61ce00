//! Central finite-difference check of every differentiable operator.
//!
//! For each operator a small random input set is drawn from a seed, the
//! scalar `L = sum(op(inputs) * R)` is formed with a fixed random projection
//! `R`, and the analytic gradient from [`Graph::backward`] is compared against
//! `(L(x + h) - L(x - h)) / 2h` evaluated in `f64` from the forward values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f32 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: &'static str,
    pub seed: u64,
    /// `||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2)`.
    pub rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rel_error < FD_TOLERANCE
    }
}

type Build = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type Apply = fn(&mut Graph, &[Var]) -> Result<Var>;

struct Case {
    name: &'static str,
    build: Build,
    apply: Apply,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Values bounded away from zero so kinks stay outside the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1f32..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            build: |r| vec![uniform(r, &[3, 4]), uniform(r, &[4, 5])],
            apply: |g, v| g.matmul(v[0], v[1]),
        },
        Case {
            name: "conv2d_stride1_pad1",
            build: |r| vec![uniform(r, &[2, 5, 5, 2]), uniform(r, &[3, 3, 2, 3])],
            apply: |g, v| g.conv2d(v[0], v[1], 1, 1),
        },
        Case {
            name: "conv2d_stride2_pad1",
            build: |r| vec![uniform(r, &[2, 6, 6, 2]), uniform(r, &[4, 4, 2, 3])],
            apply: |g, v| g.conv2d(v[0], v[1], 2, 1),
        },
        Case {
            name: "conv2d_1x1",
            build: |r| vec![uniform(r, &[2, 3, 3, 4]), uniform(r, &[1, 1, 4, 3])],
            apply: |g, v| g.conv2d(v[0], v[1], 1, 0),
        },
        Case {
            name: "bias_add_broadcast",
            build: |r| vec![uniform(r, &[2, 3, 3, 4]), uniform(r, &[4])],
            apply: |g, v| g.add(v[0], v[1]),
        },
        Case {
            name: "add",
            build: |r| vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])],
            apply: |g, v| g.add(v[0], v[1]),
        },
        Case {
            name: "sub_broadcast",
            build: |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 1, 4])],
            apply: |g, v| g.sub(v[0], v[1]),
        },
        Case {
            name: "mul_broadcast",
            build: |r| vec![uniform(r, &[3, 4]), uniform(r, &[3, 1])],
            apply: |g, v| g.mul(v[0], v[1]),
        },
        Case {
            name: "scale",
            build: |r| vec![uniform(r, &[5])],
            apply: |g, v| g.scale(v[0], -1.7),
        },
        Case {
            name: "relu",
            build: |r| vec![away_from_zero(r, &[4, 5])],
            apply: |g, v| g.relu(v[0]),
        },
        Case {
            name: "leaky_relu",
            build: |r| vec![away_from_zero(r, &[4, 5])],
            apply: |g, v| g.leaky_relu(v[0], 0.2),
        },
        Case {
            name: "sigmoid",
            build: |r| vec![uniform(r, &[4, 5])],
            apply: |g, v| g.sigmoid(v[0]),
        },
        Case {
            name: "softplus",
            build: |r| vec![uniform(r, &[4, 5])],
            apply: |g, v| g.softplus(v[0]),
        },
        Case {
            name: "abs",
            build: |r| vec![away_from_zero(r, &[4, 5])],
            apply: |g, v| g.abs(v[0]),
        },
        Case {
            name: "mean_axes",
            build: |r| vec![uniform(r, &[2, 3, 4])],
            apply: |g, v| g.mean(v[0], &[0, 2]),
        },
        Case {
            name: "sum_axes",
            build: |r| vec![uniform(r, &[2, 3, 4])],
            apply: |g, v| g.sum(v[0], &[1]),
        },
        Case {
            name: "concat",
            build: |r| vec![uniform(r, &[2, 3, 2]), uniform(r, &[2, 3, 4])],
            apply: |g, v| g.concat(&[v[0], v[1]], 2),
        },
        Case {
            name: "reshape",
            build: |r| vec![uniform(r, &[2, 3, 4])],
            apply: |g, v| g.reshape(v[0], &[6, 4]),
        },
        Case {
            name: "gather_rows",
            build: |r| vec![uniform(r, &[4, 3])],
            apply: |g, v| g.gather_rows(v[0], &[2, 0, 3, 1, 2]),
        },
        Case {
            name: "log_softmax",
            build: |r| vec![uniform(r, &[3, 5])],
            apply: |g, v| g.log_softmax(v[0]),
        },
    ]
}

pub fn operator_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

fn projected(case: &Case, inputs: &[Tensor], weights: &[f32]) -> Result<f64> {
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = (case.apply)(&mut g, &vars)?;
    Ok(g.value(out)
        .data()
        .iter()
        .zip(weights)
        .map(|(&o, &w)| o as f64 * w as f64)
        .sum())
}

fn run_case(case: &Case, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = (case.build)(&mut rng);

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = (case.apply)(&mut g, &vars)?;
    let weights = uniform(&mut rng, g.shape(out));
    let w = g.constant(weights.clone())?;
    let prod = g.mul(out, w)?;
    let axes: Vec<usize> = (0..g.shape(prod).len()).collect();
    let loss = g.sum(prod, &axes)?;
    let grads = g.backward(loss)?;

    let (mut diff2, mut a2, mut n2) = (0f64, 0f64, 0f64);
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).expect("leaf gradient").data().to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            let x = inputs[k].data()[j];
            plus[k].data_mut()[j] = x + FD_STEP;
            minus[k].data_mut()[j] = x - FD_STEP;
            let step = plus[k].data()[j] as f64 - minus[k].data()[j] as f64;
            let numeric =
                (projected(case, &plus, weights.data())? - projected(case, &minus, weights.data())?) / step;
            diff2 += (a as f64 - numeric).powi(2);
            a2 += (a as f64).powi(2);
            n2 += numeric.powi(2);
        }
    }
    let denom = a2.sqrt().max(n2.sqrt()).max(1e-12);
    Ok(GradCheckReport {
        op: case.name,
        seed,
        rel_error: diff2.sqrt() / denom,
    })
}

/// Checks every operator under every seed.
pub fn check_all(seeds: &[u64]) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for case in cases() {
        for &s in seeds {
            out.push(run_case(&case, s)?);
        }
    }
    Ok(out)
}
