//! Loss functions: the Jensen-Shannon mutual information lower bound, its
//! global and local instantiations, the cross-MI shared objective, the
//! exclusive objective and the adversarial joint-vs-marginal game.
//!
//! Stage objectives are returned as quantities to *maximize*; the trainer
//! minimizes their negation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Session, Var};
use crate::error::{Error, Result};
use crate::networks::{Discriminator, Encoder, GlobalStatNet, LocalStatNet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub alpha_sh: f32,
    pub beta_sh: f32,
    pub gamma: f32,
    pub alpha_ex: f32,
    pub beta_ex: f32,
    pub lambda_adv: f32,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        LossCoefficients {
            alpha_sh: 0.5,
            beta_sh: 1.0,
            gamma: 0.1,
            alpha_ex: 0.5,
            beta_ex: 1.0,
            lambda_adv: 0.025,
        }
    }
}

impl LossCoefficients {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_sh", self.alpha_sh),
            ("beta_sh", self.beta_sh),
            ("gamma", self.gamma),
            ("alpha_ex", self.alpha_ex),
            ("beta_ex", self.beta_ex),
            ("lambda_adv", self.lambda_adv),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Fixed-point-free permutation of batch indices: row `i` is paired with
/// row `index[i]` to emulate a draw from the product of marginals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativePairing {
    index: Vec<usize>,
}

impl NegativePairing {
    pub fn as_slice(&self) -> &[usize] {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Seeded shuffle `order`, then every element is sent to its successor in
/// `order` (cyclically). The result is a single cycle, hence a derangement.
pub fn make_negative_pairing(batch_size: usize, seed: u64) -> Result<NegativePairing> {
    if batch_size < 2 {
        return Err(Error::invalid(
            "make_negative_pairing",
            format!("batch size must be at least 2, got {batch_size}"),
        ));
    }
    let mut order: Vec<usize> = (0..batch_size).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut index = vec![0; batch_size];
    for i in 0..batch_size {
        index[order[i]] = order[(i + 1) % batch_size];
    }
    Ok(NegativePairing { index })
}

fn check_pairing(pairing: &NegativePairing, rows: usize) -> Result<()> {
    if pairing.len() != rows {
        return Err(Error::shape("negative_pairing", &[pairing.len()], &[rows]));
    }
    Ok(())
}

/// `mean(-softplus(-pos)) - mean(softplus(neg))`.
///
/// Both score tensors may have any shape; local score maps are averaged over
/// batch and locations alike.
pub fn jsd_mi_lower_bound(g: &mut Graph, pos: Var, neg: Var) -> Result<Var> {
    if g.value(pos).numel() == 0 || g.value(neg).numel() == 0 {
        return Err(Error::invalid("jsd_mi_lower_bound", "empty score set"));
    }
    let neg_pos = g.neg(pos)?;
    let sp_pos = g.softplus(neg_pos)?;
    let e_joint = g.mean_all(sp_pos)?;
    let sp_neg = g.softplus(neg)?;
    let e_marg = g.mean_all(sp_neg)?;
    let sum = g.add(e_joint, e_marg)?;
    g.neg(sum)
}

/// Plain-value form of [`jsd_mi_lower_bound`] for evaluation code.
pub fn jsd_bound_value(pos: &[f32], neg: &[f32]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("jsd_mi_lower_bound", "empty score set"));
    }
    let sp = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    let joint = pos.iter().map(|&t| -sp(-(t as f64))).sum::<f64>() / pos.len() as f64;
    let marg = neg.iter().map(|&t| sp(t as f64)).sum::<f64>() / neg.len() as f64;
    Ok(joint - marg)
}

/// Global MI bound between images (via their feature maps) and `z`.
pub fn global_mi_loss(
    s: &mut Session,
    net: &GlobalStatNet,
    features: Var,
    z: Var,
    pairing: &NegativePairing,
) -> Result<Var> {
    check_pairing(pairing, s.g.shape(z)[0])?;
    let summary = net.summarize(s, features)?;
    let pos = net.score_summary(s, summary, z)?;
    let z_neg = s.g.gather_rows(z, pairing.as_slice())?;
    let neg = net.score_summary(s, summary, z_neg)?;
    jsd_mi_lower_bound(&mut s.g, pos, neg)
}

/// Local MI bound, averaged over every spatial location of the feature map.
pub fn local_mi_loss(
    s: &mut Session,
    net: &LocalStatNet,
    features: Var,
    z: Var,
    pairing: &NegativePairing,
) -> Result<Var> {
    check_pairing(pairing, s.g.shape(z)[0])?;
    let projected = net.project_features(s, features)?;
    let pos = net.score_projected(s, projected, z)?;
    let z_neg = s.g.gather_rows(z, pairing.as_slice())?;
    let neg = net.score_projected(s, projected, z_neg)?;
    jsd_mi_lower_bound(&mut s.g, pos, neg)
}

pub const COMPONENT_NAMES: [&str; 8] = [
    "L_global_x",
    "L_global_y",
    "L_local_x",
    "L_local_y",
    "L1",
    "L_adv_x",
    "L_adv_y",
    "objective",
];

/// Named scalar values of one objective evaluation, for logging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Components(BTreeMap<&'static str, f32>);

impl Components {
    fn new() -> Self {
        Components(COMPONENT_NAMES.iter().map(|&k| (k, 0.0)).collect())
    }

    pub fn get(&self, name: &str) -> f32 {
        self.0.get(name).copied().unwrap_or(0.0)
    }

    fn set(&mut self, name: &'static str, v: f32) {
        self.0.insert(name, v);
    }

    /// Values in [`COMPONENT_NAMES`] order.
    pub fn row(&self) -> Vec<f32> {
        COMPONENT_NAMES.iter().map(|k| self.get(k)).collect()
    }
}

/// Networks of the shared stage for one (X, Y) domain pair. With weight
/// sharing the `_x` and `_y` fields refer to the same parameters.
pub struct SharedStageNets<'a> {
    pub enc_x: &'a Encoder,
    pub enc_y: &'a Encoder,
    pub global_x: &'a GlobalStatNet,
    pub global_y: &'a GlobalStatNet,
    pub local_x: &'a LocalStatNet,
    pub local_y: &'a LocalStatNet,
}

pub struct SharedStageOutput {
    pub objective: Var,
    pub shared_x: Var,
    pub shared_y: Var,
    pub components: Components,
}

fn weighted_sum(g: &mut Graph, terms: &[(f32, Var)]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &(w, v) in terms {
        if w == 0.0 {
            continue;
        }
        let t = g.scale(v, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    Ok(acc)
}

/// `alpha_sh (G(X, S_Y) + G(Y, S_X)) + beta_sh (L(X, S_Y) + L(Y, S_X)) - gamma mean|S_X - S_Y|`.
///
/// With `cross == false` each image is paired with its own code instead
/// (the non-switched ablation). Terms with a zero coefficient are skipped
/// and logged as 0.
#[allow(clippy::too_many_arguments)]
pub fn shared_stage_loss(
    s: &mut Session,
    nets: &SharedStageNets,
    x: Var,
    y: Var,
    coeffs: &LossCoefficients,
    pairing_x: &NegativePairing,
    pairing_y: &NegativePairing,
    cross: bool,
) -> Result<SharedStageOutput> {
    let (fm_x, s_x) = nets.enc_x.encode(s, x)?;
    let (fm_y, s_y) = nets.enc_y.encode(s, y)?;
    let (z_for_x, z_for_y) = if cross { (s_y, s_x) } else { (s_x, s_y) };
    let mut comp = Components::new();
    let mut terms = Vec::new();

    if coeffs.alpha_sh != 0.0 {
        let gx = global_mi_loss(s, nets.global_x, fm_x, z_for_x, pairing_x)?;
        let gy = global_mi_loss(s, nets.global_y, fm_y, z_for_y, pairing_y)?;
        comp.set("L_global_x", s.g.value(gx).item());
        comp.set("L_global_y", s.g.value(gy).item());
        terms.extend([(coeffs.alpha_sh, gx), (coeffs.alpha_sh, gy)]);
    }
    if coeffs.beta_sh != 0.0 {
        let lx = local_mi_loss(s, nets.local_x, fm_x, z_for_x, pairing_x)?;
        let ly = local_mi_loss(s, nets.local_y, fm_y, z_for_y, pairing_y)?;
        comp.set("L_local_x", s.g.value(lx).item());
        comp.set("L_local_y", s.g.value(ly).item());
        terms.extend([(coeffs.beta_sh, lx), (coeffs.beta_sh, ly)]);
    }
    let diff = s.g.sub(s_x, s_y)?;
    let diff = s.g.abs(diff)?;
    let l1 = s.g.mean_all(diff)?;
    comp.set("L1", s.g.value(l1).item());
    // the L1 term always stays in the graph so that d(objective)/d(gamma) is defined
    terms.push((-coeffs.gamma, l1));
    let objective = match weighted_sum(&mut s.g, &terms)? {
        Some(v) => v,
        None => s.g.scale(l1, 0.0)?,
    };
    comp.set("objective", s.g.value(objective).item());
    Ok(SharedStageOutput {
        objective,
        shared_x: s_x,
        shared_y: s_y,
        components: comp,
    })
}

/// Both sides of the joint-vs-marginal game for one domain.
pub struct AdversarialLosses {
    /// `-(E_marg[log D] + E_joint[log(1 - D)])`, minimized over the
    /// discriminator. Representations enter detached.
    pub disc_loss: Var,
    /// The adversarial term seen by the encoder, with the discriminator
    /// detached. Under the min-max form this is
    /// `E_marg[log D] + E_joint[log(1 - D)]`; the non-saturating form is
    /// `E_joint[-log D]`. The encoder minimizes it.
    pub enc_loss: Var,
    /// Share of rows the discriminator labels correctly (joint as joint,
    /// shuffled as marginal), measured on the detached side.
    pub disc_accuracy: f32,
}

/// `E_marg[log sigmoid(l_m)] + E_joint[log(1 - sigmoid(l_j))]`.
fn adversarial_value(g: &mut Graph, joint_logits: Var, marg_logits: Var) -> Result<Var> {
    let nm = g.neg(marg_logits)?;
    let a = g.softplus(nm)?;
    let a = g.mean_all(a)?;
    let b = g.softplus(joint_logits)?;
    let b = g.mean_all(b)?;
    let sum = g.add(a, b)?;
    g.neg(sum)
}

pub fn adversarial_losses(
    s: &mut Session,
    disc: &Discriminator,
    shared: Var,
    exclusive: Var,
    pairing: &NegativePairing,
    non_saturating: bool,
) -> Result<AdversarialLosses> {
    check_pairing(pairing, s.g.shape(exclusive)[0])?;

    // discriminator side: representations are fixed inputs
    let sd = s.g.detach(shared)?;
    let ed = s.g.detach(exclusive)?;
    let ed_shuffled = s.g.gather_rows(ed, pairing.as_slice())?;
    let lj = disc.logits(s, sd, ed)?;
    let lm = disc.logits(s, sd, ed_shuffled)?;
    let value = adversarial_value(&mut s.g, lj, lm)?;
    let disc_loss = s.g.neg(value)?;
    let correct = s.g.value(lj).data().iter().filter(|&&v| v < 0.0).count()
        + s.g.value(lm).data().iter().filter(|&&v| v > 0.0).count();
    let disc_accuracy = correct as f32 / (2 * s.g.shape(lj)[0]) as f32;

    // encoder side: the discriminator is a fixed function
    let frozen = DetachedDiscriminator::bind(s, disc)?;
    let lj = frozen.logits(s, shared, exclusive)?;
    let enc_loss = if non_saturating {
        let n = s.g.neg(lj)?;
        let sp = s.g.softplus(n)?;
        s.g.mean_all(sp)?
    } else {
        let e_shuffled = s.g.gather_rows(exclusive, pairing.as_slice())?;
        let lm = frozen.logits(s, shared, e_shuffled)?;
        adversarial_value(&mut s.g, lj, lm)?
    };
    Ok(AdversarialLosses {
        disc_loss,
        enc_loss,
        disc_accuracy,
    })
}

/// Discriminator evaluated through detached copies of its parameters.
struct DetachedDiscriminator {
    layers: [(Var, Var); 3],
}

impl DetachedDiscriminator {
    fn bind(s: &mut Session, disc: &Discriminator) -> Result<Self> {
        let mut get = |name: &str| -> Result<Var> {
            let v = s.param(&format!("{}.{name}", disc.prefix))?;
            s.g.detach(v)
        };
        Ok(DetachedDiscriminator {
            layers: [
                (get("l1.w")?, get("l1.b")?),
                (get("l2.w")?, get("l2.b")?),
                (get("l3.w")?, get("l3.b")?),
            ],
        })
    }

    fn logits(&self, s: &mut Session, shared: Var, exclusive: Var) -> Result<Var> {
        let b = s.g.shape(shared)[0];
        let mut x = s.g.concat(&[shared, exclusive], 1)?;
        for (i, &(w, bias)) in self.layers.iter().enumerate() {
            x = s.g.matmul(x, w)?;
            x = s.g.add(x, bias)?;
            if i < 2 {
                x = s.g.relu(x)?;
            }
        }
        s.g.reshape(x, &[b])
    }
}

pub struct ExclusiveStageNets<'a> {
    pub shared_x: &'a Encoder,
    pub shared_y: &'a Encoder,
    pub enc_x: &'a Encoder,
    pub enc_y: &'a Encoder,
    pub global_x: &'a GlobalStatNet,
    pub global_y: &'a GlobalStatNet,
    pub local_x: &'a LocalStatNet,
    pub local_y: &'a LocalStatNet,
    pub disc_x: &'a Discriminator,
    pub disc_y: &'a Discriminator,
}

/// Negative pairings of one stage-2 batch: MI negatives and adversarial
/// shuffles, per domain.
pub struct ExclusivePairings {
    pub mi_x: NegativePairing,
    pub mi_y: NegativePairing,
    pub adv_x: NegativePairing,
    pub adv_y: NegativePairing,
}

pub struct ExclusiveStageOutput {
    /// `L_MI^ex - lambda_adv (L_adv^X + L_adv^Y)`, maximized over the
    /// exclusive encoders and statistics networks.
    pub objective: Var,
    /// Sum of both discriminators' losses.
    pub disc_loss: Var,
    pub disc_accuracy: f32,
    pub r_x: Var,
    pub r_y: Var,
    pub components: Components,
}

/// Stage-2 objective. The shared encoders are expected to be frozen in the
/// session's store; they are evaluated but never receive gradient.
#[allow(clippy::too_many_arguments)]
pub fn exclusive_stage_loss(
    s: &mut Session,
    nets: &ExclusiveStageNets,
    x: Var,
    y: Var,
    coeffs: &LossCoefficients,
    pairings: &ExclusivePairings,
    non_saturating: bool,
) -> Result<ExclusiveStageOutput> {
    let mut comp = Components::new();
    let mut terms = Vec::new();
    let mut adv_terms = Vec::new();
    let mut disc_losses = Vec::new();
    let mut acc = 0.0;
    let mut reps = Vec::new();
    let sides = [
        (x, nets.shared_x, nets.enc_x, nets.global_x, nets.local_x, nets.disc_x, &pairings.mi_x, &pairings.adv_x, "x"),
        (y, nets.shared_y, nets.enc_y, nets.global_y, nets.local_y, nets.disc_y, &pairings.mi_y, &pairings.adv_y, "y"),
    ];
    for (img, sh, ex, glob, loc, disc, mi_pair, adv_pair, side) in sides {
        let (_, shared) = sh.encode(s, img)?;
        let (fm, excl) = ex.encode(s, img)?;
        let r = s.g.concat(&[shared, excl], 1)?;
        reps.push(r);
        if coeffs.alpha_ex != 0.0 {
            let gl = global_mi_loss(s, glob, fm, r, mi_pair)?;
            comp.set(if side == "x" { "L_global_x" } else { "L_global_y" }, s.g.value(gl).item());
            terms.push((coeffs.alpha_ex, gl));
        }
        if coeffs.beta_ex != 0.0 {
            let lo = local_mi_loss(s, loc, fm, r, mi_pair)?;
            comp.set(if side == "x" { "L_local_x" } else { "L_local_y" }, s.g.value(lo).item());
            terms.push((coeffs.beta_ex, lo));
        }
        let adv = adversarial_losses(s, disc, shared, excl, adv_pair, non_saturating)?;
        comp.set(if side == "x" { "L_adv_x" } else { "L_adv_y" }, s.g.value(adv.enc_loss).item());
        adv_terms.push((-coeffs.lambda_adv, adv.enc_loss));
        disc_losses.push(adv.disc_loss);
        acc += adv.disc_accuracy / 2.0;
    }
    terms.extend(adv_terms.iter().copied());
    let objective = match weighted_sum(&mut s.g, &terms)? {
        Some(v) => v,
        // every coefficient zero: keep a well-defined (constant) objective
        None => s.g.scale(adv_terms[0].1, 0.0)?,
    };
    comp.set("objective", s.g.value(objective).item());
    let disc_loss = s.g.add(disc_losses[0], disc_losses[1])?;
    Ok(ExclusiveStageOutput {
        objective,
        disc_loss,
        disc_accuracy: acc,
        r_x: reps[0],
        r_y: reps[1],
        components: comp,
    })
}
