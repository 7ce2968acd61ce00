//! Multi-run experiments: the adversarial-weight sweep and the ablation
//! suite. Every run shares the base seed, so variants differ only in the
//! setting under study.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::{distance_to_ideal, probe_factors, representations, AccuracyRow, ProbeConfig};
use crate::config::TrainConfig;
use crate::data::PairDataset;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, Stage};
use crate::trainer::{new_bundle, train_exclusive, train_shared, Domain, Representation, RunOutput};

/// The adversarial weights of the sensitivity study.
pub const DEFAULT_LAMBDAS: [f32; 5] = [0.0, 0.005, 0.01, 0.025, 0.05];

fn run_output(root: Option<&Path>, sub: &str) -> Result<RunOutput> {
    match root {
        Some(r) => {
            let dir = r.join(sub);
            std::fs::create_dir_all(&dir)?;
            Ok(RunOutput::new(dir))
        }
        None => Ok(RunOutput::none()),
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub lambda: f32,
    /// Domain-X exclusive-representation probe accuracy for every factor.
    pub accuracies: Vec<AccuracyRow>,
    pub bundle: ModelBundle,
}

impl SweepPoint {
    pub fn accuracy(&self, factor: &str) -> Option<f64> {
        self.accuracies.iter().find(|r| r.factor == factor).map(|r| r.accuracy)
    }
}

/// Trains stage 2 from the same stage-1 model once per adversarial weight
/// and probes the exclusive representation of each result.
pub fn lambda_sweep(
    stage1: &ModelBundle,
    train: &PairDataset,
    eval: &PairDataset,
    base: &TrainConfig,
    values: &[f32],
    probe: &ProbeConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepPoint>> {
    if stage1.stage != Stage::Shared {
        return Err(Error::Config("lambda_sweep needs a stage-1 model".into()));
    }
    values
        .iter()
        .map(|&lambda| {
            let mut config = base.clone();
            config.coeffs.lambda_adv = lambda;
            let mut bundle = stage1.clone();
            let mut out = run_output(out_dir, &format!("lambda_{lambda}"))?;
            info!("sweep: training stage 2 with lambda_adv = {lambda}");
            train_exclusive(&mut bundle, train, &config, &mut out)?;
            let reps = representations(&bundle, eval, Representation::Exclusive, Domain::X)?;
            let accuracies = probe_factors(&reps, eval, Representation::Exclusive, Domain::X, probe)?;
            Ok(SweepPoint {
                lambda,
                accuracies,
                bundle,
            })
        })
        .collect()
}

/// `lambda,factor,accuracy` with one row per (weight, factor).
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("lambda,factor,accuracy\n");
    for p in points {
        for r in &p.accuracies {
            writeln!(s, "{},{},{}", p.lambda, r.factor, r.accuracy).unwrap();
        }
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    NonSsr,
    GammaZero,
    AlphaShZero,
    BetaShZero,
    AlphaExZero,
    BetaExZero,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::NonSsr,
        Variant::GammaZero,
        Variant::AlphaShZero,
        Variant::BetaShZero,
        Variant::AlphaExZero,
        Variant::BetaExZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::NonSsr => "non-ssr",
            Variant::GammaZero => "gamma-0",
            Variant::AlphaShZero => "alpha-sh-0",
            Variant::BetaShZero => "beta-sh-0",
            Variant::AlphaExZero => "alpha-ex-0",
            Variant::BetaExZero => "beta-ex-0",
        }
    }

    /// The stage whose training the variant changes.
    pub fn stage(self) -> Stage {
        match self {
            Variant::AlphaExZero | Variant::BetaExZero => Stage::Exclusive,
            _ => Stage::Shared,
        }
    }

    pub fn apply(self, config: &mut TrainConfig) {
        let c = &mut config.coeffs;
        match self {
            Variant::Baseline => {}
            Variant::NonSsr => config.non_ssr = true,
            Variant::GammaZero => c.gamma = 0.0,
            Variant::AlphaShZero => c.alpha_sh = 0.0,
            Variant::BetaShZero => c.beta_sh = 0.0,
            Variant::AlphaExZero => c.alpha_ex = 0.0,
            Variant::BetaExZero => c.beta_ex = 0.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Domain-X shared-representation probe accuracies.
    pub shared: Vec<AccuracyRow>,
    pub shared_distance: f64,
    /// Domain-X exclusive-representation accuracies, present for stage-2
    /// variants and for the baseline when stage-2 variants are requested.
    pub exclusive: Option<Vec<AccuracyRow>>,
    pub exclusive_distance: Option<f64>,
}

impl AblationRow {
    pub fn shared_accuracy(&self, factor: &str) -> Option<f64> {
        self.shared.iter().find(|r| r.factor == factor).map(|r| r.accuracy)
    }
}

fn probe_rep(bundle: &ModelBundle, eval: &PairDataset, rep: Representation, probe: &ProbeConfig) -> Result<(Vec<AccuracyRow>, f64)> {
    let reps = representations(bundle, eval, rep, Domain::X)?;
    let rows = probe_factors(&reps, eval, rep, Domain::X, probe)?;
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let ideal: Vec<f64> = rows.iter().map(|r| r.ideal).collect();
    let d = distance_to_ideal(&acc, &ideal)?;
    Ok((rows, d))
}

/// Runs each variant in the given order with the base seed. `baseline` may
/// supply an already trained stage-1 baseline model, which is then reused
/// for the baseline row and as the starting point of stage-2 variants.
pub fn ablation_suite(
    train: &PairDataset,
    eval: &PairDataset,
    base: &TrainConfig,
    variants: &[Variant],
    probe: &ProbeConfig,
    baseline: Option<ModelBundle>,
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    if let Some(b) = &baseline {
        if b.stage != Stage::Shared {
            return Err(Error::Config("the baseline for ablation must be a stage-1 model".into()));
        }
    }
    let wants_stage2 = variants.iter().any(|v| v.stage() == Stage::Exclusive);
    let mut stage1 = baseline;
    let mut baseline_stage1 = |out: &mut RunOutput| -> Result<ModelBundle> {
        if let Some(b) = &stage1 {
            return Ok(b.clone());
        }
        let mut b = new_bundle(train, base);
        train_shared(&mut b, train, base, out)?;
        stage1 = Some(b.clone());
        Ok(b)
    };
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        info!("ablation: {variant}");
        let mut config = base.clone();
        variant.apply(&mut config);
        let mut out = run_output(out_dir, variant.name())?;
        let row = match (variant, variant.stage()) {
            (Variant::Baseline, _) => {
                let mut b = baseline_stage1(&mut out)?;
                let (shared, shared_distance) = probe_rep(&b, eval, Representation::Shared, probe)?;
                let (exclusive, exclusive_distance) = if wants_stage2 {
                    train_exclusive(&mut b, train, &config, &mut out)?;
                    let (rows, d) = probe_rep(&b, eval, Representation::Exclusive, probe)?;
                    (Some(rows), Some(d))
                } else {
                    (None, None)
                };
                AblationRow {
                    variant,
                    shared,
                    shared_distance,
                    exclusive,
                    exclusive_distance,
                }
            }
            (_, Stage::Shared) => {
                let mut b = new_bundle(train, &config);
                train_shared(&mut b, train, &config, &mut out)?;
                let (shared, shared_distance) = probe_rep(&b, eval, Representation::Shared, probe)?;
                AblationRow {
                    variant,
                    shared,
                    shared_distance,
                    exclusive: None,
                    exclusive_distance: None,
                }
            }
            (_, Stage::Exclusive) => {
                let mut b = baseline_stage1(&mut run_output(out_dir, "baseline")?)?;
                let (shared, shared_distance) = probe_rep(&b, eval, Representation::Shared, probe)?;
                train_exclusive(&mut b, train, &config, &mut out)?;
                let (rows, d) = probe_rep(&b, eval, Representation::Exclusive, probe)?;
                AblationRow {
                    variant,
                    shared,
                    shared_distance,
                    exclusive: Some(rows),
                    exclusive_distance: Some(d),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// `variant,representation,factor,accuracy` plus one distance row per
/// representation.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,representation,factor,accuracy\n");
    for r in rows {
        for (rep, acc, d) in [
            ("shared", Some(&r.shared), Some(r.shared_distance)),
            ("exclusive", r.exclusive.as_ref(), r.exclusive_distance),
        ] {
            if let (Some(acc), Some(d)) = (acc, d) {
                for a in acc {
                    writeln!(s, "{},{rep},{},{}", r.variant, a.factor, a.accuracy).unwrap();
                }
                writeln!(s, "{},{rep},distance_to_ideal,{d}", r.variant).unwrap();
            }
        }
    }
    s
}
