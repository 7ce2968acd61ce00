//! Measuring what the learned representations contain: probe accuracies per
//! factor, distance to the ideal disentangled profile, nearest-neighbor
//! classification and retrieval, plus the sweep, ablation and MI-map tools.

mod knn;
mod mimap;
mod probe;
mod suites;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Factor, PairDataset};
use crate::error::Result;
use crate::model::{ModelBundle, Stage};
use crate::trainer::{encode_images, Domain, Representation};

pub use knn::{distance_to_ideal, knn_classify, retrieve};
pub use mimap::{extract_patch, mi_distance_map};
pub use probe::{split_indices, train_probe, ProbeConfig, ProbeResult, HIDDEN_LAYERS};
pub use suites::{
    ablation_csv, ablation_suite, lambda_sweep, sweep_csv, AblationRow, SweepPoint, Variant, DEFAULT_LAMBDAS,
};

/// Accuracy a representation would reach on `factor` if it were perfectly
/// disentangled: 1 on its own factors, chance on the others.
pub fn ideal_accuracy(rep: Representation, factor: &Factor) -> f64 {
    let chance = 1.0 / factor.cardinality as f64;
    match rep {
        Representation::Shared if factor.shared => 1.0,
        Representation::Exclusive if !factor.shared => 1.0,
        Representation::Full => 1.0,
        _ => chance,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub representation: Representation,
    pub domain: Domain,
    pub factor: String,
    pub accuracy: f64,
    pub chance: f64,
    pub ideal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub representation: Representation,
    pub domain: Domain,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnRow {
    pub representation: Representation,
    pub domain: Domain,
    pub factor: String,
    pub neighbors: usize,
    pub accuracy: f64,
}

/// Mean share of the top-`k` retrieved gallery items that carry the
/// query's label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub representation: Representation,
    pub domain: Domain,
    pub factor: String,
    pub k: usize,
    pub queries: usize,
    pub precision: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<AccuracyRow>,
    pub distances: Vec<DistanceRow>,
    pub knn: Vec<KnnRow>,
    pub retrieval: Vec<RetrievalRow>,
}

fn rep_name(r: Representation) -> &'static str {
    match r {
        Representation::Shared => "shared",
        Representation::Exclusive => "exclusive",
        Representation::Full => "full",
    }
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::X => "x",
        Domain::Y => "y",
    }
}

impl EvalReport {
    pub fn accuracy(&self, rep: Representation, domain: Domain, factor: &str) -> Option<f64> {
        self.accuracies
            .iter()
            .find(|r| r.representation == rep && r.domain == domain && r.factor == factor)
            .map(|r| r.accuracy)
    }

    pub fn distance(&self, rep: Representation, domain: Domain) -> Option<f64> {
        self.distances
            .iter()
            .find(|r| r.representation == rep && r.domain == domain)
            .map(|r| r.distance)
    }

    /// Human-readable summary.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<10} {:<6} {:<14} {:>9} {:>8} {:>8}", "rep", "domain", "factor", "accuracy", "chance", "ideal").unwrap();
        for r in &self.accuracies {
            writeln!(
                s,
                "{:<10} {:<6} {:<14} {:>9.4} {:>8.4} {:>8.4}",
                rep_name(r.representation),
                domain_name(r.domain),
                r.factor,
                r.accuracy,
                r.chance,
                r.ideal
            )
            .unwrap();
        }
        for d in &self.distances {
            writeln!(
                s,
                "distance to ideal ({} {}): {:.4}",
                rep_name(d.representation),
                domain_name(d.domain),
                d.distance
            )
            .unwrap();
        }
        for k in &self.knn {
            writeln!(
                s,
                "kNN N={} ({} {}) {}: {:.4}",
                k.neighbors,
                rep_name(k.representation),
                domain_name(k.domain),
                k.factor,
                k.accuracy
            )
            .unwrap();
        }
        for r in &self.retrieval {
            writeln!(
                s,
                "retrieval top-{} ({} {}) {}: {:.4} over {} queries",
                r.k,
                rep_name(r.representation),
                domain_name(r.domain),
                r.factor,
                r.precision,
                r.queries
            )
            .unwrap();
        }
        s
    }

    /// One row per (representation, domain, factor).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("representation,domain,factor,accuracy,chance,ideal\n");
        for r in &self.accuracies {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                rep_name(r.representation),
                domain_name(r.domain),
                r.factor,
                r.accuracy,
                r.chance,
                r.ideal
            )
            .unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub probe: ProbeConfig,
    pub knn_neighbors: Vec<usize>,
    pub retrieval_k: usize,
    pub retrieval_queries: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            probe: ProbeConfig::default(),
            knn_neighbors: vec![1, 5],
            retrieval_k: 10,
            retrieval_queries: 100,
        }
    }
}

/// Representations of every image of one domain.
pub fn representations(bundle: &ModelBundle, data: &PairDataset, rep: Representation, domain: Domain) -> Result<Vec<Vec<f32>>> {
    let images: Vec<&[f32]> = (0..data.len())
        .map(|i| match domain {
            Domain::X => data.image_x(i),
            Domain::Y => data.image_y(i),
        })
        .collect();
    encode_images(bundle, &images, rep, domain)
}

/// Factor `k` of every image of one domain.
pub fn factor_labels(data: &PairDataset, domain: Domain, k: usize) -> Vec<i32> {
    (0..data.len())
        .map(|i| match domain {
            Domain::X => data.labels_x(i)[k],
            Domain::Y => data.labels_y(i)[k],
        })
        .collect()
}

/// Probe accuracies of one representation for every factor.
pub fn probe_factors(
    reps: &[Vec<f32>],
    data: &PairDataset,
    rep: Representation,
    domain: Domain,
    probe: &ProbeConfig,
) -> Result<Vec<AccuracyRow>> {
    data.factors
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let labels = factor_labels(data, domain, k);
            let r = train_probe(reps, &labels, f.cardinality, probe)?;
            Ok(AccuracyRow {
                representation: rep,
                domain,
                factor: f.name.clone(),
                accuracy: r.test_accuracy,
                chance: 1.0 / f.cardinality as f64,
                ideal: ideal_accuracy(rep, f),
            })
        })
        .collect()
}

/// Probes, kNN and retrieval for the shared (and, in stage 2, exclusive)
/// representations of both domains of `data`.
pub fn evaluate_model(bundle: &ModelBundle, data: &PairDataset, opts: &EvalOptions) -> Result<EvalReport> {
    let mut reps = vec![Representation::Shared];
    if bundle.stage == Stage::Exclusive {
        reps.push(Representation::Exclusive);
    }
    let mut report = EvalReport::default();
    let (gallery_idx, query_idx) = split_indices(data.len(), opts.probe.train_fraction, opts.probe.seed);
    for &domain in &[Domain::X, Domain::Y] {
        for &rep in &reps {
            let r = representations(bundle, data, rep, domain)?;
            let rows = probe_factors(&r, data, rep, domain, &opts.probe)?;
            let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
            let ideal: Vec<f64> = rows.iter().map(|r| r.ideal).collect();
            report.distances.push(DistanceRow {
                representation: rep,
                domain,
                distance: distance_to_ideal(&acc, &ideal)?,
            });
            report.accuracies.extend(rows);

            let gallery: Vec<Vec<f32>> = gallery_idx.iter().map(|&i| r[i].clone()).collect();
            let queries: Vec<Vec<f32>> = query_idx.iter().map(|&i| r[i].clone()).collect();
            for (k, f) in data.factors.iter().enumerate() {
                let labels = factor_labels(data, domain, k);
                let g_labels: Vec<i32> = gallery_idx.iter().map(|&i| labels[i]).collect();
                let q_labels: Vec<i32> = query_idx.iter().map(|&i| labels[i]).collect();
                for &n in &opts.knn_neighbors {
                    if n > gallery.len() {
                        continue;
                    }
                    let pred = knn_classify(&queries, &gallery, &g_labels, n)?;
                    let correct = pred.iter().zip(&q_labels).filter(|(a, b)| a == b).count();
                    report.knn.push(KnnRow {
                        representation: rep,
                        domain,
                        factor: f.name.clone(),
                        neighbors: n,
                        accuracy: correct as f64 / q_labels.len().max(1) as f64,
                    });
                }
                let nq = opts.retrieval_queries.min(queries.len());
                if opts.retrieval_k > 0 && opts.retrieval_k <= gallery.len() && nq > 0 {
                    let mut hits = 0usize;
                    for (q, &ql) in queries.iter().zip(&q_labels).take(nq) {
                        let top = retrieve(q, &gallery, opts.retrieval_k)?;
                        hits += top.iter().filter(|&&i| g_labels[i] == ql).count();
                    }
                    report.retrieval.push(RetrievalRow {
                        representation: rep,
                        domain,
                        factor: f.name.clone(),
                        k: opts.retrieval_k,
                        queries: nq,
                        precision: hits as f64 / (nq * opts.retrieval_k) as f64,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
