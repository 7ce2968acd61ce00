use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::TrainConfig;
use crate::data::{DataConfig, DatasetKind};
use crate::trainer::{new_bundle, train_shared, RunOutput};

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

#[test]
fn distance_matches_reported_rows() {
    assert_eq!(round4(distance_to_ideal(&[0.0822, 0.9448], &[0.0833, 1.0]).unwrap()), 0.0563);
    assert_eq!(round4(distance_to_ideal(&[0.0883, 0.9427], &[0.0833, 1.0]).unwrap()), 0.0623);
    assert_eq!(distance_to_ideal(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
}

#[test]
fn distance_rejects_bad_input() {
    assert!(distance_to_ideal(&[0.1], &[0.1, 0.2]).is_err());
    assert!(distance_to_ideal(&[1.2], &[1.0]).is_err());
    assert!(distance_to_ideal(&[-0.1], &[0.0]).is_err());
}

proptest! {
    #[test]
    fn distance_is_a_metric(
        a in prop::collection::vec(0.0f64..=1.0, 6),
        b in prop::collection::vec(0.0f64..=1.0, 6),
        c in prop::collection::vec(0.0f64..=1.0, 6),
    ) {
        let d = |x: &[f64], y: &[f64]| distance_to_ideal(x, y).unwrap();
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        if a != b {
            prop_assert!(d(&a, &b) > 0.0);
        }
    }
}

fn random_points(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Independent nearest-neighbor rule: first strictly smaller distance wins.
fn brute_force_nn(q: &[f32], gallery: &[Vec<f32>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, g) in gallery.iter().enumerate() {
        let d: f64 = q.iter().zip(g).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[test]
fn one_nearest_neighbor_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let gallery = random_points(500, 5, &mut rng);
    let labels: Vec<i32> = (0..500).map(|_| rng.gen_range(0..7)).collect();
    let queries = random_points(500, 5, &mut rng);
    let pred = knn_classify(&queries, &gallery, &labels, 1).unwrap();
    for (q, p) in queries.iter().zip(&pred) {
        assert_eq!(*p, labels[brute_force_nn(q, &gallery)]);
    }
}

#[test]
fn knn_edge_cases() {
    let gallery = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]];
    let labels = [4, 9, 1];
    // the query itself is in the gallery
    assert_eq!(knn_classify(&[vec![5.0, 5.0]], &gallery, &labels, 1).unwrap(), [1]);
    // equidistant: the lower index wins
    assert_eq!(knn_classify(&[vec![1.0, 0.0]], &gallery, &labels, 1).unwrap(), [4]);
    // a 1-1-1 vote goes to the nearest neighbor's label
    assert_eq!(knn_classify(&[vec![1.9, 0.0]], &gallery, &labels, 3).unwrap(), [9]);
    assert!(knn_classify(&[vec![0.0, 0.0]], &gallery, &labels, 4).is_err());
    assert!(knn_classify(&[vec![0.0, 0.0]], &[], &[], 1).is_err());
}

#[test]
fn knn_majority_vote() {
    let gallery = vec![vec![0.0], vec![1.0], vec![1.1], vec![1.2], vec![9.0]];
    let labels = [0, 3, 3, 2, 3];
    assert_eq!(knn_classify(&[vec![0.0]], &gallery, &labels, 1).unwrap(), [0]);
    assert_eq!(knn_classify(&[vec![0.0]], &gallery, &labels, 3).unwrap(), [3]);
}

#[test]
fn retrieval_orders_by_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gallery = random_points(40, 3, &mut rng);
    let mut all = retrieve(&gallery[7], &gallery, 40).unwrap();
    assert_eq!(all[0], 7);
    all.sort_unstable();
    assert_eq!(all, (0..40).collect::<Vec<_>>());
    assert!(retrieve(&gallery[0], &gallery, 0).unwrap().is_empty());
    assert!(retrieve(&gallery[0], &gallery, 41).is_err());
    let dup = vec![vec![1.0], vec![0.0], vec![1.0]];
    assert_eq!(retrieve(&[1.0], &dup, 3).unwrap(), [0, 2, 1]);
}

#[test]
fn split_is_disjoint_and_deterministic() {
    let (a, b) = split_indices(101, 0.8, 4);
    assert_eq!(a.len(), 81);
    assert_eq!(b.len(), 20);
    let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..101).collect::<Vec<_>>());
    assert_eq!(split_indices(101, 0.8, 4), (a, b));
}

#[test]
fn probe_rejects_single_class_labels() {
    let reps = vec![vec![0.1, 0.2]; 10];
    let err = train_probe(&reps, &[3; 10], 5, &ProbeConfig::default()).unwrap_err();
    assert!(err.to_string().contains("single class"), "{err}");
    assert!(train_probe(&reps, &[0, 1, 0, 1, 0, 1, 0, 1, 0, 7], 5, &ProbeConfig::default()).is_err());
    assert!(train_probe(&reps, &[0, 1], 5, &ProbeConfig::default()).is_err());
}

#[test]
fn probe_reads_glyph_identity_from_raw_pixels() {
    use crate::data::glyph::{glyph_palette, render_glyph};
    use crate::data::Placement;
    let palette = glyph_palette();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut reps, mut labels) = (Vec::new(), Vec::new());
    for _ in 0..500 {
        let g = rng.gen_range(0..10);
        let c = rng.gen_range(0..12);
        reps.push(render_glyph(32, g, palette[c], [0.0; 3], Placement::centered(32)));
        labels.push(g as i32);
    }
    let cfg = ProbeConfig {
        steps: 400,
        ..Default::default()
    };
    let r = train_probe(&reps, &labels, 10, &cfg).unwrap();
    assert_eq!(r.test_accuracy, 1.0);
}

#[test]
fn probe_on_random_representations_stays_at_chance() {
    let data = PairDataset::generate(&DataConfig::new(DatasetKind::Glyph, 3), 0, 3000);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let reps = random_points(data.len(), 8, &mut rng);
    let labels = factor_labels(&data, Domain::X, 1);
    let cfg = ProbeConfig {
        steps: 500,
        ..Default::default()
    };
    let r = train_probe(&reps, &labels, 12, &cfg).unwrap();
    assert!((r.test_accuracy - 1.0 / 12.0).abs() <= 0.05, "{}", r.test_accuracy);
}

#[test]
fn ideal_profile_follows_factor_roles() {
    let f = DatasetKind::Glyph.factors();
    assert_eq!(ideal_accuracy(Representation::Shared, &f[0]), 1.0);
    assert_eq!(ideal_accuracy(Representation::Shared, &f[1]), 1.0 / 12.0);
    assert_eq!(ideal_accuracy(Representation::Exclusive, &f[0]), 0.1);
    assert_eq!(ideal_accuracy(Representation::Exclusive, &f[1]), 1.0);
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        steps_shared: 2,
        steps_exclusive: 2,
        shared_dim: 8,
        exclusive_dim: 2,
        seed: 1,
        checkpoint_interval: 0,
        ..Default::default()
    }
}

fn quick_probe() -> ProbeConfig {
    ProbeConfig {
        steps: 20,
        ..Default::default()
    }
}

#[test]
fn report_has_one_row_per_representation_domain_and_factor() {
    let data = PairDataset::generate(&DataConfig::new(DatasetKind::Glyph, 1), 0, 40);
    let cfg = tiny_config();
    let mut b = new_bundle(&data, &cfg);
    train_shared(&mut b, &data, &cfg, &mut RunOutput::none()).unwrap();
    let opts = EvalOptions {
        probe: quick_probe(),
        ..Default::default()
    };
    let r1 = evaluate_model(&b, &data, &opts).unwrap();
    assert_eq!(r1.accuracies.len(), 2 * 2);
    crate::trainer::train_exclusive(&mut b, &data, &cfg, &mut RunOutput::none()).unwrap();
    let r2 = evaluate_model(&b, &data, &opts).unwrap();
    assert_eq!(r2.accuracies.len(), 2 * 2 * 2);
    assert_eq!(r2.distances.len(), 4);
    assert_eq!(r2.knn.len(), 2 * 2 * 2 * 2);
    assert!(r2.accuracies.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    assert_eq!(r2.to_csv().lines().count(), 1 + 8);
    let back: EvalReport = serde_json::from_str(&r2.to_json()).unwrap();
    assert_eq!(back, r2);
    assert!(r2.to_table().contains("distance to ideal (exclusive y)"));
    assert!(r2.accuracy(Representation::Exclusive, Domain::Y, "color").is_some());
}

#[test]
fn sweep_emits_one_row_per_weight_and_factor() {
    let data = PairDataset::generate(&DataConfig::new(DatasetKind::Glyph, 1), 0, 24);
    let cfg = tiny_config();
    let mut b = new_bundle(&data, &cfg);
    train_shared(&mut b, &data, &cfg, &mut RunOutput::none()).unwrap();
    let points = lambda_sweep(&b, &data, &data, &cfg, &[0.0, 0.05], &quick_probe(), None).unwrap();
    assert_eq!(points.len(), 2);
    // every point starts from the same stage-1 model
    assert_eq!(points[0].bundle.shared_checksum(), b.shared_checksum());
    assert_ne!(points[0].bundle.params, points[1].bundle.params);
    let csv = sweep_csv(&points);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,factor,accuracy");
    assert_eq!(lines.len(), 1 + 2 * 2);
    assert!(lines[1].starts_with("0,glyph,"));
    assert!(lines[4].starts_with("0.05,color,"));
}

#[test]
fn ablation_keeps_the_configured_order() {
    let data = PairDataset::generate(&DataConfig::new(DatasetKind::Glyph, 1), 0, 24);
    let cfg = tiny_config();
    let variants = [Variant::BetaExZero, Variant::NonSsr, Variant::Baseline];
    let rows = ablation_suite(&data, &data, &cfg, &variants, &quick_probe(), None, None).unwrap();
    let got: Vec<Variant> = rows.iter().map(|r| r.variant).collect();
    assert_eq!(got, variants);
    assert!(rows[0].exclusive.is_some());
    assert!(rows[1].exclusive.is_none());
    assert!(rows[2].exclusive.is_some());
    // the stage-2 variant and the baseline share one stage-1 model
    assert_eq!(rows[0].shared, rows[2].shared);
    let csv = ablation_csv(&rows);
    assert!(csv.lines().any(|l| l.starts_with("non-ssr,shared,distance_to_ideal,")));
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("gamma".parse::<Variant>().is_err());
    let mut c = TrainConfig::default();
    Variant::BetaShZero.apply(&mut c);
    assert_eq!(c.coeffs.beta_sh, 0.0);
    Variant::NonSsr.apply(&mut c);
    assert!(c.non_ssr);
}

#[test]
fn patches_are_zero_padded() {
    // 3x3 single-channel image holding 1..=9
    let img: Vec<f32> = (1..=9).map(|v| v as f32).collect();
    assert_eq!(extract_patch(&img, (3, 3, 1), (0, 0), (3, 3)), [0., 0., 0., 0., 1., 2., 0., 4., 5.]);
    assert_eq!(extract_patch(&img, (3, 3, 1), (1, 1), (3, 3)), img);
    assert_eq!(extract_patch(&img, (3, 3, 1), (2, 2), (2, 2)), [5., 6., 8., 9.]);
}

#[test]
fn mi_map_shape_range_and_errors() {
    let data = PairDataset::generate(&DataConfig::new(DatasetKind::Glyph, 1), 0, 1);
    let b = new_bundle(&data, &tiny_config());
    let img = data.image_x(0);
    let map = mi_distance_map(&b, img, (32, 32), (10, 20)).unwrap();
    assert_eq!(map.len(), 32 * 32);
    assert!(map.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(map.iter().any(|&v| v == 1.0));
    assert!(mi_distance_map(&b, img, (32, 32), (32, 0)).is_err());
    assert!(mi_distance_map(&b, &img[..10], (32, 32), (0, 0)).is_err());
}
