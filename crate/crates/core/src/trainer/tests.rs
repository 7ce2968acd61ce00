use super::*;
use crate::checkpoint::load_checkpoint;
use crate::data::{DataConfig, DatasetKind};

fn tiny(kind: DatasetKind) -> (PairDataset, TrainConfig) {
    let data = PairDataset::generate(&DataConfig::new(kind, 1), 0, 12);
    let config = TrainConfig {
        batch_size: 4,
        steps_shared: 3,
        steps_exclusive: 3,
        shared_dim: 8,
        exclusive_dim: 2,
        seed: 5,
        checkpoint_interval: 0,
        ..Default::default()
    };
    (data, config)
}

#[test]
fn batches_cover_each_epoch_once() {
    let mut seen = Vec::new();
    for step in 0..3 {
        seen.extend(batch_indices(12, 4, 9, Stage::Shared, step).unwrap());
    }
    seen.sort_unstable();
    assert_eq!(seen, (0..12).collect::<Vec<_>>());
    assert_eq!(
        batch_indices(12, 4, 9, Stage::Shared, 4).unwrap(),
        batch_indices(12, 4, 9, Stage::Shared, 4).unwrap()
    );
    assert_ne!(
        batch_indices(12, 4, 9, Stage::Shared, 0).unwrap(),
        batch_indices(12, 4, 9, Stage::Shared, 3).unwrap()
    );
    assert!(batch_indices(3, 4, 0, Stage::Shared, 0).is_err());
}

#[test]
fn zero_steps_change_nothing() {
    let (data, mut config) = tiny(DatasetKind::Glyph);
    config.steps_shared = 0;
    let mut b = new_bundle(&data, &config);
    let before = b.params.clone();
    let log = train_shared(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    assert!(log.components.is_empty());
    assert_eq!(b.params, before);
}

#[test]
fn stage_one_updates_only_stage_one_networks() {
    let (data, config) = tiny(DatasetKind::Glyph);
    let mut b = new_bundle(&data, &config);
    let before = b.params.clone();
    train_shared(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    assert_eq!(b.opt_shared.steps(), 3);
    for net in b.nets.stage1() {
        assert_ne!(b.params.checksum(&net), before.checksum(&net), "{net}");
    }
}

#[test]
fn weight_sharing_trains_three_then_four_networks() {
    let (data, mut config) = tiny(DatasetKind::FactorGrid);
    config.weight_sharing = true;
    let mut b = new_bundle(&data, &config);
    train_shared(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    let tracked: std::collections::BTreeSet<&str> =
        b.opt_shared.tracked().map(|n| crate::autodiff::network_of(n)).collect();
    assert_eq!(tracked.len(), 3, "{tracked:?}");
    train_exclusive(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    let mut tracked: std::collections::BTreeSet<&str> =
        b.opt_exclusive.tracked().map(|n| crate::autodiff::network_of(n)).collect();
    tracked.extend(b.opt_disc.tracked().map(|n| crate::autodiff::network_of(n)));
    assert_eq!(tracked.len(), 4, "{tracked:?}");
}

#[test]
fn stage_two_keeps_shared_encoders_and_counts_steps() {
    let (data, config) = tiny(DatasetKind::Glyph);
    let mut b = new_bundle(&data, &config);
    train_shared(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    let shared = b.shared_checksum();
    let stage1_nets: Vec<(String, String)> =
        b.nets.stage1().into_iter().map(|n| (b.params.checksum(&n), n)).collect();
    let log = train_exclusive(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    assert_eq!(b.shared_checksum(), shared);
    for (sum, net) in stage1_nets {
        assert_eq!(b.params.checksum(&net), sum, "{net}");
    }
    assert_eq!(b.opt_disc.steps(), 3);
    assert_eq!(b.opt_exclusive.steps(), 3);
    assert_eq!(log.disc.len(), 3);
    assert!(log.disc.iter().all(|&(_, _, acc)| (0.0..=1.0).contains(&acc)));
}

#[test]
fn zero_lambda_still_trains_the_discriminator() {
    let (data, mut config) = tiny(DatasetKind::Glyph);
    config.coeffs.lambda_adv = 0.0;
    let mut b = new_bundle(&data, &config);
    train_shared(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    b.enter_exclusive_stage();
    let disc_before = b.params.checksum(&b.nets.disc_x.prefix);
    let log = train_exclusive(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    assert_ne!(b.params.checksum(&b.nets.disc_x.prefix), disc_before);
    assert!(log.components.iter().all(|(_, row)| row[5] != 0.0));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut config) = tiny(DatasetKind::Glyph);
    config.steps_shared = 4;
    config.steps_exclusive = 4;

    let (full, _, _) = train_full(&data, &config, &mut RunOutput::none()).unwrap();

    let mut half = config.clone();
    half.steps_shared = 2;
    let mut b = new_bundle(&data, &half);
    train_shared(&mut b, &data, &half, &mut RunOutput::none()).unwrap();
    let p = dir.path().join("mid1.midz");
    save_checkpoint(&b, &p).unwrap();
    let mut b = load_checkpoint(&p).unwrap();
    train_shared(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    half.steps_exclusive = 2;
    train_exclusive(&mut b, &data, &half, &mut RunOutput::none()).unwrap();
    let p = dir.path().join("mid2.midz");
    save_checkpoint(&b, &p).unwrap();
    let mut b = load_checkpoint(&p).unwrap();
    train_exclusive(&mut b, &data, &config, &mut RunOutput::none()).unwrap();

    assert_eq!(b, full);
    let (pa, pb) = (dir.path().join("a.midz"), dir.path().join("b.midz"));
    save_checkpoint(&b, &pa).unwrap();
    save_checkpoint(&full, &pb).unwrap();
    assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
}

#[test]
fn logs_and_checkpoints_land_in_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut config) = tiny(DatasetKind::Glyph);
    config.checkpoint_interval = 2;
    let mut out = RunOutput::new(dir.path());
    train_full(&data, &config, &mut out).unwrap();
    let csv = fs::read_to_string(dir.path().join(SHARED_LOG)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,L_global_x,L_global_y,L_local_x,L_local_y,L1,L_adv_x,L_adv_y,objective"
    );
    assert_eq!(lines.count(), 3);
    let disc = fs::read_to_string(dir.path().join(DISC_LOG)).unwrap();
    assert!(disc.starts_with("step,disc_loss,disc_accuracy\n"));
    for f in ["stage1_step2.midz", STAGE1_CHECKPOINT, "stage2_step2.midz", STAGE2_CHECKPOINT, EXCLUSIVE_LOG] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(out.last_good(), Some(dir.path().join(STAGE2_CHECKPOINT).as_path()));
}

#[test]
fn non_finite_parameters_abort_with_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut config) = tiny(DatasetKind::Glyph);
    config.checkpoint_interval = 1;
    config.steps_shared = 1;
    let mut out = RunOutput::new(dir.path());
    let mut b = new_bundle(&data, &config);
    train_shared(&mut b, &data, &config, &mut out).unwrap();
    b.params.get_mut("sh_enc_x.fc.b").unwrap().data_mut()[0] = f32::NAN;
    let snapshot = b.params.clone();
    config.steps_shared = 3;
    match train_shared(&mut b, &data, &config, &mut out) {
        Err(Error::Numerical { step, last_good, .. }) => {
            assert_eq!(step, 1);
            assert_eq!(last_good, Some(dir.path().join(STAGE1_CHECKPOINT)));
        }
        other => panic!("expected a numerical abort, got {other:?}"),
    }
    assert_eq!(b.opt_shared.steps(), 1);
    // nothing was applied after the failure
    let same = b.params.iter().zip(snapshot.iter()).all(|((_, a), (_, c))| {
        a.data().iter().zip(c.data()).all(|(p, q)| p.to_bits() == q.to_bits())
    });
    assert!(same);
}

#[test]
fn mismatched_data_is_rejected() {
    let (data, config) = tiny(DatasetKind::Glyph);
    let mut b = new_bundle(&data, &config);
    let mut other = DataConfig::new(DatasetKind::Glyph, 0);
    other.size = 16;
    let small = PairDataset::generate(&other, 0, 12);
    assert!(matches!(
        train_shared(&mut b, &small, &config, &mut RunOutput::none()),
        Err(Error::Config(_))
    ));
}
