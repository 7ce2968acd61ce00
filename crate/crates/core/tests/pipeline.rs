use mi_disentangle::checkpoint::{load_checkpoint, save_checkpoint};
use mi_disentangle::config::TrainConfig;
use mi_disentangle::data::{DataConfig, DatasetKind, PairDataset};
use mi_disentangle::evaluation::{evaluate_model, EvalOptions, ProbeConfig};
use mi_disentangle::objectives::COMPONENT_NAMES;
use mi_disentangle::trainer::{new_bundle, train_exclusive, train_shared, Domain, Representation, RunOutput};

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        steps_shared: 150,
        steps_exclusive: 20,
        shared_dim: 16,
        exclusive_dim: 4,
        seed: 2,
        checkpoint_interval: 0,
        ..Default::default()
    }
}

fn mean(xs: &[f32]) -> f32 {
    xs.iter().sum::<f32>() / xs.len() as f32
}

#[test]
fn shared_objective_rises_during_training() {
    let data = PairDataset::generate(&DataConfig::new(DatasetKind::Glyph, 2), 0, 256);
    let config = small_config();
    let mut b = new_bundle(&data, &config);
    let log = train_shared(&mut b, &data, &config, &mut RunOutput::none()).unwrap();
    let objective = COMPONENT_NAMES.iter().position(|&n| n == "objective").unwrap();
    let series: Vec<f32> = log.components.iter().map(|(_, row)| row[objective]).collect();
    assert_eq!(series.len(), 150);
    let (early, late) = (mean(&series[..20]), mean(&series[130..]));
    assert!(late > early, "objective went from {early} to {late}");
}

#[test]
fn factor_grid_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data_cfg = DataConfig::new(DatasetKind::FactorGrid, 4);
    let train = PairDataset::generate(&data_cfg, 0, 64);
    let eval = PairDataset::generate(&data_cfg, 64, 80);
    let config = TrainConfig {
        steps_shared: 3,
        steps_exclusive: 3,
        ..small_config()
    };
    let mut out = RunOutput::new(dir.path());
    let mut b = new_bundle(&train, &config);
    train_shared(&mut b, &train, &config, &mut out).unwrap();
    train_exclusive(&mut b, &train, &config, &mut out).unwrap();
    let restored = load_checkpoint(dir.path().join("stage2.midz")).unwrap();
    assert_eq!(restored, b);

    let opts = EvalOptions {
        probe: ProbeConfig {
            steps: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    let report = evaluate_model(&restored, &eval, &opts).unwrap();
    let factors = DatasetKind::FactorGrid.factors();
    assert_eq!(report.accuracies.len(), 2 * 2 * factors.len());
    for f in &factors {
        let acc = report.accuracy(Representation::Exclusive, Domain::Y, &f.name).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    save_checkpoint(&restored, dir.path().join("copy.midz")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("copy.midz")).unwrap(),
        std::fs::read(dir.path().join("stage2.midz")).unwrap()
    );
}
