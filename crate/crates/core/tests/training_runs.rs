use mcst::data::{synthetic_generate, Dataset, Split};
use mcst::model::{MCSTModel, ModelConfig};
use mcst::training::{evaluate, train, EpochRecord, TrainConfig};
use mcst::{Error, Tensor};

fn data() -> Dataset {
    Dataset::prepare(synthetic_generate(6, 3, 1).unwrap()).unwrap()
}

fn narrow() -> ModelConfig {
    ModelConfig::with_dims(6, 12, 12, 16, 8)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_falls_over_five_epochs() {
    let d = data();
    let mut model = MCSTModel::new(narrow(), 1).unwrap();
    let out = train(&mut model, &d, &quick(5), |_| {}).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    let drops = losses.windows(2).filter(|w| w[1] < w[0]).count();
    // 5 epochs give 4 consecutive pairs
    assert!(drops >= 4, "{losses:?}");
}

#[test]
fn identical_seeds_give_identical_runs() {
    let d = data();
    let run = || {
        let mut model = MCSTModel::new(narrow(), 2).unwrap();
        let out = train(&mut model, &d, &quick(2), |_| {}).unwrap();
        (out.history, model.params.snapshot())
    };
    let strip = |h: &[EpochRecord]| -> Vec<[u64; 5]> {
        h.iter()
            .map(|r| [r.train_loss, r.val_mae, r.val_rmse, r.val_mape, r.lr].map(f64::to_bits))
            .collect()
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(strip(&h1), strip(&h2));
    assert!(p1.iter().zip(&p2).all(|(a, b)| a.bitwise_eq(b)));
}

#[test]
fn restored_parameters_are_the_best_epoch() {
    let d = data();
    let mut model = MCSTModel::new(narrow(), 3).unwrap();
    let out = train(&mut model, &d, &quick(4), |_| {}).unwrap();
    let val = d.windows(Split::Val, 12, 12).unwrap();
    let mae = evaluate(&model, &val, &d.normalizer, 64).unwrap().mae();
    assert_eq!(mae.to_bits(), out.best_val_mae.to_bits());
    assert!(out.history.iter().all(|r| r.val_mae >= mae));
    assert_eq!(out.history[out.best_epoch].val_mae, mae);
}

#[test]
fn patience_ends_training_early() {
    let d = data();
    let mut model = MCSTModel::new(narrow(), 3).unwrap();
    // updates far below one ulp leave the parameters, and so val MAE, fixed
    let cfg = TrainConfig {
        patience: 1,
        lr_init: 1e-300,
        lr_min: 1e-300,
        ..quick(20)
    };
    let out = train(&mut model, &d, &cfg, |_| {}).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn non_finite_parameters_abort_as_divergence() {
    let d = data();
    let mut model = MCSTModel::new(narrow(), 3).unwrap();
    let wt = model.w_temporal;
    model.params.get_mut(wt).value = Tensor::full([1], f64::NAN);
    match train(&mut model, &d, &quick(2), |_| {}) {
        Err(Error::Divergence { epoch, step, .. }) => assert_eq!((epoch, step), (0, 0)),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn node_count_mismatch_is_rejected() {
    let d = data();
    let mut model = MCSTModel::new(ModelConfig::with_dims(5, 12, 12, 16, 8), 3).unwrap();
    assert!(matches!(train(&mut model, &d, &quick(1), |_| {}), Err(Error::Config(_))));
}
