use super::*;
use crate::data::{generate, SynthConfig};
use crate::signal::{preprocess, PreprocessConfig};

fn tiny_data() -> (Dataset, Dataset) {
    let raw = generate(&SynthConfig { samples_per_class: 6, steps: 6, classes: 3, ..Default::default() }).unwrap();
    preprocess(&raw, &PreprocessConfig { train_fraction: 0.67, ..Default::default() }).unwrap()
}

fn tiny_model(ds: &Dataset) -> FusionModel {
    let (dv, da) = ds.dims();
    let cfg = ModelConfig { d_video: dv, d_audio: da, hidden: 5, fused: 5, mlp_hidden: [6, 6], classes: ds.classes, ..Default::default() };
    FusionModel::new(cfg, 11).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig { epochs_max: 8, patience: 8, batch_size: 4, ..Default::default() }
}

#[test]
fn batching_merges_trailing_singleton() {
    let order: Vec<usize> = (0..9).collect();
    let b = batches(&order, 4);
    assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
    assert_eq!(b[1], &[4, 5, 6, 7, 8]);
    let b = batches(&order[..8], 4);
    assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 4]);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (train_set, _) = tiny_data();
    let model = tiny_model(&train_set);
    let cfg = TrainConfig { learning_rate: 0.0, ..quick() };
    let out = train(model.clone(), &train_set, None, &cfg).unwrap();
    assert_eq!(out.model.params().named_tensors(), model.params().named_tensors());
}

#[test]
fn deterministic_history_and_loss_identity() {
    let (train_set, val) = tiny_data();
    let cfg = quick();
    let a = train(tiny_model(&train_set), &train_set, Some(&val), &cfg).unwrap();
    let b = train(tiny_model(&train_set), &train_set, Some(&val), &cfg).unwrap();
    assert_eq!(metrics_csv(&a.history), metrics_csv(&b.history));
    for m in &a.history {
        assert!((m.total - (m.main + 0.2 * m.aux_v + 0.2 * m.aux_a)).abs() < 1e-12);
    }
}

#[test]
fn early_stopping_returns_best_epoch_model() {
    let (train_set, val) = tiny_data();
    let cfg = TrainConfig { epochs_max: 30, patience: 3, learning_rate: 0.05, ..quick() };
    let out = train(tiny_model(&train_set), &train_set, Some(&val), &cfg).unwrap();
    let best = out.history.iter().map(|m| m.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.summary.best_monitored_loss, best);
    let (parts, _) = eval_loss(&out.model, &val).unwrap();
    assert_eq!(parts.total, best);
    if out.summary.stop_reason == StopReason::EarlyStopped {
        assert_eq!(out.summary.epochs_run - out.summary.best_epoch, 3);
    }
}

#[test]
fn callback_sees_every_epoch_and_errors_propagate() {
    let (train_set, _) = tiny_data();
    let mut seen = 0;
    train_with(tiny_model(&train_set), &train_set, None, &quick(), |_, _| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 8);
    let err = train_with(tiny_model(&train_set), &train_set, None, &quick(), |m, _| {
        if m.epoch == 2 { Err(Error::Format("stop".into())) } else { Ok(()) }
    });
    assert!(err.is_err());
}

#[test]
fn divergence_is_reported() {
    let (train_set, _) = tiny_data();
    let mut model = tiny_model(&train_set);
    model.params_mut().proj_v.fill(f64::NAN);
    let err = train(model, &train_set, None, &quick()).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err}");
}

#[test]
fn invalid_configs_rejected() {
    let (train_set, _) = tiny_data();
    for cfg in [
        TrainConfig { patience: 400, ..Default::default() },
        TrainConfig { batch_size: 1, ..Default::default() },
        TrainConfig { momentum: 1.0, ..Default::default() },
        TrainConfig { learning_rate: -1.0, ..Default::default() },
    ] {
        assert!(matches!(train(tiny_model(&train_set), &train_set, None, &cfg), Err(Error::Config(_))));
    }
}

#[test]
fn small_step_decreases_single_sample_loss() {
    // Eval-mode batch norm makes a single sample a well-defined objective.
    let (train_set, _) = tiny_data();
    for seed in 0..5 {
        let mut model = tiny_model(&train_set);
        *model.params_mut() = FusionModel::new(model.config().clone(), seed).unwrap().params().clone();
        let r = &train_set.records[seed as usize];
        let target = [r.label];
        let rng = Rng::new(0);
        let trace = model.forward(&[r.input()], Mode::Eval, &rng).unwrap();
        let before = model.loss(&trace, &target).unwrap().total;
        let grads = model.backward(&trace, &target).unwrap();
        if grads.grad_norm() <= 1e-8 {
            continue;
        }
        for lr in [1e-3, 1e-4] {
            let mut stepped = model.clone();
            Sgd::new(lr, 0.0, None).step(stepped.params_mut(), &grads);
            let t = stepped.forward(&[r.input()], Mode::Eval, &rng).unwrap();
            let after = stepped.loss(&t, &target).unwrap().total;
            assert!(after < before, "seed {seed} lr {lr}: {after} !< {before}");
        }
    }
}
