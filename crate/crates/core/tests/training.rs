use pernode_core::data::{generate, Dataset, SyntheticKind, SyntheticSpec};
use pernode_core::regularizers::{Granularity, MaskSpec, RegularizerKind};
use pernode_core::training::{evaluate, train, Model, ModelConfig, Output, TrainConfig};

fn blobs(n: usize, d: usize, k: usize, noise: f64, seed: u64) -> Dataset {
    generate(&SyntheticSpec {
        kind: SyntheticKind::GaussianBlobs,
        n_samples: n,
        n_features: d,
        n_classes: k,
        label_noise: noise,
        seed,
    })
    .unwrap()
}

fn model(d: usize, k: usize, reg: RegularizerKind) -> ModelConfig {
    ModelConfig {
        input_dim: d,
        hidden_widths: vec![16],
        regularizer: reg,
        reg_position: 1,
        output: Output::Softmax { classes: k },
        dense_units: 16,
    }
}

fn cfg(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        drop_rates: vec![0.0],
        batch_size: 16,
        epochs,
        learning_rate: lr,
        seed,
        early_stop: None,
    }
}

#[test]
fn same_seed_replays_bit_identically() {
    let (tr, va) = blobs(120, 5, 3, 0.1, 1).split(0.25, 1).unwrap();
    for reg in [
        RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.4)),
        RegularizerKind::pernodedrop(MaskSpec::gaussian(0.3).granularity(Granularity::Connection)),
        RegularizerKind::dropconnect(0.3),
        RegularizerKind::mask_ensemble(0.5, 4),
    ] {
        let mc = model(5, 3, reg);
        let a = train(&mc, &cfg(4, 1e-2, 9), &tr, &va).unwrap();
        let b = train(&mc, &cfg(4, 1e-2, 9), &tr, &va).unwrap();
        let strip =
            |r: &[pernode_core::training::TrainRecord]| r.iter().map(|x| x.without_timing()).collect::<Vec<_>>();
        assert_eq!(strip(&a.records), strip(&b.records));
        assert_eq!(a.model, b.model);
        let c = train(&mc, &cfg(4, 1e-2, 10), &tr, &va).unwrap();
        assert_ne!(strip(&a.records), strip(&c.records));
    }
}

#[test]
fn zero_learning_rate_reports_initial_losses() {
    let (tr, va) = blobs(90, 4, 3, 0.0, 2).split(0.3, 2).unwrap();
    let mc = model(4, 3, RegularizerKind::dropout(0.5));
    let run = train(&mc, &cfg(1, 0.0, 5), &tr, &va).unwrap();
    let init = Model::new(mc, 5).unwrap();
    let (tl, ta) = evaluate(&init, &tr).unwrap();
    let (vl, va_acc) = evaluate(&init, &va).unwrap();
    let r = &run.records[0];
    assert_eq!(run.records.len(), 1);
    assert_eq!((r.train_loss_clean, r.train_acc_clean), (tl, ta));
    assert_eq!((r.val_loss, r.val_acc), (vl, va_acc));
}

#[test]
fn clean_loss_recomputes_from_saved_model() {
    let (tr, va) = blobs(100, 6, 4, 0.2, 3).split(0.2, 3).unwrap();
    let mc = model(6, 4, RegularizerKind::pernodedrop(MaskSpec::partial_gaussian(0.3, 0.5)));
    let run = train(&mc, &cfg(3, 1e-2, 1), &tr, &va).unwrap();
    let saved = serde_json::to_string(&run.model).unwrap();
    let restored: Model = serde_json::from_str(&saved).unwrap();
    let (tl, _) = evaluate(&restored, &tr).unwrap();
    assert_eq!(tl.to_bits(), run.records.last().unwrap().train_loss_clean.to_bits());
}

#[test]
fn separable_training_loss_does_not_increase() {
    let (tr, va) = blobs(200, 4, 3, 0.0, 4).split(0.2, 4).unwrap();
    let mc = model(4, 3, RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.0)));
    let run = train(&mc, &cfg(15, 1e-3, 2), &tr, &va).unwrap();
    for pair in run.records.windows(2) {
        assert!(
            pair[1].train_loss_clean <= pair[0].train_loss_clean + 1e-3,
            "epoch {}: {} -> {}",
            pair[1].epoch,
            pair[0].train_loss_clean,
            pair[1].train_loss_clean
        );
    }
    assert!(run.records.last().unwrap().train_acc_clean > 0.9);
}

#[test]
fn random_labels_are_memorised() {
    let data = generate(&SyntheticSpec {
        kind: SyntheticKind::GaussianBlobs,
        n_samples: 96,
        n_features: 16,
        n_classes: 4,
        label_noise: 1.0,
        seed: 11,
    })
    .unwrap();
    let tr = data.subset(&(0..64).collect::<Vec<_>>()).unwrap();
    let va = data.subset(&(64..96).collect::<Vec<_>>()).unwrap();
    let mc = ModelConfig {
        input_dim: 16,
        hidden_widths: vec![64],
        regularizer: RegularizerKind::none(),
        reg_position: 1,
        output: Output::Softmax { classes: 4 },
        dense_units: 64,
    };
    let run = train(&mc, &cfg(200, 1e-2, 3), &tr, &va).unwrap();
    let best_val = run.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    let last = run.records.last().unwrap();
    assert!(last.train_loss_clean < 0.05, "{}", last.train_loss_clean);
    assert!(last.val_loss > best_val, "{} vs best {}", last.val_loss, best_val);
}

#[test]
fn variants_share_parameter_counts() {
    let kinds = [
        RegularizerKind::none(),
        RegularizerKind::dropout(0.2),
        RegularizerKind::gaussian_dropout(0.2),
        RegularizerKind::dropconnect(0.2),
        RegularizerKind::mask_ensemble(0.2, 2),
        RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.2)),
        RegularizerKind::pernodedrop(MaskSpec::gaussian(0.2).granularity(Granularity::Connection)),
    ];
    for seed in 0..5 {
        let counts: Vec<usize> = kinds
            .iter()
            .map(|k| Model::new(model(6, 3, k.clone()), seed).unwrap().num_parameters())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
    }
}

#[test]
fn runaway_learning_rate_marks_divergence() {
    let (tr, va) = blobs(60, 3, 2, 0.0, 5).split(0.2, 5).unwrap();
    let run = train(&model(3, 2, RegularizerKind::none()), &cfg(5, 1e300, 1), &tr, &va).unwrap();
    assert!(run.diverged);
    let last = run.records.last().unwrap();
    assert!(last.diverged && last.val_loss.is_nan());
}

#[test]
fn early_stop_halts_after_patience() {
    let data = blobs(80, 8, 4, 1.0, 6);
    let (tr, va) = data.split(0.25, 6).unwrap();
    let mut c = cfg(100, 5e-2, 1);
    c.early_stop = Some(3);
    let run = train(&model(8, 4, RegularizerKind::none()), &c, &tr, &va).unwrap();
    assert!(run.records.len() < 100);
    let n = run.records.len();
    let best = run.records[..n - 3]
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert!(run.records[n - 3..].iter().all(|r| r.val_loss >= best));
}

#[test]
fn mismatched_dataset_is_rejected() {
    let (tr, va) = blobs(40, 3, 2, 0.0, 7).split(0.25, 7).unwrap();
    assert!(train(&model(4, 2, RegularizerKind::none()), &cfg(1, 1e-3, 0), &tr, &va).is_err());
}
