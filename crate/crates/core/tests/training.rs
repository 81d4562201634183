use pano_autodiff::{no_grad, BatchNormMode};
use pano_core::nets::{Checkpoint, CriticConfig, CriticModel, GeneratorConfig};
use pano_core::pipeline::{normalize_grayscale, synthetic::synthetic_dataset};
use pano_core::train::calibration::{run_scalar_calibration, CalibrationConfig};
use pano_core::train::{
    run_training, wasserstein1d_exact, TrainConfig, TrainLog, TrainingSet, FINAL_CHECKPOINT, LOG_FILE,
};
use pano_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(n: usize) -> TrainingSet {
    let imgs = synthetic_dataset(n, 32, 11).unwrap();
    let tensors: Vec<_> = imgs.iter().map(|im| normalize_grayscale(im).unwrap()).collect();
    TrainingSet::from_tensors(&tensors).unwrap()
}

fn configs() -> (TrainConfig, GeneratorConfig, CriticConfig) {
    let train = TrainConfig {
        image_size: 32,
        critic_iters: 2,
        epochs: 10,
        batch_size: 8,
        seed: 5,
        checkpoint_interval: 2,
        max_steps: Some(4),
        ..Default::default()
    };
    let gen = GeneratorConfig {
        noise_channels: 8,
        target_size: 32,
        base_features: 4,
        ..Default::default()
    };
    let critic = CriticConfig {
        input_size: 32,
        base_features: 4,
        ..Default::default()
    };
    (train, gen, critic)
}

#[test]
fn same_seed_same_log_and_weights() {
    let data = dataset(24);
    let (t, g, c) = configs();
    let a = run_training(&t, &data, &g, &c, None).unwrap();
    let b = run_training(&t, &data, &g, &c, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 4);
    for (x, y) in a.generator.params().tensors().iter().zip(b.generator.params().tensors()) {
        assert_eq!(x.data(), y.data());
    }
    let other = TrainConfig { seed: 6, ..t };
    let c2 = run_training(&other, &data, &g, &c, None).unwrap();
    assert_ne!(a.log, c2.log);
}

#[test]
fn run_directory_contents_and_resume_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(24);
    let (t, g, c) = configs();
    let out = run_training(&t, &data, &g, &c, Some(dir.path())).unwrap();
    let names: Vec<String> = out
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["step_00000002.ckpt", "step_00000004.ckpt", FINAL_CHECKPOINT]);
    assert_eq!(TrainLog::load(&dir.path().join(LOG_FILE)).unwrap().len(), 4);

    let ckpt = Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(ckpt.meta.step, 4);
    let (mut gen, critic) = ckpt.restore().unwrap();
    let mut live = out.generator.clone();
    let z = live.sample_latent(2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let _off = no_grad();
    let a = live.forward(&z, BatchNormMode::Eval).unwrap();
    let b = gen.forward(&z, BatchNormMode::Eval).unwrap();
    // weights are stored as f32
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-4);
    }
    let batch = data.batch(&[0, 1]).unwrap();
    let sa = out.critic.score(&batch).unwrap();
    let sb = critic.score(&batch).unwrap();
    for (x, y) in sa.data().iter().zip(sb.data()) {
        assert!((x - y).abs() < 1e-4 * (1.0 + x.abs()));
    }
}

#[test]
fn configuration_errors() {
    let data = dataset(6);
    let (t, g, c) = configs();
    assert!(matches!(run_training(&t, &data, &g, &c, None), Err(Error::Config(_))));
    let data = dataset(24);
    let wrong = TrainConfig { image_size: 64, ..t.clone() };
    assert!(matches!(run_training(&wrong, &data, &g, &c, None), Err(Error::Config(_))));
    let zero = TrainConfig { critic_iters: 0, ..t };
    assert!(matches!(run_training(&zero, &data, &g, &c, None), Err(Error::Config(_))));
}

#[test]
fn epochs_bound_the_run() {
    let data = dataset(16);
    let (mut t, g, c) = configs();
    t.max_steps = None;
    t.epochs = 2;
    t.critic_iters = 1;
    // 16 images, batch 8: two critic batches per epoch, one per step
    let out = run_training(&t, &data, &g, &c, None).unwrap();
    assert_eq!(out.log.len(), 4);
    assert_eq!(out.log.records().last().unwrap().epoch, 2);
}

#[test]
fn exact_w1_examples() {
    assert!((wasserstein1d_exact(&[0.0, 1.0, 2.0], &[2.0, 0.0, 1.0]).unwrap()).abs() < 1e-15);
    assert!((wasserstein1d_exact(&[0.0, 0.0], &[1.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
    assert!(wasserstein1d_exact(&[], &[1.0]).is_err());
}

#[test]
fn short_calibration_run_is_finite() {
    let cfg = CalibrationConfig {
        generator_steps: 5,
        refine_steps: 5,
        batch_size: 32,
        eval_samples: 500,
        ..Default::default()
    };
    let r = run_scalar_calibration(&cfg).unwrap();
    assert!(r.critic_estimate.is_finite() && r.exact_w1 > 0.0);
    // the generator starts offset by 4 from N(0,1)
    assert!((r.initial_w1 - 4.0).abs() < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_of_shift_is_shift(xs in prop::collection::vec(-10.0f64..10.0, 1..50), c in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((wasserstein1d_exact(&xs, &ys).unwrap() - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn w1_is_symmetric(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40)) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let a = wasserstein1d_exact(&xs, &ys).unwrap();
        let b = wasserstein1d_exact(&ys, &xs).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }
}
