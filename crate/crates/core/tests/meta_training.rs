use metalearn_core::container::FormatError;
use metalearn_core::datagen::{gen_suite, GenConfig, TauPolicy};
use metalearn_core::episode::{cost_eval, cost_train, run_episode};
use metalearn_core::learner::init_alpha;
use metalearn_core::metaopt::{
    initial_checkpoint, load_checkpoint, meta_train, meta_train_from, save_checkpoint, Checkpoint, Smorms3,
    TrainConfig,
};
use metalearn_core::model::ModelShape;
use metalearn_core::rng::derive_seed;
use metalearn_core::Error;

fn tiny(iterations: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelShape::new(2, 4).unwrap(),
        fc_sizes: vec![8, 8],
        gen: GenConfig {
            n_in: 2,
            n_samples: 20,
            ..GenConfig::default()
        },
        learning_rate: 1e-3,
        iterations,
        seed,
        pool_size: 100,
        checkpoint_every: 0,
        clip_norm: None,
    }
}

fn bits(c: &Checkpoint) -> Vec<u64> {
    c.alpha.to_flat().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zero_iterations_is_the_initial_state() {
    let cfg = tiny(0, 3);
    let out = meta_train(&cfg, "echo", |_| Ok(())).unwrap();
    let init = init_alpha(&cfg.learner_shape().unwrap(), derive_seed(3, 0));
    assert_eq!(out.checkpoint.alpha, init);
    assert_eq!(out.checkpoint, initial_checkpoint(&cfg, "echo").unwrap());
    assert!(out.log.is_empty());
}

#[test]
fn hundred_iterations_are_reproducible() {
    let cfg = tiny(100, 8);
    let a = meta_train(&cfg, "", |_| Ok(())).unwrap();
    let b = meta_train(&cfg, "", |_| Ok(())).unwrap();
    assert_eq!(bits(&a.checkpoint), bits(&b.checkpoint));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.log, b.log);
    let c = meta_train(&tiny(100, 9), "", |_| Ok(())).unwrap();
    assert_ne!(bits(&a.checkpoint), bits(&c.checkpoint));
}

#[test]
fn periodic_checkpoints_are_emitted() {
    let mut cfg = tiny(30, 1);
    cfg.checkpoint_every = 10;
    let mut seen = Vec::new();
    meta_train(&cfg, "", |e| {
        if let metalearn_core::metaopt::TrainEvent::Checkpoint(c) = e {
            seen.push(c.iteration);
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![10, 20, 30]);
}

#[test]
fn single_dataset_is_overfit() {
    let cfg = TrainConfig {
        model: ModelShape::new(2, 4).unwrap(),
        fc_sizes: vec![16],
        gen: GenConfig {
            n_in: 2,
            n_samples: 20,
            beta_noise: 0.1,
            ..GenConfig::default()
        },
        learning_rate: 1e-3,
        iterations: 10_000,
        seed: 1,
        pool_size: 1,
        checkpoint_every: 0,
        clip_norm: None,
    };
    let out = meta_train(&cfg, "", |_| Ok(())).unwrap();
    let ds = metalearn_core::datagen::gen_indexed(&cfg.gen, cfg.pool_seed(), 0)
        .unwrap()
        .dataset;
    let trace = run_episode(&out.checkpoint.alpha, &cfg.model, &ds, false).unwrap();
    let loss = cost_train(&[trace]).unwrap();
    assert!(loss < 0.1, "final all-timestep loss {loss}");
}

#[test]
fn training_loss_decreases_at_small_scale() {
    let cfg = TrainConfig {
        model: ModelShape::new(2, 4).unwrap(),
        fc_sizes: vec![32, 32],
        gen: GenConfig {
            n_in: 2,
            n_samples: 100,
            tau_policy: TauPolicy::fixed(0.5),
            ..GenConfig::default()
        },
        learning_rate: 1e-3,
        iterations: 5000,
        seed: 2,
        pool_size: 10_000,
        checkpoint_every: 0,
        clip_norm: None,
    };
    let out = meta_train(&cfg, "", |_| Ok(())).unwrap();
    let window = |r: std::ops::Range<usize>| {
        out.log[r.clone()].iter().map(|(_, l)| l).sum::<f64>() / r.len() as f64
    };
    let (start, end) = (window(0..500), window(4500..5000));
    assert!(end < start, "smoothed loss {start} -> {end}");

    let held = gen_suite(&cfg.gen, 50, 77).unwrap();
    let score = |c: &Checkpoint| {
        let t: Vec<_> = held
            .iter()
            .map(|d| run_episode(&c.alpha, &cfg.model, d, false).unwrap())
            .collect();
        cost_eval(&t).unwrap()
    };
    let before = score(&initial_checkpoint(&cfg, "").unwrap());
    assert!(score(&out.checkpoint) < before);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let full = meta_train(&tiny(40, 12), "", |_| Ok(())).unwrap();
    let half = meta_train(&tiny(20, 12), "", |_| Ok(())).unwrap();
    let resumed = meta_train_from(&tiny(40, 12), half.checkpoint, |_| Ok(())).unwrap();
    assert_eq!(bits(&resumed.checkpoint), bits(&full.checkpoint));
    assert_eq!(resumed.checkpoint.optimizer, full.checkpoint.optimizer);
    assert_eq!(resumed.log[..], full.log[20..]);
}

#[test]
fn divergence_returns_last_good_state() {
    let cfg = tiny(50, 4);
    let mut start = meta_train(&tiny(10, 4), "", |_| Ok(())).unwrap().checkpoint;
    start.alpha.theta1[0] = f64::INFINITY;
    match meta_train_from(&cfg, start.clone(), |_| Ok(())) {
        Err(Error::Diverged { iteration, last_good, .. }) => {
            assert_eq!(iteration, 11);
            assert_eq!(*last_good, start);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    let other_shape = initial_checkpoint(&TrainConfig { fc_sizes: vec![4], ..tiny(1, 4) }, "").unwrap();
    assert!(matches!(meta_train_from(&cfg, other_shape, |_| Ok(())), Err(Error::InvalidArgument(_))));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let cfg = tiny(5, 6);
    let ckpt = meta_train(&cfg, "seed = 6\n", |_| Ok(())).unwrap().checkpoint;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(bits(&back), bits(&ckpt));
    assert_eq!(back.optimizer, ckpt.optimizer);

    let bytes = std::fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[1] ^= 0x20;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(FormatError::BadMagic { .. })));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
        Err(FormatError::Truncated(_))
    ));
    let mut version = bytes.clone();
    version[8] = 9;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(FormatError::Version { .. })));

    // header claims a wider hidden layer than the payload holds
    let text = String::from_utf8_lossy(&bytes).into_owned();
    assert!(text.contains("n_hidden=4"));
    let pos = bytes.windows(10).position(|w| w == b"n_hidden=4").unwrap();
    let mut shape = bytes.clone();
    shape[pos + 9] = b'5';
    assert!(Checkpoint::from_bytes(&shape).is_err());

    assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn smorms3_quadratic() {
    let mut opt = Smorms3::new(1);
    let mut x = vec![5.0];
    let mut hit = None;
    for t in 1..=5000 {
        let g = vec![x[0]];
        opt.step(&mut x, &g, 1e-2, t).unwrap();
        if x[0].abs() < 1e-3 {
            hit = Some(t);
            break;
        }
    }
    assert!(hit.is_some(), "did not converge, x = {}", x[0]);
}
