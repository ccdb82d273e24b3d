use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfae_autodiff::{gradcheck, ExecMode, GradCheckOptions, Tape, Tensor};
use sfae_core::kv::KeyValues;
use sfae_core::net::{init_params, NetConfig};
use sfae_core::train::*;
use sfae_core::Error;

fn random(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn tiny() -> TrainConfig {
    TrainConfig {
        steps: 4,
        batch_size: 2,
        image_size: 16,
        n_bands: 2,
        dataset_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn tonemap_examples() {
    let t = tonemap_target(&Tensor::new(vec![4], vec![0.0, 1.0, 0.5, 0.25]).unwrap());
    assert_eq!(t.data()[0], 0.0);
    assert_eq!(t.data()[1], 1.0);
    assert!((t.data()[2] - 0.7297).abs() < 5e-5);
    assert!((t.data()[2] - 0.5f64.powf(1.0 / 2.2)).abs() < 1e-15);
    let ramp = tonemap_target(&Tensor::from_fn(&[100], |i| i as f64 / 99.0));
    assert!(ramp.data().windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn loss_examples() {
    let tape = Tape::new();
    let x = random(1, &[1, 2, 8, 8], 0.0, 1.0);
    let w = LossWeights {
        recon: 1.0,
        entropy: 0.0,
    };
    let terms = loss(tape.constant(x.clone()), tape.constant(x.clone()), w).unwrap();
    assert_eq!(terms.loss.value().item(), Some(0.0));

    let y = random(2, &[1, 2, 8, 8], 0.0, 1.0);
    let terms = loss(tape.constant(x.clone()), tape.constant(y.clone()), LossWeights::default()).unwrap();
    let l1: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 128.0;
    assert!((terms.l1.value().item().unwrap() - l1).abs() < 1e-15);
    let expect = l1 - 0.05 * terms.entropy_bits.value().item().unwrap();
    assert!((terms.loss.value().item().unwrap() - expect).abs() < 1e-15);
}

#[test]
fn constant_output_minimizes_soft_entropy() {
    let hist = SoftHistogram::default();
    let tape = Tape::new();
    let h = |t: Tensor| soft_entropy(tape.constant(t), hist).value().item().unwrap();
    let floor = h(Tensor::full(&[1, 1, 8, 8], 0.5));
    for seed in 0..20 {
        let spread = h(random(seed, &[1, 1, 8, 8], 0.0, 1.0));
        assert!(floor < spread, "seed {seed}: {floor} vs {spread}");
    }
    // shifting the constant barely moves the floor: it is the kernel's own spread
    let other = h(Tensor::full(&[1, 1, 8, 8], 0.3));
    assert!((other - floor).abs() < 0.05);
    assert!(floor < 4.0);
}

#[test]
fn loss_gradcheck() {
    let target = random(3, &[1, 2, 6, 6], 0.0, 1.0);
    let x = random(4, &[1, 2, 6, 6], 0.05, 0.95);
    let report = gradcheck(
        |tape, v| {
            let terms = loss(v[0], tape.constant(target.clone()), LossWeights::default())
                .map_err(|e| sfae_autodiff::TensorError::Invalid {
                    op: "loss",
                    msg: e.to_string(),
                })?;
            Ok(terms.loss)
        },
        &[x],
        &GradCheckOptions {
            tol: 1e-3,
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let cfg = NetConfig {
        n_bands: 2,
        height: 16,
        width: 16,
        ..NetConfig::default()
    };
    let mut params = init_params(&cfg, 0).unwrap();
    let before = params.clone();
    let mut state = AdamState::new(&params);
    let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    adam_step(&mut params, &zeros, &mut state, &AdamConfig::default()).unwrap();
    assert_eq!(params, before);
    assert_eq!(state.t, 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let cfg = NetConfig {
        n_bands: 2,
        height: 16,
        width: 16,
        ..NetConfig::default()
    };
    let mut params = init_params(&cfg, 0).unwrap();
    let before = params.clone();
    let mut state = AdamState::new(&params);
    let ones: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::ones(t.shape())).collect();
    let acfg = AdamConfig::default();
    adam_step(&mut params, &ones, &mut state, &acfg).unwrap();
    // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
    let step = acfg.lr / (1.0 + acfg.eps);
    for (a, b) in params.tensors().iter().zip(before.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - step).abs() < 1e-15);
        }
    }
}

#[test]
fn adam_rejects_non_finite_gradients_untouched() {
    let cfg = NetConfig {
        n_bands: 2,
        height: 16,
        width: 16,
        ..NetConfig::default()
    };
    let mut params = init_params(&cfg, 0).unwrap();
    let before = params.clone();
    let mut state = AdamState::new(&params);
    let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::ones(t.shape())).collect();
    grads[5].data_mut()[0] = f64::NAN;
    let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
    assert!(matches!(&err, Error::NonFiniteGradient(n) if n == &params.names()[5]));
    assert_eq!(params, before);
    assert_eq!(state.t, 0);
}

fn sample_file() -> TensorFile {
    let mut config = KeyValues::default();
    config.insert("kind", "dump");
    config.insert("note", "x");
    TensorFile {
        config,
        records: vec![
            ("a".into(), random(5, &[2, 3], -1.0, 1.0)),
            ("b/c".into(), Tensor::scalar(f64::MIN_POSITIVE)),
            ("d".into(), Tensor::zeros(&[1, 1, 2])),
        ],
    }
}

#[test]
fn tensor_file_round_trip_and_layout() {
    let f = sample_file();
    let bytes = f.encode().unwrap();
    assert_eq!(&bytes[..4], b"SFAE");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
    let n = bytes.len();
    assert_eq!(
        u32::from_le_bytes(bytes[n - 4..].try_into().unwrap()),
        crc32fast::hash(&bytes[..n - 4])
    );
    let back = TensorFile::decode(&bytes).unwrap();
    assert_eq!(back, f);
    for ((_, a), (_, b)) in back.records.iter().zip(&f.records) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn tensor_file_load_errors() {
    let bytes = sample_file().encode().unwrap();

    let mut flipped = bytes.clone();
    let n = flipped.len();
    flipped[n - 1] ^= 0x40;
    assert!(matches!(TensorFile::decode(&flipped), Err(CheckpointError::Checksum { .. })));
    let mut body = bytes.clone();
    body[20] ^= 1;
    assert!(matches!(TensorFile::decode(&body), Err(CheckpointError::Checksum { .. })));

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        TensorFile::decode(&future),
        Err(CheckpointError::UnsupportedVersion { found: 2, supported: 1 })
    ));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(TensorFile::decode(&magic), Err(CheckpointError::BadMagic)));

    assert!(matches!(TensorFile::decode(&bytes[..14]), Err(CheckpointError::Truncated { .. })));
    assert!(matches!(TensorFile::decode(&bytes[..2]), Err(CheckpointError::Truncated { .. })));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.sfae");
    let err = TensorFile::load(&missing).unwrap_err();
    assert!(err.to_string().contains("none.sfae"));
}

#[test]
fn config_parsing() {
    let cfg = TrainConfig::parse_file_text("# run\nseed = 7\nsteps = 10\nlearning_rate = 0.002\n").unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.steps, 10);
    assert_eq!(cfg.learning_rate, 0.002);
    assert_eq!(cfg.n_bands, 8);
    assert!(matches!(TrainConfig::parse_file_text("sed = 7\n"), Err(Error::Config(_))));
    assert!(TrainConfig::parse_file_text("learning_rate = -1\n").is_err());
    assert!(TrainConfig::parse_file_text("image_size = 60\n").is_err());
    assert!(TrainConfig::parse_file_text("beta1 = 1.0\n").is_err());
    assert!(matches!(TrainConfig::parse_file_text("steps = many\n"), Err(Error::BadValue { .. })));

    let mut kv = KeyValues::default();
    tiny().write_kv(&mut kv, "");
    assert_eq!(TrainConfig::parse_file_text(&kv.to_string()).unwrap(), tiny());
}

#[test]
fn dataset_is_deterministic_and_low_light() {
    let cfg = tiny();
    let a = build_dataset(&cfg, ExecMode::Sequential).unwrap();
    let b = build_dataset(&cfg, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    for s in &a {
        assert_eq!(s.input.shape(), &[1, 4, 16, 16]);
        assert_eq!(s.bands.shape(), &[1, 8, 16, 16]);
        assert!((0.05..=0.15).contains(&s.exposure));
        assert!(s.input.mean() < s.target.mean());
    }
    let other = build_dataset(&TrainConfig { seed: 43, ..cfg }, ExecMode::Sequential).unwrap();
    assert_ne!(a, other);
}

#[test]
fn training_is_deterministic() {
    let (c1, l1) = train(tiny(), ExecMode::Sequential).unwrap();
    let (c2, l2) = train(tiny(), ExecMode::Parallel).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(c1.encode().unwrap(), c2.encode().unwrap());
    assert_eq!(l1.len(), 4);
    assert_eq!(l1.iter().map(|m| m.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);

    let mut a = Vec::new();
    write_metrics_csv(&l1, &mut a).unwrap();
    let mut b = Vec::new();
    write_metrics_csv(&l2, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn every_parameter_moves_and_gammas_drift() {
    let (ckpt, log) = train(tiny(), ExecMode::default()).unwrap();
    let init = init_params(&tiny().net_config(), tiny().seed).unwrap();
    for ((name, a), b) in ckpt.params.iter().zip(init.tensors()) {
        assert_ne!(a, b, "{name} never changed");
    }
    assert_eq!(log[0].gamma_orig_mean, 1.0);
    assert!(log.last().unwrap().gamma_orig_mean != 1.0);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let (full, full_log) = train(tiny(), ExecMode::default()).unwrap();

    let mut first = Trainer::new(tiny(), ExecMode::default()).unwrap();
    let mut log = first.run_steps(2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.sfae");
    save_checkpoint(&first.checkpoint(), &path).unwrap();
    drop(first);

    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 2);
    let mut second = Trainer::resume(loaded, ExecMode::default()).unwrap();
    log.extend(second.run(|_| {}).unwrap());
    assert_eq!(log, full_log);
    assert_eq!(second.checkpoint().encode().unwrap(), full.encode().unwrap());
}

#[test]
fn checkpoint_round_trips_exactly() {
    let mut t = Trainer::new(tiny(), ExecMode::default()).unwrap();
    t.run_steps(1).unwrap();
    let ckpt = t.checkpoint();
    let back = Checkpoint::from_file(TensorFile::decode(&ckpt.encode().unwrap()).unwrap()).unwrap();
    assert_eq!(back, ckpt);

    let mut file = ckpt.to_file();
    file.config.insert("kind", "dump");
    assert!(Checkpoint::from_file(file).is_err());
    let mut file = ckpt.to_file();
    file.records.pop();
    assert!(Checkpoint::from_file(file).is_err());
}

#[test]
fn evaluation_at_init_is_the_identity() {
    let t = Trainer::new(tiny(), ExecMode::default()).unwrap();
    let r = t.evaluate().unwrap();
    assert_eq!(r.gamma_abs_dev, 0.0);
    assert!((r.raw_entropy - r.enhanced_entropy).abs() < 0.05);
    assert!((r.raw_abs_skewness - r.enhanced_abs_skewness).abs() < 1e-3);
    assert!(r.l1 > 0.0);
}

#[test]
fn sweep_trains_each_band_count() {
    let mut seen = Vec::new();
    let runs = sweep(&tiny(), &[1, 2], ExecMode::default(), |r| seen.push(r.n_bands)).unwrap();
    assert_eq!(seen, vec![1, 2]);
    let (_, direct) = train(TrainConfig { n_bands: 2, ..tiny() }, ExecMode::default()).unwrap();
    assert_eq!(runs[1].log, direct);
    assert_eq!(runs[0].checkpoint.net.n_bands, 1);

    let mut buf = Vec::new();
    write_sweep_csv(&runs, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("2,4,"));
    assert_eq!(lines[1].split(',').count(), SWEEP_HEADER.split(',').count());
}
