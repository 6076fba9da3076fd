use std::path::Path;

use tryon::dataset::DatasetManifest;
use tryon::gsnet::{image_batch, Checkpoint, GsNet, Mode, PerceptualBackbone};
use tryon::imaging::JitterRanges;
use tryon::metrics::{masked_l1, ssim};
use tryon::nn::{Adam, AdamConfig, ParamStore};
use tryon::synthetic::{build_toy_dataset, ToyDatasetSpec};
use tryon::trainer::{
    discriminator_step, evaluate_epoch, generator_step, load_record, make_training_pair, masked_prediction,
    predict_record, read_log, train, LogEntry, NetSize, TrainConfig, DIVERGENCE_FILE,
};
use tryon::Error;

fn toy_dataset(dir: &Path) -> DatasetManifest {
    build_toy_dataset(
        dir,
        &ToyDatasetSpec {
            frames: 12,
            frame_side: 64,
            roi_size: 32,
            seed: 4,
        },
    )
    .unwrap()
}

fn toy_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        roi_size: 32,
        net: NetSize::Tiny,
        perceptual: PerceptualBackbone::Identity,
        holdout_fraction: 0.2,
        ..TrainConfig::default()
    }
}

fn snapshot(p: &ParamStore) -> Vec<Vec<f64>> {
    p.tensors().map(|t| t.data().to_vec()).collect()
}

#[test]
fn generator_and_discriminator_steps_touch_only_their_network() {
    let d = tempfile::tempdir().unwrap();
    let m = toy_dataset(d.path());
    let cfg = toy_config();
    let mut net = GsNet::new(&cfg.arch(), 0).unwrap();
    let mut og = Adam::new(&net.generator.params, AdamConfig::default());
    let mut od = Adam::new(&net.discriminator.params, AdamConfig::default());
    let pairs: Vec<_> = m.records[..2]
        .iter()
        .enumerate()
        .map(|(i, r)| make_training_pair(d.path(), r, Mode::Hybrid, &JitterRanges::default(), i as u64).unwrap())
        .collect();
    let x = image_batch(&pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>()).unwrap();
    let y = image_batch(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>()).unwrap();
    let ext = cfg.perceptual.load().unwrap();

    let (g0, d0) = (snapshot(&net.generator.params), snapshot(&net.discriminator.params));
    let (_, fake) = generator_step(&mut net, &mut og, ext.as_deref(), &x, &y, &cfg, 1e-3).unwrap();
    assert_eq!(snapshot(&net.discriminator.params), d0);
    assert_ne!(snapshot(&net.generator.params), g0);

    let g1 = snapshot(&net.generator.params);
    discriminator_step(&mut net, &mut od, &x, &y, &fake, 1e-3).unwrap();
    assert_eq!(snapshot(&net.generator.params), g1);
    assert_ne!(snapshot(&net.discriminator.params), d0);
}

fn tensors(path: &Path) -> Vec<Vec<f64>> {
    let ck = Checkpoint::load(path).unwrap();
    let mut v = snapshot(&ck.net.generator.params);
    v.extend(snapshot(&ck.net.discriminator.params));
    v.extend(ck.opt_g.unwrap().m.iter().map(|t| t.data().to_vec()));
    v
}

#[test]
fn resume_is_bit_exact() {
    let d = tempfile::tempdir().unwrap();
    toy_dataset(&d.path().join("ds"));
    let ds = d.path().join("ds");
    let cfg = TrainConfig { epochs: 3, ..toy_config() };
    let straight = train(&ds, &cfg, &d.path().join("a"), None).unwrap();

    let first = TrainConfig { epochs: 1, ..cfg.clone() };
    train(&ds, &first, &d.path().join("b"), None).unwrap();
    let ck = d.path().join("b/checkpoints/epoch_0001.tckp");
    let resumed = train(&ds, &cfg, &d.path().join("b"), Some(&ck)).unwrap();

    assert_eq!(straight.steps, resumed.steps);
    assert_eq!(tensors(&straight.final_checkpoint), tensors(&resumed.final_checkpoint));
    assert_eq!(straight.ema, resumed.ema);
    let steps = |p: &Path| {
        read_log(p)
            .unwrap()
            .into_iter()
            .filter_map(|e| match e {
                LogEntry::Step { step, loss, .. } => Some((step, loss.total)),
                _ => None,
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(steps(&straight.log), steps(&resumed.log));
}

#[test]
fn resume_rejects_another_dataset() {
    let d = tempfile::tempdir().unwrap();
    toy_dataset(&d.path().join("ds"));
    build_toy_dataset(
        &d.path().join("other"),
        &ToyDatasetSpec {
            frames: 12,
            frame_side: 64,
            roi_size: 32,
            seed: 5,
        },
    )
    .unwrap();
    let cfg = TrainConfig { epochs: 1, ..toy_config() };
    let s = train(&d.path().join("ds"), &cfg, &d.path().join("a"), None).unwrap();
    let err = train(&d.path().join("other"), &cfg, &d.path().join("b"), Some(&s.final_checkpoint)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn zero_perceptual_weight_needs_no_backbone() {
    let d = tempfile::tempdir().unwrap();
    toy_dataset(&d.path().join("ds"));
    let cfg = TrainConfig {
        lambda1: 0.0,
        perceptual: PerceptualBackbone::None,
        epochs: 1,
        ..toy_config()
    };
    let s = train(&d.path().join("ds"), &cfg, &d.path().join("o"), None).unwrap();
    assert!(s.steps > 0);
    let vgg: Vec<f64> = read_log(&s.log)
        .unwrap()
        .into_iter()
        .filter_map(|e| match e {
            LogEntry::Step { loss, .. } => Some(loss.vgg),
            _ => None,
        })
        .collect();
    assert!(vgg.iter().all(|&v| v == 0.0));

    let bad = TrainConfig { lambda1: 1.0, ..cfg };
    assert!(matches!(train(&d.path().join("ds"), &bad, &d.path().join("p"), None), Err(Error::Config(_))));
}

#[test]
fn mode_stamp_follows_the_configured_mode() {
    let d = tempfile::tempdir().unwrap();
    toy_dataset(&d.path().join("ds"));
    for mode in [Mode::Vm, Mode::Vmdp] {
        let cfg = TrainConfig {
            mode,
            epochs: 1,
            max_steps: 1,
            ..toy_config()
        };
        let s = train(&d.path().join("ds"), &cfg, &d.path().join(mode.to_string()), None).unwrap();
        let ck = Checkpoint::load(&s.final_checkpoint).unwrap();
        assert_eq!(ck.mode(), mode);
        assert_eq!(ck.net.generator.stem_channels(), mode.input_channels());
    }
}

#[test]
fn divergence_aborts_with_a_state_dump() {
    let d = tempfile::tempdir().unwrap();
    toy_dataset(&d.path().join("ds"));
    let cfg = TrainConfig {
        learning_rate: 1e200,
        epochs: 3,
        ..toy_config()
    };
    let err = train(&d.path().join("ds"), &cfg, &d.path().join("o"), None).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)), "{err}");
    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("o").join(DIVERGENCE_FILE)).unwrap()).unwrap();
    assert!(dump["state"]["step"].is_u64());
    assert!(dump["generator_param_norms"].as_array().is_some_and(|a| !a.is_empty()));
}

#[test]
fn holdout_metrics_match_direct_evaluation() {
    let d = tempfile::tempdir().unwrap();
    let m = toy_dataset(d.path());
    let net = GsNet::new(&toy_config().arch(), 9).unwrap();
    let (_, hold) = m.split_holdout(0.25);
    let s = evaluate_epoch(&net, d.path(), &hold).unwrap();
    let (mut l1, mut ss) = (0.0, 0.0);
    for r in &hold {
        let imgs = load_record(d.path(), r).unwrap();
        let (g, mask) = predict_record(&net, d.path(), r).unwrap();
        let pred = masked_prediction(&g, &mask);
        l1 += masked_l1(&pred, &imgs.garment, &imgs.mask).unwrap();
        ss += ssim(&pred, &imgs.garment).unwrap();
    }
    let n = hold.len() as f64;
    assert_eq!(s.frames, hold.len());
    assert!((s.masked_l1 - l1 / n).abs() < 1e-12);
    assert!((s.ssim - ss / n).abs() < 1e-12);
    assert!(matches!(evaluate_epoch(&net, d.path(), &[]), Err(Error::Config(_))));
}
