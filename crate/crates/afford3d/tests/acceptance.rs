//! Acceptance suite: one test per gate, each printing a PASS line with its
//! measured numbers (run with `--nocapture` to see them). Heavy fixtures
//! (training runs) are shared across criteria through lazy statics.

use afford3d::config::{Granularity, RunConfig, View};
use afford3d::dataio::{self, DataError, Manifest, PairingSampler};
use afford3d::geom3d::{
    self, interpolate_features, normalize_unit_sphere, partial_view, random_rotation, PointCloud,
    Rotation, Viewpoint,
};
use afford3d::losses::{dice_loss, focal_loss, LossConfig, PROB_CLAMP};
use afford3d::metrics;
use afford3d::netblocks::{checkpoint, CloudGeometry, LMAffordance3D, Mode};
use afford3d::oracles;
use afford3d::rng::Rng;
use afford3d::synthgen::{generate_dataset, make_instruction};
use afford3d::tensor::Tensor;
use afford3d::trainer::{self, lr_at, train_step, AdamState, LoadedPart};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn pass(criterion: usize, name: &str, detail: String) {
    println!("acceptance {criterion:02} {name}: PASS ({detail})");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_metric_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = Rng::new(0xacce5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = 64;
        let pred: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let gt: Vec<f64> = (0..n)
            .map(|_| {
                if rng.uniform() < 0.45 {
                    rng.uniform()
                } else {
                    0.0
                }
            })
            .collect();
        match (
            metrics::auc(&pred, &gt),
            oracles::auc_bruteforce(&pred, &gt),
        ) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            other => panic!("auc skip semantics diverged: {other:?}"),
        }
        worst = worst.max((metrics::aiou(&pred, &gt) - oracles::aiou_bruteforce(&pred, &gt)).abs());
        match (
            metrics::sim(&pred, &gt),
            oracles::sim_bruteforce(&pred, &gt),
        ) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            other => panic!("sim skip semantics diverged: {other:?}"),
        }
        worst = worst.max((metrics::mae(&pred, &gt) - oracles::mae_bruteforce(&pred, &gt)).abs());
    }
    assert!(worst < 1e-9, "oracle divergence {worst}");

    // hand-computed examples, exact
    assert_eq!(
        metrics::auc(&[0.9, 0.8, 0.3, 0.1], &[1.0, 0.7, 0.0, 0.0]),
        Some(1.0)
    );
    assert_eq!(
        metrics::auc(&[0.4; 5], &[1.0, 0.0, 1.0, 0.0, 0.0]),
        Some(0.5)
    );
    assert_eq!(
        metrics::auc(&[0.9, 0.4, 0.6, 0.1], &[1.0, 1.0, 0.0, 0.0]),
        Some(0.75)
    );

    assert_eq!(
        metrics::aiou(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.4, 0.0, 0.0]),
        1.0
    );
    assert_eq!(metrics::aiou(&[0.0; 3], &[1.0, 1.0, 0.0]), 0.0);
    // threshold-enumeration oracle for the mixed case
    let (pred, gt) = ([0.6, 0.4, 0.6, 0.0], [1.0, 1.0, 0.0, 0.0]);
    let mut want = 0.0;
    for i in 1..=19 {
        let tau = i as f64 / 20.0;
        let inter = (0..4).filter(|&j| pred[j] >= tau && gt[j] > 0.0).count();
        let union = (0..4).filter(|&j| pred[j] >= tau || gt[j] > 0.0).count();
        want += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    want /= 19.0;
    assert!((metrics::aiou(&pred, &gt) - want).abs() < 1e-15);

    let s = metrics::sim(&[0.2 * 3.7, 0.8 * 3.7], &[0.2, 0.8]).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    assert_eq!(metrics::sim(&[0.0, 0.7], &[1.0, 0.0]), Some(0.0));
    assert!((metrics::sim(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);

    assert_eq!(metrics::mae(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    assert!((metrics::mae(&[0.37, 0.57], &[0.3, 0.5]) - 0.07).abs() < 1e-12);
    assert!((metrics::mae(&[0.2, 0.8], &[0.0, 1.0]) - 0.2).abs() < 1e-15);

    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    pass(
        1,
        "metric-oracle-equivalence",
        format!("200 instances, max divergence {worst:.2e}, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_gradient_suite() {
    let t0 = Instant::now();
    let cfg = RunConfig::grad_check();
    let probes = oracles::gradient_probe_suite(&cfg, 500, 2024, 1e-3);
    let bad: Vec<_> = probes.iter().filter(|p| p.rel_err >= 1e-4).collect();
    let blocks: std::collections::BTreeSet<&str> = probes
        .iter()
        .map(|p| p.name.split('.').next().unwrap())
        .collect();
    assert!(
        blocks.len() >= 6,
        "probes must reach every trainable block, got {blocks:?}"
    );
    assert!(
        bad.len() * 100 <= probes.len(),
        "{} of {} probes exceeded 1e-4 relative error; first: {:?}",
        bad.len(),
        probes.len(),
        bad.first()
    );
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    pass(
        2,
        "gradient-suite",
        format!(
            "{}/{} probes within 1e-4 across blocks {blocks:?}, {elapsed:.1?}",
            probes.len() - bad.len(),
            probes.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_loss_hand_values() {
    let cfg = LossConfig::default();
    let focal_half = focal_loss(
        &Tensor::from_vec(vec![0.5], &[1, 1]),
        &Tensor::from_vec(vec![1.0], &[1, 1]),
        &cfg,
    )
    .unwrap();
    assert!((focal_half - 0.04332).abs() < 1e-5, "focal {focal_half}");

    let dice = dice_loss(
        &Tensor::from_vec(vec![1.0, 0.0], &[1, 2]),
        &Tensor::from_vec(vec![1.0, 1.0], &[1, 2]),
        &cfg,
    )
    .unwrap();
    assert_eq!(dice, 0.25);

    // gamma = 0, alpha = 1/2 reduces to half of an independent BCE
    let bce_cfg = LossConfig {
        gamma: 0.0,
        alpha: 0.5,
        ..cfg
    };
    let mut rng = Rng::new(3);
    let p: Vec<f64> = (0..128).map(|_| rng.uniform_in(0.01, 0.99)).collect();
    let y: Vec<f64> = (0..128).map(|_| rng.uniform()).collect();
    let ours = focal_loss(
        &Tensor::from_vec(p.clone(), &[4, 32]),
        &Tensor::from_vec(y.clone(), &[4, 32]),
        &bce_cfg,
    )
    .unwrap();
    let bce: f64 = p
        .iter()
        .zip(&y)
        .map(|(&pi, &yi)| {
            let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln())
        })
        .sum::<f64>()
        / p.len() as f64;
    assert!(
        (ours - 0.5 * bce).abs() < 1e-10,
        "{ours} vs half-BCE {}",
        0.5 * bce
    );
    pass(
        3,
        "loss-hand-values",
        format!(
            "focal@0.5 {focal_half:.5}, dice 0.25 exact, 0.5·BCE gap {:.1e}",
            (ours - 0.5 * bce).abs()
        ),
    );
}

// ------------------------------------------------ shared fixture: small fits

struct DeterminismFixture {
    report_a: trainer::FitReport,
    report_b: trainer::FitReport,
    _dirs: Vec<tempfile::TempDir>,
    ckpt_a: std::path::PathBuf,
}

static DETERMINISM: OnceLock<DeterminismFixture> = OnceLock::new();

fn determinism_cfg() -> RunConfig {
    let mut cfg = RunConfig::tiny();
    cfg.data.n_train = 44;
    cfg.data.n_test = 8;
    cfg.data.n_points = 128;
    cfg.data.image_size = 16;
    cfg.data.grid_resolution = 8;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 4;
    cfg.train.warmup_steps = 4;
    cfg.train.val_fraction = 0.15;
    cfg.train.seed = 5;
    cfg
}

fn determinism_fixture() -> &'static DeterminismFixture {
    DETERMINISM.get_or_init(|| {
        let cfg = determinism_cfg();
        let data = tempfile::tempdir().unwrap();
        generate_dataset(&cfg, data.path()).unwrap();
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let report_a = trainer::fit(&cfg, data.path(), out_a.path()).unwrap();
        let report_b = trainer::fit(&cfg, data.path(), out_b.path()).unwrap();
        let ckpt_a = out_a.path().join("last.ckpt");
        DeterminismFixture {
            report_a,
            report_b,
            ckpt_a,
            _dirs: vec![data, out_a, out_b],
        }
    })
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_frozen_backbone() {
    let fx = determinism_fixture();
    assert_eq!(
        fx.report_a.backbone_hash_start, fx.report_a.backbone_hash_end,
        "backbone parameters changed during training"
    );
    // and the hash survives the checkpoint round trip
    let (model, _) = LMAffordance3D::load(&fx.ckpt_a).unwrap();
    assert_eq!(model.backbone_hash(), fx.report_a.backbone_hash_end);
    pass(
        4,
        "frozen-backbone",
        format!(
            "hash {:016x} unchanged across the run",
            fx.report_a.backbone_hash_end
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

fn overfit_cfg() -> RunConfig {
    let mut cfg = RunConfig::desk_small();
    cfg.data.n_train = 8;
    cfg.data.n_test = 4;
    cfg.data.n_points = 256;
    cfg.data.image_size = 32;
    cfg.model.sa1_points = 128;
    cfg.model.sa1_k = 12;
    cfg.model.sa1_radius = 0.25;
    cfg.model.sa2_points = 40;
    cfg.model.sa2_k = 12;
    cfg.model.sa2_radius = 0.5;
    cfg.train.batch_size = 4;
    cfg.train.epochs = 250; // 2 steps per epoch → 500 steps available
    cfg.train.warmup_steps = 20;
    cfg.train.learning_rate = 1.5e-3;
    cfg.train.val_fraction = 0.0;
    cfg
}

#[test]
fn criterion_05_overfit_capacity() {
    let t0 = Instant::now();
    let cfg = overfit_cfg();
    cfg.validate().unwrap();
    let data = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, data.path()).unwrap();
    let manifest = Manifest::load(data.path()).unwrap();
    let part = LoadedPart::load(data.path(), &manifest.train, &cfg).unwrap();
    let sampler =
        PairingSampler::new(&part.records, true, cfg.train.pair_count, cfg.train.seed).unwrap();
    let mut model = LMAffordance3D::new(&cfg);
    let mut opt = AdamState::default();
    let steps_per_epoch = part.records.len().div_ceil(cfg.train.batch_size);
    let total = steps_per_epoch * cfg.train.epochs;
    assert!(total >= 500);

    let train_metrics = |model: &mut LMAffordance3D| -> (f64, f64) {
        let idxs: Vec<usize> = (0..part.samples.len()).collect();
        let preds = trainer::predict_batch(model, &part, &idxs).unwrap();
        let mut aiou = 0.0;
        let mut mae = 0.0;
        for (i, p) in preds.iter().enumerate() {
            aiou += metrics::aiou(p, &part.samples[i].target);
            mae += metrics::mae(p, &part.samples[i].target);
        }
        (aiou / preds.len() as f64, mae / preds.len() as f64)
    };

    let mut reached_at = None;
    let mut step = 0usize;
    'outer: for epoch in 0..cfg.train.epochs {
        for group in sampler
            .epoch(&part.records, epoch as u64)
            .chunks(cfg.train.batch_size)
        {
            let lr = lr_at(step, cfg.train.warmup_steps, total, cfg.train.learning_rate);
            train_step(&mut model, &mut opt, &part, group, lr, &cfg, step).unwrap();
            step += 1;
            if step >= 100 && step.is_multiple_of(25) {
                let (aiou, mae) = train_metrics(&mut model);
                if aiou >= 0.5 && mae <= 0.05 {
                    reached_at = Some((step, aiou, mae));
                    break 'outer;
                }
            }
            if step >= 500 {
                break 'outer;
            }
        }
    }
    let (hit_step, aiou, mae) = reached_at.unwrap_or_else(|| {
        let (aiou, mae) = train_metrics(&mut model);
        panic!("thresholds not reached in 500 steps: aIoU {aiou:.3}, MAE {mae:.4}")
    });
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");

    // after training the instruction channel matters: granularity none and
    // full produce different heatmaps for the same sample
    let sample = &part.samples[0];
    let geo = &part.geometry[0];
    let images = afford3d::netblocks::stack_images(&[sample.image.as_slice()], cfg.data.image_size);
    let full = make_instruction(
        &sample.record.affordance,
        &sample.record.object_class,
        Granularity::Full,
        3,
    )
    .unwrap();
    let none = make_instruction(
        &sample.record.affordance,
        &sample.record.object_class,
        Granularity::None,
        3,
    )
    .unwrap();
    let o_full = model
        .forward(Some(&images), &[&full], &[(&sample.cloud, geo)], Mode::Eval)
        .unwrap();
    let o_none = model
        .forward(Some(&images), &[&none], &[(&sample.cloud, geo)], Mode::Eval)
        .unwrap();
    assert!(
        o_full.pack.o.max_abs_diff(&o_none.pack.o) > 1e-9,
        "trained model ignores the instruction"
    );

    pass(
        5,
        "overfit-capacity",
        format!("aIoU {aiou:.3} ≥ 0.5 and MAE {mae:.4} ≤ 0.05 at step {hit_step}, {elapsed:.1?}"),
    );
}

// ------------------------------------------------ shared fixture: trend runs

struct TrendFixture {
    auc_full: f64,
    auc_partial: f64,
    auc_rotation: f64,
    auc_none: f64,
    wall: Duration,
}

static TREND: OnceLock<TrendFixture> = OnceLock::new();

fn trend_cfg(view: View, granularity: Granularity) -> RunConfig {
    let mut cfg = RunConfig::desk_small();
    cfg.data.n_train = 512;
    cfg.data.n_test = 128;
    cfg.data.view = view;
    // cross-scene pairing: the image comes from a different instance of
    // the category, so the interaction region cannot be read off the
    // query cloud's own render — the regime the task is designed around
    cfg.data.cross_pairing = true;
    cfg.train.granularity = granularity;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 4;
    cfg.train.warmup_steps = 30;
    cfg.train.learning_rate = 8e-4;
    cfg.train.val_fraction = 0.0;
    cfg.train.seed = 11;
    cfg
}

fn trend_run(view: View, granularity: Granularity) -> f64 {
    let cfg = trend_cfg(view, granularity);
    cfg.validate().unwrap();
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, data.path()).unwrap();
    trainer::fit(&cfg, data.path(), out.path()).unwrap();
    let (mut model, _) = LMAffordance3D::load(&out.path().join("last.ckpt")).unwrap();
    let manifest = Manifest::load(data.path()).unwrap();
    let report = metrics::evaluate(
        &mut model,
        data.path(),
        &manifest.test,
        cfg.train.batch_size,
        0,
    )
    .unwrap();
    report.overall.auc
}

fn trend_fixture() -> &'static TrendFixture {
    TREND.get_or_init(|| {
        let t0 = Instant::now();
        TrendFixture {
            auc_full: trend_run(View::Full, Granularity::Full),
            auc_partial: trend_run(View::Partial, Granularity::Full),
            auc_rotation: trend_run(View::Rotation, Granularity::Full),
            auc_none: trend_run(View::Full, Granularity::None),
            wall: t0.elapsed(),
        }
    })
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_view_difficulty_trend() {
    let fx = trend_fixture();
    const TIE_TOL: f64 = 0.01;
    assert!(
        fx.auc_full + TIE_TOL >= fx.auc_partial,
        "full {:.4} ≥ partial {:.4} violated",
        fx.auc_full,
        fx.auc_partial
    );
    assert!(
        fx.auc_partial + TIE_TOL >= fx.auc_rotation,
        "partial {:.4} ≥ rotation {:.4} violated",
        fx.auc_partial,
        fx.auc_rotation
    );
    assert!(
        fx.wall < Duration::from_secs(1800),
        "trend runs took {:?}",
        fx.wall
    );
    pass(
        6,
        "view-difficulty-trend",
        format!(
            "AUC full {:.4} ≥ partial {:.4} ≥ rotation {:.4} (tol {TIE_TOL}), all runs {:.0?}",
            fx.auc_full, fx.auc_partial, fx.auc_rotation, fx.wall
        ),
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_instruction_ablation_direction() {
    let fx = trend_fixture();
    let gap = fx.auc_full - fx.auc_none;
    assert!(
        gap >= 0.01,
        "full-instruction AUC {:.4} must beat empty instructions {:.4} by ≥ 0.01",
        fx.auc_full,
        fx.auc_none
    );
    pass(
        7,
        "instruction-ablation-direction",
        format!(
            "AUC full {:.4} vs none {:.4}, gap {gap:.4}",
            fx.auc_full, fx.auc_none
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_determinism_and_resume() {
    let fx = determinism_fixture();
    assert_eq!(fx.report_a.log.len(), fx.report_b.log.len());
    for (a, b) in fx.report_a.log.iter().zip(&fx.report_b.log) {
        assert_eq!(a.step, b.step);
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(
            a.lr.to_bits(),
            b.lr.to_bits(),
            "lr diverged at step {}",
            a.step
        );
        assert_eq!(
            a.loss.to_bits(),
            b.loss.to_bits(),
            "loss diverged at step {}",
            a.step
        );
    }

    // save → load → one more step both ways, bitwise identical parameters
    let cfg = determinism_cfg();
    let data = tempfile::tempdir().unwrap();
    generate_dataset(&cfg, data.path()).unwrap();
    let manifest = Manifest::load(data.path()).unwrap();
    let part = LoadedPart::load(data.path(), &manifest.train, &cfg).unwrap();
    let sampler = PairingSampler::new(&part.records, true, 2, cfg.train.seed).unwrap();
    let steps = sampler.epoch(&part.records, 0);

    let mut model = LMAffordance3D::new(&cfg);
    let mut opt = AdamState::default();
    for (i, group) in steps.chunks(4).take(2).enumerate() {
        train_step(&mut model, &mut opt, &part, group, 3e-4, &cfg, i).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("mid.ckpt");
    trainer_save_for_test(&model, &opt, &ckpt);
    let (mut resumed, mut ropt, _, _) = trainer::load_train_state(&ckpt).unwrap();

    let next: Vec<dataio::PairingStep> = steps.chunks(4).nth(2).unwrap().to_vec();
    let l1 = train_step(&mut model, &mut opt, &part, &next, 3e-4, &cfg, 2).unwrap();
    let l2 = train_step(&mut resumed, &mut ropt, &part, &next, 3e-4, &cfg, 2).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    let mut checked = 0usize;
    for (name, p) in model.store.iter() {
        let q = resumed.store.get(name);
        for (x, y) in p.value.data().iter().zip(q.value.data()) {
            assert_eq!(x.to_bits(), y.to_bits(), "{name} diverged after resume");
        }
        checked += p.value.numel();
    }
    pass(
        8,
        "determinism-and-resume",
        format!(
            "{} log records identical across runs; {checked} parameter values bitwise equal after resume",
            fx.report_a.log.len()
        ),
    );
}

/// Mirror of the trainer's internal state writer, kept in the test so the
/// resume path is exercised through the public load entry point.
fn trainer_save_for_test(model: &LMAffordance3D, opt: &AdamState, path: &std::path::Path) {
    let mut meta = std::collections::BTreeMap::new();
    meta.insert("step".to_string(), "2".to_string());
    meta.insert("epoch".to_string(), "0".to_string());
    meta.insert("adam_t".to_string(), opt.t.to_string());
    meta.insert("config".to_string(), model.cfg.snapshot());
    let mut arrays: Vec<(String, Vec<usize>, &[f64], bool)> = model
        .store
        .iter()
        .map(|(name, p)| {
            (
                name.clone(),
                p.value.shape().to_vec(),
                p.value.data(),
                p.trainable,
            )
        })
        .collect();
    for (name, m) in &opt.m {
        arrays.push((format!("opt.m.{name}"), vec![m.len()], m.as_slice(), false));
    }
    for (name, v) in &opt.v {
        arrays.push((format!("opt.v.{name}"), vec![v.len()], v.as_slice(), false));
    }
    checkpoint::save_checkpoint(path, &arrays, &meta).unwrap();
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_format_roundtrips() {
    // dataset arrays: write → read → write byte-identical
    let cfg = {
        let mut c = RunConfig::tiny();
        c.data.n_train = 8;
        c.data.n_test = 4;
        c.data.n_points = 96;
        c.data.image_size = 16;
        c.data.grid_resolution = 8;
        c
    };
    let data = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&cfg, data.path()).unwrap();
    let mut files_checked = 0usize;
    for record in manifest.train.iter().chain(manifest.test.iter()) {
        for rel in [&record.pc_path, &record.img_path, &record.label_path] {
            let path = data.path().join(rel);
            let original = std::fs::read(&path).unwrap();
            let (arr, shape) = dataio::read_array(&path, dataio::DEFAULT_ARRAY_CAP).unwrap();
            dataio::write_array(&path, &arr, &shape).unwrap();
            assert_eq!(original, std::fs::read(&path).unwrap(), "{rel} changed");
            files_checked += 1;
        }
    }

    // checkpoints: same property, through the model save path
    let model = LMAffordance3D::new(&RunConfig::tiny());
    let dir = tempfile::tempdir().unwrap();
    let ckpt_path = dir.path().join("m.ckpt");
    model.save(&ckpt_path, &Default::default()).unwrap();
    let bytes1 = std::fs::read(&ckpt_path).unwrap();
    let (restored, meta) = LMAffordance3D::load(&ckpt_path).unwrap();
    restored.save(&ckpt_path, &prune_config_meta(meta)).unwrap();
    let bytes2 = std::fs::read(&ckpt_path).unwrap();
    assert_eq!(bytes1, bytes2, "checkpoint write→read→write changed bytes");

    // corrupted headers must surface as typed errors, never crashes
    let sample_file = data.path().join(&manifest.train[0].pc_path);
    let mut corrupt = std::fs::read(&sample_file).unwrap();
    corrupt[0] ^= 0xff;
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, &corrupt).unwrap();
    assert!(matches!(
        dataio::read_array(&bad, dataio::DEFAULT_ARRAY_CAP),
        Err(DataError::BadMagic(_))
    ));
    let good = std::fs::read(&sample_file).unwrap();
    std::fs::write(&bad, &good[..10]).unwrap();
    assert!(matches!(
        dataio::read_array(&bad, dataio::DEFAULT_ARRAY_CAP),
        Err(DataError::Truncated(_))
    ));
    let mut ckpt_corrupt = bytes1.clone();
    ckpt_corrupt[3] ^= 0x20;
    std::fs::write(&ckpt_path, &ckpt_corrupt).unwrap();
    assert!(matches!(
        checkpoint::load_checkpoint(&ckpt_path),
        Err(DataError::BadMagic(_))
    ));

    pass(
        9,
        "format-roundtrips",
        format!("{files_checked} dataset arrays and one checkpoint byte-stable; corruptions typed"),
    );
}

fn prune_config_meta(
    mut meta: std::collections::BTreeMap<String, String>,
) -> std::collections::BTreeMap<String, String> {
    // `save` re-inserts the config snapshot; drop it so it is not doubled
    meta.remove("config");
    meta
}

// --------------------------------------------------------------- criterion 10

/// Independent z-buffer oracle, reimplemented here against the library.
fn zbuffer_oracle(pc: &PointCloud, vp: &Viewpoint) -> Vec<usize> {
    let d = vp.direction;
    let abs = [d[0].abs(), d[1].abs(), d[2].abs()];
    let axis = if abs[0] <= abs[1] && abs[0] <= abs[2] {
        [1.0, 0.0, 0.0]
    } else if abs[1] <= abs[2] {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let u_raw = geom3d::cross(d, axis);
    let un = geom3d::norm(u_raw);
    let u = [u_raw[0] / un, u_raw[1] / un, u_raw[2] / un];
    let v = geom3d::cross(d, u);
    let res = vp.grid_resolution;
    let proj: Vec<(f64, f64, f64)> = pc
        .points()
        .iter()
        .map(|p| (geom3d::dot(*p, u), geom3d::dot(*p, v), geom3d::dot(*p, d)))
        .collect();
    let umin = proj.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let umax = proj.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let vmin = proj.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let vmax = proj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let us = (umax - umin).max(f64::MIN_POSITIVE);
    let vs = (vmax - vmin).max(f64::MIN_POSITIVE);
    let cell = |pu: f64, pv: f64| -> (usize, usize) {
        let cu = (((pu - umin) / us) * res as f64) as usize;
        let cv = (((pv - vmin) / vs) * res as f64) as usize;
        (cu.min(res - 1), cv.min(res - 1))
    };
    let mut visible = vec![];
    for (i, &(pu, pv, pd)) in proj.iter().enumerate() {
        let me = cell(pu, pv);
        let mut nearest = f64::INFINITY;
        for &(qu, qv, qd) in &proj {
            if cell(qu, qv) == me {
                nearest = nearest.min(qd);
            }
        }
        if pd <= nearest + vp.depth_tolerance {
            visible.push(i);
        }
    }
    visible
}

#[test]
fn criterion_10_geometry_invariants() {
    // rotations: orthogonal and proper to 1e-9 across 50 seeds
    let mut worst_orth: f64 = 0.0;
    let mut worst_det: f64 = 0.0;
    for seed in 0..50 {
        let r = random_rotation(seed);
        worst_orth = worst_orth.max(r.orthogonality_error());
        worst_det = worst_det.max((r.det() - 1.0).abs());
        Rotation::new(*r.matrix()).unwrap();
    }
    assert!(worst_orth < 1e-9 && worst_det < 1e-9);

    // partial views agree exactly with the independent oracle on 50 scenes
    let mut rng = Rng::new(0x9e0);
    for scene in 0..50 {
        let n = 64 + rng.index(400);
        let pc = PointCloud::new(
            (0..n)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect(),
        )
        .unwrap();
        let pc = normalize_unit_sphere(&pc).unwrap();
        let vp = Viewpoint::random(scene as u64, 4 + rng.index(29), rng.uniform() * 0.1);
        assert_eq!(
            partial_view(&pc, &vp),
            zbuffer_oracle(&pc, &vp),
            "scene {scene} diverged from the z-buffer oracle"
        );
    }

    // inverse-distance interpolation equals its closed form to 1e-12
    let sparse = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
    let dense = PointCloud::new(vec![[0.25, 0.0, 0.0]]).unwrap();
    let out = interpolate_features(&dense, &sparse, &[0.0, 1.0], 1, 2).unwrap();
    assert!((out[0] - 0.25).abs() < 1e-12, "closed form gave {}", out[0]);

    pass(
        10,
        "geometry-invariants",
        format!(
            "rotation err {worst_orth:.1e}/{worst_det:.1e}, 50 z-buffer scenes exact, interpolation gap {:.1e}",
            (out[0] - 0.25).abs()
        ),
    );
}

// Shape-contract spot checks at the declared default dimensions; cheap
// single forwards, no training.
#[test]
fn default_dimension_contracts() {
    let cfg = RunConfig::default();
    let mut model = LMAffordance3D::new(&cfg);
    let mut rng = Rng::new(0xd1);
    let images = Tensor::from_vec(
        (0..3 * 64 * 64).map(|_| rng.uniform()).collect(),
        &[1, 3, 64, 64],
    );
    let cloud = normalize_unit_sphere(
        &PointCloud::new(
            (0..2048)
                .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                .collect(),
        )
        .unwrap(),
    )
    .unwrap();
    let geo = CloudGeometry::compute(&cloud, &cfg.model).unwrap();
    let instr = make_instruction("grasp", "mug", Granularity::Full, 0).unwrap();
    let out = model
        .forward(Some(&images), &[&instr], &[(&cloud, &geo)], Mode::Eval)
        .unwrap();
    assert_eq!(out.pack.f2d.as_ref().unwrap().shape(), &[1, 64, 8, 8]);
    assert_eq!(out.pack.f3d.shape(), &[1, 256, 128]);
    assert_eq!(out.pack.fs.shape(), &[1, 192, 256]);
    assert_eq!(out.pack.fsp.shape(), &[1, 192, 256]);
    assert_eq!(out.pack.ft.shape(), &[1, 24, 256]);
    assert_eq!(out.pack.fa.shape(), &[1, 192, 256]);
    assert_eq!(out.pack.o.shape(), &[1, 2048, 1]);
    // hidden state of the backbone is (B, N_S + N_L, C_L) = (1, 216, 256)
    assert_eq!(cfg.model.n_s(cfg.data.image_size) + cfg.model.n_l, 216);
    out.pack.assert_invariants().unwrap();
    println!("default-dimension contracts hold: O (1,2048,1), hidden 216 tokens");
}
