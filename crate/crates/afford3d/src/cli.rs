//! Batch command-line interface: dataset generation, training, evaluation,
//! single-sample prediction, heatmap export, and a self-test.
//!
//! Shared flags: `--config PATH` (key = value file), `--set key=value`
//! (repeatable, wins over the file), `--out DIR`, `--seed INT`. Every
//! command that produces outputs writes the resolved configuration next
//! to them as `config.resolved`. Exit codes: 0 success, 1 usage error,
//! 2 validation failure, 3 runtime failure.

use crate::config::{ConfigError, Granularity, RunConfig};
use crate::dataio::{self, ArrayData, DataError, Manifest};
use crate::geom3d::PointCloud;
use crate::losses::LossConfig;
use crate::metrics;
use crate::netblocks::{CloudGeometry, LMAffordance3D, Mode, NetError};
use crate::oracles;
use crate::rng::Rng;
use crate::synthgen::{self, Instruction, SynthError};
use crate::tensor::Tensor;
use crate::trainer::{self, TrainError};
use std::path::{Path, PathBuf};

pub const USAGE: &str = "\
usage: afford3d <command> [args] [--config PATH] [--set key=value]... [--out DIR] [--seed INT]

commands:
  gen-data                              generate a synthetic dataset under --out (default: dataset)
  train    DATA_DIR                     train on a generated dataset; outputs under --out (default: run)
  eval     DATA_DIR CKPT                evaluate a checkpoint on the dataset's test part (--out default: eval)
  predict  CKPT PC_BIN IMG_BIN TEXT     predict one heatmap for a (cloud, image, instruction) triple
  render   PC_BIN HEATMAP_BIN           export a colored point cloud (x y z r g b per line)
  selftest                              run metric oracles and gradient checks

environment:
  AFFORD3D_THREADS                      cap the worker-thread count
";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(err) => CliError::Runtime(err.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Data(inner) => inner.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Data(inner) => inner.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(inner) => inner.into(),
            TrainError::Net(inner) => inner.into(),
            TrainError::Loss(inner) => CliError::Validation(inner.to_string()),
            TrainError::Invalid(m) => CliError::Validation(m),
            TrainError::Io(err) => CliError::Runtime(err.to_string()),
            diverged @ TrainError::Diverged { .. } => CliError::Runtime(diverged.to_string()),
            rejected @ TrainError::NonFiniteGrad { .. } => CliError::Runtime(rejected.to_string()),
        }
    }
}

struct ParsedArgs {
    command: String,
    positional: Vec<String>,
    config_path: Option<PathBuf>,
    overrides: Vec<(String, String)>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

fn parse_args(argv: &[String]) -> Result<ParsedArgs, CliError> {
    if argv.is_empty() {
        return Err(CliError::Usage(USAGE.to_string()));
    }
    let command = argv[0].clone();
    let mut parsed = ParsedArgs {
        command,
        positional: vec![],
        config_path: None,
        overrides: vec![],
        out: None,
        seed: None,
    };
    let mut i = 1;
    let value_of = |argv: &[String], i: usize, flag: &str| -> Result<String, CliError> {
        argv.get(i + 1)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{flag} requires a value")))
    };
    while i < argv.len() {
        match argv[i].as_str() {
            "--config" => {
                parsed.config_path = Some(PathBuf::from(value_of(argv, i, "--config")?));
                i += 2;
            }
            "--set" => {
                let kv = value_of(argv, i, "--set")?;
                let Some((k, v)) = kv.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "--set expects key=value, got `{kv}`"
                    )));
                };
                parsed
                    .overrides
                    .push((k.trim().to_string(), v.trim().to_string()));
                i += 2;
            }
            "--out" => {
                parsed.out = Some(PathBuf::from(value_of(argv, i, "--out")?));
                i += 2;
            }
            "--seed" => {
                let v = value_of(argv, i, "--seed")?;
                parsed.seed = Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("--seed expects an integer, got `{v}`"))
                })?);
                i += 2;
            }
            flag if flag.starts_with("--") => {
                return Err(CliError::Usage(format!("unknown flag `{flag}`")));
            }
            other => {
                parsed.positional.push(other.to_string());
                i += 1;
            }
        }
    }
    Ok(parsed)
}

fn resolve_config(args: &ParsedArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config_path {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (k, v) in &args.overrides {
        cfg.set(k, v)?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    cfg.save_snapshot(&dir.join("config.resolved"))?;
    Ok(())
}

fn cmd_gen_data(args: &ParsedArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
    write_snapshot(&cfg, &out)?;
    let manifest = synthgen::generate_dataset(&cfg, &out)?;
    manifest.validate(&out, cfg.train.pair_count)?;
    println!(
        "dataset written to {} ({} train, {} test, {} {} view)",
        out.display(),
        manifest.train.len(),
        manifest.test.len(),
        manifest.split,
        manifest.view
    );
    Ok(())
}

fn cmd_train(args: &ParsedArgs) -> Result<(), CliError> {
    let [data_dir] = &args.positional[..] else {
        return Err(CliError::Usage("train expects: DATA_DIR".into()));
    };
    let cfg = resolve_config(args)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    write_snapshot(&cfg, &out)?;
    let report = trainer::fit(&cfg, Path::new(data_dir), &out)?;
    let last = report.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps; final loss {:.6}; best validation aIoU {:.4} at step {}",
        report.final_step, last, report.best_val_aiou, report.best_step
    );
    println!("checkpoints and log written to {}", out.display());
    Ok(())
}

fn cmd_eval(args: &ParsedArgs) -> Result<(), CliError> {
    let [data_dir, ckpt] = &args.positional[..] else {
        return Err(CliError::Usage("eval expects: DATA_DIR CKPT".into()));
    };
    let root = Path::new(data_dir);
    let manifest = Manifest::load(root)?;
    let (mut model, _) = LMAffordance3D::load(Path::new(ckpt))?;
    if model.cfg.data.n_points != manifest.n_points
        || model.cfg.data.image_size != manifest.image_size
    {
        return Err(CliError::Validation(format!(
            "checkpoint expects {} points / {} px images, dataset has {} / {}",
            model.cfg.data.n_points,
            model.cfg.data.image_size,
            manifest.n_points,
            manifest.image_size
        )));
    }
    manifest.validate(root, 1)?;
    if manifest.test.is_empty() {
        return Err(CliError::Validation(
            "dataset has an empty test part".into(),
        ));
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
    write_snapshot(&model.cfg.clone(), &out)?;
    let batch = model.cfg.train.batch_size;
    let report = metrics::evaluate(&mut model, root, &manifest.test.clone(), batch, 0)?;
    let title = format!("setting: {}, view: {}", manifest.split, manifest.view);
    metrics::write_report(&report, &out, &title).map_err(|e| CliError::Runtime(e.to_string()))?;
    print!("{}", report.to_table(&title));
    println!("report written to {}", out.display());
    Ok(())
}

fn cmd_predict(args: &ParsedArgs) -> Result<(), CliError> {
    let [ckpt, pc_path, img_path, text] = &args.positional[..] else {
        return Err(CliError::Usage(
            "predict expects: CKPT PC_BIN IMG_BIN INSTRUCTION".into(),
        ));
    };
    let (mut model, _) = LMAffordance3D::load(Path::new(ckpt))?;
    let (pc_data, pc_shape) = dataio::read_array(Path::new(pc_path), dataio::DEFAULT_ARRAY_CAP)?;
    if pc_shape.len() != 2 || pc_shape[1] != 3 {
        return Err(CliError::Validation(format!(
            "point cloud must be (N,3), got {pc_shape:?}"
        )));
    }
    let cloud = PointCloud::from_flat(&pc_data.to_f64())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if cloud.len() <= model.cfg.model.sa1_points {
        return Err(CliError::Validation(format!(
            "cloud has {} points; the encoder needs more than {}",
            cloud.len(),
            model.cfg.model.sa1_points
        )));
    }
    let (img_data, img_shape) = dataio::read_array(Path::new(img_path), dataio::DEFAULT_ARRAY_CAP)?;
    let size = model.cfg.data.image_size;
    if img_shape != vec![3, size, size] {
        return Err(CliError::Validation(format!(
            "image must be (3,{size},{size}) for this checkpoint, got {img_shape:?}"
        )));
    }
    let geo = CloudGeometry::compute(&cloud, &model.cfg.model)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let images = Tensor::from_vec(img_data.to_f64(), &[1, 3, size, size]);
    let instruction = Instruction {
        text: text.clone(),
        granularity: Granularity::Full,
        verb: String::new(),
        object_noun: String::new(),
    };
    let out_res = model.forward(
        if model.cfg.train.image_on {
            Some(&images)
        } else {
            None
        },
        &[&instruction],
        &[(&cloud, &geo)],
        Mode::Eval,
    )?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("predict"));
    write_snapshot(&model.cfg.clone(), &out)?;
    let heatmap: Vec<f32> = out_res.pack.o.data().iter().map(|&v| v as f32).collect();
    let path = out.join("heatmap.bin");
    dataio::write_array(&path, &ArrayData::F32(heatmap), &[cloud.len(), 1])?;
    let mean: f64 = out_res.pack.o.data().iter().sum::<f64>() / cloud.len() as f64;
    println!(
        "heatmap ({} points, mean score {:.4}) written to {}",
        cloud.len(),
        mean,
        path.display()
    );
    Ok(())
}

/// Probability → color: blue at 0 through red at 1.
pub fn heat_color(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    (
        (255.0 * t).round() as u8,
        0,
        (255.0 * (1.0 - t)).round() as u8,
    )
}

fn cmd_render(args: &ParsedArgs) -> Result<(), CliError> {
    let [pc_path, heat_path] = &args.positional[..] else {
        return Err(CliError::Usage("render expects: PC_BIN HEATMAP_BIN".into()));
    };
    let (pc_data, pc_shape) = dataio::read_array(Path::new(pc_path), dataio::DEFAULT_ARRAY_CAP)?;
    if pc_shape.len() != 2 || pc_shape[1] != 3 {
        return Err(CliError::Validation(format!(
            "point cloud must be (N,3), got {pc_shape:?}"
        )));
    }
    let (heat_data, heat_shape) =
        dataio::read_array(Path::new(heat_path), dataio::DEFAULT_ARRAY_CAP)?;
    let n = pc_shape[0];
    if heat_shape != vec![n, 1] && heat_shape != vec![n] {
        return Err(CliError::Validation(format!(
            "heatmap must be ({n},1) to match the cloud, got {heat_shape:?}"
        )));
    }
    let pc = pc_data.to_f64();
    let heat = heat_data.to_f64();
    let mut text = String::with_capacity(n * 40);
    for i in 0..n {
        let (r, g, b) = heat_color(heat[i]);
        text.push_str(&format!(
            "{:.6} {:.6} {:.6} {r} {g} {b}\n",
            pc[i * 3],
            pc[i * 3 + 1],
            pc[i * 3 + 2]
        ));
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("render"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = out.join("heatmap.xyzrgb");
    std::fs::write(&path, text).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{n} colored points written to {}", path.display());
    Ok(())
}

fn cmd_selftest() -> Result<(), CliError> {
    let mut failures = 0;

    // metric implementations against the brute-force oracles
    let mut rng = Rng::new(0x5e1f);
    let mut worst: f64 = 0.0;
    let mut skip_mismatch = 0;
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
            _ => skip_mismatch += 1,
        }
        worst = worst.max((metrics::aiou(&pred, &gt) - oracles::aiou_bruteforce(&pred, &gt)).abs());
        match (
            metrics::sim(&pred, &gt),
            oracles::sim_bruteforce(&pred, &gt),
        ) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => skip_mismatch += 1,
        }
        worst = worst.max((metrics::mae(&pred, &gt) - oracles::mae_bruteforce(&pred, &gt)).abs());
    }
    let metrics_ok = worst < 1e-9 && skip_mismatch == 0;
    println!(
        "selftest metrics-oracle       {} (200 instances, max divergence {worst:.2e})",
        if metrics_ok { "PASS" } else { "FAIL" }
    );
    failures += usize::from(!metrics_ok);

    // loss hand values
    let cfg = LossConfig::default();
    let p = Tensor::from_vec(vec![0.5], &[1, 1]);
    let y = Tensor::from_vec(vec![1.0], &[1, 1]);
    let focal = crate::losses::focal_loss(&p, &y, &cfg).unwrap();
    let dice = crate::losses::dice_loss(
        &Tensor::from_vec(vec![1.0, 0.0], &[1, 2]),
        &Tensor::from_vec(vec![1.0, 1.0], &[1, 2]),
        &cfg,
    )
    .unwrap();
    let loss_ok = (focal - 0.04332).abs() < 1e-5 && dice == 0.25;
    println!(
        "selftest loss-hand-values     {} (focal {focal:.5}, dice {dice})",
        if loss_ok { "PASS" } else { "FAIL" }
    );
    failures += usize::from(!loss_ok);

    // gradient checks through the full network
    let probes = oracles::gradient_probe_suite(&RunConfig::grad_check(), 150, 2024, 1e-3);
    let bad = probes.iter().filter(|pr| pr.rel_err >= 1e-4).count();
    let grad_ok = bad * 100 <= probes.len();
    println!(
        "selftest gradient-checks      {} ({bad}/{} probes above 1e-4 rel err)",
        if grad_ok { "PASS" } else { "FAIL" },
        probes.len()
    );
    failures += usize::from(!grad_ok);

    if failures > 0 {
        return Err(CliError::Validation(format!(
            "{failures} selftest group(s) failed"
        )));
    }
    Ok(())
}

/// Entry point shared by the binary and the tests.
pub fn run(argv: &[String]) -> i32 {
    crate::init_threads();
    let parsed = match parse_args(argv) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}", e.message());
            return e.exit_code();
        }
    };
    let result = match parsed.command.as_str() {
        "gen-data" => cmd_gen_data(&parsed),
        "train" => cmd_train(&parsed),
        "eval" => cmd_eval(&parsed),
        "predict" => cmd_predict(&parsed),
        "render" => cmd_render(&parsed),
        "selftest" => cmd_selftest(),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("unknown command `{other}`\n{USAGE}");
            return 1;
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
