//! Optimization loop: AdamW with decoupled weight decay, a cosine
//! learning-rate schedule with linear warmup, online two-cloud pairing
//! with loss accumulation, newline-delimited JSON logging, and bitwise
//! save/resume of the whole training state.
//!
//! Every source of randomness is derived from (seed, epoch, step), so a
//! resumed run replays the exact stream an uninterrupted run would see.

use crate::config::RunConfig;
use crate::dataio::{self, DataError, Manifest, PairingSampler, PairingStep, Sample, SampleRecord};
use crate::losses::{total_loss_var, LossError};
use crate::metrics;
use crate::netblocks::{checkpoint, CloudGeometry, LMAffordance3D, Mode, NetError};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{backward, GradMap, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite gradient for `{param}` at step {step}; step rejected")]
    NonFiniteGrad { param: String, step: usize },
    #[error(
        "training diverged (non-finite loss) at step {step}; last good state saved to {saved}"
    )]
    Diverged { step: usize, saved: String },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Linear warmup to the base rate, then cosine decay to zero.
pub fn lr_at(step: usize, warmup_steps: usize, total_steps: usize, base_lr: f64) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    let t = (step - warmup_steps) as f64;
    let span = (total_steps.saturating_sub(warmup_steps)).max(1) as f64;
    let x = (t / span).min(1.0);
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}

/// First/second-moment accumulators keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: usize,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One decoupled-weight-decay Adam update over every trainable parameter.
/// Parameters without a gradient this step still shrink under decay; a
/// non-finite gradient rejects the whole step and leaves the state alone.
pub fn adamw_step(
    model: &mut LMAffordance3D,
    opt: &mut AdamState,
    grads: &GradMap,
    lr: f64,
    weight_decay: f64,
    step: usize,
) -> Result<(), TrainError> {
    let names = model.store.trainable_names();
    for name in &names {
        if let Some(g) = grads.by_name(name) {
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGrad {
                    param: name.clone(),
                    step,
                });
            }
        }
    }
    opt.t += 1;
    let t = opt.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for name in &names {
        let shape = model.store.get(name).value.shape().to_vec();
        let mut theta = model.store.get(name).value.to_vec();
        if weight_decay > 0.0 {
            for v in theta.iter_mut() {
                *v -= lr * weight_decay * *v;
            }
        }
        if let Some(g) = grads.by_name(name) {
            let g = g.data();
            let m = opt
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = opt
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                theta[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        model.store.set_value(name, Tensor::from_vec(theta, &shape));
    }
    Ok(())
}

/// A dataset part held in memory with its per-cloud geometry.
pub struct LoadedPart {
    pub records: Vec<SampleRecord>,
    pub samples: Vec<Sample>,
    pub geometry: Vec<CloudGeometry>,
}

impl LoadedPart {
    pub fn load(
        root: &Path,
        records: &[SampleRecord],
        cfg: &RunConfig,
    ) -> Result<Self, TrainError> {
        let mut samples = Vec::with_capacity(records.len());
        let mut geometry = Vec::with_capacity(records.len());
        for r in records {
            let s = dataio::read_sample(root, r)?;
            geometry.push(CloudGeometry::compute(&s.cloud, &cfg.model).map_err(NetError::Geom)?);
            samples.push(s);
        }
        Ok(LoadedPart {
            records: records.to_vec(),
            samples,
            geometry,
        })
    }
}

/// One optimization step over a group of pairing steps: images and
/// instruction features are computed once, each paired cloud contributes
/// its loss, and a single backward/update runs on the accumulated total.
pub fn train_step(
    model: &mut LMAffordance3D,
    opt: &mut AdamState,
    part: &LoadedPart,
    steps: &[PairingStep],
    lr: f64,
    cfg: &RunConfig,
    step_index: usize,
) -> Result<f64, TrainError> {
    assert!(!steps.is_empty());
    let pair_count = steps.iter().map(|s| s.cloud_idxs.len()).min().unwrap();
    let image_size = model.cfg.data.image_size;
    let images: Vec<&[f64]> = steps
        .iter()
        .map(|s| part.samples[s.image_idx].image.as_slice())
        .collect();
    let image_tensor = crate::netblocks::stack_images(&images, image_size);
    let instructions: Vec<&crate::synthgen::Instruction> = steps
        .iter()
        .map(|s| &part.samples[s.image_idx].record.instruction)
        .collect();
    let ctx = model.image_context(
        if model.cfg.train.image_on {
            Some(&image_tensor)
        } else {
            None
        },
        &instructions,
    )?;

    let n = model.cfg.data.n_points;
    let mut loss_acc: Option<crate::tensor::Var> = None;
    for p in 0..pair_count {
        let clouds: Vec<(&crate::geom3d::PointCloud, &CloudGeometry)> = steps
            .iter()
            .map(|s| {
                let i = s.cloud_idxs[p];
                (&part.samples[i].cloud, &part.geometry[i])
            })
            .collect();
        let out = model.forward_clouds(&ctx, &clouds, Mode::Train)?;
        let mut targets = Vec::with_capacity(steps.len() * n);
        for s in steps {
            targets.extend_from_slice(&part.samples[s.cloud_idxs[p]].target);
        }
        let y = Tensor::from_vec(targets, &[steps.len(), n, 1]);
        let loss_p = total_loss_var(&out.o, &y, &cfg.train.loss);
        loss_acc = Some(match loss_acc {
            None => loss_p,
            Some(acc) => acc.add(&loss_p),
        });
    }
    let loss = loss_acc.expect("at least one paired cloud");
    let loss_value = loss.value().item();
    if !loss_value.is_finite() {
        return Err(TrainError::Diverged {
            step: step_index,
            saved: String::new(),
        });
    }
    let grads = backward(&loss);
    adamw_step(model, opt, &grads, lr, cfg.train.weight_decay, step_index)?;
    Ok(loss_value)
}

/// One line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: u64,
}

pub struct FitReport {
    pub log: Vec<LogRecord>,
    pub best_val_aiou: f64,
    pub best_step: usize,
    pub final_step: usize,
    pub backbone_hash_start: u64,
    pub backbone_hash_end: u64,
}

/// Hold out roughly `fraction` of the records without starving any
/// (class, affordance) pairing group below `pair_count`.
fn val_split(
    records: &[SampleRecord],
    fraction: f64,
    pair_count: usize,
    seed: u64,
) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
    let n_val = ((records.len() as f64) * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    Rng::new(derive_seed(seed, &[0x7a1])).shuffle(&mut order);
    let mut group_left: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in records {
        *group_left
            .entry((r.object_class.clone(), r.affordance.clone()))
            .or_insert(0) += 1;
    }
    let mut val_idx = Vec::with_capacity(n_val);
    let mut train_idx = Vec::with_capacity(records.len() - n_val);
    for i in order {
        let r = &records[i];
        let key = (r.object_class.clone(), r.affordance.clone());
        let left = group_left.get_mut(&key).unwrap();
        if val_idx.len() < n_val && *left > pair_count {
            *left -= 1;
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    (
        train_idx.into_iter().map(|i| records[i].clone()).collect(),
        val_idx.into_iter().map(|i| records[i].clone()).collect(),
    )
}

/// Mean validation aIoU used for best-checkpoint selection.
fn validation_aiou(
    model: &mut LMAffordance3D,
    part: &LoadedPart,
    batch_size: usize,
) -> Result<f64, TrainError> {
    if part.samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let idxs: Vec<usize> = (0..part.samples.len()).collect();
    for chunk in idxs.chunks(batch_size) {
        let preds = predict_batch(model, part, chunk)?;
        for (&i, pred) in chunk.iter().zip(&preds) {
            total += metrics::aiou(pred, &part.samples[i].target);
        }
    }
    Ok(total / part.samples.len() as f64)
}

/// Eval-mode heatmaps for a set of sample indices (self-paired).
pub fn predict_batch(
    model: &mut LMAffordance3D,
    part: &LoadedPart,
    idxs: &[usize],
) -> Result<Vec<Vec<f64>>, TrainError> {
    let image_size = model.cfg.data.image_size;
    let images: Vec<&[f64]> = idxs
        .iter()
        .map(|&i| part.samples[i].image.as_slice())
        .collect();
    let image_tensor = crate::netblocks::stack_images(&images, image_size);
    let instructions: Vec<&crate::synthgen::Instruction> = idxs
        .iter()
        .map(|&i| &part.samples[i].record.instruction)
        .collect();
    let clouds: Vec<(&crate::geom3d::PointCloud, &CloudGeometry)> = idxs
        .iter()
        .map(|&i| (&part.samples[i].cloud, &part.geometry[i]))
        .collect();
    let out = model.forward(
        if model.cfg.train.image_on {
            Some(&image_tensor)
        } else {
            None
        },
        &instructions,
        &clouds,
        Mode::Eval,
    )?;
    let n = model.cfg.data.n_points;
    Ok(idxs
        .iter()
        .enumerate()
        .map(|(row, _)| out.pack.o.data()[row * n..(row + 1) * n].to_vec())
        .collect())
}

fn save_train_state(
    model: &LMAffordance3D,
    opt: &AdamState,
    step: usize,
    epoch: usize,
    path: &Path,
) -> Result<(), TrainError> {
    let mut meta = BTreeMap::new();
    meta.insert("step".to_string(), step.to_string());
    meta.insert("epoch".to_string(), epoch.to_string());
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
    checkpoint::save_checkpoint(path, &arrays, &meta).map_err(NetError::Data)?;
    Ok(())
}

/// Restore a model plus optimizer state saved by [`fit`].
pub fn load_train_state(
    path: &Path,
) -> Result<(LMAffordance3D, AdamState, usize, usize), TrainError> {
    let (model, meta) = LMAffordance3D::load(path)?;
    let ckpt = checkpoint::load_checkpoint(path).map_err(NetError::Data)?;
    let mut opt = AdamState::default();
    for (info, values) in ckpt.entries {
        if let Some(name) = info.name.strip_prefix("opt.m.") {
            opt.m.insert(name.to_string(), values);
        } else if let Some(name) = info.name.strip_prefix("opt.v.") {
            opt.v.insert(name.to_string(), values);
        }
    }
    let parse = |key: &str| -> Result<usize, TrainError> {
        meta.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| TrainError::Invalid(format!("checkpoint missing `{key}`")))
    };
    opt.t = parse("adam_t")?;
    let step = parse("step")?;
    let epoch = parse("epoch")?;
    Ok((model, opt, step, epoch))
}

/// Train on a generated dataset. Writes `train_log.ndjson`, `best.ckpt`
/// and `last.ckpt` under `out_dir`, plus the resolved config snapshot.
pub fn fit(cfg: &RunConfig, dataset_root: &Path, out_dir: &Path) -> Result<FitReport, TrainError> {
    cfg.validate()
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    std::fs::create_dir_all(out_dir)?;
    cfg.save_snapshot(&out_dir.join("config.resolved"))
        .map_err(|e| TrainError::Invalid(e.to_string()))?;

    let manifest = Manifest::load(dataset_root)?;
    manifest.validate(dataset_root, cfg.train.pair_count)?;
    if manifest.view != cfg.data.view || manifest.split != cfg.data.split {
        return Err(TrainError::Invalid(format!(
            "dataset is {}/{} but config asks for {}/{}",
            manifest.split, manifest.view, cfg.data.split, cfg.data.view
        )));
    }
    let (train_records, val_records) = val_split(
        &manifest.train,
        cfg.train.val_fraction,
        cfg.train.pair_count,
        cfg.train.seed,
    );
    if train_records.is_empty() {
        return Err(TrainError::Invalid(
            "no training samples after the validation split".into(),
        ));
    }
    let train_part = LoadedPart::load(dataset_root, &train_records, cfg)?;
    let val_part = LoadedPart::load(dataset_root, &val_records, cfg)?;

    let sampler = PairingSampler::new(
        &train_part.records,
        true,
        cfg.train.pair_count,
        cfg.train.seed,
    )?;
    let steps_per_epoch = train_part.records.len().div_ceil(cfg.train.batch_size);
    let total_steps = steps_per_epoch * cfg.train.epochs;
    if cfg.train.warmup_steps >= total_steps {
        return Err(TrainError::Invalid(format!(
            "warmup_steps {} must be below total steps {total_steps}",
            cfg.train.warmup_steps
        )));
    }

    let mut model = LMAffordance3D::new(cfg);
    let backbone_hash_start = model.backbone_hash();
    let mut opt = AdamState::default();
    let mut log: Vec<LogRecord> = Vec::with_capacity(total_steps);
    let mut best_val_aiou = f64::NEG_INFINITY;
    let mut best_step = 0;
    let mut step = 0usize;
    let started = std::time::Instant::now();

    let log_path = out_dir.join("train_log.ndjson");
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(&log_path)?);

    for epoch in 0..cfg.train.epochs {
        let pairing = sampler.epoch(&train_part.records, epoch as u64);
        for group in pairing.chunks(cfg.train.batch_size) {
            let lr = lr_at(
                step,
                cfg.train.warmup_steps,
                total_steps,
                cfg.train.learning_rate,
            );
            let loss = match train_step(&mut model, &mut opt, &train_part, group, lr, cfg, step) {
                Ok(l) => l,
                Err(TrainError::Diverged { step, .. }) => {
                    let abort = out_dir.join("last.ckpt");
                    save_train_state(&model, &opt, step, epoch, &abort)?;
                    return Err(TrainError::Diverged {
                        step,
                        saved: abort.display().to_string(),
                    });
                }
                Err(e) => return Err(e),
            };
            let record = LogRecord {
                step,
                epoch,
                lr,
                loss,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            serde_json::to_writer(&mut log_file, &record)
                .map_err(|e| TrainError::Invalid(e.to_string()))?;
            log_file.write_all(b"\n")?;
            log.push(record);
            step += 1;
        }
        if !val_part.samples.is_empty() {
            let aiou = validation_aiou(&mut model, &val_part, cfg.train.batch_size)?;
            if aiou > best_val_aiou {
                best_val_aiou = aiou;
                best_step = step;
                save_train_state(&model, &opt, step, epoch, &out_dir.join("best.ckpt"))?;
            }
        }
    }
    log_file.flush()?;
    save_train_state(
        &model,
        &opt,
        step,
        cfg.train.epochs,
        &out_dir.join("last.ckpt"),
    )?;
    if val_part.samples.is_empty() {
        // no validation: the final state doubles as the best checkpoint
        save_train_state(
            &model,
            &opt,
            step,
            cfg.train.epochs,
            &out_dir.join("best.ckpt"),
        )?;
        best_val_aiou = f64::NAN;
    }
    Ok(FitReport {
        log,
        best_val_aiou,
        best_step,
        final_step: step,
        backbone_hash_start,
        backbone_hash_end: model.backbone_hash(),
    })
}
