//! Overfit an eight-sample training set until the heatmaps pin the ground
//! truth: training aIoU above 0.5 and MAE below 0.05, usually within a
//! couple hundred steps.
//!
//! ```sh
//! cargo run --release --example overfit_small_set
//! ```

use afford3d::config::RunConfig;
use afford3d::dataio::{Manifest, PairingSampler};
use afford3d::metrics;
use afford3d::netblocks::LMAffordance3D;
use afford3d::synthgen::generate_dataset;
use afford3d::trainer::{lr_at, predict_batch, train_step, AdamState, LoadedPart};

fn main() {
    afford3d::init_threads();
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
    cfg.train.epochs = 250;
    cfg.train.warmup_steps = 20;
    cfg.train.learning_rate = 1.5e-3;
    cfg.train.val_fraction = 0.0;
    cfg.validate().expect("config");

    let dir = std::path::Path::new("target/example-overfit");
    generate_dataset(&cfg, dir).expect("dataset");
    let manifest = Manifest::load(dir).expect("manifest");
    let part = LoadedPart::load(dir, &manifest.train, &cfg).expect("load");
    let sampler =
        PairingSampler::new(&part.records, true, cfg.train.pair_count, cfg.train.seed).unwrap();

    let mut model = LMAffordance3D::new(&cfg);
    let mut opt = AdamState::default();
    let steps_per_epoch = part.records.len().div_ceil(cfg.train.batch_size);
    let total = steps_per_epoch * cfg.train.epochs;
    let mut step = 0;
    let t0 = std::time::Instant::now();
    'outer: for epoch in 0..cfg.train.epochs {
        for group in sampler
            .epoch(&part.records, epoch as u64)
            .chunks(cfg.train.batch_size)
        {
            let lr = lr_at(step, cfg.train.warmup_steps, total, cfg.train.learning_rate);
            let loss = train_step(&mut model, &mut opt, &part, group, lr, &cfg, step).unwrap();
            if step % 50 == 0 {
                let idxs: Vec<usize> = (0..part.samples.len()).collect();
                let preds = predict_batch(&mut model, &part, &idxs).unwrap();
                let (mut aiou, mut mae) = (0.0, 0.0);
                for (i, p) in preds.iter().enumerate() {
                    aiou += metrics::aiou(p, &part.samples[i].target);
                    mae += metrics::mae(p, &part.samples[i].target);
                }
                aiou /= preds.len() as f64;
                mae /= preds.len() as f64;
                println!(
                    "step {step:4}  loss {loss:.4}  train aIoU {aiou:.3}  MAE {mae:.4}  ({:.0?})",
                    t0.elapsed()
                );
                if aiou >= 0.5 && mae <= 0.05 {
                    println!("\nmemorized the set at step {step} in {:.1?}", t0.elapsed());
                    break 'outer;
                }
            }
            step += 1;
            if step >= 500 {
                println!("\nstopped at the 500-step budget");
                break 'outer;
            }
        }
    }
}
