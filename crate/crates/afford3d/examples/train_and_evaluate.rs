//! End-to-end run at a small scale: generate data, train with the online
//! two-cloud pairing, then evaluate the four benchmark metrics on the test
//! part. Takes a couple of minutes on a laptop CPU.
//!
//! ```sh
//! cargo run --release --example train_and_evaluate
//! ```

use afford3d::config::RunConfig;
use afford3d::dataio::Manifest;
use afford3d::metrics;
use afford3d::netblocks::LMAffordance3D;
use afford3d::synthgen::generate_dataset;
use afford3d::trainer;

fn main() {
    afford3d::init_threads();
    let mut cfg = RunConfig::desk_small();
    cfg.data.n_train = 120;
    cfg.data.n_test = 40;
    cfg.train.epochs = 2;
    cfg.train.warmup_steps = 10;
    cfg.train.learning_rate = 8e-4;
    cfg.validate().expect("config");

    let data = std::path::Path::new("target/example-run/dataset");
    let out = std::path::Path::new("target/example-run/train");
    let t0 = std::time::Instant::now();
    generate_dataset(&cfg, data).expect("dataset");
    println!("dataset ready in {:.1?}", t0.elapsed());

    let report = trainer::fit(&cfg, data, out).expect("training");
    println!(
        "trained {} steps in {:.1?}; loss {:.4} → {:.4}; best val aIoU {:.3}",
        report.final_step,
        t0.elapsed(),
        report.log.first().unwrap().loss,
        report.log.last().unwrap().loss,
        report.best_val_aiou,
    );
    assert_eq!(
        report.backbone_hash_start, report.backbone_hash_end,
        "language backbone must stay frozen"
    );

    let (mut model, _) = LMAffordance3D::load(&out.join("best.ckpt")).expect("checkpoint");
    let manifest = Manifest::load(data).expect("manifest");
    let eval = metrics::evaluate(&mut model, data, &manifest.test, cfg.train.batch_size, 0)
        .expect("evaluation");
    let title = format!("setting: {}, view: {}", manifest.split, manifest.view);
    print!("{}", eval.to_table(&title));
    metrics::write_report(&eval, &out.join("eval"), &title).expect("report io");
    println!("report files in {}", out.join("eval").display());
}
