//! Generate a small synthetic dataset and walk its on-disk layout.
//!
//! ```sh
//! cargo run --release --example generate_dataset
//! ```

use afford3d::config::{RunConfig, Split, View};
use afford3d::dataio::{read_sample, Manifest};
use afford3d::synthgen::generate_dataset;
use std::collections::BTreeMap;

fn main() {
    let mut cfg = RunConfig::desk_small();
    cfg.data.n_train = 60;
    cfg.data.n_test = 20;
    cfg.data.view = View::Partial;
    cfg.data.split = Split::Seen;

    let root = std::path::Path::new("target/example-dataset");
    let manifest = generate_dataset(&cfg, root).expect("generation failed");
    manifest
        .validate(root, cfg.train.pair_count)
        .expect("manifest invalid");

    println!(
        "wrote {} train + {} test samples ({} view, {} split) to {}",
        manifest.train.len(),
        manifest.test.len(),
        manifest.view,
        manifest.split,
        root.display()
    );
    println!("affordance vocabulary: {:?}", manifest.affordance_vocab);

    let mut by_pair: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &manifest.train {
        *by_pair
            .entry((r.object_class.clone(), r.affordance.clone()))
            .or_default() += 1;
    }
    println!("\ntraining groups (class, affordance → count):");
    for ((class, aff), count) in &by_pair {
        println!("  {class:10} {aff:10} {count}");
    }

    let sample = read_sample(root, &manifest.train[0]).expect("read back");
    let positives = sample.target.iter().filter(|&&t| t > 0.0).count();
    println!(
        "\nfirst sample `{}`: {} points, instruction {:?}, {} target-positive points",
        sample.record.sample_id,
        sample.cloud.len(),
        sample.record.instruction.text,
        positives
    );
    println!(
        "reload `{}/manifest.json` to inspect the rest",
        root.display()
    );

    // regenerate into a second directory: the trees are byte-identical
    let verify = Manifest::load(root).expect("reload manifest");
    assert_eq!(verify.train.len(), manifest.train.len());
}
