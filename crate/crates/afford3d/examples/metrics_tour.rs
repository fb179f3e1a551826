//! The four benchmark metrics on constructed heatmaps, cross-checked
//! against the brute-force reference implementations.
//!
//! ```sh
//! cargo run --release --example metrics_tour
//! ```

use afford3d::metrics::{aiou, auc, mae, sim, MetricAccumulator};
use afford3d::oracles;
use afford3d::rng::Rng;

fn main() {
    let gt = [1.0, 1.0, 0.0, 0.0];

    println!("ground truth {gt:?}\n");
    for (label, pred) in [
        ("perfect", [1.0, 1.0, 0.0, 0.0]),
        ("good ranking", [0.9, 0.6, 0.3, 0.1]),
        ("one swapped", [0.9, 0.4, 0.6, 0.1]),
        ("constant", [0.5, 0.5, 0.5, 0.5]),
        ("inverted", [0.1, 0.2, 0.9, 0.8]),
    ] {
        println!(
            "{label:13} AUC {:?}  aIoU {:.4}  SIM {:?}  MAE {:.4}",
            auc(&pred, &gt).map(|v| format!("{v:.3}")),
            aiou(&pred, &gt),
            sim(&pred, &gt).map(|v| format!("{v:.3}")),
            mae(&pred, &gt),
        );
    }

    // degenerate ground truths are skipped, not averaged as garbage
    println!(
        "\nall-positive gt → AUC {:?} (skipped)",
        auc(&[0.5, 0.6], &[1.0, 1.0])
    );
    println!(
        "all-zero gt     → SIM {:?} (skipped)",
        sim(&[0.5, 0.6], &[0.0, 0.0])
    );

    // the implementations agree with independent brute force
    let mut rng = Rng::new(0xbeef);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let pred: Vec<f64> = (0..64).map(|_| rng.uniform()).collect();
        let gtr: Vec<f64> = (0..64)
            .map(|_| {
                if rng.uniform() < 0.4 {
                    rng.uniform()
                } else {
                    0.0
                }
            })
            .collect();
        if let (Some(a), Some(b)) = (auc(&pred, &gtr), oracles::auc_bruteforce(&pred, &gtr)) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((aiou(&pred, &gtr) - oracles::aiou_bruteforce(&pred, &gtr)).abs());
    }
    println!("\nbrute-force divergence over 200 random instances: {worst:.2e}");

    // report aggregation with per-affordance rows
    let mut acc = MetricAccumulator::new();
    for i in 0..6 {
        let pred: Vec<f64> = (0..32).map(|_| rng.uniform()).collect();
        let gtr: Vec<f64> = (0..32)
            .map(|_| if rng.uniform() < 0.4 { 1.0 } else { 0.0 })
            .collect();
        acc.add(if i % 2 == 0 { "grasp" } else { "pour" }, &pred, &gtr);
    }
    println!("\n{}", acc.report().to_table("random predictions demo"));
}
