//! Verify the analytic gradients of the training loss against central
//! finite differences at 500 randomly chosen parameter coordinates.
//!
//! ```sh
//! cargo run --release --example gradient_check
//! ```

use afford3d::config::RunConfig;
use afford3d::oracles::gradient_probe_suite;

fn main() {
    afford3d::init_threads();
    let cfg = RunConfig::grad_check();
    let t0 = std::time::Instant::now();
    let probes = gradient_probe_suite(&cfg, 500, 2024, 1e-3);
    let mut bad: Vec<_> = probes.iter().filter(|p| p.rel_err >= 1e-4).collect();
    bad.sort_by(|a, b| b.rel_err.partial_cmp(&a.rel_err).unwrap());

    let mut by_block: std::collections::BTreeMap<&str, (usize, f64)> = Default::default();
    for p in &probes {
        let e = by_block
            .entry(p.name.split('.').next().unwrap())
            .or_insert((0, 0.0));
        e.0 += 1;
        if p.rel_err > e.1 {
            e.1 = p.rel_err;
        }
    }
    println!("500 probes over the full network in {:.1?}\n", t0.elapsed());
    println!("block      probes   worst rel err");
    for (block, (count, worst)) in &by_block {
        println!("{block:10} {count:5}    {worst:.2e}");
    }
    println!(
        "\n{} of {} probes within 1e-4 relative error (99% required)",
        probes.len() - bad.len(),
        probes.len()
    );
    for p in bad.iter().take(5) {
        println!(
            "  outlier {} c{}: analytic {:+.3e} vs numeric {:+.3e}",
            p.name, p.coord, p.analytic, p.numeric
        );
    }
    assert!(bad.len() * 100 <= probes.len(), "gradient check failed");
    println!("\ngradient check PASS");
}
