//! Export a colored point cloud: per-point affordance probability mapped
//! through the blue→red ramp, one `x y z r g b` line per point. The output
//! opens in any point-cloud viewer that reads xyzrgb text.
//!
//! ```sh
//! cargo run --release --example render_heatmap
//! ```

use afford3d::cli::heat_color;
use afford3d::synthgen::{affordance_vocab, make_template, sample_object};
use std::io::Write;

fn main() {
    let vocab = affordance_vocab(10);
    let template = make_template("kettle", 3).expect("template");
    let (cloud, annotation, _) = sample_object(&template, 2048, 0.05, &vocab, 9).expect("sample");

    let pour = vocab.iter().position(|a| a == "pour").unwrap();
    let heat = annotation.column(pour);

    let dir = std::path::Path::new("target/example-render");
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("kettle_pour.xyzrgb");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    for (p, &t) in cloud.points().iter().zip(&heat) {
        let (r, g, b) = heat_color(t);
        writeln!(f, "{:.6} {:.6} {:.6} {r} {g} {b}", p[0], p[1], p[2]).unwrap();
    }
    f.flush().unwrap();

    let hot = heat.iter().filter(|&&t| t > 0.5).count();
    println!(
        "wrote {} points to {} ({} hot points on the spout)",
        cloud.len(),
        path.display(),
        hot
    );
    println!("view it with any xyzrgb-capable point cloud viewer");
}
