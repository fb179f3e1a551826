//! Occlusion-based partial views: sample an object, hide the far side with
//! the z-buffer, then apply a random rigid rotation — the three view modes
//! of the dataset.
//!
//! ```sh
//! cargo run --release --example partial_views
//! ```

use afford3d::geom3d::{apply_rotation, dist2, partial_view, random_rotation, Viewpoint};
use afford3d::synthgen::{affordance_vocab, make_template, sample_object};

fn main() {
    let template = make_template("mug", 7).expect("builtin template");
    let vocab = affordance_vocab(10);
    let (cloud, _, _) = sample_object(&template, 2048, 0.05, &vocab, 42).expect("sampling");
    println!(
        "full view: {} points, max norm {:.3}",
        cloud.len(),
        cloud.max_norm()
    );

    for seed in 0..3 {
        let vp = Viewpoint::random(seed, 32, 0.02);
        let visible = partial_view(&cloud, &vp);
        println!(
            "viewpoint {seed}: direction ({:+.2}, {:+.2}, {:+.2}) keeps {}/{} points ({:.0}%)",
            vp.direction[0],
            vp.direction[1],
            vp.direction[2],
            visible.len(),
            cloud.len(),
            100.0 * visible.len() as f64 / cloud.len() as f64
        );
        assert!(!visible.is_empty());
        assert!(visible.iter().all(|&i| i < cloud.len()));
    }

    // rotation view: same partial cloud under a random rigid motion;
    // pairwise distances are untouched
    let vp = Viewpoint::random(0, 32, 0.02);
    let visible = partial_view(&cloud, &vp);
    let partial = cloud.select(&visible);
    let rot = random_rotation(99);
    let rotated = apply_rotation(&partial, &rot);
    let mut worst = 0.0f64;
    for i in (0..partial.len()).step_by(37) {
        for j in (0..partial.len()).step_by(53) {
            let a = dist2(partial.points()[i], partial.points()[j]).sqrt();
            let b = dist2(rotated.points()[i], rotated.points()[j]).sqrt();
            worst = worst.max((a - b).abs());
        }
    }
    println!(
        "rotation view: det(R) = {:.9}, distance-matrix drift {worst:.2e}",
        rot.det()
    );
}
