//! Independent brute-force reference implementations.
//!
//! These deliberately avoid the code paths of the production metrics and
//! autodiff: AUC counts positive/negative pairs directly instead of using
//! midranks, aIoU materializes index sets per threshold, and the gradient
//! checker drives the network through central finite differences. They
//! back both the test suites and the `selftest` subcommand.

use crate::metrics::{aiou_threshold, AIOU_THRESHOLDS};

/// Pairwise-counting AUC: fraction of (positive, negative) pairs ranked
/// correctly, ties worth one half.
pub fn auc_bruteforce(pred: &[f64], gt: &[f64]) -> Option<f64> {
    let pos: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] > 0.0).collect();
    let neg: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] <= 0.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut score = 0.0;
    for &p in &pos {
        for &n in &neg {
            if pred[p] > pred[n] {
                score += 1.0;
            } else if pred[p] == pred[n] {
                score += 0.5;
            }
        }
    }
    Some(score / (pos.len() * neg.len()) as f64)
}

/// Set-materializing aIoU over the same declared threshold sweep.
pub fn aiou_bruteforce(pred: &[f64], gt: &[f64]) -> f64 {
    use std::collections::BTreeSet;
    let gt_set: BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] > 0.0).collect();
    let mut total = 0.0;
    for i in 1..=AIOU_THRESHOLDS {
        let tau = aiou_threshold(i);
        let pred_set: BTreeSet<usize> = (0..pred.len()).filter(|&j| pred[j] >= tau).collect();
        let inter = pred_set.intersection(&gt_set).count();
        let union = pred_set.union(&gt_set).count();
        total += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    total / AIOU_THRESHOLDS as f64
}

/// Histogram intersection recomputed from scratch.
pub fn sim_bruteforce(pred: &[f64], gt: &[f64]) -> Option<f64> {
    let zg: f64 = gt.iter().sum();
    if zg <= 0.0 {
        return None;
    }
    let zp: f64 = pred.iter().sum();
    if zp <= 0.0 {
        return Some(0.0);
    }
    let mut s = 0.0;
    for i in 0..pred.len() {
        let a = pred[i] / zp;
        let b = gt[i] / zg;
        s += if a < b { a } else { b };
    }
    Some(s)
}

pub fn mae_bruteforce(pred: &[f64], gt: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += (pred[i] - gt[i]).abs();
    }
    s / pred.len() as f64
}

/// Central finite difference of a scalar function at one coordinate of `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Outcome of probing one parameter coordinate.
#[derive(Clone, Debug)]
pub struct GradProbe {
    pub name: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl GradProbe {
    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        let denom = analytic.abs().max(numeric.abs()).max(1e-4);
        (analytic - numeric).abs() / denom
    }
}

/// Probe randomly chosen trainable coordinates of the full network:
/// analytic gradients of the training loss against central finite
/// differences of the same loss, both in 64-bit arithmetic.
pub fn gradient_probe_suite(
    cfg: &crate::config::RunConfig,
    n_probes: usize,
    seed: u64,
    step: f64,
) -> Vec<GradProbe> {
    use crate::geom3d::{normalize_unit_sphere, PointCloud};
    use crate::losses::{total_loss, total_loss_var};
    use crate::netblocks::{CloudGeometry, LMAffordance3D, Mode};
    use crate::rng::Rng;
    use crate::synthgen::make_instruction;
    use crate::tensor::{backward, Tensor};

    let mut rng = Rng::new(seed);
    let mut model = LMAffordance3D::new(cfg);
    let b = 2usize;
    let n = cfg.data.n_points;
    let size = cfg.data.image_size;
    let images = Tensor::from_vec(
        (0..b * 3 * size * size).map(|_| rng.uniform()).collect(),
        &[b, 3, size, size],
    );
    let instr = make_instruction("grasp", "mug", crate::config::Granularity::Full, 1)
        .expect("vocabulary words");
    let clouds: Vec<PointCloud> = (0..b)
        .map(|_| {
            normalize_unit_sphere(
                &PointCloud::new(
                    (0..n)
                        .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                        .collect(),
                )
                .unwrap(),
            )
            .unwrap()
        })
        .collect();
    let geos: Vec<CloudGeometry> = clouds
        .iter()
        .map(|c| CloudGeometry::compute(c, &cfg.model).unwrap())
        .collect();
    let y = Tensor::from_vec(
        (0..b * n)
            .map(|_| {
                if rng.uniform() < 0.3 {
                    rng.uniform()
                } else {
                    0.0
                }
            })
            .collect(),
        &[b, n, 1],
    );
    let instructions = vec![&instr; b];
    let cloud_refs: Vec<(&PointCloud, &CloudGeometry)> = clouds.iter().zip(geos.iter()).collect();

    let loss_of = |model: &mut LMAffordance3D| -> f64 {
        let out = model
            .forward(Some(&images), &instructions, &cloud_refs, Mode::Train)
            .expect("forward");
        total_loss(
            &out.pack.o.reshaped(&[b, n]),
            &y.reshaped(&[b, n]),
            &cfg.train.loss,
        )
        .expect("loss")
    };

    // analytic gradients once
    let out = model
        .forward(Some(&images), &instructions, &cloud_refs, Mode::Train)
        .expect("forward");
    let loss = total_loss_var(&out.o, &y, &cfg.train.loss);
    let grads = backward(&loss);

    // sample uniformly over the full trainable parameter vector
    let names = model.store.trainable_names();
    let sizes: Vec<usize> = names
        .iter()
        .map(|n| model.store.get(n).value.numel())
        .collect();
    let total: usize = sizes.iter().sum();
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let mut flat = rng.index(total);
        let mut which = 0usize;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let name = &names[which];
        let coord = flat;
        let analytic = grads.by_name(name).map(|g| g.data()[coord]).unwrap_or(0.0);

        let original = model.store.get(name).value.clone();
        let shape = original.shape().to_vec();
        let mut bumped = original.to_vec();
        bumped[coord] += step;
        model
            .store
            .set_value(name, Tensor::from_vec(bumped.clone(), &shape));
        let f_plus = loss_of(&mut model);
        bumped[coord] = original.data()[coord] - step;
        model
            .store
            .set_value(name, Tensor::from_vec(bumped, &shape));
        let f_minus = loss_of(&mut model);
        model.store.set_value(name, original);

        let numeric = (f_plus - f_minus) / (2.0 * step);
        probes.push(GradProbe {
            name: name.clone(),
            coord,
            analytic,
            numeric,
            rel_err: GradProbe::relative_error(analytic, numeric),
        });
    }
    probes
}
