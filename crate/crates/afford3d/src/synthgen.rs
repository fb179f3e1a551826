//! Procedural generator of (image, point cloud, instruction) triples with
//! part-level affordance heatmaps.
//!
//! Objects are assembled from posed primitives (cylinders, boxes, spheres,
//! torus segments), sampled uniformly by surface area. Labels are soft:
//! points on a part carrying the affordance score in (0.5, 1.0], and the
//! score feathers smoothly to zero across a narrow band around the part
//! boundary. Images are deterministic renders with an actor-cue channel
//! marking the engaged region; instructions come from a fixed template
//! set at four granularity levels.

use crate::config::{Granularity, RunConfig, Split, View};
use crate::dataio::{self, DataError, Manifest, SampleRecord, SampleSeeds};
use crate::geom3d::{
    self, normalize_unit_sphere, partial_view, random_rotation, GeomError, PointCloud, Rotation,
    Viewpoint,
};
use crate::rng::{derive_seed, Rng};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("part `{0}` has zero surface area")]
    ZeroAreaPart(String),
    #[error("affordance column is all zero: nothing to depict")]
    EmptyAffordanceColumn,
    #[error("unknown verb `{0}`")]
    UnknownVerb(String),
    #[error("unknown object noun `{0}`")]
    UnknownNoun(String),
    #[error("unknown object class `{0}`")]
    UnknownClass(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Canonical affordance order; a run's vocabulary takes the first
/// `data.n_affordances` entries. The built-in templates draw from the
/// first ten.
pub const AFFORDANCE_CANON: [&str; 17] = [
    "grasp",
    "contain",
    "cut",
    "sit",
    "open",
    "pour",
    "support",
    "listen",
    "wear",
    "push",
    "press",
    "stab",
    "lay",
    "display",
    "wrapgrasp",
    "move",
    "lift",
];

/// Affordances reserved for the training side of unseen splits.
pub const UNSEEN_TRAIN_AFFORDANCES: [&str; 7] =
    ["support", "push", "listen", "wear", "move", "lift", "pour"];
/// Affordances reserved for the test side of unseen splits.
pub const UNSEEN_TEST_AFFORDANCES: [&str; 10] = [
    "grasp",
    "press",
    "stab",
    "open",
    "lay",
    "sit",
    "cut",
    "contain",
    "display",
    "wrapgrasp",
];

/// Object classes on each side of the unseen split.
pub const UNSEEN_TRAIN_CLASSES: [&str; 4] = ["door", "earphone", "bag", "kettle"];
pub const UNSEEN_TEST_CLASSES: [&str; 4] = ["mug", "knife", "chair", "bottle"];

pub fn affordance_vocab(k: usize) -> Vec<String> {
    assert!(
        (2..=AFFORDANCE_CANON.len()).contains(&k),
        "vocabulary size {k} out of range"
    );
    AFFORDANCE_CANON[..k]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

pub fn object_classes() -> Vec<String> {
    [
        "mug", "knife", "chair", "bottle", "door", "earphone", "bag", "kettle",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Minimum score a point on a labeled part can take: the feather ramps
/// from this value at the part boundary up to 1.0 in the interior.
pub const FEATHER_MIN: f64 = 0.5;

// ---- primitives -----------------------------------------------------------

/// Parameterized surface primitive, sampled uniformly by area.
#[derive(Clone, Debug)]
pub enum Primitive {
    /// Capped cylinder along z.
    Cylinder {
        radius: f64,
        half_height: f64,
    },
    /// Axis-aligned box given by half extents.
    Cuboid {
        half: [f64; 3],
    },
    Sphere {
        radius: f64,
    },
    /// Torus arc in the x-y plane, centered on the +x direction.
    TorusSegment {
        major: f64,
        minor: f64,
        arc: f64,
    },
}

impl Primitive {
    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Cylinder {
                radius,
                half_height,
            } => {
                let h = 2.0 * half_height;
                2.0 * std::f64::consts::PI * radius * h
                    + 2.0 * std::f64::consts::PI * radius * radius
            }
            Primitive::Cuboid { half } => {
                let (a, b, c) = (2.0 * half[0], 2.0 * half[1], 2.0 * half[2]);
                2.0 * (a * b + b * c + c * a)
            }
            Primitive::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
            Primitive::TorusSegment { major, minor, arc } => {
                arc * 2.0 * std::f64::consts::PI * minor * major
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> [f64; 3] {
        let tau = 2.0 * std::f64::consts::PI;
        match *self {
            Primitive::Cylinder {
                radius,
                half_height,
            } => {
                let h = 2.0 * half_height;
                let side = tau * radius * h;
                let cap = std::f64::consts::PI * radius * radius;
                let pick = rng.uniform() * (side + 2.0 * cap);
                if pick < side {
                    let theta = rng.uniform() * tau;
                    let z = rng.uniform_in(-half_height, half_height);
                    [radius * theta.cos(), radius * theta.sin(), z]
                } else {
                    let z = if pick < side + cap {
                        half_height
                    } else {
                        -half_height
                    };
                    let r = radius * rng.uniform().sqrt();
                    let theta = rng.uniform() * tau;
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            Primitive::Cuboid { half } => {
                let areas = [
                    half[1] * half[2], // ±x faces (quarter area, same weights)
                    half[0] * half[2],
                    half[0] * half[1],
                ];
                let total = 2.0 * (areas[0] + areas[1] + areas[2]);
                let mut pick = rng.uniform() * total;
                for axis in 0..3 {
                    let face = areas[axis];
                    for sign in [1.0, -1.0] {
                        if pick < face {
                            let mut p = [0.0; 3];
                            p[axis] = sign * half[axis];
                            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                            p[u] = rng.uniform_in(-half[u], half[u]);
                            p[v] = rng.uniform_in(-half[v], half[v]);
                            return p;
                        }
                        pick -= face;
                    }
                }
                // numerically unreachable; land on the +z face
                [0.0, 0.0, half[2]]
            }
            Primitive::Sphere { radius } => loop {
                let v = [rng.normal(), rng.normal(), rng.normal()];
                let n = geom3d::norm(v);
                if n > 1e-9 {
                    return [radius * v[0] / n, radius * v[1] / n, radius * v[2] / n];
                }
            },
            Primitive::TorusSegment { major, minor, arc } => loop {
                // rejection on the minor angle keeps density uniform in area
                let psi = rng.uniform() * tau;
                let accept = (major + minor * psi.cos()) / (major + minor);
                if rng.uniform() <= accept {
                    let theta = rng.uniform_in(-arc / 2.0, arc / 2.0);
                    let ring = major + minor * psi.cos();
                    return [ring * theta.cos(), ring * theta.sin(), minor * psi.sin()];
                }
            },
        }
    }
}

/// One named part: a primitive, its pose, and the affordances it carries.
#[derive(Clone, Debug)]
pub struct Part {
    pub name: String,
    pub shape: Primitive,
    pub rotation: Rotation,
    pub offset: [f64; 3],
    pub affordances: Vec<String>,
}

impl Part {
    fn place(&self, local: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.apply(local);
        [
            r[0] + self.offset[0],
            r[1] + self.offset[1],
            r[2] + self.offset[2],
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ObjectTemplate {
    pub object_class: String,
    pub parts: Vec<Part>,
}

impl ObjectTemplate {
    /// Union of part affordances, in canonical order.
    pub fn affordances(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .parts
            .iter()
            .flat_map(|p| p.affordances.iter().map(String::as_str))
            .collect();
        AFFORDANCE_CANON
            .iter()
            .filter(|a| set.contains(**a))
            .map(|s| s.to_string())
            .collect()
    }
}

fn part(
    name: &str,
    shape: Primitive,
    euler: [f64; 3],
    offset: [f64; 3],
    affordances: &[&str],
) -> Part {
    Part {
        name: name.into(),
        shape,
        rotation: geom3d::rotation_from_euler(euler[0], euler[1], euler[2]),
        offset,
        affordances: affordances.iter().map(|s| s.to_string()).collect(),
    }
}

/// Instantiate a class template with mild seeded size jitter.
pub fn make_template(class: &str, seed: u64) -> Result<ObjectTemplate, SynthError> {
    let mut rng = Rng::new(derive_seed(seed, &[0x7e3a]));
    let mut j = || rng.uniform_in(0.85, 1.15);
    let pi = std::f64::consts::PI;
    let parts = match class {
        "mug" => {
            let (b, h) = (j(), j());
            vec![
                part(
                    "body",
                    Primitive::Cylinder {
                        radius: 0.5 * b,
                        half_height: 0.45 * b,
                    },
                    [0.0; 3],
                    [0.0; 3],
                    &["contain"],
                ),
                part(
                    "handle",
                    Primitive::TorusSegment {
                        major: 0.3 * h,
                        minor: 0.06 * h,
                        arc: 1.4 * pi,
                    },
                    [pi / 2.0, 0.0, 0.0],
                    [0.55 * b, 0.0, 0.0],
                    &["grasp"],
                ),
            ]
        }
        "knife" => {
            let (b, h) = (j(), j());
            vec![
                part(
                    "blade",
                    Primitive::Cuboid {
                        half: [0.5 * b, 0.02 * b, 0.09 * b],
                    },
                    [0.0; 3],
                    [0.5 * b, 0.0, 0.0],
                    &["cut"],
                ),
                part(
                    "handle",
                    Primitive::Cylinder {
                        radius: 0.06 * h,
                        half_height: 0.22 * h,
                    },
                    [0.0, pi / 2.0, 0.0],
                    [-0.25 * h, 0.0, 0.0],
                    &["grasp"],
                ),
            ]
        }
        "chair" => {
            let (s, b, l) = (j(), j(), j());
            vec![
                part(
                    "seat",
                    Primitive::Cuboid {
                        half: [0.45 * s, 0.45 * s, 0.05 * s],
                    },
                    [0.0; 3],
                    [0.0, 0.0, 0.5],
                    &["sit"],
                ),
                part(
                    "back",
                    Primitive::Cuboid {
                        half: [0.45 * b, 0.05 * b, 0.5 * b],
                    },
                    [0.0; 3],
                    [0.0, -0.45 * s, 1.0],
                    &["support"],
                ),
                part(
                    "legs",
                    Primitive::Cuboid {
                        half: [0.08 * l, 0.08 * l, 0.25 * l],
                    },
                    [0.0; 3],
                    [0.0, 0.0, 0.2],
                    &[],
                ),
            ]
        }
        "bottle" => {
            let (b, c) = (j(), j());
            vec![
                part(
                    "body",
                    Primitive::Cylinder {
                        radius: 0.3 * b,
                        half_height: 0.5 * b,
                    },
                    [0.0; 3],
                    [0.0; 3],
                    &["contain", "grasp"],
                ),
                part(
                    "cap",
                    Primitive::Cylinder {
                        radius: 0.12 * c,
                        half_height: 0.08 * c,
                    },
                    [0.0; 3],
                    [0.0, 0.0, 0.58 * b],
                    &["open"],
                ),
            ]
        }
        "door" => {
            let (p, h) = (j(), j());
            vec![
                part(
                    "panel",
                    Primitive::Cuboid {
                        half: [0.5 * p, 0.04 * p, 0.95 * p],
                    },
                    [0.0; 3],
                    [0.0; 3],
                    &["push"],
                ),
                part(
                    "handle",
                    Primitive::Cylinder {
                        radius: 0.04 * h,
                        half_height: 0.12 * h,
                    },
                    [pi / 2.0, 0.0, 0.0],
                    [0.38 * p, 0.12 * p, 0.0],
                    &["grasp", "open"],
                ),
            ]
        }
        "earphone" => {
            let (c, b) = (j(), j());
            vec![
                part(
                    "left_cup",
                    Primitive::Sphere { radius: 0.18 * c },
                    [0.0; 3],
                    [-0.5 * b, 0.0, 0.0],
                    &["listen"],
                ),
                part(
                    "right_cup",
                    Primitive::Sphere { radius: 0.18 * c },
                    [0.0; 3],
                    [0.5 * b, 0.0, 0.0],
                    &["listen"],
                ),
                part(
                    "band",
                    Primitive::TorusSegment {
                        major: 0.52 * b,
                        minor: 0.04 * b,
                        arc: pi,
                    },
                    [pi / 2.0, 0.0, pi / 2.0],
                    [0.0, 0.0, 0.1 * b],
                    &["wear"],
                ),
            ]
        }
        "bag" => {
            let (b, s) = (j(), j());
            vec![
                part(
                    "body",
                    Primitive::Cuboid {
                        half: [0.45 * b, 0.2 * b, 0.35 * b],
                    },
                    [0.0; 3],
                    [0.0; 3],
                    &["contain"],
                ),
                part(
                    "strap",
                    Primitive::TorusSegment {
                        major: 0.5 * s,
                        minor: 0.035 * s,
                        arc: pi,
                    },
                    [pi / 2.0, 0.0, pi / 2.0],
                    [0.0, 0.0, 0.35 * b],
                    &["wear", "grasp"],
                ),
            ]
        }
        "kettle" => {
            let (b, s, h) = (j(), j(), j());
            vec![
                part(
                    "body",
                    Primitive::Cylinder {
                        radius: 0.42 * b,
                        half_height: 0.35 * b,
                    },
                    [0.0; 3],
                    [0.0; 3],
                    &["contain"],
                ),
                part(
                    "spout",
                    Primitive::Cylinder {
                        radius: 0.07 * s,
                        half_height: 0.18 * s,
                    },
                    [0.0, pi / 4.0, 0.0],
                    [0.5 * b, 0.0, 0.25 * b],
                    &["pour"],
                ),
                part(
                    "handle",
                    Primitive::TorusSegment {
                        major: 0.3 * h,
                        minor: 0.05 * h,
                        arc: 1.2 * pi,
                    },
                    [pi / 2.0, 0.0, pi / 2.0],
                    [0.0, 0.0, 0.4 * b],
                    &["grasp"],
                ),
            ]
        }
        other => return Err(SynthError::UnknownClass(other.to_string())),
    };
    Ok(ObjectTemplate {
        object_class: class.into(),
        parts,
    })
}

// ---- annotation -----------------------------------------------------------

/// Per-point, per-affordance probabilities; shape (N, K) row-major.
#[derive(Clone, Debug)]
pub struct AffordanceAnnotation {
    pub scores: Vec<f64>,
    pub n_points: usize,
    pub n_affordances: usize,
}

impl AffordanceAnnotation {
    pub fn column(&self, affordance_index: usize) -> Vec<f64> {
        assert!(affordance_index < self.n_affordances);
        (0..self.n_points)
            .map(|i| self.scores[i * self.n_affordances + affordance_index])
            .collect()
    }

    /// Range invariant plus “all-zero column ⇔ affordance absent”.
    pub fn check_invariants(&self, present: &[bool]) -> Result<(), String> {
        assert_eq!(present.len(), self.n_affordances);
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err("annotation score outside [0,1]".into());
        }
        for (k, &has) in present.iter().enumerate() {
            let any_positive = self.column(k).iter().any(|&s| s > 0.0);
            if any_positive != has {
                return Err(format!(
                    "column {k}: positive entries {any_positive} but affordance present {has}"
                ));
            }
        }
        Ok(())
    }
}

fn smoothstep01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Sample a template into a normalized point cloud with soft part-level
/// annotation. Point counts per part follow surface area; scores on a
/// labeled part run from 1.0 in the interior down to [`FEATHER_MIN`] at
/// its boundary, then feather to 0 across `feather_band` on the far side.
pub fn sample_object(
    template: &ObjectTemplate,
    n_points: usize,
    feather_band: f64,
    vocab: &[String],
    seed: u64,
) -> Result<(PointCloud, AffordanceAnnotation, Vec<usize>), SynthError> {
    assert!(n_points >= 64, "n_points must be at least 64");
    assert!(!template.parts.is_empty(), "template has no parts");
    for p in &template.parts {
        if p.shape.area() <= 0.0 {
            return Err(SynthError::ZeroAreaPart(p.name.clone()));
        }
    }
    let mut rng = Rng::new(derive_seed(seed, &[0x5a4e]));
    let areas: Vec<f64> = template.parts.iter().map(|p| p.shape.area()).collect();
    let total: f64 = areas.iter().sum();

    // largest-remainder apportionment by surface area, with a small floor
    // so every part stays represented even in sparse clouds
    let n_parts = template.parts.len();
    let min_per_part = 4.min(n_points / n_parts);
    let mut counts: Vec<usize> = areas
        .iter()
        .map(|a| (a / total * n_points as f64) as usize)
        .collect();
    let mut remainders: Vec<(f64, usize)> = areas
        .iter()
        .enumerate()
        .map(|(i, a)| (a / total * n_points as f64 - counts[i] as f64, i))
        .collect();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let missing = n_points - counts.iter().sum::<usize>();
    for (_, i) in remainders.iter().cycle().take(missing) {
        counts[*i] += 1;
    }
    for i in 0..n_parts {
        while counts[i] < min_per_part {
            let donor = (0..n_parts).max_by_key(|&j| counts[j]).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }

    let mut points = Vec::with_capacity(n_points);
    let mut part_ids = Vec::with_capacity(n_points);
    for (chosen, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let local = template.parts[chosen].shape.sample(&mut rng);
            points.push(template.parts[chosen].place(local));
            part_ids.push(chosen);
        }
    }
    let cloud = normalize_unit_sphere(&PointCloud::new(points)?)?;

    // distance from every point to every part's nearest sampled point
    let n_parts = template.parts.len();
    let pts = cloud.points();
    let mut dist_to_part = vec![f64::INFINITY; n_points * n_parts];
    for i in 0..n_points {
        for j in 0..n_points {
            let pj = part_ids[j];
            if part_ids[i] == pj {
                continue;
            }
            let d2 = geom3d::dist2(pts[i], pts[j]);
            let slot = &mut dist_to_part[i * n_parts + pj];
            if d2 < *slot {
                *slot = d2;
            }
        }
    }

    let k = vocab.len();
    let mut scores = vec![0.0; n_points * k];
    for (a_idx, a_name) in vocab.iter().enumerate() {
        let positive: Vec<bool> = template
            .parts
            .iter()
            .map(|p| p.affordances.iter().any(|x| x == a_name))
            .collect();
        if !positive.iter().any(|&b| b) {
            continue;
        }
        for i in 0..n_points {
            let on_positive = positive[part_ids[i]];
            let nearest_other = |want_positive: bool| -> f64 {
                let mut best = f64::INFINITY;
                for (p, &is_pos) in positive.iter().enumerate() {
                    if is_pos == want_positive && p != part_ids[i] {
                        best = best.min(dist_to_part[i * n_parts + p]);
                    }
                }
                best.sqrt()
            };
            let s = if on_positive {
                let d_off = nearest_other(false);
                if d_off.is_finite() {
                    0.5 + 0.5 * smoothstep01(d_off / feather_band)
                } else {
                    1.0
                }
            } else {
                let d_on = nearest_other(true);
                if d_on < feather_band {
                    0.5 - 0.5 * smoothstep01(d_on / feather_band)
                } else {
                    0.0
                }
            };
            scores[i * k + a_idx] = s;
        }
    }
    Ok((
        cloud,
        AffordanceAnnotation {
            scores,
            n_points,
            n_affordances: k,
        },
        part_ids,
    ))
}

// ---- images ----------------------------------------------------------------

/// Deterministic (3, H, W) render in [0,1]: channel 0 carries the point
/// splat, channel 1 the actor-cue blob over the engaged region, channel 2
/// the depth map.
pub fn render_image(
    cloud: &PointCloud,
    affordance_scores: &[f64],
    image_size: usize,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    assert_eq!(affordance_scores.len(), cloud.len());
    if affordance_scores.iter().all(|&s| s <= 0.0) {
        return Err(SynthError::EmptyAffordanceColumn);
    }
    let rot = random_rotation(derive_seed(seed, &[0xca11]));
    let view = geom3d::apply_rotation(cloud, &rot);
    let h = image_size;
    let mut pixels = vec![0.0; 3 * h * h];
    let to_px = |v: f64| -> usize {
        let t = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
        ((t * (h as f64 - 1.0)).round() as usize).min(h - 1)
    };

    let zs: Vec<f64> = view.points().iter().map(|p| p[2]).collect();
    let zmin = zs.iter().cloned().fold(f64::INFINITY, f64::min);
    let zmax = zs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let zspan = (zmax - zmin).max(1e-9);

    let mut counts = vec![0u32; h * h];
    let mut near = vec![f64::NEG_INFINITY; h * h];
    for (p, &z) in view.points().iter().zip(&zs) {
        let (px, py) = (to_px(p[0]), to_px(p[1]));
        let cell = py * h + px;
        counts[cell] += 1;
        let brightness = 1.0 - (z - zmin) / zspan;
        if brightness > near[cell] {
            near[cell] = brightness;
        }
    }
    let max_count = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    for cell in 0..h * h {
        pixels[cell] = counts[cell] as f64 / max_count;
        pixels[2 * h * h + cell] = if counts[cell] > 0 { near[cell] } else { 0.0 };
    }

    // actor cue: gaussian blob at the score-weighted centroid of the
    // engaged points, sigma of 4 px at the 64-px reference size
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut mass = 0.0;
    for (p, &s) in view.points().iter().zip(affordance_scores) {
        if s > 0.0 {
            cx += s * p[0];
            cy += s * p[1];
            mass += s;
        }
    }
    cx /= mass;
    cy /= mass;
    let (bx, by) = (to_px(cx) as f64, to_px(cy) as f64);
    let sigma = 4.0 * h as f64 / 64.0;
    for py in 0..h {
        for px in 0..h {
            let d2 = (px as f64 - bx).powi(2) + (py as f64 - by).powi(2);
            pixels[h * h + py * h + px] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    for v in &mut pixels {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(pixels)
}

/// Project a world point into pixel coordinates of [`render_image`]'s
/// output for the same seed; exposed for tests and visual checks.
pub fn project_to_pixels(cloud_point: [f64; 3], image_size: usize, seed: u64) -> (usize, usize) {
    let rot = random_rotation(derive_seed(seed, &[0xca11]));
    let p = rot.apply(cloud_point);
    let h = image_size;
    let to_px = |v: f64| -> usize {
        let t = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
        ((t * (h as f64 - 1.0)).round() as usize).min(h - 1)
    };
    (to_px(p[0]), to_px(p[1]))
}

// ---- instructions -----------------------------------------------------------

/// A natural-language task description at a fixed granularity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub granularity: Granularity,
    pub verb: String,
    pub object_noun: String,
}

/// Sentence templates for the full granularity; `{verb}`/`{noun}` expand.
pub const FULL_TEMPLATES: [&str; 6] = [
    "{verb} the {noun}",
    "{verb}ing the {noun} with one hand",
    "please {verb} the {noun} now",
    "a person tries to {verb} the {noun}",
    "carefully {verb} the {noun}",
    "someone is {verb}ing the {noun} here",
];

pub fn expand_template(template: &str, verb: &str, noun: &str) -> String {
    template.replace("{verb}", verb).replace("{noun}", noun)
}

pub fn make_instruction(
    verb: &str,
    object_noun: &str,
    granularity: Granularity,
    seed: u64,
) -> Result<Instruction, SynthError> {
    if !AFFORDANCE_CANON.contains(&verb) {
        return Err(SynthError::UnknownVerb(verb.to_string()));
    }
    if !object_classes().iter().any(|c| c == object_noun) {
        return Err(SynthError::UnknownNoun(object_noun.to_string()));
    }
    let text = match granularity {
        Granularity::Full => {
            let mut rng = Rng::new(derive_seed(seed, &[0x1457]));
            let t = FULL_TEMPLATES[rng.index(FULL_TEMPLATES.len())];
            expand_template(t, verb, object_noun)
        }
        Granularity::ActionObject => format!("{verb} {object_noun}"),
        Granularity::Action => verb.to_string(),
        Granularity::None => String::new(),
    };
    Ok(Instruction {
        text,
        granularity,
        verb: verb.to_string(),
        object_noun: object_noun.to_string(),
    })
}

// ---- dataset generation ------------------------------------------------------

/// (class, affordance) pairs eligible for one side of a split.
pub fn eligible_pairs(
    split: Split,
    train_side: bool,
    vocab: &[String],
) -> Result<Vec<(String, String)>, SynthError> {
    let classes = object_classes();
    let side_classes: Vec<String> = match (split, train_side) {
        (Split::Seen, _) => classes,
        (Split::Unseen, true) => UNSEEN_TRAIN_CLASSES.iter().map(|s| s.to_string()).collect(),
        (Split::Unseen, false) => UNSEEN_TEST_CLASSES.iter().map(|s| s.to_string()).collect(),
    };
    let side_affs: Option<BTreeSet<&str>> = match (split, train_side) {
        (Split::Seen, _) => None,
        (Split::Unseen, true) => Some(UNSEEN_TRAIN_AFFORDANCES.iter().copied().collect()),
        (Split::Unseen, false) => Some(UNSEEN_TEST_AFFORDANCES.iter().copied().collect()),
    };
    let mut pairs = vec![];
    for class in &side_classes {
        let template = make_template(class, 0)?;
        for aff in template.affordances() {
            if !vocab.contains(&aff) {
                continue;
            }
            if let Some(allowed) = &side_affs {
                if !allowed.contains(aff.as_str()) {
                    continue;
                }
            }
            pairs.push((class.clone(), aff));
        }
    }
    if pairs.is_empty() {
        return Err(SynthError::InfeasibleSplit(format!(
            "no eligible (class, affordance) pairs for split {split} ({} side)",
            if train_side { "train" } else { "test" }
        )));
    }
    Ok(pairs)
}

struct BuiltSample {
    record: SampleRecord,
    cloud: PointCloud,
    image: Vec<f64>,
    target: Vec<f64>,
}

fn build_sample(
    cfg: &RunConfig,
    vocab: &[String],
    part: &str,
    index: usize,
    class: &str,
    affordance: &str,
    base_seed: u64,
) -> Result<BuiltSample, SynthError> {
    let part_tag = if part == "train" { 1u64 } else { 2u64 };
    let tag = |purpose: u64| derive_seed(base_seed, &[part_tag, index as u64, purpose]);
    let seeds = SampleSeeds {
        template: tag(1),
        points: tag(2),
        occlusion: tag(3),
        rotation: tag(4),
        render: tag(5),
        instruction: tag(6),
    };

    let template = make_template(class, seeds.template)?;
    let (full_cloud, annotation, _) = sample_object(
        &template,
        cfg.data.n_points,
        cfg.data.feather_band,
        vocab,
        seeds.points,
    )?;
    let aff_index = vocab
        .iter()
        .position(|a| a == affordance)
        .expect("affordance comes from the vocabulary");
    let column = annotation.column(aff_index);

    // image comes from the full (un-occluded) object; cross pairing swaps
    // in a different instance of the same class to mimic pairing across
    // scenes
    let image = if cfg.data.cross_pairing {
        let alt_template = make_template(class, derive_seed(seeds.template, &[0xa17]))?;
        let (alt_cloud, alt_ann, _) = sample_object(
            &alt_template,
            cfg.data.n_points,
            cfg.data.feather_band,
            vocab,
            derive_seed(seeds.points, &[0xa17]),
        )?;
        render_image(
            &alt_cloud,
            &alt_ann.column(aff_index),
            cfg.data.image_size,
            seeds.render,
        )?
    } else {
        render_image(&full_cloud, &column, cfg.data.image_size, seeds.render)?
    };

    // view processing: occlude, pad back to N, optionally rotate
    let (cloud, target, rotation) = match cfg.data.view {
        View::Full => (full_cloud, column, None),
        View::Partial | View::Rotation => {
            let vp = Viewpoint::random(
                seeds.occlusion,
                cfg.data.grid_resolution,
                cfg.data.depth_tolerance,
            );
            let visible = partial_view(&full_cloud, &vp);
            let mut idx = visible.clone();
            let mut pad_rng = Rng::new(derive_seed(seeds.occlusion, &[0xfade]));
            while idx.len() < cfg.data.n_points {
                idx.push(visible[pad_rng.index(visible.len())]);
            }
            idx.truncate(cfg.data.n_points);
            let padded = full_cloud.select(&idx);
            let target: Vec<f64> = idx.iter().map(|&i| column[i]).collect();
            if cfg.data.view == View::Rotation {
                let rot = random_rotation(seeds.rotation);
                (
                    geom3d::apply_rotation(&padded, &rot),
                    target,
                    Some(rot.to_rows().to_vec()),
                )
            } else {
                (padded, target, None)
            }
        }
    };

    let instruction =
        make_instruction(affordance, class, cfg.train.granularity, seeds.instruction)?;
    let sample_id = format!("{}{:05}", if part == "train" { "tr" } else { "te" }, index);
    let record = SampleRecord {
        sample_id: sample_id.clone(),
        object_class: class.to_string(),
        affordance: affordance.to_string(),
        affordance_index: aff_index,
        view: cfg.data.view,
        instruction,
        pc_path: format!("{part}/pc/{sample_id}.bin"),
        img_path: format!("{part}/img/{sample_id}.bin"),
        label_path: format!("{part}/label/{sample_id}.bin"),
        seeds,
        rotation,
    };
    Ok(BuiltSample {
        record,
        cloud,
        image,
        target,
    })
}

/// Generate a dataset on disk: train and test parts, a manifest, and one
/// JSON sidecar per sample. Pure function of the configuration — two runs
/// produce byte-identical trees.
pub fn generate_dataset(cfg: &RunConfig, root: &Path) -> Result<Manifest, SynthError> {
    let vocab = affordance_vocab(cfg.data.n_affordances);
    let base_seed = cfg.train.seed;

    // Use only as many (class, affordance) groups as the sample budget can
    // fill with `pair_count` clouds each; small overfit sets then stay
    // pairable. The seen-split test part draws from the same groups so its
    // categories remain a subset of the training categories.
    let train_pairs = {
        let all = eligible_pairs(cfg.data.split, true, &vocab)?;
        let usable = (cfg.data.n_train / cfg.train.pair_count.max(1)).min(all.len());
        if usable == 0 {
            return Err(SynthError::InfeasibleSplit(format!(
                "{} train samples cannot fill any group with {} clouds",
                cfg.data.n_train, cfg.train.pair_count
            )));
        }
        all[..usable].to_vec()
    };
    let test_pairs = match cfg.data.split {
        Split::Seen => train_pairs.clone(),
        Split::Unseen => eligible_pairs(cfg.data.split, false, &vocab)?,
    };
    let parts_spec = [
        ("train", cfg.data.n_train, train_pairs),
        ("test", cfg.data.n_test, test_pairs),
    ];

    let mut manifest = Manifest {
        format_version: dataio::FORMAT_VERSION,
        split: cfg.data.split,
        view: cfg.data.view,
        n_points: cfg.data.n_points,
        image_size: cfg.data.image_size,
        affordance_vocab: vocab.clone(),
        object_vocab: object_classes(),
        train: vec![],
        test: vec![],
    };

    for (part, n, pairs) in parts_spec {
        for index in 0..n {
            let (class, affordance) = &pairs[index % pairs.len()];
            let built = build_sample(cfg, &vocab, part, index, class, affordance, base_seed)?;
            dataio::write_sample(
                root,
                part,
                &built.record,
                &built.cloud,
                &built.image,
                cfg.data.image_size,
                &built.target,
            )?;
            if part == "train" {
                manifest.train.push(built.record);
            } else {
                manifest.test.push(built.record);
            }
        }
    }
    manifest.save(root)?;
    Ok(manifest)
}
