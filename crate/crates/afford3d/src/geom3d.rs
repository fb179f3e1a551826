//! Pure geometric kernels for point clouds: normalization, farthest-point
//! sampling, neighborhood queries, rotations, occlusion-based partial-view
//! synthesis, and the inverse-distance interpolation used by feature
//! propagation.
//!
//! Every function here is a pure function of its inputs plus an explicit
//! seed, so callers may fan work out across threads freely.

use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("degenerate point cloud: all points coincide")]
    Degenerate,
    #[error("empty point cloud")]
    Empty,
    #[error("requested {requested} samples from a cloud of {available} points")]
    SampleCount { requested: usize, available: usize },
    #[error("non-finite coordinate in point cloud")]
    NonFinite,
    #[error("invalid rotation matrix: {0}")]
    BadRotation(String),
    #[error("invalid viewpoint: {0}")]
    BadViewpoint(String),
    #[error("interpolation needs at least k={k} source points, got {m}")]
    TooFewSources { k: usize, m: usize },
}

/// A surface sample of one object, `N` points in the object frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, GeomError> {
        if points.is_empty() {
            return Err(GeomError::Empty);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }

    /// Select a subset by index, preserving order. Indices may repeat.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Flatten to row-major (N,3) values.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn from_flat(data: &[f64]) -> Result<Self, GeomError> {
        assert_eq!(data.len() % 3, 0, "flat cloud length not divisible by 3");
        PointCloud::new(data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

/// Proper rigid rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    matrix: [[f64; 3]; 3],
}

impl Rotation {
    pub const ORTHOGONALITY_TOL: f64 = 1e-9;

    pub fn identity() -> Rotation {
        Rotation {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Validates orthogonality (‖RᵀR − I‖∞ < 1e-9) and det(R) ≈ 1.
    pub fn new(matrix: [[f64; 3]; 3]) -> Result<Rotation, GeomError> {
        let r = Rotation { matrix };
        let err = r.orthogonality_error();
        if err >= Self::ORTHOGONALITY_TOL {
            return Err(GeomError::BadRotation(format!("‖RᵀR − I‖∞ = {err:.3e}")));
        }
        let det = r.det();
        if (det - 1.0).abs() >= Self::ORTHOGONALITY_TOL {
            return Err(GeomError::BadRotation(format!("det = {det}")));
        }
        Ok(r)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.matrix
    }

    pub fn orthogonality_error(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                // (RᵀR)[i][j] = Σ_k R[k][i]·R[k][j]
                let v: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn transpose(&self) -> Rotation {
        let m = &self.matrix;
        Rotation {
            matrix: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    pub fn to_rows(&self) -> [f64; 9] {
        let m = &self.matrix;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_rows(rows: &[f64]) -> Result<Rotation, GeomError> {
        assert_eq!(rows.len(), 9);
        Rotation::new([
            [rows[0], rows[1], rows[2]],
            [rows[3], rows[4], rows[5]],
            [rows[6], rows[7], rows[8]],
        ])
    }
}

/// Orthographic camera for occlusion synthesis: a look direction, the
/// projection grid resolution and a depth tolerance band.
#[derive(Clone, Copy, Debug)]
pub struct Viewpoint {
    pub direction: [f64; 3],
    pub grid_resolution: usize,
    pub depth_tolerance: f64,
}

impl Viewpoint {
    pub fn new(
        direction: [f64; 3],
        grid_resolution: usize,
        depth_tolerance: f64,
    ) -> Result<Self, GeomError> {
        let n = norm(direction);
        if !n.is_finite() || (n - 1.0).abs() >= 1e-9 {
            return Err(GeomError::BadViewpoint(format!("direction norm {n}")));
        }
        if grid_resolution < 4 {
            return Err(GeomError::BadViewpoint(format!(
                "grid_resolution {grid_resolution} < 4"
            )));
        }
        if depth_tolerance < 0.0 {
            return Err(GeomError::BadViewpoint("negative depth tolerance".into()));
        }
        Ok(Viewpoint {
            direction,
            grid_resolution,
            depth_tolerance,
        })
    }

    /// Seeded random direction on the unit sphere with given grid settings.
    pub fn random(seed: u64, grid_resolution: usize, depth_tolerance: f64) -> Viewpoint {
        let mut rng = Rng::new(seed);
        loop {
            let v = [
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
            ];
            let n = norm(v);
            if n > 1e-3 && n <= 1.0 {
                return Viewpoint {
                    direction: [v[0] / n, v[1] / n, v[2] / n],
                    grid_resolution,
                    depth_tolerance,
                };
            }
        }
    }
}

pub fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Center at the centroid and scale so the farthest point sits on the unit
/// sphere. Errors when all points coincide.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud, GeomError> {
    let c = pc.centroid();
    let mut centered: Vec<[f64; 3]> = pc
        .points()
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max = centered.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(GeomError::Degenerate);
    }
    for p in &mut centered {
        for v in p.iter_mut() {
            *v /= max;
        }
    }
    Ok(PointCloud { points: centered })
}

/// Farthest-point sampling with a seeded start index.
pub fn farthest_point_sample(
    pc: &PointCloud,
    m: usize,
    seed: u64,
) -> Result<Vec<usize>, GeomError> {
    let start = Rng::new(seed).index(pc.len());
    farthest_point_sample_from(pc, m, start)
}

/// Farthest-point sampling from an explicit start index. Each subsequent
/// pick maximizes the minimum distance to the already chosen set; distance
/// ties resolve to the lower index.
pub fn farthest_point_sample_from(
    pc: &PointCloud,
    m: usize,
    start: usize,
) -> Result<Vec<usize>, GeomError> {
    let n = pc.len();
    if m == 0 || m > n {
        return Err(GeomError::SampleCount {
            requested: m,
            available: n,
        });
    }
    assert!(start < n, "start index out of range");
    let pts = pc.points();
    let mut chosen = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    chosen.push(current);
    for _ in 1..m {
        let cp = pts[current];
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (p, md)) in pts.iter().zip(min_d2.iter_mut()).enumerate() {
            let d = dist2(*p, cp);
            if d < *md {
                *md = d;
            }
            if *md > best_d {
                best_d = *md;
                best = i;
            }
        }
        current = best;
        chosen.push(current);
    }
    Ok(chosen)
}

/// For each center, up to `k` neighbor indices within `radius`, nearest
/// first; short rows are padded by repeating the first in-radius index.
/// The center itself always qualifies, so rows are never empty.
pub fn ball_query(pc: &PointCloud, centers: &[usize], radius: f64, k: usize) -> Vec<Vec<usize>> {
    assert!(radius > 0.0, "ball_query: radius must be positive");
    assert!(k >= 1, "ball_query: k must be at least 1");
    let r2 = radius * radius;
    let pts = pc.points();
    centers
        .iter()
        .map(|&ci| {
            let c = pts[ci];
            let mut hits: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let d = dist2(*p, c);
                    (d <= r2).then_some((d, i))
                })
                .collect();
            hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            hits.truncate(k);
            let first = hits[0].1;
            let mut row: Vec<usize> = hits.into_iter().map(|(_, i)| i).collect();
            while row.len() < k {
                row.push(first);
            }
            row
        })
        .collect()
}

/// Rz(γ)·Ry(β)·Rx(α).
pub fn rotation_from_euler(alpha: f64, beta: f64, gamma: f64) -> Rotation {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]];
    let mul = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|kk| a[i][kk] * b[kk][j]).sum();
            }
        }
        out
    };
    Rotation {
        matrix: mul(&rz, &mul(&ry, &rx)),
    }
}

/// Random rotation with the three Euler angles drawn independently and
/// uniformly from [0, 2π).
pub fn random_rotation(seed: u64) -> Rotation {
    let mut rng = Rng::new(seed);
    let tau = 2.0 * std::f64::consts::PI;
    let alpha = rng.uniform_in(0.0, tau);
    let beta = rng.uniform_in(0.0, tau);
    let gamma = rng.uniform_in(0.0, tau);
    rotation_from_euler(alpha, beta, gamma)
}

pub fn apply_rotation(pc: &PointCloud, r: &Rotation) -> PointCloud {
    PointCloud {
        points: pc.points().iter().map(|p| r.apply(*p)).collect(),
    }
}

/// Orthonormal (u, v) basis spanning the plane perpendicular to `d`.
fn view_basis(d: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    // pick the axis least aligned with d for a stable cross product
    let abs = [d[0].abs(), d[1].abs(), d[2].abs()];
    let axis = if abs[0] <= abs[1] && abs[0] <= abs[2] {
        [1.0, 0.0, 0.0]
    } else if abs[1] <= abs[2] {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let u_raw = cross(d, axis);
    let un = norm(u_raw);
    let u = [u_raw[0] / un, u_raw[1] / un, u_raw[2] / un];
    let v = cross(d, u);
    (u, v)
}

/// Z-buffer visibility: project orthographically along the view direction
/// onto a `grid_resolution`² grid; in each cell keep the nearest point and
/// everything within `depth_tolerance` behind it. Returns sorted indices of
/// the visible points; the result is a nonempty subset of the input.
pub fn partial_view(pc: &PointCloud, vp: &Viewpoint) -> Vec<usize> {
    let res = vp.grid_resolution;
    assert!(res >= 4, "partial_view: grid_resolution must be ≥ 4");
    let d = vp.direction;
    let (u, v) = view_basis(d);
    let pts = pc.points();

    let proj: Vec<(f64, f64, f64)> = pts
        .iter()
        .map(|p| (dot(*p, u), dot(*p, v), dot(*p, d)))
        .collect();
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(pu, pv, _) in &proj {
        umin = umin.min(pu);
        umax = umax.max(pu);
        vmin = vmin.min(pv);
        vmax = vmax.max(pv);
    }
    let uspan = (umax - umin).max(f64::MIN_POSITIVE);
    let vspan = (vmax - vmin).max(f64::MIN_POSITIVE);
    let cell_of = |pu: f64, pv: f64| -> usize {
        let cu = (((pu - umin) / uspan) * res as f64) as usize;
        let cv = (((pv - vmin) / vspan) * res as f64) as usize;
        cu.min(res - 1) * res + cv.min(res - 1)
    };

    let mut min_depth = vec![f64::INFINITY; res * res];
    for &(pu, pv, pd) in &proj {
        let c = cell_of(pu, pv);
        if pd < min_depth[c] {
            min_depth[c] = pd;
        }
    }
    let mut visible: Vec<usize> = proj
        .iter()
        .enumerate()
        .filter(|(_, &(pu, pv, pd))| pd <= min_depth[cell_of(pu, pv)] + vp.depth_tolerance)
        .map(|(i, _)| i)
        .collect();
    visible.sort_unstable();
    visible
}

/// Inverse-distance weighted interpolation of features from a sparse cloud
/// onto a dense one. For each dense point the `k` nearest sparse points are
/// combined with weights (1/dᵢ)/Σ(1/dⱼ), distances floored at 1e-10.
pub fn interpolate_features(
    dense: &PointCloud,
    sparse: &PointCloud,
    sparse_features: &[f64],
    feature_dim: usize,
    k: usize,
) -> Result<Vec<f64>, GeomError> {
    let m = sparse.len();
    if k == 0 || m < k {
        return Err(GeomError::TooFewSources { k, m });
    }
    assert_eq!(
        sparse_features.len(),
        m * feature_dim,
        "feature matrix shape"
    );
    let (idx, w) = interpolation_weights(dense, sparse, k);
    let n = dense.len();
    let mut out = vec![0.0; n * feature_dim];
    for ni in 0..n {
        let dst = &mut out[ni * feature_dim..(ni + 1) * feature_dim];
        for j in 0..k {
            let s = idx[ni * k + j];
            let wj = w[ni * k + j];
            for (o, &f) in dst
                .iter_mut()
                .zip(&sparse_features[s * feature_dim..(s + 1) * feature_dim])
            {
                *o += wj * f;
            }
        }
    }
    Ok(out)
}

/// The (indices, weights) pairs behind [`interpolate_features`], exposed so
/// network code can reuse them as fixed propagation coefficients.
pub fn interpolation_weights(
    dense: &PointCloud,
    sparse: &PointCloud,
    k: usize,
) -> (Vec<usize>, Vec<f64>) {
    const DIST_FLOOR: f64 = 1e-10;
    let n = dense.len();
    let mut idx = vec![0usize; n * k];
    let mut w = vec![0.0; n * k];
    for (ni, dp) in dense.points().iter().enumerate() {
        let mut near: Vec<(f64, usize)> = sparse
            .points()
            .iter()
            .enumerate()
            .map(|(si, sp)| (dist2(*dp, *sp).sqrt(), si))
            .collect();
        near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        near.truncate(k);
        let inv: Vec<f64> = near.iter().map(|(d, _)| 1.0 / d.max(DIST_FLOOR)).collect();
        let z: f64 = inv.iter().sum();
        for (j, ((_, si), iv)) in near.iter().zip(&inv).enumerate() {
            idx[ni * k + j] = *si;
            w[ni * k + j] = iv / z;
        }
    }
    (idx, w)
}

/// Permutation-invariant content key; used by the 3-D encoder to pick an
/// FPS start that depends only on the point set, not its ordering.
pub fn content_start_index(pc: &PointCloud) -> usize {
    let mut best = 0usize;
    let mut best_key = 0u64;
    for (i, p) in pc.points().iter().enumerate() {
        let key = crate::rng::hash_f64s(p);
        if i == 0 || key > best_key {
            best_key = key;
            best = i;
        }
    }
    best
}
