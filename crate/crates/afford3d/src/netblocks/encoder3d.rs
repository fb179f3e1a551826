//! Point-cloud encoder: two set-abstraction stages (farthest-point
//! sampling, ball grouping, a shared per-neighbor MLP and max pooling).
//!
//! All index selection is precomputed into a [`CloudGeometry`] so the
//! encoder itself is a pure function of features. The FPS start comes
//! from a permutation-invariant content key, which makes the whole
//! encoder a function of the point *set*: permuting the input leaves the
//! stage-2 features bitwise unchanged.

use super::params::{init_linear, ParamStore};
use crate::config::ModelConfig;
use crate::geom3d::{
    ball_query, content_start_index, farthest_point_sample_from, interpolation_weights, GeomError,
    PointCloud,
};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

/// Precomputed sampling/grouping/propagation structure for one cloud.
#[derive(Clone, Debug)]
pub struct CloudGeometry {
    pub sa1_centers: PointCloud,
    pub sa2_centers: PointCloud,
    /// Relative neighbor coordinates, (M1·K1·3) and (M2·K2·3).
    pub rel1: Vec<f64>,
    pub rel2: Vec<f64>,
    /// Ball-query membership: stage-2 groups index into stage-1 centers.
    pub groups2: Vec<usize>,
    /// Propagation from stage-2 centers back to all N points.
    pub interp_idx: Vec<usize>,
    pub interp_w: Vec<f64>,
}

impl CloudGeometry {
    pub fn compute(cloud: &PointCloud, cfg: &ModelConfig) -> Result<CloudGeometry, GeomError> {
        let start1 = content_start_index(cloud);
        let sa1_idx = farthest_point_sample_from(cloud, cfg.sa1_points, start1)?;
        let groups1 = ball_query(cloud, &sa1_idx, cfg.sa1_radius, cfg.sa1_k);
        let sa1_centers = cloud.select(&sa1_idx);

        let start2 = content_start_index(&sa1_centers);
        let sa2_idx = farthest_point_sample_from(&sa1_centers, cfg.sa2_points, start2)?;
        let groups2_rows = ball_query(&sa1_centers, &sa2_idx, cfg.sa2_radius, cfg.sa2_k);
        let sa2_centers = sa1_centers.select(&sa2_idx);

        // relative coordinates are normalized by the grouping radius
        let rel =
            |src: &PointCloud, centers: &PointCloud, rows: &[Vec<usize>], k: usize, r: f64| {
                let mut out = Vec::with_capacity(rows.len() * k * 3);
                for (c, row) in centers.points().iter().zip(rows) {
                    for &j in row {
                        let p = src.points()[j];
                        out.extend_from_slice(&[
                            (p[0] - c[0]) / r,
                            (p[1] - c[1]) / r,
                            (p[2] - c[2]) / r,
                        ]);
                    }
                }
                out
            };
        let rel1 = rel(cloud, &sa1_centers, &groups1, cfg.sa1_k, cfg.sa1_radius);
        let rel2 = rel(
            &sa1_centers,
            &sa2_centers,
            &groups2_rows,
            cfg.sa2_k,
            cfg.sa2_radius,
        );
        let groups2: Vec<usize> = groups2_rows.into_iter().flatten().collect();
        let (interp_idx, interp_w) = interpolation_weights(cloud, &sa2_centers, cfg.interp_k);
        Ok(CloudGeometry {
            sa1_centers,
            sa2_centers,
            rel1,
            rel2,
            groups2,
            interp_idx,
            interp_w,
        })
    }
}

pub struct Encoder3d {
    pub prefix: String,
    pub c_stage1: usize,
    pub c_out: usize,
}

impl Encoder3d {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        cfg: &ModelConfig,
    ) -> Encoder3d {
        let c1 = (cfg.c3d / 2).max(1);
        let p = prefix;
        store.insert(
            &format!("{p}.s1.l1.w"),
            init_linear(rng, 3, cfg.sa1_hidden),
            true,
        );
        store.insert(
            &format!("{p}.s1.l1.b"),
            Tensor::zeros(&[cfg.sa1_hidden]),
            true,
        );
        store.insert(
            &format!("{p}.s1.l2.w"),
            init_linear(rng, cfg.sa1_hidden, c1),
            true,
        );
        store.insert(&format!("{p}.s1.l2.b"), Tensor::zeros(&[c1]), true);
        // stage-2 first layer takes [rel_xyz ⊕ neighbor feature]; the two
        // halves of its weight matrix are stored separately
        store.insert(
            &format!("{p}.s2.rel.w"),
            init_linear(rng, 3, cfg.sa2_hidden),
            true,
        );
        store.insert(
            &format!("{p}.s2.feat.w"),
            init_linear(rng, c1, cfg.sa2_hidden),
            true,
        );
        store.insert(
            &format!("{p}.s2.l1.b"),
            Tensor::zeros(&[cfg.sa2_hidden]),
            true,
        );
        store.insert(
            &format!("{p}.s2.l2.w"),
            init_linear(rng, cfg.sa2_hidden, cfg.c3d),
            true,
        );
        store.insert(&format!("{p}.s2.l2.b"), Tensor::zeros(&[cfg.c3d]), true);
        Encoder3d {
            prefix: prefix.to_string(),
            c_stage1: c1,
            c_out: cfg.c3d,
        }
    }

    /// Batched forward over precomputed geometry. Returns point tokens of
    /// shape (B, M2, c3d); transpose for the (B, C_P, N_P) feature view.
    pub fn forward(&self, store: &ParamStore, geo: &[&CloudGeometry], cfg: &ModelConfig) -> Var {
        let b = geo.len();
        let (m1, k1) = (cfg.sa1_points, cfg.sa1_k);
        let (m2, k2) = (cfg.sa2_points, cfg.sa2_k);
        let p = &self.prefix;

        let mut rel1 = Vec::with_capacity(b * m1 * k1 * 3);
        for g in geo {
            rel1.extend_from_slice(&g.rel1);
        }
        let rel1 = Var::constant(Tensor::from_vec(rel1, &[b * m1 * k1, 3]));
        // activation after the pool: a bias shift moves every group member
        // equally and can no longer flip the argmax
        let h1 = rel1
            .linear(
                &store.var(&format!("{p}.s1.l1.w")),
                Some(&store.var(&format!("{p}.s1.l1.b"))),
            )
            .gelu()
            .linear(
                &store.var(&format!("{p}.s1.l2.w")),
                Some(&store.var(&format!("{p}.s1.l2.b"))),
            )
            .reshape(&[b, m1, k1, self.c_stage1]);
        let tokens1 = h1.max_groups().gelu(); // (B, M1, C1)

        let mut groups2 = Vec::with_capacity(b * m2 * k2);
        let mut rel2 = Vec::with_capacity(b * m2 * k2 * 3);
        for g in geo {
            groups2.extend_from_slice(&g.groups2);
            rel2.extend_from_slice(&g.rel2);
        }
        let gathered = tokens1
            .gather_groups(&groups2, m2, k2)
            .reshape(&[b * m2 * k2, self.c_stage1]);
        let rel2 = Var::constant(Tensor::from_vec(rel2, &[b * m2 * k2, 3]));
        let h2 = gathered
            .linear(&store.var(&format!("{p}.s2.feat.w")), None)
            .add(&rel2.linear(
                &store.var(&format!("{p}.s2.rel.w")),
                Some(&store.var(&format!("{p}.s2.l1.b"))),
            ))
            .gelu()
            .linear(
                &store.var(&format!("{p}.s2.l2.w")),
                Some(&store.var(&format!("{p}.s2.l2.b"))),
            )
            .reshape(&[b, m2, k2, self.c_out]);
        h2.max_groups().gelu() // (B, M2, c3d)
    }
}
