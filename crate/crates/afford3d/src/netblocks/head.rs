//! Segmentation head: propagate the point-token rows of the affordance
//! features back onto the full cloud by inverse-distance interpolation,
//! then score each point through linear → batch norm → activation →
//! linear → sigmoid.

use super::encoder3d::CloudGeometry;
use super::params::{init_linear, ParamStore};
use crate::config::ModelConfig;
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct SegmentationHead {
    pub prefix: String,
    pub image_tokens: usize,
    pub point_tokens: usize,
    pub hidden: usize,
    pub interp_k: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl SegmentationHead {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        cfg: &ModelConfig,
        image_size: usize,
    ) -> SegmentationHead {
        let p = prefix;
        let h = cfg.head_hidden;
        store.insert(&format!("{p}.l1.w"), init_linear(rng, cfg.c_s, h), true);
        store.insert(&format!("{p}.l1.b"), Tensor::zeros(&[h]), true);
        store.insert(&format!("{p}.bn.g"), Tensor::full(&[h], 1.0), true);
        store.insert(&format!("{p}.bn.b"), Tensor::zeros(&[h]), true);
        store.insert(&format!("{p}.bn.running_mean"), Tensor::zeros(&[h]), false);
        store.insert(
            &format!("{p}.bn.running_var"),
            Tensor::full(&[h], 1.0),
            false,
        );
        store.insert(&format!("{p}.l2.w"), init_linear(rng, h, 1), true);
        store.insert(&format!("{p}.l2.b"), Tensor::zeros(&[1]), true);
        SegmentationHead {
            prefix: prefix.to_string(),
            image_tokens: cfg.image_tokens(image_size),
            point_tokens: cfg.sa2_points,
            hidden: h,
            interp_k: cfg.interp_k,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// fa (B, N_S, C_A) → heatmap (B, N, 1) in (0,1). Train mode uses the
    /// current batch statistics in the norm layer and updates the running
    /// buffers; eval mode reads the recorded statistics.
    pub fn forward(
        &self,
        store: &mut ParamStore,
        fa: &Var,
        geo: &[&CloudGeometry],
        n_points: usize,
        mode: Mode,
    ) -> Var {
        let b = geo.len();
        assert_eq!(fa.shape()[0], b, "head: batch mismatch");
        let p = &self.prefix;
        let pt = fa.slice_tokens(self.image_tokens, self.image_tokens + self.point_tokens);

        let mut idx = Vec::with_capacity(b * n_points * self.interp_k);
        let mut w = Vec::with_capacity(b * n_points * self.interp_k);
        for g in geo {
            idx.extend_from_slice(&g.interp_idx);
            w.extend_from_slice(&g.interp_w);
        }
        let dense = pt.interp_points(&idx, &w, n_points, self.interp_k);

        let rows = b * n_points;
        let x = dense.reshape(&[rows, fa.shape()[2]]).linear(
            &store.var(&format!("{p}.l1.w")),
            Some(&store.var(&format!("{p}.l1.b"))),
        );

        let gamma = store.var(&format!("{p}.bn.g"));
        let beta = store.var(&format!("{p}.bn.b"));
        let xhat = match mode {
            Mode::Train => {
                let mu = x.col_means();
                let xc = x.sub(&mu.broadcast_rows(rows));
                let var = xc.mul(&xc).col_means();
                // update running statistics (unbiased variance, torch-style)
                let unbias = rows as f64 / (rows as f64 - 1.0).max(1.0);
                let rm = store.get(&format!("{p}.bn.running_mean")).value.clone();
                let rv = store.get(&format!("{p}.bn.running_var")).value.clone();
                let new_rm: Vec<f64> = rm
                    .data()
                    .iter()
                    .zip(mu.value().data())
                    .map(|(r, m)| (1.0 - self.momentum) * r + self.momentum * m)
                    .collect();
                let new_rv: Vec<f64> = rv
                    .data()
                    .iter()
                    .zip(var.value().data())
                    .map(|(r, v)| (1.0 - self.momentum) * r + self.momentum * v * unbias)
                    .collect();
                store.set_value(
                    &format!("{p}.bn.running_mean"),
                    Tensor::from_vec(new_rm, &[self.hidden]),
                );
                store.set_value(
                    &format!("{p}.bn.running_var"),
                    Tensor::from_vec(new_rv, &[self.hidden]),
                );
                xc.mul(&var.add_scalar(self.eps).powf(-0.5).broadcast_rows(rows))
            }
            Mode::Eval => {
                let rm = Var::constant(store.get(&format!("{p}.bn.running_mean")).value.clone());
                let rv = Var::constant(store.get(&format!("{p}.bn.running_var")).value.clone());
                x.sub(&rm.broadcast_rows(rows))
                    .mul(&rv.add_scalar(self.eps).powf(-0.5).broadcast_rows(rows))
            }
        };
        let normed = xhat
            .mul(&gamma.broadcast_rows(rows))
            .add(&beta.broadcast_rows(rows));
        normed
            .gelu()
            .linear(
                &store.var(&format!("{p}.l2.w")),
                Some(&store.var(&format!("{p}.l2.b"))),
            )
            .sigmoid()
            .reshape(&[b, n_points, 1])
    }
}
