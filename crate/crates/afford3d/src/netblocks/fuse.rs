//! Fusion of image and point features into multi-modal spatial tokens:
//! project both modalities to a shared width, concatenate along the token
//! axis, then one pre-norm self-attention block with a position-wise MLP.

use super::attention::{multi_head_attention, token_mlp, AttentionWeights};
use super::params::{init_linear, init_table, ParamStore};
use crate::config::ModelConfig;
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

pub struct FusionBlock {
    pub prefix: String,
    pub image_tokens: usize,
    pub c2d: usize,
    pub c_s: usize,
    pub heads: usize,
}

impl FusionBlock {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        cfg: &ModelConfig,
        image_size: usize,
    ) -> FusionBlock {
        let p = prefix;
        let cs = cfg.c_s;
        store.insert(
            &format!("{p}.proj_img.w"),
            init_linear(rng, cfg.c2d, cs),
            true,
        );
        store.insert(&format!("{p}.proj_img.b"), Tensor::zeros(&[cs]), true);
        store.insert(
            &format!("{p}.proj_pts.w"),
            init_linear(rng, cfg.c3d, cs),
            true,
        );
        store.insert(&format!("{p}.proj_pts.b"), Tensor::zeros(&[cs]), true);
        // learned stand-in row for the image-off ablation
        store.insert(
            &format!("{p}.null_token"),
            init_table(rng, 1, cfg.c2d, 0.02).reshaped(&[cfg.c2d]),
            true,
        );
        for ln in ["ln1", "ln2"] {
            store.insert(&format!("{p}.{ln}.g"), Tensor::full(&[cs], 1.0), true);
            store.insert(&format!("{p}.{ln}.b"), Tensor::zeros(&[cs]), true);
        }
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("{p}.attn.{w}"), init_linear(rng, cs, cs), true);
            store.insert(&format!("{p}.attn.{w}b"), Tensor::zeros(&[cs]), true);
        }
        store.insert(&format!("{p}.mlp.w1"), init_linear(rng, cs, 4 * cs), true);
        store.insert(&format!("{p}.mlp.b1"), Tensor::zeros(&[4 * cs]), true);
        store.insert(&format!("{p}.mlp.w2"), init_linear(rng, 4 * cs, cs), true);
        store.insert(&format!("{p}.mlp.b2"), Tensor::zeros(&[cs]), true);
        FusionBlock {
            prefix: prefix.to_string(),
            image_tokens: cfg.image_tokens(image_size),
            c2d: cfg.c2d,
            c_s: cs,
            heads: cfg.fuse_heads,
        }
    }

    /// `f2d`: image features (B, c2d, h', w'), or `None` under the
    /// image-off ablation. `point_tokens`: (B, M2, c3d). Returns fused
    /// tokens (B, N_S, C_S) with image tokens first, plus the attention
    /// probabilities.
    pub fn forward(
        &self,
        store: &ParamStore,
        f2d: Option<&Var>,
        point_tokens: &Var,
        batch: usize,
    ) -> (Var, Tensor) {
        let p = &self.prefix;
        let img_tokens = match f2d {
            Some(f) => {
                let &[b, c, h, w] = f.shape() else {
                    panic!("fuse: f2d not 4-D")
                };
                assert_eq!(c, self.c2d, "fuse: image channel mismatch");
                assert_eq!(h * w, self.image_tokens, "fuse: image token mismatch");
                assert_eq!(b, batch);
                f.reshape(&[b, c, h * w]).permute_021()
            }
            None => store
                .var(&format!("{p}.null_token"))
                .broadcast_token(batch, self.image_tokens),
        };
        let img = img_tokens.linear(
            &store.var(&format!("{p}.proj_img.w")),
            Some(&store.var(&format!("{p}.proj_img.b"))),
        );
        let pts = point_tokens.linear(
            &store.var(&format!("{p}.proj_pts.w")),
            Some(&store.var(&format!("{p}.proj_pts.b"))),
        );
        let x = img.concat_tokens(&pts);

        let ln1 = x.layer_norm(
            &store.var(&format!("{p}.ln1.g")),
            &store.var(&format!("{p}.ln1.b")),
            1e-5,
        );
        let weights = AttentionWeights {
            wq: &store.var(&format!("{p}.attn.wq")),
            bq: &store.var(&format!("{p}.attn.wqb")),
            wk: &store.var(&format!("{p}.attn.wk")),
            bk: &store.var(&format!("{p}.attn.wkb")),
            wv: &store.var(&format!("{p}.attn.wv")),
            bv: &store.var(&format!("{p}.attn.wvb")),
            wo: &store.var(&format!("{p}.attn.wo")),
            bo: &store.var(&format!("{p}.attn.wob")),
        };
        let (attn_out, probs) = multi_head_attention(&ln1, &ln1, &ln1, &weights, self.heads);
        let x = x.add(&attn_out);
        let ln2 = x.layer_norm(
            &store.var(&format!("{p}.ln2.g")),
            &store.var(&format!("{p}.ln2.b")),
            1e-5,
        );
        let mlp = token_mlp(
            &ln2,
            &store.var(&format!("{p}.mlp.w1")),
            &store.var(&format!("{p}.mlp.b1")),
            &store.var(&format!("{p}.mlp.w2")),
            &store.var(&format!("{p}.mlp.b2")),
        );
        (x.add(&mlp), probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn setup() -> (RunConfig, ParamStore, FusionBlock) {
        let cfg = RunConfig::tiny();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(21);
        let fuse = FusionBlock::init(
            &mut store,
            &mut rng,
            "fuse",
            &cfg.model,
            cfg.data.image_size,
        );
        (cfg, store, fuse)
    }

    fn rand_var(rng: &mut Rng, shape: &[usize]) -> Var {
        Var::constant(Tensor::from_vec(
            (0..shape.iter().product())
                .map(|_| rng.normal() * 0.5)
                .collect(),
            shape,
        ))
    }

    #[test]
    fn fused_token_count_and_attention_rows() {
        let (cfg, store, fuse) = setup();
        let mut rng = Rng::new(22);
        let m = &cfg.model;
        let side = cfg.data.image_size / 8;
        let f2d = rand_var(&mut rng, &[2, m.c2d, side, side]);
        let pts = rand_var(&mut rng, &[2, m.sa2_points, m.c3d]);
        let (fs, probs) = fuse.forward(&store, Some(&f2d), &pts, 2);
        let n_s = m.n_s(cfg.data.image_size);
        assert_eq!(fs.shape(), &[2, n_s, m.c_s]);
        for row in probs.data().chunks(n_s) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zeroed_output_projections_reduce_to_projected_inputs() {
        let (cfg, mut store, fuse) = setup();
        let m = &cfg.model;
        store.set_value("fuse.attn.wo", Tensor::zeros(&[m.c_s, m.c_s]));
        store.set_value("fuse.mlp.w2", Tensor::zeros(&[4 * m.c_s, m.c_s]));
        let mut rng = Rng::new(23);
        let side = cfg.data.image_size / 8;
        let f2d = rand_var(&mut rng, &[1, m.c2d, side, side]);
        let pts = rand_var(&mut rng, &[1, m.sa2_points, m.c3d]);
        let (fs, _) = fuse.forward(&store, Some(&f2d), &pts, 1);

        // residual identity: output equals the concatenated projections
        let img_tokens = f2d.reshape(&[1, m.c2d, side * side]).permute_021();
        let img = img_tokens.linear(
            &store.var("fuse.proj_img.w"),
            Some(&store.var("fuse.proj_img.b")),
        );
        let pts_p = pts.linear(
            &store.var("fuse.proj_pts.w"),
            Some(&store.var("fuse.proj_pts.b")),
        );
        let expect = img.concat_tokens(&pts_p);
        assert!(fs.value().max_abs_diff(expect.value()) < 1e-12);
    }

    #[test]
    fn image_off_uses_null_token() {
        let (cfg, store, fuse) = setup();
        let mut rng = Rng::new(24);
        let m = &cfg.model;
        let pts = rand_var(&mut rng, &[2, m.sa2_points, m.c3d]);
        let (fs, _) = fuse.forward(&store, None, &pts, 2);
        assert_eq!(fs.shape(), &[2, m.n_s(cfg.data.image_size), m.c_s]);
        assert!(fs.value().all_finite());
        // gradient reaches the null token through the fused output
        let grads = crate::tensor::backward(&fs.sum_all());
        assert!(grads.by_name("fuse.null_token").is_some());
    }
}
