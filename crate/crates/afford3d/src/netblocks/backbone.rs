//! Frozen language backbone stand-in: token embedding plus a small
//! pre-norm bidirectional transformer whose parameters are drawn once
//! from a seeded initializer and never updated. The full-size pretrained
//! model it replaces would plug in behind the same embed/forward seam.

use super::attention::{multi_head_attention, token_mlp, AttentionWeights};
use super::params::{init_linear, init_table, ParamStore};
use crate::config::ModelConfig;
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

pub struct LanguageBackbone {
    pub prefix: String,
    pub layers: usize,
    pub heads: usize,
    pub n_s: usize,
    pub n_l: usize,
    pub c_l: usize,
}

impl LanguageBackbone {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        cfg: &ModelConfig,
        vocab_size: usize,
        n_s: usize,
    ) -> LanguageBackbone {
        let p = prefix;
        let c = cfg.c_l;
        let total_tokens = n_s + cfg.n_l;
        store.insert(
            &format!("{p}.embed"),
            init_table(rng, vocab_size, c, 0.02),
            false,
        );
        store.insert(
            &format!("{p}.pos"),
            init_table(rng, total_tokens, c, 0.02),
            false,
        );
        for layer in 0..cfg.backbone_layers {
            let lp = format!("{p}.layer{layer}");
            for ln in ["ln1", "ln2"] {
                store.insert(&format!("{lp}.{ln}.g"), Tensor::full(&[c], 1.0), false);
                store.insert(&format!("{lp}.{ln}.b"), Tensor::zeros(&[c]), false);
            }
            for w in ["wq", "wk", "wv", "wo"] {
                store.insert(&format!("{lp}.attn.{w}"), init_linear(rng, c, c), false);
                store.insert(&format!("{lp}.attn.{w}b"), Tensor::zeros(&[c]), false);
            }
            store.insert(&format!("{lp}.mlp.w1"), init_linear(rng, c, 4 * c), false);
            store.insert(&format!("{lp}.mlp.b1"), Tensor::zeros(&[4 * c]), false);
            store.insert(&format!("{lp}.mlp.w2"), init_linear(rng, 4 * c, c), false);
            store.insert(&format!("{lp}.mlp.b2"), Tensor::zeros(&[c]), false);
        }
        store.insert(&format!("{p}.ln_f.g"), Tensor::full(&[c], 1.0), false);
        store.insert(&format!("{p}.ln_f.b"), Tensor::zeros(&[c]), false);
        LanguageBackbone {
            prefix: prefix.to_string(),
            layers: cfg.backbone_layers,
            heads: cfg.backbone_heads,
            n_s,
            n_l: cfg.n_l,
            c_l: c,
        }
    }

    /// Token ids (B·N_L flattened) to instruction features F_T (B,N_L,C_L).
    pub fn embed(&self, store: &ParamStore, ids: &[usize], batch: usize) -> Var {
        assert_eq!(ids.len(), batch * self.n_l, "token count mismatch");
        store
            .var(&format!("{}.embed", self.prefix))
            .embedding(ids, batch, self.n_l)
    }

    /// Concatenate projected spatial tokens with instruction tokens, add
    /// positions, run the frozen transformer; returns final hidden states
    /// (B, N_S + N_L, C_L).
    pub fn forward(&self, store: &ParamStore, fsp: &Var, ft: &Var) -> Var {
        assert_eq!(fsp.shape()[1], self.n_s, "spatial token count mismatch");
        assert_eq!(ft.shape()[1], self.n_l, "instruction token count mismatch");
        assert_eq!(fsp.shape()[2], self.c_l, "spatial width mismatch");
        let p = &self.prefix;
        let mut x = fsp
            .concat_tokens(ft)
            .add_tokens(&store.var(&format!("{p}.pos")));
        for layer in 0..self.layers {
            let lp = format!("{p}.layer{layer}");
            let ln1 = x.layer_norm(
                &store.var(&format!("{lp}.ln1.g")),
                &store.var(&format!("{lp}.ln1.b")),
                1e-5,
            );
            let weights = AttentionWeights {
                wq: &store.var(&format!("{lp}.attn.wq")),
                bq: &store.var(&format!("{lp}.attn.wqb")),
                wk: &store.var(&format!("{lp}.attn.wk")),
                bk: &store.var(&format!("{lp}.attn.wkb")),
                wv: &store.var(&format!("{lp}.attn.wv")),
                bv: &store.var(&format!("{lp}.attn.wvb")),
                wo: &store.var(&format!("{lp}.attn.wo")),
                bo: &store.var(&format!("{lp}.attn.wob")),
            };
            let (attn_out, _) = multi_head_attention(&ln1, &ln1, &ln1, &weights, self.heads);
            x = x.add(&attn_out);
            let ln2 = x.layer_norm(
                &store.var(&format!("{lp}.ln2.g")),
                &store.var(&format!("{lp}.ln2.b")),
                1e-5,
            );
            let mlp = token_mlp(
                &ln2,
                &store.var(&format!("{lp}.mlp.w1")),
                &store.var(&format!("{lp}.mlp.b1")),
                &store.var(&format!("{lp}.mlp.w2")),
                &store.var(&format!("{lp}.mlp.b2")),
            );
            x = x.add(&mlp);
        }
        x.layer_norm(
            &store.var(&format!("{p}.ln_f.g")),
            &store.var(&format!("{p}.ln_f.b")),
            1e-5,
        )
    }

    /// Positional split of the hidden states into (semantic, instructional).
    pub fn split_hidden(&self, hidden: &Var) -> (Var, Var) {
        let t = hidden.shape()[1];
        assert_eq!(t, self.n_s + self.n_l, "hidden token count mismatch");
        (
            hidden.slice_tokens(0, self.n_s),
            hidden.slice_tokens(self.n_s, t),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::tensor::backward;

    fn setup() -> (RunConfig, ParamStore, LanguageBackbone, usize) {
        let cfg = RunConfig::tiny();
        let n_s = cfg.model.n_s(cfg.data.image_size);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(cfg.model.backbone_seed);
        let bb = LanguageBackbone::init(&mut store, &mut rng, "backbone", &cfg.model, 40, n_s);
        (cfg, store, bb, n_s)
    }

    fn rand_var(rng: &mut Rng, shape: &[usize]) -> Var {
        Var::input(Tensor::from_vec(
            (0..shape.iter().product())
                .map(|_| rng.normal() * 0.3)
                .collect(),
            shape,
        ))
    }

    #[test]
    fn hidden_shape_and_split_reconstruction() {
        let (cfg, store, bb, n_s) = setup();
        let mut rng = Rng::new(31);
        let fsp = rand_var(&mut rng, &[2, n_s, cfg.model.c_l]);
        let ids: Vec<usize> = (0..2 * cfg.model.n_l).map(|i| i % 5).collect();
        let ft = bb.embed(&store, &ids, 2);
        let hidden = bb.forward(&store, &fsp, &ft);
        assert_eq!(hidden.shape(), &[2, n_s + cfg.model.n_l, cfg.model.c_l]);

        let (semantic, instructional) = bb.split_hidden(&hidden);
        assert_eq!(semantic.shape(), &[2, n_s, cfg.model.c_l]);
        assert_eq!(instructional.shape(), &[2, cfg.model.n_l, cfg.model.c_l]);
        let rebuilt = semantic.concat_tokens(&instructional);
        assert_eq!(rebuilt.value().data(), hidden.value().data());
    }

    #[test]
    fn every_backbone_parameter_is_frozen() {
        let (cfg, store, bb, n_s) = setup();
        let mut rng = Rng::new(32);
        let fsp = rand_var(&mut rng, &[1, n_s, cfg.model.c_l]);
        let ids: Vec<usize> = vec![2; cfg.model.n_l];
        let ft = bb.embed(&store, &ids, 1);
        let out = bb.forward(&store, &fsp, &ft).sum_all();
        let grads = backward(&out);
        for name in store.names() {
            if name.starts_with("backbone.") {
                assert!(grads.by_name(name).is_none(), "{name} received a gradient");
            }
        }
        // but gradients still flow through to the inputs
        assert!(grads.of(&fsp).is_some());
    }

    #[test]
    fn instruction_tokens_influence_vision_positions() {
        let (cfg, store, bb, n_s) = setup();
        let mut rng = Rng::new(33);
        let fsp = rand_var(&mut rng, &[1, n_s, cfg.model.c_l]);
        let ids_a: Vec<usize> = vec![3; cfg.model.n_l];
        let ids_b: Vec<usize> = vec![7; cfg.model.n_l];
        let ha = bb.forward(&store, &fsp, &bb.embed(&store, &ids_a, 1));
        let hb = bb.forward(&store, &fsp, &bb.embed(&store, &ids_b, 1));
        let (sem_a, _) = bb.split_hidden(&ha);
        let (sem_b, _) = bb.split_hidden(&hb);
        let diff: f64 = sem_a
            .value()
            .data()
            .iter()
            .zip(sem_b.value().data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "attention failed to mix modalities");
    }

    #[test]
    fn batch_rows_do_not_mix() {
        let (cfg, store, bb, n_s) = setup();
        let mut rng = Rng::new(34);
        let single = rand_var(&mut rng, &[1, n_s, cfg.model.c_l]);
        let other = rand_var(&mut rng, &[1, n_s, cfg.model.c_l]);
        let mut stacked = single.value().to_vec();
        stacked.extend_from_slice(other.value().data());
        let both = Var::input(Tensor::from_vec(stacked, &[2, n_s, cfg.model.c_l]));
        let ids: Vec<usize> = (0..cfg.model.n_l).map(|i| i % 4).collect();
        let mut ids2 = ids.clone();
        ids2.extend((0..cfg.model.n_l).map(|i| (i + 1) % 4));

        let h_single = bb.forward(&store, &single, &bb.embed(&store, &ids, 1));
        let h_both = bb.forward(&store, &both, &bb.embed(&store, &ids2, 2));
        let t = n_s + cfg.model.n_l;
        let c = cfg.model.c_l;
        let first = &h_both.value().data()[..t * c];
        for (a, b) in h_single.value().data().iter().zip(first) {
            assert!((a - b).abs() < 1e-12, "batching changed sample 0");
        }
    }
}
