//! Cross-attention decoder: fused spatial tokens query the backbone's
//! instructional features (keys), with the semantic features as values.
//!
//! Keys number N_L while semantic tokens number N_S; a learned linear
//! alignment over the token axis resamples the semantic sequence down to
//! N_L so key/value counts agree.

use super::attention::{multi_head_attention, token_mlp, AttentionWeights};
use super::params::{init_linear, ParamStore};
use crate::config::ModelConfig;
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

pub struct CrossAttentionDecoder {
    pub prefix: String,
    pub heads: usize,
    pub n_s: usize,
    pub n_l: usize,
}

impl CrossAttentionDecoder {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        cfg: &ModelConfig,
        n_s: usize,
    ) -> CrossAttentionDecoder {
        let p = prefix;
        let (cs, cl) = (cfg.c_s, cfg.c_l);
        store.insert(&format!("{p}.ln_q.g"), Tensor::full(&[cs], 1.0), true);
        store.insert(&format!("{p}.ln_q.b"), Tensor::zeros(&[cs]), true);
        store.insert(&format!("{p}.ln_kv.g"), Tensor::full(&[cl], 1.0), true);
        store.insert(&format!("{p}.ln_kv.b"), Tensor::zeros(&[cl]), true);
        store.insert(&format!("{p}.align"), init_linear(rng, cfg.n_l, n_s), true);
        store.insert(&format!("{p}.attn.wq"), init_linear(rng, cs, cs), true);
        store.insert(&format!("{p}.attn.wqb"), Tensor::zeros(&[cs]), true);
        store.insert(&format!("{p}.attn.wk"), init_linear(rng, cl, cs), true);
        store.insert(&format!("{p}.attn.wkb"), Tensor::zeros(&[cs]), true);
        store.insert(&format!("{p}.attn.wv"), init_linear(rng, cl, cs), true);
        store.insert(&format!("{p}.attn.wvb"), Tensor::zeros(&[cs]), true);
        store.insert(&format!("{p}.attn.wo"), init_linear(rng, cs, cs), true);
        store.insert(&format!("{p}.attn.wob"), Tensor::zeros(&[cs]), true);
        store.insert(&format!("{p}.ln2.g"), Tensor::full(&[cs], 1.0), true);
        store.insert(&format!("{p}.ln2.b"), Tensor::zeros(&[cs]), true);
        store.insert(&format!("{p}.mlp.w1"), init_linear(rng, cs, 4 * cs), true);
        store.insert(&format!("{p}.mlp.b1"), Tensor::zeros(&[4 * cs]), true);
        store.insert(&format!("{p}.mlp.w2"), init_linear(rng, 4 * cs, cs), true);
        store.insert(&format!("{p}.mlp.b2"), Tensor::zeros(&[cs]), true);
        CrossAttentionDecoder {
            prefix: prefix.to_string(),
            heads: cfg.decoder_heads,
            n_s,
            n_l: cfg.n_l,
        }
    }

    /// fs (B,N_S,C_S), instructional (B,N_L,C_L), semantic (B,N_S,C_L) →
    /// affordance features (B,N_S,C_S) plus attention probabilities.
    pub fn forward(
        &self,
        store: &ParamStore,
        fs: &Var,
        instructional: &Var,
        semantic: &Var,
    ) -> (Var, Tensor) {
        assert_eq!(fs.shape()[1], self.n_s, "decoder: query token mismatch");
        assert_eq!(
            instructional.shape()[1],
            self.n_l,
            "decoder: key token mismatch"
        );
        assert_eq!(
            semantic.shape()[1],
            self.n_s,
            "decoder: value token mismatch"
        );
        let p = &self.prefix;
        let q_in = fs.layer_norm(
            &store.var(&format!("{p}.ln_q.g")),
            &store.var(&format!("{p}.ln_q.b")),
            1e-5,
        );
        let ln_kv_g = store.var(&format!("{p}.ln_kv.g"));
        let ln_kv_b = store.var(&format!("{p}.ln_kv.b"));
        let k_in = instructional.layer_norm(&ln_kv_g, &ln_kv_b, 1e-5);
        // token-axis resampling N_S → N_L so values line up with keys
        let v_in = semantic
            .layer_norm(&ln_kv_g, &ln_kv_b, 1e-5)
            .left_linear(&store.var(&format!("{p}.align")));
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
        let (attn_out, probs) = multi_head_attention(&q_in, &k_in, &v_in, &weights, self.heads);
        let x = fs.add(&attn_out);
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
