//! Shared multi-head attention plumbing used by the fusion block, the
//! frozen backbone and the cross-attention decoder.

use crate::tensor::{Tensor, Var};

pub struct AttentionWeights<'a> {
    pub wq: &'a Var,
    pub bq: &'a Var,
    pub wk: &'a Var,
    pub bk: &'a Var,
    pub wv: &'a Var,
    pub bv: &'a Var,
    pub wo: &'a Var,
    pub bo: &'a Var,
}

/// Scaled dot-product attention over projected inputs. Returns the output
/// tokens and the post-softmax attention probabilities (B·heads, Tq, Tk)
/// for inspection.
pub fn multi_head_attention(
    q_src: &Var,
    k_src: &Var,
    v_src: &Var,
    w: &AttentionWeights,
    heads: usize,
) -> (Var, Tensor) {
    let q = q_src.linear(w.wq, Some(w.bq)).split_heads(heads);
    let k = k_src.linear(w.wk, Some(w.bk)).split_heads(heads);
    let v = v_src.linear(w.wv, Some(w.bv)).split_heads(heads);
    let dh = q.shape()[2] as f64;
    let probs = q.bmm_nt(&k).mul_scalar(1.0 / dh.sqrt()).softmax_last();
    let ctx = probs.bmm(&v).merge_heads(heads);
    let out = ctx.linear(w.wo, Some(w.bo));
    (out, probs.value().clone())
}

/// Position-wise MLP with the usual 4× expansion.
pub fn token_mlp(x: &Var, w1: &Var, b1: &Var, w2: &Var, b2: &Var) -> Var {
    x.linear(w1, Some(b1)).gelu().linear(w2, Some(b2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netblocks::params::init_linear;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn weights(rng: &mut Rng, c: usize, names: &str) -> Vec<Var> {
        let _ = names;
        vec![
            Var::input(init_linear(rng, c, c)),
            Var::input(Tensor::zeros(&[c])),
            Var::input(init_linear(rng, c, c)),
            Var::input(Tensor::zeros(&[c])),
            Var::input(init_linear(rng, c, c)),
            Var::input(Tensor::zeros(&[c])),
            Var::input(init_linear(rng, c, c)),
            Var::input(Tensor::zeros(&[c])),
        ]
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = Rng::new(1);
        let c = 8;
        let ws = weights(&mut rng, c, "t");
        let w = AttentionWeights {
            wq: &ws[0],
            bq: &ws[1],
            wk: &ws[2],
            bk: &ws[3],
            wv: &ws[4],
            bv: &ws[5],
            wo: &ws[6],
            bo: &ws[7],
        };
        let x = Var::input(Tensor::from_vec(
            (0..2 * 5 * c).map(|i| (i as f64 * 0.13).sin()).collect(),
            &[2, 5, c],
        ));
        let (_, probs) = multi_head_attention(&x, &x, &x, &w, 2);
        assert_eq!(probs.shape(), &[4, 5, 5]);
        for row in probs.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_key_gets_full_attention() {
        let mut rng = Rng::new(2);
        let c = 8;
        let ws = weights(&mut rng, c, "t");
        let w = AttentionWeights {
            wq: &ws[0],
            bq: &ws[1],
            wk: &ws[2],
            bk: &ws[3],
            wv: &ws[4],
            bv: &ws[5],
            wo: &ws[6],
            bo: &ws[7],
        };
        let q = Var::input(Tensor::from_vec(
            (0..4 * c).map(|i| (i as f64 * 0.31).cos()).collect(),
            &[1, 4, c],
        ));
        let kv = Var::input(Tensor::from_vec(
            (0..c).map(|i| i as f64 * 0.1).collect(),
            &[1, 1, c],
        ));
        let (_, probs) = multi_head_attention(&q, &kv, &kv, &w, 2);
        for &p in probs.data() {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_self_attention_is_exactly_one() {
        let mut rng = Rng::new(3);
        let c = 8;
        let ws = weights(&mut rng, c, "t");
        let w = AttentionWeights {
            wq: &ws[0],
            bq: &ws[1],
            wk: &ws[2],
            bk: &ws[3],
            wv: &ws[4],
            bv: &ws[5],
            wo: &ws[6],
            bo: &ws[7],
        };
        let x = Var::input(Tensor::from_vec((0..c).map(|i| i as f64 * 0.2).collect(), &[1, 1, c]));
        let (out, probs) = multi_head_attention(&x, &x, &x, &w, 2);
        assert_eq!(probs.shape(), &[2, 1, 1]);
        for &p in probs.data() {
            assert_eq!(p, 1.0);
        }
        assert_eq!(out.shape(), &[1, 1, c]);
    }
}
