//! Image encoder: a four-stage residual convolution stack with an 8×
//! spatial reduction, standing in for a heavyweight pretrained backbone
//! behind the same (B, C, H/8, W/8) interface.

use super::params::{init_conv, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tensor, Var};

pub struct Encoder2d {
    pub prefix: String,
    pub channels: [usize; 4],
}

impl Encoder2d {
    /// Stage channel plan for a final width `c2d`.
    pub fn channel_plan(c2d: usize) -> [usize; 4] {
        [(c2d / 4).max(1), (c2d / 2).max(1), c2d, c2d]
    }

    pub fn init(store: &mut ParamStore, rng: &mut Rng, prefix: &str, c2d: usize) -> Encoder2d {
        let channels = Self::channel_plan(c2d);
        let mut cin = 3;
        for (stage, &cout) in channels.iter().enumerate() {
            let p = format!("{prefix}.stage{stage}");
            store.insert(
                &format!("{p}.conv1.w"),
                init_conv(rng, cout, cin, 3, 3),
                true,
            );
            store.insert(&format!("{p}.conv1.b"), Tensor::zeros(&[cout]), true);
            store.insert(
                &format!("{p}.conv2.w"),
                init_conv(rng, cout, cout, 3, 3),
                true,
            );
            store.insert(&format!("{p}.conv2.b"), Tensor::zeros(&[cout]), true);
            store.insert(
                &format!("{p}.proj.w"),
                init_conv(rng, cout, cin, 1, 1),
                true,
            );
            store.insert(&format!("{p}.proj.b"), Tensor::zeros(&[cout]), true);
            cin = cout;
        }
        Encoder2d {
            prefix: prefix.to_string(),
            channels,
        }
    }

    /// (B,3,H,W) -> (B, c2d, H/8, W/8). Stages 1–3 stride 2.
    pub fn forward(&self, store: &ParamStore, images: &Var) -> Var {
        let mut x = images.clone();
        for stage in 0..4 {
            let p = format!("{}.stage{stage}", self.prefix);
            let stride = if stage == 0 { 1 } else { 2 };
            let w1 = store.var(&format!("{p}.conv1.w"));
            let b1 = store.var(&format!("{p}.conv1.b"));
            let w2 = store.var(&format!("{p}.conv2.w"));
            let b2 = store.var(&format!("{p}.conv2.b"));
            let wp = store.var(&format!("{p}.proj.w"));
            let bp = store.var(&format!("{p}.proj.b"));
            let main = x.conv2d(&w1, &b1, stride, 1).gelu().conv2d(&w2, &b2, 1, 1);
            let shortcut = x.conv2d(&wp, &bp, stride, 0);
            x = main.add(&shortcut).gelu();
        }
        x
    }
}
