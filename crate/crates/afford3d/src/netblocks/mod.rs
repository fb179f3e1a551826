//! The multi-modal affordance grounding network: image and point-cloud
//! encoders, a fusion block, an adapter into the language space, a frozen
//! language backbone, a cross-attention decoder, and the point-wise
//! segmentation head.
//!
//! The architecture is assembled from named parameters in a [`ParamStore`];
//! every forward builds an autodiff graph whose gradients are exercised
//! against finite differences in the test suites.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod decoder;
pub mod encoder2d;
pub mod encoder3d;
pub mod fuse;
pub mod head;
pub mod params;
pub mod tokenizer;

pub use encoder3d::CloudGeometry;
pub use head::Mode;
pub use params::ParamStore;
pub use tokenizer::Tokenizer;

use crate::config::RunConfig;
use crate::dataio::DataError;
use crate::geom3d::{GeomError, PointCloud};
use crate::rng::Rng;
use crate::synthgen::Instruction;
use crate::tensor::{Tensor, Var};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("non-finite values in {0}")]
    NonFiniteInput(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image input required unless the image-off ablation is set")]
    MissingImages,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint is missing parameter `{0}`")]
    MissingParameter(String),
    #[error("checkpoint carries no config snapshot")]
    MissingConfig,
}

/// The named intermediate tensors of one forward pass.
#[derive(Clone, Debug)]
pub struct FeaturePack {
    /// Image features (B, C_I, H', W'); absent under the image-off ablation.
    pub f2d: Option<Tensor>,
    /// Point features in the declared (B, C_P, N_P) layout.
    pub f3d: Tensor,
    /// Fused spatial tokens (B, N_S, C_S).
    pub fs: Tensor,
    /// Adapter output (B, N_S, C_L).
    pub fsp: Tensor,
    /// Instruction token features (B, N_L, C_L).
    pub ft: Tensor,
    /// Decoder output (B, N_A, C_A).
    pub fa: Tensor,
    /// Heatmap (B, N, 1), strictly inside (0,1).
    pub o: Tensor,
}

impl FeaturePack {
    pub fn assert_invariants(&self) -> Result<(), String> {
        let all = [
            ("f3d", &self.f3d),
            ("fs", &self.fs),
            ("fsp", &self.fsp),
            ("ft", &self.ft),
            ("fa", &self.fa),
            ("o", &self.o),
        ];
        for (name, t) in all {
            if !t.all_finite() {
                return Err(format!("{name} contains non-finite values"));
            }
        }
        if let Some(f2d) = &self.f2d {
            if !f2d.all_finite() {
                return Err("f2d contains non-finite values".into());
            }
        }
        if self.o.data().iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err("o has entries outside the open interval (0,1)".into());
        }
        if self.fa.shape()[1] != self.fs.shape()[1] || self.fa.shape()[2] != self.fs.shape()[2] {
            return Err("decoder output geometry must match the fused tokens".into());
        }
        Ok(())
    }
}

/// Image/instruction features computed once and shared across the point
/// clouds paired with them.
pub struct ImageContext {
    pub f2d: Option<Var>,
    pub ft: Var,
    pub token_ids: Vec<usize>,
    pub batch: usize,
}

pub struct ForwardOut {
    pub o: Var,
    pub pack: FeaturePack,
}

pub struct LMAffordance3D {
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub tokenizer: Tokenizer,
    enc2d: encoder2d::Encoder2d,
    enc3d: encoder3d::Encoder3d,
    fuse: fuse::FusionBlock,
    backbone: backbone::LanguageBackbone,
    decoder: decoder::CrossAttentionDecoder,
    head: head::SegmentationHead,
}

impl LMAffordance3D {
    pub fn new(cfg: &RunConfig) -> LMAffordance3D {
        let tokenizer = Tokenizer::new();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(cfg.model.init_seed);
        let n_s = cfg.model.n_s(cfg.data.image_size);

        let enc2d = encoder2d::Encoder2d::init(&mut store, &mut rng, "enc2d", cfg.model.c2d);
        let enc3d = encoder3d::Encoder3d::init(&mut store, &mut rng, "enc3d", &cfg.model);
        let fuse = fuse::FusionBlock::init(
            &mut store,
            &mut rng,
            "fuse",
            &cfg.model,
            cfg.data.image_size,
        );
        store.insert(
            "adapter.l1.w",
            params::init_linear(&mut rng, cfg.model.c_s, 2 * cfg.model.c_l),
            true,
        );
        store.insert("adapter.l1.b", Tensor::zeros(&[2 * cfg.model.c_l]), true);
        store.insert(
            "adapter.l2.w",
            params::init_linear(&mut rng, 2 * cfg.model.c_l, cfg.model.c_l),
            true,
        );
        store.insert("adapter.l2.b", Tensor::zeros(&[cfg.model.c_l]), true);
        let decoder =
            decoder::CrossAttentionDecoder::init(&mut store, &mut rng, "decoder", &cfg.model, n_s);
        let head = head::SegmentationHead::init(
            &mut store,
            &mut rng,
            "head",
            &cfg.model,
            cfg.data.image_size,
        );

        // the backbone draws from its own seed and freezes everything
        let mut bb_rng = Rng::new(cfg.model.backbone_seed);
        let backbone = backbone::LanguageBackbone::init(
            &mut store,
            &mut bb_rng,
            "backbone",
            &cfg.model,
            tokenizer.vocab_size(),
            n_s,
        );

        LMAffordance3D {
            cfg: cfg.clone(),
            store,
            tokenizer,
            enc2d,
            enc3d,
            fuse,
            backbone,
            decoder,
            head,
        }
    }

    pub fn backbone_hash(&self) -> u64 {
        self.store.hash_prefix("backbone.")
    }

    /// Encode images and instructions once for a batch; the result is
    /// shared across every cloud paired with these images.
    pub fn image_context(
        &self,
        images: Option<&Tensor>,
        instructions: &[&Instruction],
    ) -> Result<ImageContext, NetError> {
        let batch = instructions.len();
        let f2d = if self.cfg.train.image_on {
            let images = images.ok_or(NetError::MissingImages)?;
            if !images.all_finite() {
                return Err(NetError::NonFiniteInput("images"));
            }
            let &[b, c, h, w] = images.shape() else {
                return Err(NetError::DimensionMismatch(format!(
                    "images must be (B,3,H,W), got {:?}",
                    images.shape()
                )));
            };
            if b != batch || c != 3 || h != self.cfg.data.image_size || w != h {
                return Err(NetError::DimensionMismatch(format!(
                    "images (B,3,{0},{0}) expected, got {1:?} for batch {batch}",
                    self.cfg.data.image_size,
                    images.shape()
                )));
            }
            Some(
                self.enc2d
                    .forward(&self.store, &Var::constant(images.clone())),
            )
        } else {
            None
        };
        let mut token_ids = Vec::with_capacity(batch * self.cfg.model.n_l);
        for ins in instructions {
            token_ids.extend(self.tokenizer.encode(&ins.text, self.cfg.model.n_l));
        }
        let ft = self.backbone.embed(&self.store, &token_ids, batch);
        Ok(ImageContext {
            f2d,
            ft,
            token_ids,
            batch,
        })
    }

    /// Run the fusion-to-head pipeline for one set of clouds under a
    /// shared image context.
    pub fn forward_clouds(
        &mut self,
        ctx: &ImageContext,
        clouds: &[(&PointCloud, &CloudGeometry)],
        mode: Mode,
    ) -> Result<ForwardOut, NetError> {
        if clouds.len() != ctx.batch {
            return Err(NetError::DimensionMismatch(format!(
                "{} clouds for image batch {}",
                clouds.len(),
                ctx.batch
            )));
        }
        let n_points = clouds[0].0.len();
        for (c, _) in clouds {
            if c.len() != n_points {
                return Err(NetError::DimensionMismatch(
                    "clouds in one batch must share a point count".into(),
                ));
            }
            if c.points().iter().flatten().any(|v| !v.is_finite()) {
                return Err(NetError::NonFiniteInput("point cloud"));
            }
        }
        let geos: Vec<&CloudGeometry> = clouds.iter().map(|(_, g)| *g).collect();
        let point_tokens = self.enc3d.forward(&self.store, &geos, &self.cfg.model);
        let (fs, _) = self
            .fuse
            .forward(&self.store, ctx.f2d.as_ref(), &point_tokens, ctx.batch);
        let fsp = self.adapt(&fs);
        let hidden = self.backbone.forward(&self.store, &fsp, &ctx.ft);
        let (semantic, instructional) = self.backbone.split_hidden(&hidden);
        let (fa, _) = self
            .decoder
            .forward(&self.store, &fs, &instructional, &semantic);
        let o = self
            .head
            .forward(&mut self.store, &fa, &geos, n_points, mode);
        let pack = FeaturePack {
            f2d: ctx.f2d.as_ref().map(|v| v.value().clone()),
            f3d: point_tokens.permute_021().value().clone(),
            fs: fs.value().clone(),
            fsp: fsp.value().clone(),
            ft: ctx.ft.value().clone(),
            fa: fa.value().clone(),
            o: o.value().clone(),
        };
        Ok(ForwardOut { o, pack })
    }

    /// Two linear layers around a smooth activation, lifting fused spatial
    /// tokens into the language width: (B, N_S, C_S) → (B, N_S, C_L).
    pub fn adapt(&self, fs: &Var) -> Var {
        fs.linear(
            &self.store.var("adapter.l1.w"),
            Some(&self.store.var("adapter.l1.b")),
        )
        .gelu()
        .linear(
            &self.store.var("adapter.l2.w"),
            Some(&self.store.var("adapter.l2.b")),
        )
    }

    /// Whole pipeline for matched (image, instruction, cloud) triples.
    pub fn forward(
        &mut self,
        images: Option<&Tensor>,
        instructions: &[&Instruction],
        clouds: &[(&PointCloud, &CloudGeometry)],
        mode: Mode,
    ) -> Result<ForwardOut, NetError> {
        let ctx = self.image_context(images, instructions)?;
        self.forward_clouds(&ctx, clouds, mode)
    }

    /// Persist every parameter and buffer with a config snapshot.
    pub fn save(&self, path: &Path, extra_meta: &BTreeMap<String, String>) -> Result<(), NetError> {
        let mut meta = extra_meta.clone();
        meta.insert("config".into(), self.cfg.snapshot());
        let arrays: Vec<(String, Vec<usize>, &[f64], bool)> = self
            .store
            .iter()
            .map(|(name, p)| {
                (
                    name.clone(),
                    p.value.shape().to_vec(),
                    p.value.data(),
                    p.trainable,
                )
            })
            .collect();
        checkpoint::save_checkpoint(path, &arrays, &meta)?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint's config snapshot and values.
    pub fn load(path: &Path) -> Result<(LMAffordance3D, BTreeMap<String, String>), NetError> {
        let ckpt = checkpoint::load_checkpoint(path)?;
        let snapshot = ckpt.meta.get("config").ok_or(NetError::MissingConfig)?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(snapshot)
            .map_err(|e| NetError::DimensionMismatch(format!("config snapshot: {e}")))?;
        let mut model = LMAffordance3D::new(&cfg);
        let mut seen = std::collections::BTreeSet::new();
        for (info, values) in &ckpt.entries {
            if info.name.starts_with("opt.") {
                continue; // optimizer state is the trainer's business
            }
            model
                .store
                .set_value(&info.name, Tensor::from_vec(values.clone(), &info.shape));
            seen.insert(info.name.clone());
        }
        for name in model.store.names() {
            if !seen.contains(name) {
                return Err(NetError::MissingParameter(name.clone()));
            }
        }
        Ok((model, ckpt.meta))
    }
}

/// Stack per-sample (3,H,W) images into a (B,3,H,W) tensor.
pub fn stack_images(images: &[&[f64]], image_size: usize) -> Tensor {
    let plane = 3 * image_size * image_size;
    let mut data = Vec::with_capacity(images.len() * plane);
    for img in images {
        assert_eq!(img.len(), plane, "image size mismatch");
        data.extend_from_slice(img);
    }
    Tensor::from_vec(data, &[images.len(), 3, image_size, image_size])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Granularity;
    use crate::geom3d::normalize_unit_sphere;
    use crate::losses::{total_loss_var, LossConfig};
    use crate::synthgen::make_instruction;
    use tempfile::tempdir;

    fn random_cloud(rng: &mut Rng, n: usize) -> PointCloud {
        normalize_unit_sphere(
            &PointCloud::new(
                (0..n)
                    .map(|_| [rng.normal(), rng.normal(), rng.normal()])
                    .collect(),
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn random_images(rng: &mut Rng, b: usize, size: usize) -> Tensor {
        Tensor::from_vec(
            (0..b * 3 * size * size).map(|_| rng.uniform()).collect(),
            &[b, 3, size, size],
        )
    }

    fn tiny_model() -> LMAffordance3D {
        LMAffordance3D::new(&RunConfig::tiny())
    }

    #[test]
    fn full_pipeline_shapes_and_ranges() {
        let mut model = tiny_model();
        let cfg = model.cfg.clone();
        let mut rng = Rng::new(61);
        let images = random_images(&mut rng, 2, cfg.data.image_size);
        let instr = make_instruction("grasp", "mug", Granularity::Full, 1).unwrap();
        let c1 = random_cloud(&mut rng, cfg.data.n_points);
        let c2 = random_cloud(&mut rng, cfg.data.n_points);
        let g1 = CloudGeometry::compute(&c1, &cfg.model).unwrap();
        let g2 = CloudGeometry::compute(&c2, &cfg.model).unwrap();
        let out = model
            .forward(
                Some(&images),
                &[&instr, &instr],
                &[(&c1, &g1), (&c2, &g2)],
                Mode::Train,
            )
            .unwrap();
        assert_eq!(out.o.shape(), &[2, cfg.data.n_points, 1]);
        out.pack.assert_invariants().unwrap();
        let n_s = cfg.model.n_s(cfg.data.image_size);
        assert_eq!(out.pack.fs.shape(), &[2, n_s, cfg.model.c_s]);
        assert_eq!(out.pack.fsp.shape(), &[2, n_s, cfg.model.c_l]);
        assert_eq!(out.pack.ft.shape(), &[2, cfg.model.n_l, cfg.model.c_l]);
        assert_eq!(
            out.pack.f3d.shape(),
            &[2, cfg.model.c3d, cfg.model.sa2_points]
        );
    }

    #[test]
    fn image_off_ablation_still_produces_valid_output() {
        let mut cfg = RunConfig::tiny();
        cfg.train.image_on = false;
        let mut model = LMAffordance3D::new(&cfg);
        let mut rng = Rng::new(62);
        let instr = make_instruction("open", "bottle", Granularity::Action, 2).unwrap();
        let cloud = random_cloud(&mut rng, cfg.data.n_points);
        let geo = CloudGeometry::compute(&cloud, &cfg.model).unwrap();
        let out = model
            .forward(None, &[&instr], &[(&cloud, &geo)], Mode::Eval)
            .unwrap();
        assert!(out.pack.f2d.is_none());
        out.pack.assert_invariants().unwrap();
    }

    #[test]
    fn missing_images_is_an_error_when_image_branch_is_on() {
        let mut model = tiny_model();
        let cfg = model.cfg.clone();
        let mut rng = Rng::new(63);
        let instr = make_instruction("cut", "knife", Granularity::ActionObject, 0).unwrap();
        let cloud = random_cloud(&mut rng, cfg.data.n_points);
        let geo = CloudGeometry::compute(&cloud, &cfg.model).unwrap();
        assert!(matches!(
            model.forward(None, &[&instr], &[(&cloud, &geo)], Mode::Eval),
            Err(NetError::MissingImages)
        ));
    }

    #[test]
    fn non_finite_images_rejected() {
        let model = tiny_model();
        let cfg = model.cfg.clone();
        let size = cfg.data.image_size;
        let mut data = vec![0.5; 3 * size * size];
        data[7] = f64::NAN;
        let images = Tensor::from_vec(data, &[1, 3, size, size]);
        let instr = make_instruction("push", "door", Granularity::Action, 0).unwrap();
        assert!(matches!(
            model.image_context(Some(&images), &[&instr]),
            Err(NetError::NonFiniteInput("images"))
        ));
    }

    #[test]
    fn instructions_change_the_heatmap() {
        let mut model = tiny_model();
        let cfg = model.cfg.clone();
        let mut rng = Rng::new(64);
        let images = random_images(&mut rng, 1, cfg.data.image_size);
        let cloud = random_cloud(&mut rng, cfg.data.n_points);
        let geo = CloudGeometry::compute(&cloud, &cfg.model).unwrap();
        let full = make_instruction("grasp", "mug", Granularity::Full, 3).unwrap();
        let none = make_instruction("grasp", "mug", Granularity::None, 3).unwrap();
        let oa = model
            .forward(Some(&images), &[&full], &[(&cloud, &geo)], Mode::Eval)
            .unwrap();
        let ob = model
            .forward(Some(&images), &[&none], &[(&cloud, &geo)], Mode::Eval)
            .unwrap();
        assert!(oa.pack.o.max_abs_diff(&ob.pack.o) > 0.0);
    }

    #[test]
    fn feature_pack_stays_finite_over_random_trials() {
        let mut model = tiny_model();
        let cfg = model.cfg.clone();
        let mut rng = Rng::new(65);
        let instr = make_instruction("listen", "earphone", Granularity::Full, 4).unwrap();
        for trial in 0..1000 {
            let images = random_images(&mut rng, 1, cfg.data.image_size);
            let cloud = random_cloud(&mut rng, cfg.data.n_points);
            let geo = CloudGeometry::compute(&cloud, &cfg.model).unwrap();
            let out = model
                .forward(Some(&images), &[&instr], &[(&cloud, &geo)], Mode::Eval)
                .unwrap();
            out.pack
                .assert_invariants()
                .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        }
    }

    #[test]
    fn batch_equivariance_in_eval_mode() {
        let mut model = tiny_model();
        let cfg = model.cfg.clone();
        let mut rng = Rng::new(66);
        // one training pass records batch-norm statistics
        let images = random_images(&mut rng, 2, cfg.data.image_size);
        let instr = make_instruction("wear", "bag", Granularity::Full, 5).unwrap();
        let c1 = random_cloud(&mut rng, cfg.data.n_points);
        let c2 = random_cloud(&mut rng, cfg.data.n_points);
        let g1 = CloudGeometry::compute(&c1, &cfg.model).unwrap();
        let g2 = CloudGeometry::compute(&c2, &cfg.model).unwrap();
        model
            .forward(
                Some(&images),
                &[&instr, &instr],
                &[(&c1, &g1), (&c2, &g2)],
                Mode::Train,
            )
            .unwrap();

        let single_img = Tensor::from_vec(
            images.data()[..3 * cfg.data.image_size * cfg.data.image_size].to_vec(),
            &[1, 3, cfg.data.image_size, cfg.data.image_size],
        );
        let o_single = model
            .forward(Some(&single_img), &[&instr], &[(&c1, &g1)], Mode::Eval)
            .unwrap();
        let o_batch = model
            .forward(
                Some(&images),
                &[&instr, &instr],
                &[(&c1, &g1), (&c2, &g2)],
                Mode::Eval,
            )
            .unwrap();
        let first = &o_batch.pack.o.data()[..cfg.data.n_points];
        for (a, b) in o_single.pack.o.data().iter().zip(first) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn adapter_zero_weights_zero_output() {
        let mut model = tiny_model();
        let m = model.cfg.model.clone();
        model
            .store
            .set_value("adapter.l1.w", Tensor::zeros(&[m.c_s, 2 * m.c_l]));
        model
            .store
            .set_value("adapter.l2.w", Tensor::zeros(&[2 * m.c_l, m.c_l]));
        let mut rng = Rng::new(71);
        let fs = Var::constant(Tensor::from_vec(
            (0..2 * 5 * m.c_s).map(|_| rng.normal()).collect(),
            &[2, 5, m.c_s],
        ));
        let out = model.adapt(&fs);
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_output_width_is_language_width() {
        let mut cfg = RunConfig::tiny();
        cfg.model.c_s = 32; // different from c_l = 16
        let model = LMAffordance3D::new(&cfg);
        let fs = Var::constant(Tensor::zeros(&[1, 4, 32]));
        assert_eq!(model.adapt(&fs).shape(), &[1, 4, cfg.model.c_l]);
    }

    #[test]
    fn adapter_identity_init_is_linear_to_first_order() {
        // first layer [I; 0], second [I; 0]ᵀ: near zero the activation has
        // slope 1/2, so adapt(εx) → (ε/2)·x with O(ε²) remainder
        let mut model = tiny_model();
        let m = model.cfg.model.clone();
        assert_eq!(m.c_s, m.c_l);
        let c = m.c_s;
        let mut w1 = vec![0.0; c * 2 * c];
        for i in 0..c {
            w1[i * 2 * c + i] = 1.0;
        }
        let mut w2 = vec![0.0; 2 * c * c];
        for i in 0..c {
            w2[i * c + i] = 1.0;
        }
        model
            .store
            .set_value("adapter.l1.w", Tensor::from_vec(w1, &[c, 2 * c]));
        model
            .store
            .set_value("adapter.l2.w", Tensor::from_vec(w2, &[2 * c, c]));

        let mut rng = Rng::new(72);
        let x: Vec<f64> = (0..3 * c).map(|_| rng.normal()).collect();
        let remainder = |eps: f64| -> f64 {
            let fs = Var::constant(Tensor::from_vec(
                x.iter().map(|v| v * eps).collect(),
                &[1, 3, c],
            ));
            let out = model.adapt(&fs);
            out.value()
                .data()
                .iter()
                .zip(&x)
                .map(|(o, xi)| (o - 0.5 * eps * xi).abs())
                .fold(0.0, f64::max)
        };
        let (r1, r2) = (remainder(1e-2), remainder(1e-3));
        assert!(r1 < 1e-3, "first-order term off: {r1}");
        // remainder shrinks ~quadratically with the scale
        assert!(r2 < r1 / 50.0, "remainder not second order: {r1} vs {r2}");
    }

    #[test]
    fn checkpoint_roundtrip_restores_every_value() {
        let mut model = tiny_model();
        let cfg = model.cfg.clone();
        let mut rng = Rng::new(67);
        // a training pass perturbs batch-norm buffers away from init
        let images = random_images(&mut rng, 1, cfg.data.image_size);
        let instr = make_instruction("pour", "kettle", Granularity::Full, 6).unwrap();
        let cloud = random_cloud(&mut rng, cfg.data.n_points);
        let geo = CloudGeometry::compute(&cloud, &cfg.model).unwrap();
        model
            .forward(Some(&images), &[&instr], &[(&cloud, &geo)], Mode::Train)
            .unwrap();

        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path, &BTreeMap::new()).unwrap();
        let (restored, meta) = LMAffordance3D::load(&path).unwrap();
        assert!(meta.contains_key("config"));
        for (name, p) in model.store.iter() {
            let q = restored.store.get(name);
            assert_eq!(p.value.data(), q.value.data(), "{name} differs");
            assert_eq!(p.trainable, q.trainable);
        }
        assert_eq!(model.backbone_hash(), restored.backbone_hash());
    }

    #[test]
    fn loss_gradients_flow_through_whole_network() {
        let mut model = tiny_model();
        let cfg = model.cfg.clone();
        let mut rng = Rng::new(68);
        let images = random_images(&mut rng, 1, cfg.data.image_size);
        let instr = make_instruction("sit", "chair", Granularity::Full, 7).unwrap();
        let cloud = random_cloud(&mut rng, cfg.data.n_points);
        let geo = CloudGeometry::compute(&cloud, &cfg.model).unwrap();
        let out = model
            .forward(Some(&images), &[&instr], &[(&cloud, &geo)], Mode::Train)
            .unwrap();
        let y = Tensor::from_vec(
            (0..cfg.data.n_points).map(|i| (i % 2) as f64).collect(),
            &[1, cfg.data.n_points, 1],
        );
        let loss = total_loss_var(&out.o, &y, &LossConfig::default());
        let grads = crate::tensor::backward(&loss);
        // a representative parameter from every trainable block
        for name in [
            "enc2d.stage0.conv1.w",
            "enc3d.s1.l1.w",
            "fuse.attn.wq",
            "adapter.l1.w",
            "decoder.align",
            "head.l1.w",
        ] {
            assert!(grads.by_name(name).is_some(), "{name} received no gradient");
        }
        for name in model.store.names() {
            if name.starts_with("backbone.") {
                assert!(grads.by_name(name).is_none(), "{name} should be frozen");
            }
        }
    }
}
