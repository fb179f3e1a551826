//! Run configuration: every hyperparameter, view/split switch and ablation
//! flag in one flat struct, readable from a `key = value` file with dotted
//! namespaces and overridable from the command line.
//!
//! Unknown keys are rejected, and every run writes the resolved snapshot
//! back out in the same format so it can be replayed verbatim.

use crate::losses::LossConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("malformed line {line}: `{text}` (expected key = value)")]
    Malformed { line: usize, text: String },
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Full,
    Partial,
    Rotation,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Full => "full",
            View::Partial => "partial",
            View::Rotation => "rotation",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Seen,
    Unseen,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        })
    }
}

/// Instruction detail levels for the language-ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Full,
    ActionObject,
    Action,
    None,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Full => "full",
            Granularity::ActionObject => "action_object",
            Granularity::Action => "action",
            Granularity::None => "none",
        })
    }
}

/// Dataset generation settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_points: usize,
    pub n_affordances: usize,
    pub image_size: usize,
    pub view: View,
    pub split: Split,
    /// Width of the soft boundary band on part labels.
    pub feather_band: f64,
    /// Occlusion grid resolution for partial/rotation views.
    pub grid_resolution: usize,
    /// Depth band kept behind the nearest point per grid cell.
    pub depth_tolerance: f64,
    /// Pair images with renders of other instances of the same category
    /// instead of the sample's own instance.
    pub cross_pairing: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 512,
            n_test: 128,
            n_points: 2048,
            n_affordances: 10,
            image_size: 64,
            view: View::Full,
            split: Split::Seen,
            feather_band: 0.05,
            grid_resolution: 32,
            depth_tolerance: 0.02,
            cross_pairing: false,
        }
    }
}

/// Network dimensions. All sizes are configuration, not hard-coded.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels of the image encoder.
    pub c2d: usize,
    /// Output channels of the point encoder.
    pub c3d: usize,
    /// Fused spatial channel width.
    pub c_s: usize,
    /// Language-space channel width.
    pub c_l: usize,
    /// Instruction token count.
    pub n_l: usize,
    pub fuse_heads: usize,
    pub backbone_layers: usize,
    pub backbone_heads: usize,
    pub decoder_heads: usize,
    pub sa1_points: usize,
    pub sa1_radius: f64,
    pub sa1_k: usize,
    pub sa1_hidden: usize,
    pub sa2_points: usize,
    pub sa2_radius: f64,
    pub sa2_k: usize,
    pub sa2_hidden: usize,
    pub head_hidden: usize,
    /// Neighbors used when propagating decoder features back to the cloud.
    pub interp_k: usize,
    /// Seed for the frozen backbone initialization.
    pub backbone_seed: u64,
    /// Seed for trainable-parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            c2d: 64,
            c3d: 256,
            c_s: 256,
            c_l: 256,
            n_l: 24,
            fuse_heads: 4,
            backbone_layers: 4,
            backbone_heads: 8,
            decoder_heads: 4,
            sa1_points: 512,
            sa1_radius: 0.2,
            sa1_k: 32,
            sa1_hidden: 64,
            sa2_points: 128,
            sa2_radius: 0.4,
            sa2_k: 64,
            sa2_hidden: 128,
            head_hidden: 128,
            interp_k: 3,
            backbone_seed: 7_777,
            init_seed: 1_234,
        }
    }
}

impl ModelConfig {
    /// Number of image tokens after the 8× spatial reduction.
    pub fn image_tokens(&self, image_size: usize) -> usize {
        let side = image_size / 8;
        side * side
    }

    /// Fused token count N_S = image tokens + point tokens.
    pub fn n_s(&self, image_size: usize) -> usize {
        self.image_tokens(image_size) + self.sa2_points
    }
}

/// Optimization loop settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Point clouds paired with each image during training.
    pub pair_count: usize,
    pub seed: u64,
    /// Ablation: feed the image branch (`false` swaps in the learned null
    /// token row).
    pub image_on: bool,
    /// Ablation: instruction detail used when generating and training.
    pub granularity: Granularity,
    /// Fraction of training samples held out for best-checkpoint selection.
    pub val_fraction: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.06,
            warmup_steps: 100,
            epochs: 20,
            batch_size: 4,
            pair_count: 2,
            seed: 0,
            image_on: true,
            granularity: Granularity::Full,
            val_fraction: 0.1,
            loss: LossConfig::default(),
        }
    }
}

/// The complete resolved configuration of one run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| ConfigError::BadValue {
            key: key.to_string(),
            reason: e.to_string(),
        })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("expected bool, got `{other}`"),
        }),
    }
}

impl RunConfig {
    /// Apply one dotted-key assignment. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "data.n_train" => self.data.n_train = parse(key, v)?,
            "data.n_test" => self.data.n_test = parse(key, v)?,
            "data.n_points" => self.data.n_points = parse(key, v)?,
            "data.n_affordances" => self.data.n_affordances = parse(key, v)?,
            "data.image_size" => self.data.image_size = parse(key, v)?,
            "data.view" => {
                self.data.view = match v {
                    "full" => View::Full,
                    "partial" => View::Partial,
                    "rotation" => View::Rotation,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            reason: format!("expected full|partial|rotation, got `{other}`"),
                        })
                    }
                }
            }
            "data.split" => {
                self.data.split = match v {
                    "seen" => Split::Seen,
                    "unseen" => Split::Unseen,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            reason: format!("expected seen|unseen, got `{other}`"),
                        })
                    }
                }
            }
            "data.feather_band" => self.data.feather_band = parse(key, v)?,
            "data.grid_resolution" => self.data.grid_resolution = parse(key, v)?,
            "data.depth_tolerance" => self.data.depth_tolerance = parse(key, v)?,
            "data.cross_pairing" => self.data.cross_pairing = parse_bool(key, v)?,

            "model.c2d" => self.model.c2d = parse(key, v)?,
            "model.c3d" => self.model.c3d = parse(key, v)?,
            "model.c_s" => self.model.c_s = parse(key, v)?,
            "model.c_l" => self.model.c_l = parse(key, v)?,
            "model.n_l" => self.model.n_l = parse(key, v)?,
            "model.fuse_heads" => self.model.fuse_heads = parse(key, v)?,
            "model.backbone_layers" => self.model.backbone_layers = parse(key, v)?,
            "model.backbone_heads" => self.model.backbone_heads = parse(key, v)?,
            "model.decoder_heads" => self.model.decoder_heads = parse(key, v)?,
            "model.sa1_points" => self.model.sa1_points = parse(key, v)?,
            "model.sa1_radius" => self.model.sa1_radius = parse(key, v)?,
            "model.sa1_k" => self.model.sa1_k = parse(key, v)?,
            "model.sa1_hidden" => self.model.sa1_hidden = parse(key, v)?,
            "model.sa2_points" => self.model.sa2_points = parse(key, v)?,
            "model.sa2_radius" => self.model.sa2_radius = parse(key, v)?,
            "model.sa2_k" => self.model.sa2_k = parse(key, v)?,
            "model.sa2_hidden" => self.model.sa2_hidden = parse(key, v)?,
            "model.head_hidden" => self.model.head_hidden = parse(key, v)?,
            "model.interp_k" => self.model.interp_k = parse(key, v)?,
            "model.backbone_seed" => self.model.backbone_seed = parse(key, v)?,
            "model.init_seed" => self.model.init_seed = parse(key, v)?,

            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "train.warmup_steps" => self.train.warmup_steps = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.pair_count" => self.train.pair_count = parse(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "train.image_on" => self.train.image_on = parse_bool(key, v)?,
            "train.granularity" => {
                self.train.granularity = match v {
                    "full" => Granularity::Full,
                    "action_object" => Granularity::ActionObject,
                    "action" => Granularity::Action,
                    "none" => Granularity::None,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            reason: format!(
                                "expected full|action_object|action|none, got `{other}`"
                            ),
                        })
                    }
                }
            }
            "train.val_fraction" => self.train.val_fraction = parse(key, v)?,
            "train.loss.omega_f" => self.train.loss.omega_f = parse(key, v)?,
            "train.loss.omega_d" => self.train.loss.omega_d = parse(key, v)?,
            "train.loss.gamma" => self.train.loss.gamma = parse(key, v)?,
            "train.loss.alpha" => self.train.loss.alpha = parse(key, v)?,
            "train.loss.epsilon" => self.train.loss.epsilon = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// All keys with their current values, in snapshot order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let d = &self.data;
        let m = &self.model;
        let t = &self.train;
        let mut out: Vec<(String, String)> = vec![
            ("data.n_train".into(), d.n_train.to_string()),
            ("data.n_test".into(), d.n_test.to_string()),
            ("data.n_points".into(), d.n_points.to_string()),
            ("data.n_affordances".into(), d.n_affordances.to_string()),
            ("data.image_size".into(), d.image_size.to_string()),
            ("data.view".into(), d.view.to_string()),
            ("data.split".into(), d.split.to_string()),
            ("data.feather_band".into(), format!("{}", d.feather_band)),
            ("data.grid_resolution".into(), d.grid_resolution.to_string()),
            (
                "data.depth_tolerance".into(),
                format!("{}", d.depth_tolerance),
            ),
            ("data.cross_pairing".into(), d.cross_pairing.to_string()),
            ("model.c2d".into(), m.c2d.to_string()),
            ("model.c3d".into(), m.c3d.to_string()),
            ("model.c_s".into(), m.c_s.to_string()),
            ("model.c_l".into(), m.c_l.to_string()),
            ("model.n_l".into(), m.n_l.to_string()),
            ("model.fuse_heads".into(), m.fuse_heads.to_string()),
            (
                "model.backbone_layers".into(),
                m.backbone_layers.to_string(),
            ),
            ("model.backbone_heads".into(), m.backbone_heads.to_string()),
            ("model.decoder_heads".into(), m.decoder_heads.to_string()),
            ("model.sa1_points".into(), m.sa1_points.to_string()),
            ("model.sa1_radius".into(), format!("{}", m.sa1_radius)),
            ("model.sa1_k".into(), m.sa1_k.to_string()),
            ("model.sa1_hidden".into(), m.sa1_hidden.to_string()),
            ("model.sa2_points".into(), m.sa2_points.to_string()),
            ("model.sa2_radius".into(), format!("{}", m.sa2_radius)),
            ("model.sa2_k".into(), m.sa2_k.to_string()),
            ("model.sa2_hidden".into(), m.sa2_hidden.to_string()),
            ("model.head_hidden".into(), m.head_hidden.to_string()),
            ("model.interp_k".into(), m.interp_k.to_string()),
            ("model.backbone_seed".into(), m.backbone_seed.to_string()),
            ("model.init_seed".into(), m.init_seed.to_string()),
            ("train.learning_rate".into(), format!("{}", t.learning_rate)),
            ("train.weight_decay".into(), format!("{}", t.weight_decay)),
            ("train.warmup_steps".into(), t.warmup_steps.to_string()),
            ("train.epochs".into(), t.epochs.to_string()),
            ("train.batch_size".into(), t.batch_size.to_string()),
            ("train.pair_count".into(), t.pair_count.to_string()),
            ("train.seed".into(), t.seed.to_string()),
            ("train.image_on".into(), t.image_on.to_string()),
            ("train.granularity".into(), t.granularity.to_string()),
            ("train.val_fraction".into(), format!("{}", t.val_fraction)),
            ("train.loss.omega_f".into(), format!("{}", t.loss.omega_f)),
            ("train.loss.omega_d".into(), format!("{}", t.loss.omega_d)),
            ("train.loss.gamma".into(), format!("{}", t.loss.gamma)),
            ("train.loss.alpha".into(), format!("{}", t.loss.alpha)),
            ("train.loss.epsilon".into(), format!("{}", t.loss.epsilon)),
        ];
        out.sort();
        out
    }

    /// Parse a `key = value` body; later lines win, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: lineno + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Render in the same format [`apply_text`] accepts.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.snapshot())?;
        Ok(())
    }

    /// Cross-field checks shared by all commands.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = |m: String| Err(ConfigError::Invalid(m));
        if !self.data.image_size.is_multiple_of(8) || self.data.image_size < 16 {
            return e(format!(
                "data.image_size must be a multiple of 8 and ≥ 16, got {}",
                self.data.image_size
            ));
        }
        if self.data.n_points < 64 {
            return e(format!(
                "data.n_points must be ≥ 64, got {}",
                self.data.n_points
            ));
        }
        if self.model.sa1_points >= self.data.n_points
            || self.model.sa2_points >= self.model.sa1_points
        {
            return e(format!(
                "point hierarchy must shrink: {} → {} → {}",
                self.data.n_points, self.model.sa1_points, self.model.sa2_points
            ));
        }
        if !self.model.c_s.is_multiple_of(self.model.fuse_heads)
            || !self.model.c_l.is_multiple_of(self.model.backbone_heads)
            || !self.model.c_s.is_multiple_of(self.model.decoder_heads)
        {
            return e("channel widths must divide their head counts".into());
        }
        if self.model.interp_k > self.model.sa2_points {
            return e("model.interp_k exceeds sa2_points".into());
        }
        if self.train.learning_rate <= 0.0 {
            return e("train.learning_rate must be positive".into());
        }
        if self.train.pair_count == 0 || self.train.batch_size == 0 {
            return e("train.pair_count and train.batch_size must be ≥ 1".into());
        }
        if !(0.0..0.9).contains(&self.train.val_fraction) {
            return e("train.val_fraction must be in [0, 0.9)".into());
        }
        self.train
            .loss
            .validate()
            .map_err(|err| ConfigError::Invalid(err.to_string()))?;
        if self.data.grid_resolution < 4 {
            return e("data.grid_resolution must be ≥ 4".into());
        }
        Ok(())
    }

    /// Small dimensions for fast tests and the desk-scale experiment runs.
    pub fn desk_small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.n_points = 512;
        cfg.data.image_size = 32;
        cfg.data.n_train = 64;
        cfg.data.n_test = 32;
        cfg.model.c2d = 32;
        cfg.model.c3d = 128;
        cfg.model.c_s = 64;
        cfg.model.c_l = 64;
        cfg.model.n_l = 12;
        cfg.model.backbone_layers = 2;
        cfg.model.backbone_heads = 4;
        cfg.model.sa1_points = 128;
        cfg.model.sa1_k = 16;
        cfg.model.sa1_hidden = 32;
        cfg.model.sa1_radius = 0.25;
        cfg.model.sa2_points = 32;
        cfg.model.sa2_k = 16;
        cfg.model.sa2_hidden = 64;
        cfg.model.sa2_radius = 0.45;
        cfg.model.head_hidden = 64;
        cfg.train.warmup_steps = 20;
        cfg
    }

    /// Configuration used by the gradient-check suites: moderate widths so
    /// the smooth attention/adapter blocks carry their realistic share of
    /// the parameter mass, and a small point hierarchy to keep the probe
    /// forwards fast.
    pub fn grad_check() -> RunConfig {
        let mut cfg = RunConfig::tiny();
        cfg.data.n_points = 96;
        cfg.data.image_size = 16;
        cfg.model.c2d = 16;
        cfg.model.c3d = 32;
        cfg.model.c_s = 64;
        cfg.model.c_l = 64;
        cfg.model.n_l = 8;
        cfg.model.fuse_heads = 4;
        cfg.model.backbone_heads = 4;
        cfg.model.decoder_heads = 4;
        cfg.model.sa1_points = 24;
        cfg.model.sa1_k = 4;
        cfg.model.sa1_radius = 0.35;
        cfg.model.sa1_hidden = 16;
        cfg.model.sa2_points = 8;
        cfg.model.sa2_k = 4;
        cfg.model.sa2_radius = 0.7;
        cfg.model.sa2_hidden = 32;
        cfg.model.head_hidden = 32;
        cfg
    }

    /// Tiny dimensions for gradient probing; every block stays present.
    pub fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.n_points = 64;
        cfg.data.image_size = 16;
        cfg.data.n_train = 8;
        cfg.data.n_test = 4;
        cfg.model.c2d = 8;
        cfg.model.c3d = 16;
        cfg.model.c_s = 16;
        cfg.model.c_l = 16;
        cfg.model.n_l = 6;
        cfg.model.fuse_heads = 2;
        cfg.model.backbone_layers = 2;
        cfg.model.backbone_heads = 2;
        cfg.model.decoder_heads = 2;
        cfg.model.sa1_points = 16;
        cfg.model.sa1_k = 8;
        cfg.model.sa1_hidden = 8;
        cfg.model.sa1_radius = 0.3;
        cfg.model.sa2_points = 8;
        cfg.model.sa2_k = 6;
        cfg.model.sa2_hidden = 16;
        cfg.model.sa2_radius = 0.6;
        cfg.model.head_hidden = 16;
        cfg.train.batch_size = 2;
        cfg.train.warmup_steps = 5;
        cfg
    }
}
