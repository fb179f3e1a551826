//! Training objective: a weighted sum of focal loss and dice loss over
//! point-wise heatmaps.
//!
//! Targets are soft (probabilities in [0,1]), so the focal term uses the
//! soft-label generalization and the dice term the squared-denominator
//! form. Plain-array implementations live next to the autodiff versions;
//! the two must agree, and unit tests pin that.

use crate::tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: predictions {pred:?} vs targets {target:?}")]
    ShapeMismatch {
        pred: Vec<usize>,
        target: Vec<usize>,
    },
    #[error("loss weights must be nonnegative: omega_f={omega_f}, omega_d={omega_d}")]
    NegativeWeight { omega_f: f64, omega_d: f64 },
}

/// Weights and shape parameters of the objective.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the focal term.
    pub omega_f: f64,
    /// Weight of the dice term.
    pub omega_d: f64,
    /// Focal exponent.
    pub gamma: f64,
    /// Focal class balance.
    pub alpha: f64,
    /// Dice smoothing constant.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            omega_f: 1.0,
            omega_d: 1.0,
            gamma: 2.0,
            alpha: 0.25,
            epsilon: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.omega_f < 0.0 || self.omega_d < 0.0 {
            return Err(LossError::NegativeWeight {
                omega_f: self.omega_f,
                omega_d: self.omega_d,
            });
        }
        Ok(())
    }
}

pub const PROB_CLAMP: f64 = 1e-7;

fn check_shapes(p: &Tensor, y: &Tensor) -> Result<(usize, usize), LossError> {
    if p.shape() != y.shape() {
        return Err(LossError::ShapeMismatch {
            pred: p.shape().to_vec(),
            target: y.shape().to_vec(),
        });
    }
    // accept (B,N) or (B,N,1)
    let (b, n) = match *p.shape() {
        [b, n] => (b, n),
        [b, n, 1] => (b, n),
        ref s => {
            return Err(LossError::ShapeMismatch {
                pred: s.to_vec(),
                target: y.shape().to_vec(),
            })
        }
    };
    Ok((b, n))
}

/// Soft-target focal loss, averaged over every point in the batch:
/// −[ α·y·(1−p)^γ·log p + (1−α)·(1−y)·p^γ·log(1−p) ].
pub fn focal_loss(p: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64, LossError> {
    check_shapes(p, y)?;
    let mut acc = 0.0;
    for (&pi, &yi) in p.data().iter().zip(y.data()) {
        let pc = pi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        acc -= cfg.alpha * yi * (1.0 - pc).powf(cfg.gamma) * pc.ln()
            + (1.0 - cfg.alpha) * (1.0 - yi) * pc.powf(cfg.gamma) * (1.0 - pc).ln();
    }
    Ok(acc / p.numel() as f64)
}

/// Soft dice loss with squared denominator, per sample then averaged:
/// 1 − (2·Σpy + ε) / (Σp² + Σy² + ε).
pub fn dice_loss(p: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64, LossError> {
    let (b, n) = check_shapes(p, y)?;
    let pd = p.data();
    let yd = y.data();
    let mut acc = 0.0;
    for bi in 0..b {
        let ps = &pd[bi * n..(bi + 1) * n];
        let ys = &yd[bi * n..(bi + 1) * n];
        let inter: f64 = ps.iter().zip(ys).map(|(a, b)| a * b).sum();
        let pp: f64 = ps.iter().map(|a| a * a).sum();
        let yy: f64 = ys.iter().map(|a| a * a).sum();
        acc += 1.0 - (2.0 * inter + cfg.epsilon) / (pp + yy + cfg.epsilon);
    }
    Ok(acc / b as f64)
}

/// ω_f·L_f + ω_d·L_d.
pub fn total_loss(p: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<f64, LossError> {
    cfg.validate()?;
    Ok(cfg.omega_f * focal_loss(p, y, cfg)? + cfg.omega_d * dice_loss(p, y, cfg)?)
}

/// Autodiff focal loss; forward value equals [`focal_loss`].
pub fn focal_loss_var(p: &Var, y: &Tensor, cfg: &LossConfig) -> Var {
    let yc = Var::constant(y.clone());
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let one_m_p = pc.rsub_scalar(1.0);
    let pos = yc
        .mul(&one_m_p.powf(cfg.gamma))
        .mul(&pc.ln())
        .mul_scalar(cfg.alpha);
    let neg = yc
        .rsub_scalar(1.0)
        .mul(&pc.powf(cfg.gamma))
        .mul(&one_m_p.ln())
        .mul_scalar(1.0 - cfg.alpha);
    pos.add(&neg).neg().mean_all()
}

/// Autodiff dice loss; forward value equals [`dice_loss`].
pub fn dice_loss_var(p: &Var, y: &Tensor, cfg: &LossConfig) -> Var {
    let (b, n) = match *p.shape() {
        [b, n] => (b, n),
        [b, n, 1] => (b, n),
        ref s => panic!("dice_loss_var: unsupported shape {s:?}"),
    };
    let p2 = p.reshape(&[b, n]);
    let yc = Var::constant(y.reshaped(&[b, n]));
    let inter = p2.mul(&yc).row_sums();
    let pp = p2.mul(&p2).row_sums();
    let yy = yc.mul(&yc).row_sums();
    let num = inter.mul_scalar(2.0).add_scalar(cfg.epsilon);
    let den = pp.add(&yy).add_scalar(cfg.epsilon);
    num.div(&den).rsub_scalar(1.0).mean_all()
}

/// Autodiff total loss; forward value equals [`total_loss`].
pub fn total_loss_var(p: &Var, y: &Tensor, cfg: &LossConfig) -> Var {
    cfg.validate()
        .expect("loss weights validated at config load");
    let f = focal_loss_var(p, y, cfg).mul_scalar(cfg.omega_f);
    let d = dice_loss_var(p, y, cfg).mul_scalar(cfg.omega_d);
    f.add(&d)
}
