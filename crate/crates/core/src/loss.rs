//! Training losses with analytic gradients: the side learner's scaled-target
//! binary cross entropy and the MSE / Gaussian NLL / Laplacian NLL baselines.
//!
//! Scalar functions return `(loss, gradient)`; [`LossKind::evaluate`] applies
//! one of them to a network output row so losses compose with [`crate::nn`].

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stretch factor used for monocular depth targets.
pub const LAMBDA_DEPTH: f64 = 0.0125;
/// Stretch factor used for optical flow targets.
pub const LAMBDA_FLOW: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// BCE on a logit against `tanh(λ·error)`.
    BceScaled,
    MseRaw,
    GaussianNll,
    LaplacianNll,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::BceScaled,
        LossKind::MseRaw,
        LossKind::GaussianNll,
        LossKind::LaplacianNll,
    ];

    /// Network outputs consumed per sample.
    pub fn output_width(self) -> usize {
        match self {
            LossKind::BceScaled | LossKind::MseRaw => 1,
            LossKind::GaussianNll | LossKind::LaplacianNll => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::BceScaled => "bce_scaled",
            LossKind::MseRaw => "mse_raw",
            LossKind::GaussianNll => "gaussian_nll",
            LossKind::LaplacianNll => "laplacian_nll",
        }
    }

    /// Loss and gradient with respect to `output` for one sample.
    ///
    /// For `BceScaled` the output is a logit and `target` must already be the
    /// scaled error in [0, 1]; for the NLLs the output is `(mu, log_scale)`.
    pub fn evaluate(self, output: &[f64], target: f64, grad: &mut [f64]) -> Result<f64> {
        match self {
            LossKind::BceScaled => {
                let (l, g) = bce_loss(target, output[0])?;
                grad[0] = g;
                Ok(l)
            }
            LossKind::MseRaw => {
                let (l, g) = mse_loss(target, output[0]);
                grad[0] = g;
                Ok(l)
            }
            LossKind::GaussianNll => {
                let r = gaussian_nll(output[0], output[1], target);
                grad[0] = r.d_mu;
                grad[1] = r.d_log_scale;
                Ok(r.loss)
            }
            LossKind::LaplacianNll => {
                let r = laplacian_nll(output[0], output[1], target);
                grad[0] = r.d_mu;
                grad[1] = r.d_log_scale;
                Ok(r.loss)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub kind: LossKind,
}

impl LossConfig {
    pub fn new(lambda: f64, kind: LossKind) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self { lambda, kind })
    }
}

/// `|pred - gt|`, or the Euclidean norm of the difference for vectors.
pub fn natural_error(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "natural error operands",
            expected: gt.len().to_string(),
            actual: pred.len().to_string(),
        });
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        .sqrt())
}

/// Soft clipping of an error into [0, 1): `tanh(λ·l_u)`.
pub fn scale_target(error: f64, lambda: f64) -> f64 {
    (lambda * error).tanh()
}

/// Maps a scaled target back to error units, `atanh(u)/λ`, with `u` clamped
/// to `[0, 1 - 1e-6]`.
pub fn unscale_target(scaled: f64, lambda: f64) -> f64 {
    scaled.clamp(0.0, 1.0 - 1e-6).atanh() / lambda
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross entropy of `sigmoid(logit)` against a soft target, in the
/// overflow-free form `max(z,0) - z·t + ln(1 + e^{-|z|})`.
///
/// The gradient with respect to the logit is `sigmoid(z) - t`.
pub fn bce_loss(target: f64, logit: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!(
            "BCE target must lie in [0, 1], got {target}"
        )));
    }
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    Ok((loss, sigmoid(logit) - target))
}

/// `(output - target)^2` and its derivative in `output`.
pub fn mse_loss(target: f64, output: f64) -> (f64, f64) {
    let d = output - target;
    (d * d, 2.0 * d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllGrad {
    pub loss: f64,
    pub d_mu: f64,
    /// Derivative in the log-scale parameter (log variance or log b).
    pub d_log_scale: f64,
}

/// `½·log_var + (y - mu)^2 / (2·e^{log_var}) + ½·ln 2π`
pub fn gaussian_nll(mu: f64, log_var: f64, y: f64) -> NllGrad {
    let inv_var = (-log_var).exp();
    let r = y - mu;
    NllGrad {
        loss: 0.5 * log_var + 0.5 * r * r * inv_var + 0.5 * (2.0 * PI).ln(),
        d_mu: -r * inv_var,
        d_log_scale: 0.5 - 0.5 * r * r * inv_var,
    }
}

/// `log_b + |y - mu| / e^{log_b} + ln 2`; the subgradient in `mu` is 0 at
/// `y == mu`.
pub fn laplacian_nll(mu: f64, log_b: f64, y: f64) -> NllGrad {
    let inv_b = (-log_b).exp();
    let r = y - mu;
    let sign = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    NllGrad {
        loss: log_b + r.abs() * inv_b + LN_2,
        d_mu: -sign * inv_b,
        d_log_scale: 1.0 - r.abs() * inv_b,
    }
}

/// Batch-mean BCE of logits against raw errors scaled with `lambda`.
pub fn bce_scaled_batch(errors: &[f64], logits: &[f64], lambda: f64) -> Result<f64> {
    if errors.len() != logits.len() || errors.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "batch lengths",
            expected: errors.len().to_string(),
            actual: logits.len().to_string(),
        });
    }
    let mut total = 0.0;
    for (&e, &z) in errors.iter().zip(logits) {
        total += bce_loss(scale_target(e, lambda), z)?.0;
    }
    Ok(total / errors.len() as f64)
}
