//! Pooled single-task linear baselines: L2-regularized logistic regression
//! trained by accelerated full-batch gradient descent, and a linear-kernel
//! SVM trained by deterministic subgradient descent with iterate averaging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training data must contain both classes")]
    SingleClassData,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite loss: training diverged")]
    NonFiniteLoss,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Logistic,
    Hinge,
}

/// A trained linear decision rule `sign(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub kind: LinearKind,
}

/// Iteration budget and stopping tolerance for both trainers. The seed is
/// unused by the default zero initialization but kept so a randomized init
/// would stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub max_iters: usize,
    pub grad_tolerance: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            grad_tolerance: 1e-6,
            seed: 0,
        }
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<usize, BaselineError> {
    if x.len() < 2 {
        return Err(BaselineError::TooFewSamples(x.len()));
    }
    if x.len() != y.len() {
        return Err(BaselineError::InvalidInput(format!(
            "{} rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(BaselineError::InvalidInput(
            "rows must share one positive dimension".into(),
        ));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(BaselineError::InvalidInput("labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(BaselineError::SingleClassData);
    }
    Ok(dim)
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Mean BCE of `sigmoid(w.x + b)` plus `l2/2 ||w||^2` (bias unregularized).
pub fn logistic_objective(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], l2: f64) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| crate::nn::bce_loss(crate::nn::sigmoid(dot(w, xi) + b), yi))
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * dot(w, w)
}

/// Gradient of [`logistic_objective`] with respect to `(w, b)`.
pub fn logistic_gradient(
    w: &[f64],
    b: f64,
    x: &[Vec<f64>],
    y: &[f64],
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let err = crate::nn::sigmoid(dot(w, xi) + b) - yi;
        for (g, &v) in gw.iter_mut().zip(xi) {
            *g += err * v / n;
        }
        gb += err / n;
    }
    for (g, &v) in gw.iter_mut().zip(w) {
        *g += l2 * v;
    }
    (gw, gb)
}

/// Fits logistic regression by Nesterov-accelerated full-batch gradient
/// descent from zero initialization, stopping at the gradient-norm
/// tolerance or the iteration cap. Deterministic.
pub fn train_logistic(
    x: &[Vec<f64>],
    y: &[f64],
    l2: f64,
    cfg: &BaselineConfig,
) -> Result<LinearModel, BaselineError> {
    let dim = check_inputs(x, y)?;
    if l2 < 0.0 {
        return Err(BaselineError::InvalidInput("l2 must be nonnegative".into()));
    }

    // Smoothness bound: sigmoid curvature <= 1/4 on the bias-augmented
    // rows, plus the ridge term.
    let max_sq_norm = x.iter().map(|r| dot(r, r) + 1.0).fold(0.0f64, f64::max);
    let step = 1.0 / (0.25 * max_sq_norm + l2);

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut zw = w.clone();
    let mut zb = b;
    let mut momentum = 1.0f64;
    let mut prev_obj = f64::INFINITY;

    for _ in 0..cfg.max_iters {
        let (gw, gb) = logistic_gradient(&zw, zb, x, y, l2);
        let grad_norm = (dot(&gw, &gw) + gb * gb).sqrt();
        if !grad_norm.is_finite() {
            return Err(BaselineError::NonFiniteLoss);
        }
        if grad_norm <= cfg.grad_tolerance {
            w = zw;
            b = zb;
            break;
        }

        let new_w: Vec<f64> = zw.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
        let new_b = zb - step * gb;

        let obj = logistic_objective(&new_w, new_b, x, y, l2);
        if !obj.is_finite() {
            return Err(BaselineError::NonFiniteLoss);
        }
        if obj > prev_obj {
            // adaptive restart: drop the momentum when it overshoots
            momentum = 1.0;
            zw = new_w.clone();
            zb = new_b;
        } else {
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            zw = new_w
                .iter()
                .zip(&w)
                .map(|(nw, ow)| nw + beta * (nw - ow))
                .collect();
            zb = new_b + beta * (new_b - b);
            momentum = next_momentum;
        }
        prev_obj = obj;
        w = new_w;
        b = new_b;
    }

    Ok(LinearModel {
        weights: w,
        bias: b,
        kind: LinearKind::Logistic,
    })
}

/// Objective `0.5 ||w||^2 + c * mean hinge(1 - y_pm (w.x + b))` with labels
/// mapped to -1/+1.
pub fn svm_objective(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let n = x.len() as f64;
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let ypm = 2.0 * yi - 1.0;
            (1.0 - ypm * (dot(w, xi) + b)).max(0.0)
        })
        .sum::<f64>()
        / n;
    0.5 * dot(w, w) + c * hinge
}

/// Fits a linear SVM by deterministic full-batch subgradient descent with
/// 1/t steps, returning the average of the second half of the iterates.
pub fn train_linear_svm(
    x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    cfg: &BaselineConfig,
) -> Result<LinearModel, BaselineError> {
    let dim = check_inputs(x, y)?;
    if c <= 0.0 {
        return Err(BaselineError::InvalidInput("c must be positive".into()));
    }

    let n = x.len() as f64;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg_w = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut averaged = 0usize;
    let iters = cfg.max_iters.clamp(100, 5_000);
    let tail_start = iters / 2;

    for t in 0..iters {
        let mut gw = w.clone(); // gradient of the 0.5 ||w||^2 term
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let ypm = 2.0 * yi - 1.0;
            if ypm * (dot(&w, xi) + b) < 1.0 {
                for (g, &v) in gw.iter_mut().zip(xi) {
                    *g -= c * ypm * v / n;
                }
                gb -= c * ypm / n;
            }
        }
        let step = 1.0 / (t + 1) as f64;
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= step * g;
        }
        b -= step * gb;
        if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(BaselineError::NonFiniteLoss);
        }
        if t >= tail_start {
            for (a, &v) in avg_w.iter_mut().zip(&w) {
                *a += v;
            }
            avg_b += b;
            averaged += 1;
        }
    }

    let scale = 1.0 / averaged as f64;
    Ok(LinearModel {
        weights: avg_w.iter().map(|v| v * scale).collect(),
        bias: avg_b * scale,
        kind: LinearKind::Hinge,
    })
}

/// Binary prediction: class 1 when the score is nonnegative. The logistic
/// `p >= 0.5` rule and the hinge sign rule coincide on the score, with
/// ties going to class 1 in both.
pub fn predict_linear(model: &LinearModel, x: &[f64]) -> Result<f64, BaselineError> {
    if x.len() != model.weights.len() {
        return Err(BaselineError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    Ok(if dot(&model.weights, x) + model.bias >= 0.0 {
        1.0
    } else {
        0.0
    })
}

/// Accuracy of a linear model over a labelled matrix.
pub fn linear_accuracy(
    model: &LinearModel,
    x: &[Vec<f64>],
    y: &[f64],
) -> Result<f64, BaselineError> {
    if x.is_empty() {
        return Err(BaselineError::TooFewSamples(0));
    }
    let mut correct = 0usize;
    for (xi, &yi) in x.iter().zip(y) {
        if predict_linear(model, xi)? == yi {
            correct += 1;
        }
    }
    Ok(correct as f64 / x.len() as f64)
}
