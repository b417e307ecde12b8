//! Differentiable stand-ins for the boolean rule feature.
//!
//! The static part of a rule is scored with a Laplace kernel centred at `K`
//! on how much selection mass sits on already-occurred predicates; each
//! pairwise temporal relation is scored by a softmax over the four
//! α-weighted relation indicators, and a rule's relation scores are pooled
//! with a softmin.

use serde::{Deserialize, Serialize};

use crate::rule_logic::{ground_relation, RelationType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftFeatureContext {
    /// Laplace-kernel bandwidth β.
    pub kernel_bandwidth: f64,
    /// Softmin sharpness s.
    pub softmin_sharpness: f64,
    /// Relaxed top-K temperature τ.
    pub temperature: f64,
}

impl Default for SoftFeatureContext {
    fn default() -> Self {
        SoftFeatureContext {
            kernel_bandwidth: 2.0,
            softmin_sharpness: 10.0,
            temperature: 1.0,
        }
    }
}

/// `exp(-β |Σ_j X_j ã_j - K|)` and its gradient factor `∂/∂(Σ_j X_j ã_j)`.
///
/// `grounded[j]` is `X_j`; callers pass `true` for dummy columns.
pub fn laplace_kernel(mass: f64, k: usize, beta: f64) -> (f64, f64) {
    let d = mass - k as f64;
    let value = (-beta * d.abs()).exp();
    let sign = if d > 0.0 { 1.0 } else { -1.0 };
    (value, -beta * sign * value)
}

/// Soft static feature of a relaxed selection row.
pub fn soft_static_feature(a_row: &[f64], grounded: &[bool], k: usize, ctx: &SoftFeatureContext) -> f64 {
    let mass: f64 = a_row.iter().zip(grounded).filter(|(_, g)| **g).map(|(a, _)| a).sum();
    laplace_kernel(mass, k, ctx.kernel_bandwidth).0
}

fn relation_indicators(t_u: Option<f64>, t_v: Option<f64>, delta: f64) -> [f64; 3] {
    match (t_u, t_v) {
        (Some(u), Some(v)) => [
            ground_relation(RelationType::Before, u, v, delta) as u8 as f64,
            ground_relation(RelationType::Equal, u, v, delta) as u8 as f64,
            ground_relation(RelationType::After, u, v, delta) as u8 as f64,
        ],
        _ => [0.0; 3],
    }
}

/// Soft relation score and its gradient with respect to `alpha`.
///
/// The four scores are `α_b R_b, α_e R_e, α_a R_a, α_n (1 - α_b R_b - α_e R_e - α_a R_a)`;
/// the returned value is their softmax-weighted mean `Σ_k p_k s_k`.
/// An ungrounded operand leaves only the `None` indicator set.
pub fn soft_relation_with_grad(alpha: &[f64; 4], t_u: Option<f64>, t_v: Option<f64>, delta: f64) -> (f64, [f64; 4]) {
    let r = relation_indicators(t_u, t_v, delta);
    let active = alpha[0] * r[0] + alpha[1] * r[1] + alpha[2] * r[2];
    let s = [alpha[0] * r[0], alpha[1] * r[1], alpha[2] * r[2], alpha[3] * (1.0 - active)];
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; 4] = [(s[0] - m).exp(), (s[1] - m).exp(), (s[2] - m).exp(), (s[3] - m).exp()];
    let z: f64 = e.iter().sum();
    let p = [e[0] / z, e[1] / z, e[2] / z, e[3] / z];
    let value: f64 = p.iter().zip(&s).map(|(pk, sk)| pk * sk).sum();
    // ∂value/∂s_k = p_k (1 + s_k - value)
    let ds: [f64; 4] = std::array::from_fn(|k| p[k] * (1.0 + s[k] - value));
    let mut grad = [0.0; 4];
    for k in 0..3 {
        grad[k] = ds[k] * r[k] - ds[3] * alpha[3] * r[k];
    }
    grad[3] = ds[3] * (1.0 - active);
    (value, grad)
}

pub fn soft_relation(alpha: &[f64; 4], t_u: f64, t_v: f64, delta: f64) -> f64 {
    soft_relation_with_grad(alpha, Some(t_u), Some(t_v), delta).0
}

/// Softmin pooling `Σ x_i e^{-s x_i} / Σ e^{-s x_i}` and `∂/∂x_i`.
/// An empty input pools to 1.
pub fn softmin_with_grad(scores: &[f64], sharpness: f64) -> (f64, Vec<f64>) {
    if scores.is_empty() {
        return (1.0, Vec::new());
    }
    let m = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = scores.iter().map(|x| (-sharpness * (x - m)).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|x| x / z).collect();
    let value: f64 = w.iter().zip(scores).map(|(wi, xi)| wi * xi).sum();
    let grad = w
        .iter()
        .zip(scores)
        .map(|(wi, xi)| wi * (1.0 - sharpness * (xi - value)))
        .collect();
    (value, grad)
}

/// Rule-level temporal factor from its pairwise relation scores.
pub fn soft_temporal_factor(pair_scores: &[f64], ctx: &SoftFeatureContext) -> f64 {
    softmin_with_grad(pair_scores, ctx.softmin_sharpness).0
}

/// Soft intensity `b0 + γ_z K_z T_z` (`b0` alone for `z = 0`).
pub fn soft_intensity(b0: f64, gamma: f64, kernel: f64, temporal: f64, z: usize) -> f64 {
    if z == 0 {
        b0
    } else {
        b0 + gamma * kernel * temporal
    }
}
