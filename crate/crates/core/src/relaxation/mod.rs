//! Continuous relaxation of rule learning.
//!
//! Rule content is encoded as an `H × (|X| + M)` selection matrix whose last
//! `M` columns are dummy "empty" predicates. Each row is sampled as a relaxed
//! K-hot vector from positive weights via Gumbel keys and a successive-softmax
//! top-K; relation types are learned as points on the 4-simplex per
//! predicate pair.

mod objective;
mod soft;
mod topk;

pub use objective::{weights_gradient, ObjectiveGradient, SelectionSample, SoftObjective};
pub use soft::{
    laplace_kernel, soft_intensity, soft_relation, soft_relation_with_grad, soft_static_feature,
    soft_temporal_factor, softmin_with_grad, SoftFeatureContext,
};
pub use topk::{
    gumbel_from_uniform, gumbel_keys, gumbel_noise, keys_with_noise, relaxed_top_k, top_k_indices, RelaxedTopK,
    LOG_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive selection weights `W`, one row per rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionWeights {
    pub rows: Vec<Vec<f64>>,
    pub body_count: usize,
    pub dummies: usize,
    pub k: usize,
}

impl SelectionWeights {
    pub fn new(rows: Vec<Vec<f64>>, body_count: usize, dummies: usize, k: usize) -> Result<Self> {
        let cols = body_count + dummies;
        if k == 0 || k > cols {
            return Err(Error::config("K", format!("{k} must lie in 1..={cols}")));
        }
        for row in &rows {
            if row.len() != cols {
                return Err(Error::config("W", format!("row length {} != {cols}", row.len())));
            }
            if row.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(Error::config("W", "weights must be positive and finite"));
            }
        }
        Ok(SelectionWeights {
            rows,
            body_count,
            dummies,
            k,
        })
    }

    pub fn columns(&self) -> usize {
        self.body_count + self.dummies
    }

    pub fn is_dummy(&self, column: usize) -> bool {
        column >= self.body_count
    }
}

/// Relation-type distributions `(α_b, α_e, α_a, α_n)` for every rule and
/// every unordered body pair `u < v`; `α_b` means `u` precedes `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSimplices {
    pub body_count: usize,
    pub rules: Vec<Vec<[f64; 4]>>,
}

pub fn pair_count(body_count: usize) -> usize {
    body_count * body_count.saturating_sub(1) / 2
}

/// Position of the unordered pair `{u, v}` in the triangular pair layout.
pub fn pair_index(body_count: usize, u: usize, v: usize) -> usize {
    let (u, v) = if u < v { (u, v) } else { (v, u) };
    debug_assert!(v < body_count && u != v);
    u * (2 * body_count - u - 1) / 2 + (v - u - 1)
}

impl RelationSimplices {
    pub fn uniform(rule_count: usize, body_count: usize) -> Self {
        RelationSimplices {
            body_count,
            rules: vec![vec![[0.25; 4]; pair_count(body_count)]; rule_count],
        }
    }

    pub fn zeros_like(&self) -> Self {
        RelationSimplices {
            body_count: self.body_count,
            rules: vec![vec![[0.0; 4]; pair_count(self.body_count)]; self.rules.len()],
        }
    }

    pub fn get(&self, rule: usize, u: usize, v: usize) -> &[f64; 4] {
        &self.rules[rule][pair_index(self.body_count, u, v)]
    }

    pub fn get_mut(&mut self, rule: usize, u: usize, v: usize) -> &mut [f64; 4] {
        let idx = pair_index(self.body_count, u, v);
        &mut self.rules[rule][idx]
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.rules {
            for a in row {
                let s: f64 = a.iter().sum();
                if a.iter().any(|x| !(0.0..=1.0).contains(x)) || (s - 1.0).abs() > 1e-12 {
                    return Err(Error::Numerical(format!("relation simplex {a:?} off the simplex")));
                }
            }
        }
        Ok(())
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64; 4]) -> [f64; 4] {
    let mut u = *v;
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut out = v.map(|x| (x - theta).max(0.0));
    // Renormalize away rounding so the sum is 1 to machine precision.
    let s: f64 = out.iter().sum();
    for x in &mut out {
        *x /= s;
    }
    out
}
