//! Expected complete-data log-likelihood under the soft intensity, and its
//! gradient.
//!
//! The objective is
//!
//! ```text
//! Σ_i Σ_z Q_i(z) [ln π_z + ln λ_soft(t_i | z) - ∫ λ_soft(s | z) ds]
//! ```
//!
//! integrated exactly over the piecewise-constant history grid. Gradients are
//! accumulated in closed form per segment; the selection-weight gradient is
//! chained through the relaxed top-K backward pass with the Gumbel draw held
//! fixed.

use rand::Rng;
use rayon::prelude::*;

use super::soft::{laplace_kernel, soft_relation_with_grad, softmin_with_grad, SoftFeatureContext};
use super::topk::{gumbel_noise, keys_with_noise, RelaxedTopK};
use super::{RelationSimplices, SelectionWeights};
use crate::error::{Error, Result};
use crate::rule_logic::PreparedCorpus;

const CHUNK: usize = 128;

/// One relaxed selection matrix drawn from `W`, with the forward passes kept
/// so the same draw can be reused for the backward pass.
#[derive(Debug, Clone)]
pub struct SelectionSample {
    pub noise: Vec<Vec<f64>>,
    pub forwards: Vec<RelaxedTopK>,
    pub a_tilde: Vec<Vec<f64>>,
}

impl SelectionSample {
    pub fn from_noise(weights: &SelectionWeights, noise: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        let mut forwards = Vec::with_capacity(weights.rows.len());
        for (row, g) in weights.rows.iter().zip(&noise) {
            forwards.push(RelaxedTopK::forward(&keys_with_noise(row, g), weights.k, tau)?);
        }
        let a_tilde = forwards.iter().map(|f| f.output().to_vec()).collect();
        Ok(SelectionSample {
            noise,
            forwards,
            a_tilde,
        })
    }

    pub fn draw<R: Rng + ?Sized>(weights: &SelectionWeights, tau: f64, rng: &mut R) -> Result<Self> {
        let noise = weights.rows.iter().map(|r| gumbel_noise(r.len(), rng)).collect();
        Self::from_noise(weights, noise, tau)
    }

    /// Noise-free relaxation (keys are `ln w`).
    pub fn expectation(weights: &SelectionWeights, tau: f64) -> Result<Self> {
        let noise = weights.rows.iter().map(|r| vec![0.0; r.len()]).collect();
        Self::from_noise(weights, noise, tau)
    }
}

/// Chains `∂L/∂Ã` through the top-K relaxation and `r = g + ln w` to `∂L/∂W`.
pub fn weights_gradient(weights: &SelectionWeights, sample: &SelectionSample, grad_a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    weights
        .rows
        .iter()
        .zip(&sample.forwards)
        .zip(grad_a)
        .map(|((row, fwd), ga)| fwd.backward(ga).iter().zip(row).map(|(gk, w)| gk / w).collect())
        .collect()
}

/// Inputs of the soft objective. `a_tilde` rows have `body_count + M` columns.
#[derive(Debug, Clone, Copy)]
pub struct SoftObjective<'a> {
    pub corpus: &'a PreparedCorpus,
    /// Responsibilities, one row of length `H + 1` per grid of `corpus`.
    pub posterior: &'a [Vec<f64>],
    pub b0: f64,
    pub gamma: &'a [f64],
    pub pi: &'a [f64],
    pub k: usize,
    pub alphas: &'a RelationSimplices,
    /// Body pairs `(u, v)`, `u < v`, whose relations enter each rule's temporal factor.
    pub pairs: &'a [Vec<(usize, usize)>],
    /// When false the temporal factor is fixed at 1.
    pub use_relations: bool,
    pub ctx: SoftFeatureContext,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub a_tilde: Vec<Vec<f64>>,
    pub alpha: RelationSimplices,
    pub b0: f64,
    pub gamma: Vec<f64>,
}

impl ObjectiveGradient {
    fn zeros(rules: usize, cols: usize, alphas: &RelationSimplices) -> Self {
        ObjectiveGradient {
            value: 0.0,
            a_tilde: vec![vec![0.0; cols]; rules],
            alpha: alphas.zeros_like(),
            b0: 0.0,
            gamma: vec![0.0; rules],
        }
    }

    fn add(&mut self, other: &ObjectiveGradient) {
        self.value += other.value;
        self.b0 += other.b0;
        for (a, b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += b;
        }
        for (ra, rb) in self.a_tilde.iter_mut().zip(&other.a_tilde) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        for (ra, rb) in self.alpha.rules.iter_mut().zip(&other.alpha.rules) {
            for (a, b) in ra.iter_mut().zip(rb) {
                for k in 0..4 {
                    a[k] += b[k];
                }
            }
        }
    }

    /// First non-finite entry, by parameter name.
    pub fn non_finite(&self) -> Option<String> {
        if !self.b0.is_finite() {
            return Some("b0".into());
        }
        if let Some(h) = self.gamma.iter().position(|g| !g.is_finite()) {
            return Some(format!("gamma[{h}]"));
        }
        for (h, row) in self.a_tilde.iter().enumerate() {
            if let Some(j) = row.iter().position(|g| !g.is_finite()) {
                return Some(format!("A[{h}][{j}]"));
            }
        }
        for (h, row) in self.alpha.rules.iter().enumerate() {
            if let Some(p) = row.iter().position(|a| a.iter().any(|g| !g.is_finite())) {
                return Some(format!("alpha[{h}][{p}]"));
            }
        }
        None
    }
}

impl SoftObjective<'_> {
    pub fn rule_count(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, a_tilde: &[Vec<f64>]) -> Result<()> {
        self.check_shapes(a_tilde)?;
        if self.posterior.len() != self.corpus.event_count() {
            return Err(Error::config("Q", "posterior rows do not match events"));
        }
        Ok(())
    }

    fn check_shapes(&self, a_tilde: &[Vec<f64>]) -> Result<()> {
        let h = self.rule_count();
        if self.pi.len() != h + 1 || a_tilde.len() != h || self.pairs.len() != h || self.alphas.rules.len() != h {
            return Err(Error::config("H", "inconsistent rule counts in soft objective"));
        }
        Ok(())
    }

    pub fn value(&self, a_tilde: &[Vec<f64>]) -> Result<f64> {
        Ok(self.evaluate(a_tilde, false)?.value)
    }

    pub fn value_and_gradient(&self, a_tilde: &[Vec<f64>]) -> Result<ObjectiveGradient> {
        self.evaluate(a_tilde, true)
    }

    fn evaluate(&self, a_tilde: &[Vec<f64>], want_grad: bool) -> Result<ObjectiveGradient> {
        self.check(a_tilde)?;
        let rules = self.rule_count();
        let cols = a_tilde.first().map(Vec::len).unwrap_or(self.corpus.body_count);
        let n = self.corpus.event_count();
        let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect();
        let partials: Vec<ObjectiveGradient> = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut acc = ObjectiveGradient::zeros(rules, cols, self.alphas);
                let mut scratch = Scratch::default();
                for e in lo..hi {
                    self.accumulate_event(e, a_tilde, want_grad, &mut acc, &mut scratch);
                }
                acc
            })
            .collect();
        let mut total = ObjectiveGradient::zeros(rules, cols, self.alphas);
        for p in &partials {
            total.add(p);
        }
        if total.value.is_nan() {
            return Err(Error::Numerical("soft objective is NaN".into()));
        }
        if want_grad {
            if let Some(name) = total.non_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for {name}")));
            }
        }
        Ok(total)
    }

    fn accumulate_event(&self, e: usize, a_tilde: &[Vec<f64>], want_grad: bool, acc: &mut ObjectiveGradient, scratch: &mut Scratch) {
        let grid = &self.corpus.grids[e];
        let q = &self.posterior[e];
        let dt = grid.end - grid.start;
        let body = self.corpus.body_count;
        let beta = self.ctx.kernel_bandwidth;

        if q[0] > 0.0 {
            acc.value += q[0] * (self.pi[0].ln() + self.b0.ln() - self.b0 * dt);
            if want_grad {
                acc.b0 += q[0] * (1.0 / self.b0 - dt);
            }
        }
        let last_seg = grid.segments.len() - 1;
        for h in 0..self.rule_count() {
            let qh = q[h + 1];
            if qh <= 0.0 {
                continue;
            }
            let row = &a_tilde[h];
            let dummy_mass: f64 = row[body..].iter().sum();
            let gamma = self.gamma[h];
            let pairs = &self.pairs[h];
            let mut integral = 0.0;
            let mut lam_event = 0.0;
            for (s, seg) in grid.segments.iter().enumerate() {
                let mut mass = dummy_mass;
                for j in 0..body {
                    if seg.last[j].is_some() {
                        mass += row[j];
                    }
                }
                let (kern, dkern) = laplace_kernel(mass, self.k, beta);
                let temporal = if self.use_relations && !pairs.is_empty() {
                    scratch.scores.clear();
                    scratch.score_grads.clear();
                    for &(u, v) in pairs {
                        let (sc, g) =
                            soft_relation_with_grad(self.alphas.get(h, u, v), seg.last[u], seg.last[v], self.delta);
                        scratch.scores.push(sc);
                        scratch.score_grads.push(g);
                    }
                    let (t, dt_scores) = softmin_with_grad(&scratch.scores, self.ctx.softmin_sharpness);
                    scratch.dt = dt_scores;
                    t
                } else {
                    1.0
                };
                let lam = self.b0 + gamma * kern * temporal;
                integral += seg.length * lam;
                if s == last_seg {
                    lam_event = lam;
                }
                if !want_grad {
                    continue;
                }
                // ∂/∂λ of this segment's contribution.
                let mut c = -qh * seg.length;
                if s == last_seg {
                    c += qh / lam;
                }
                acc.b0 += c;
                acc.gamma[h] += c * kern * temporal;
                let ca = c * gamma * temporal * dkern;
                let ga = &mut acc.a_tilde[h];
                for j in 0..body {
                    if seg.last[j].is_some() {
                        ga[j] += ca;
                    }
                }
                for g in &mut ga[body..] {
                    *g += ca;
                }
                if self.use_relations && !pairs.is_empty() {
                    let ct = c * gamma * kern;
                    for (p, &(u, v)) in pairs.iter().enumerate() {
                        let w = ct * scratch.dt[p];
                        let slot = acc.alpha.get_mut(h, u, v);
                        for k in 0..4 {
                            slot[k] += w * scratch.score_grads[p][k];
                        }
                    }
                }
            }
            acc.value += qh * (self.pi[h + 1].ln() + lam_event.ln() - integral);
        }
    }
}

impl SoftObjective<'_> {
    /// Soft-model log joints `ln π_z + ln λ(t_i | z) - ∫ λ(s | z) ds` for every event.
    /// `posterior` is not read.
    pub fn event_log_joints(&self, a_tilde: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_shapes(a_tilde)?;
        let rows: Vec<Vec<f64>> = self
            .corpus
            .grids
            .par_iter()
            .map(|grid| {
                let dt = grid.end - grid.start;
                let mut row = Vec::with_capacity(self.rule_count() + 1);
                row.push(self.pi[0].ln() + self.b0.ln() - self.b0 * dt);
                let mut scores = Vec::new();
                for h in 0..self.rule_count() {
                    let (lam_event, integral) = self.rule_forward(grid, h, &a_tilde[h], &mut scores);
                    row.push(self.pi[h + 1].ln() + lam_event.ln() - integral);
                }
                row
            })
            .collect();
        if rows.iter().flatten().any(|x| x.is_nan()) {
            return Err(Error::Numerical("soft log joint is NaN".into()));
        }
        Ok(rows)
    }

    fn rule_forward(&self, grid: &crate::rule_logic::IntervalGrid, h: usize, row: &[f64], scores: &mut Vec<f64>) -> (f64, f64) {
        let body = self.corpus.body_count;
        let dummy_mass: f64 = row[body..].iter().sum();
        let pairs = &self.pairs[h];
        let mut integral = 0.0;
        let mut lam = self.b0;
        for seg in &grid.segments {
            let mut mass = dummy_mass;
            for j in 0..body {
                if seg.last[j].is_some() {
                    mass += row[j];
                }
            }
            let kern = laplace_kernel(mass, self.k, self.ctx.kernel_bandwidth).0;
            let temporal = if self.use_relations && !pairs.is_empty() {
                scores.clear();
                for &(u, v) in pairs {
                    scores.push(soft_relation_with_grad(self.alphas.get(h, u, v), seg.last[u], seg.last[v], self.delta).0);
                }
                softmin_with_grad(scores, self.ctx.softmin_sharpness).0
            } else {
                1.0
            };
            lam = self.b0 + self.gamma[h] * kern * temporal;
            integral += seg.length * lam;
        }
        (lam, integral)
    }
}

#[derive(Default)]
struct Scratch {
    scores: Vec<f64>,
    score_grads: Vec<[f64; 4]>,
    dt: Vec<f64>,
}
