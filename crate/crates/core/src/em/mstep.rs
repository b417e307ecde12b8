//! M-step updates for the continuous parameters and the rule relaxation.

use rand::Rng;
use rayon::prelude::*;

use super::config::{anneal_tau, TrainConfig};
use super::estep::{FeatureCache, Posterior};
use crate::error::{Error, Result};
use crate::relaxation::{
    project_to_simplex, top_k_indices, weights_gradient, ObjectiveGradient, RelationSimplices, SelectionSample, SelectionWeights,
    SoftObjective,
};
use crate::rule_logic::{HardParams, PreparedCorpus, RuleSet};

/// Responsibility-weighted counts and exposures per component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    /// `Σ_i Q_i(z)`.
    pub counts: Vec<f64>,
    /// `Σ_i Q_i(z) ∫ φ_z` (`∫ 1` for the spontaneous component).
    pub exposures: Vec<f64>,
}

impl ComponentStats {
    pub fn collect(corpus: &PreparedCorpus, q: &Posterior, rules: &RuleSet, delta: f64) -> Self {
        let comps = rules.len() + 1;
        let per_event: Vec<(Vec<f64>, Vec<f64>)> = corpus
            .grids
            .par_iter()
            .zip(&q.rows)
            .map(|(g, row)| {
                let mut c = vec![0.0; comps];
                let mut x = vec![0.0; comps];
                c[0] = row[0];
                x[0] = row[0] * (g.end - g.start);
                for (h, rule) in rules.iter().enumerate() {
                    let qh = row[h + 1];
                    if qh > 0.0 {
                        c[h + 1] = qh;
                        x[h + 1] = qh * g.feature_integral(rule, delta).0;
                    }
                }
                (c, x)
            })
            .collect();
        let mut counts = vec![0.0; comps];
        let mut exposures = vec![0.0; comps];
        for (c, x) in per_event {
            for z in 0..comps {
                counts[z] += c[z];
                exposures[z] += x[z];
            }
        }
        ComponentStats { counts, exposures }
    }

    pub fn from_cache(cache: &FeatureCache, q: &Posterior) -> Self {
        let comps = q.components();
        let mut counts = vec![0.0; comps];
        let mut exposures = vec![0.0; comps];
        for (e, row) in q.rows.iter().enumerate() {
            counts[0] += row[0];
            exposures[0] += row[0] * cache.duration[e];
            for h in 1..comps {
                if row[h] > 0.0 {
                    counts[h] += row[h];
                    exposures[h] += row[h] * cache.exposure[e][h - 1];
                }
            }
        }
        ComponentStats { counts, exposures }
    }

    /// Expected complete-data log-likelihood terms that depend on `b0` and `γ`.
    pub fn objective(&self, b0: f64, gamma: &[f64]) -> f64 {
        let mut total = self.counts[0] * b0.ln() - b0 * self.exposures[0];
        for (h, g) in gamma.iter().enumerate() {
            if self.counts[h + 1] > 0.0 {
                total += self.counts[h + 1] * g.ln() - g * self.exposures[h + 1];
            }
        }
        total
    }
}

fn ascend_log_rate(count: f64, exposure: f64, rate: f64, steps: usize) -> f64 {
    if count <= 0.0 {
        return rate;
    }
    let f = |x: f64| count * x - x.exp() * exposure;
    let mut x = rate.ln();
    let mut fx = f(x);
    let mut eta = 1.0;
    for _ in 0..steps {
        let grad = count - x.exp() * exposure;
        if grad.abs() <= 1e-13 * count {
            break;
        }
        loop {
            let step = (eta * grad / count).clamp(-1.0, 1.0);
            let cand = x + step;
            let fc = f(cand);
            if fc >= fx {
                x = cand;
                fx = fc;
                break;
            }
            eta *= 0.5;
            if eta < 1e-12 {
                return x.exp();
            }
        }
    }
    x.exp()
}

/// Gradient ascent on `b0` and `γ` in log-parameterization against the
/// hard expected complete-data log-likelihood for the current rules.
/// Returns the updated parameters and the objective after each step.
pub fn m_step_continuous(stats: &ComponentStats, params: &HardParams, steps: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut trace = vec![stats.objective(params.b0, &params.gamma)];
    let mut b0 = params.b0;
    let mut gamma = params.gamma.clone();
    for _ in 0..steps {
        b0 = ascend_log_rate(stats.counts[0], stats.exposures[0], b0, 1);
        for (h, g) in gamma.iter_mut().enumerate() {
            *g = ascend_log_rate(stats.counts[h + 1], stats.exposures[h + 1], *g, 1);
        }
        let value = stats.objective(b0, &gamma);
        if !value.is_finite() {
            return Err(Error::Numerical("continuous M-step objective is non-finite".into()));
        }
        trace.push(value);
    }
    Ok((b0, gamma, trace))
}

/// Body pairs among the hard top-K non-dummy columns of each weight row.
pub fn selected_pairs(weights: &SelectionWeights) -> Vec<Vec<(usize, usize)>> {
    weights
        .rows
        .iter()
        .map(|row| {
            let mut cols: Vec<usize> =
                top_k_indices(row, weights.k).into_iter().filter(|&j| !weights.is_dummy(j)).collect();
            cols.sort_unstable();
            let mut pairs = Vec::new();
            for a in 0..cols.len() {
                for b in a + 1..cols.len() {
                    pairs.push((cols[a], cols[b]));
                }
            }
            pairs
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RuleStepReport {
    pub selection_grad_norm: f64,
    pub relation_grad_norm: f64,
    pub final_tau: f64,
    pub selection_objective: Vec<f64>,
    pub relation_objective: Vec<f64>,
}

struct RateGradient {
    b0: f64,
    gamma: Vec<f64>,
}

impl RateGradient {
    fn new(rules: usize) -> Self {
        RateGradient {
            b0: 0.0,
            gamma: vec![0.0; rules],
        }
    }

    fn add(&mut self, g: &ObjectiveGradient) {
        self.b0 += g.b0;
        for (a, b) in self.gamma.iter_mut().zip(&g.gamma) {
            *a += b;
        }
    }

    /// Log-space ascent on the soft rates with the gradient averaged over `norm`.
    fn apply(&self, params: &mut HardParams, lr: f64, norm: f64) {
        let step = |rate: f64, grad: f64| rate * (lr * rate * grad / norm).clamp(-1.0, 1.0).exp();
        params.b0 = step(params.b0, self.b0);
        for (g, d) in params.gamma.iter_mut().zip(&self.gamma) {
            *g = step(*g, *d);
        }
    }
}

fn draw_samples<R: Rng + ?Sized>(
    weights: &SelectionWeights,
    tau: f64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<SelectionSample>> {
    if cfg.gumbel_noise {
        (0..cfg.gumbel_samples).map(|_| SelectionSample::draw(weights, tau, rng)).collect()
    } else {
        Ok(vec![SelectionSample::expectation(weights, tau)?])
    }
}

/// Selection phase then relation phase, each with its own annealed budget.
/// With `update_rates`, `b0` and `γ` take a log-space step on the soft
/// objective alongside every selection or relation step.
///
/// Gradients are taken on the summed objective, averaged over Gumbel draws.
#[allow(clippy::too_many_arguments)]
pub fn m_step_rules<R: Rng + ?Sized>(
    corpus: &PreparedCorpus,
    q: &Posterior,
    params: &mut HardParams,
    update_rates: bool,
    weights: &mut SelectionWeights,
    alphas: &mut RelationSimplices,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<RuleStepReport> {
    let n = corpus.event_count().max(1) as f64;
    let mut report = RuleStepReport::default();
    let pairs_none: Vec<Vec<(usize, usize)>> = vec![Vec::new(); weights.rows.len()];
    let alphas_snapshot = alphas.clone();
    let fixed = params.clone();

    let base = SoftObjective {
        corpus,
        posterior: &q.rows,
        b0: fixed.b0,
        gamma: &fixed.gamma,
        pi: &fixed.pi,
        k: weights.k,
        alphas: &alphas_snapshot,
        pairs: &pairs_none,
        use_relations: false,
        ctx: cfg.soft_context(cfg.tau_max),
        delta: cfg.delta,
    };
    let mut sq_norm = 0.0;
    for step in 0..cfg.w_phase_steps {
        let tau = anneal_tau(cfg, step, cfg.w_phase_steps);
        report.final_tau = tau;
        let samples = draw_samples(weights, tau, cfg, rng)?;
        let obj = SoftObjective {
            b0: params.b0,
            gamma: &params.gamma,
            ctx: cfg.soft_context(tau),
            ..base
        };
        let mut grad_w = vec![vec![0.0; weights.columns()]; weights.rows.len()];
        let mut value = 0.0;
        let mut rates = RateGradient::new(params.gamma.len());
        for s in &samples {
            let g = obj.value_and_gradient(&s.a_tilde)?;
            value += g.value;
            rates.add(&g);
            for (acc, row) in grad_w.iter_mut().zip(weights_gradient(weights, s, &g.a_tilde)) {
                for (a, b) in acc.iter_mut().zip(row) {
                    *a += b;
                }
            }
        }
        let scale = 1.0 / samples.len() as f64;
        report.selection_objective.push(value * scale / n);
        sq_norm = 0.0;
        for (row, grow) in weights.rows.iter_mut().zip(&grad_w) {
            for (w, g) in row.iter_mut().zip(grow) {
                let g = g * scale;
                sq_norm += g * g;
                *w = (*w + cfg.lr_selection * g).max(1e-8);
            }
        }
        if update_rates {
            rates.apply(params, cfg.lr_rates, samples.len() as f64 * n);
        }
    }
    report.selection_grad_norm = sq_norm.sqrt();

    let pairs = selected_pairs(weights);
    let mut sq_norm = 0.0;
    for step in 0..cfg.alpha_phase_steps {
        let tau = anneal_tau(cfg, step, cfg.alpha_phase_steps);
        report.final_tau = tau;
        let samples = draw_samples(weights, tau, cfg, rng)?;
        let snapshot = alphas.clone();
        let obj = SoftObjective {
            b0: params.b0,
            gamma: &params.gamma,
            alphas: &snapshot,
            pairs: &pairs,
            use_relations: true,
            ctx: cfg.soft_context(tau),
            ..base
        };
        let mut grad = snapshot.zeros_like();
        let mut value = 0.0;
        let mut rates = RateGradient::new(params.gamma.len());
        for s in &samples {
            let g = obj.value_and_gradient(&s.a_tilde)?;
            value += g.value;
            rates.add(&g);
            for (acc, row) in grad.rules.iter_mut().zip(&g.alpha.rules) {
                for (a, b) in acc.iter_mut().zip(row) {
                    for k in 0..4 {
                        a[k] += b[k];
                    }
                }
            }
        }
        let scale = 1.0 / (samples.len() as f64 * n);
        report.relation_objective.push(value * scale / n);
        sq_norm = 0.0;
        for (h, rule_pairs) in pairs.iter().enumerate() {
            for &(u, v) in rule_pairs {
                let g = grad.get(h, u, v).map(|x| x * scale);
                sq_norm += g.iter().map(|x| x * x).sum::<f64>();
                let a = alphas.get_mut(h, u, v);
                let stepped = std::array::from_fn(|k| a[k] + cfg.lr_relations * g[k]);
                *a = project_to_simplex(&stepped);
            }
        }
        if update_rates {
            rates.apply(params, cfg.lr_rates, samples.len() as f64 * n);
        }
    }
    report.relation_grad_norm = sq_norm.sqrt();
    Ok(report)
}
