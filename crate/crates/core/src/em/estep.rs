use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rule_logic::{event_log_joint, log_sum_exp, HardParams, PreparedCorpus, RuleSet};

/// Per-event responsibilities over `{spontaneous, rule 1..H}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub rows: Vec<Vec<f64>>,
}

impl Posterior {
    pub fn components(&self) -> usize {
        self.rows.first().map(Vec::len).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Log joint densities `ln π_z + ln p(t_i | z)` for every event.
pub fn log_joints(corpus: &PreparedCorpus, params: &HardParams, rules: &RuleSet, delta: f64) -> Vec<Vec<f64>> {
    corpus
        .grids
        .par_iter()
        .map(|g| event_log_joint(params, rules, g, delta))
        .collect()
}

fn normalize_row(lj: &[f64]) -> Option<Vec<f64>> {
    let lse = log_sum_exp(lj);
    if lse == f64::NEG_INFINITY || !lse.is_finite() {
        return None;
    }
    let mut row: Vec<f64> = lj.iter().map(|x| (x - lse).exp()).collect();
    let s: f64 = row.iter().sum();
    for x in &mut row {
        *x /= s;
    }
    Some(row)
}

/// Exact posterior of each event's component under the hard model.
pub fn e_step(corpus: &PreparedCorpus, params: &HardParams, rules: &RuleSet, delta: f64) -> Result<Posterior> {
    let joints = log_joints(corpus, params, rules, delta);
    let mut rows = Vec::with_capacity(joints.len());
    for (e, lj) in joints.iter().enumerate() {
        match normalize_row(lj) {
            Some(row) => rows.push(row),
            None => {
                let (sequence, event) = corpus.owner[e];
                return Err(Error::Unexplained { sequence, event });
            }
        }
    }
    Ok(Posterior { rows })
}

/// Observed-data log-likelihood, summed in event order.
pub fn observed_log_likelihood(corpus: &PreparedCorpus, params: &HardParams, rules: &RuleSet, delta: f64) -> f64 {
    log_joints(corpus, params, rules, delta).iter().map(|lj| log_sum_exp(lj)).sum()
}

/// `Σ_i Σ_z Q_i(z) ln(p(t_i, z) / Q_i(z))`, with `0 ln 0 = 0`.
pub fn evidence_lower_bound(corpus: &PreparedCorpus, params: &HardParams, rules: &RuleSet, q: &Posterior, delta: f64) -> f64 {
    let joints = log_joints(corpus, params, rules, delta);
    joints
        .iter()
        .zip(&q.rows)
        .map(|(lj, row)| {
            lj.iter()
                .zip(row)
                .filter(|(_, qz)| **qz > 0.0)
                .map(|(l, qz)| qz * (l - qz.ln()))
                .sum::<f64>()
        })
        .sum()
}

/// Per-event feature exposures and end-of-interval truth values for a fixed
/// rule set, so repeated hard-model EM steps need no grid walks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    /// Interval length of every event.
    pub duration: Vec<f64>,
    /// `∫ φ_h` over each event's interval, one row per event.
    pub exposure: Vec<Vec<f64>>,
    /// `φ_h` at each event.
    pub on: Vec<Vec<bool>>,
    owner: Vec<(usize, usize)>,
}

impl FeatureCache {
    pub fn new(corpus: &PreparedCorpus, rules: &RuleSet, delta: f64) -> Self {
        let per: Vec<(f64, Vec<f64>, Vec<bool>)> = corpus
            .grids
            .par_iter()
            .map(|g| {
                let (x, on): (Vec<f64>, Vec<bool>) = rules.iter().map(|r| g.feature_integral(r, delta)).unzip();
                (g.end - g.start, x, on)
            })
            .collect();
        let mut cache = FeatureCache {
            duration: Vec::with_capacity(per.len()),
            exposure: Vec::with_capacity(per.len()),
            on: Vec::with_capacity(per.len()),
            owner: corpus.owner.clone(),
        };
        for (d, x, on) in per {
            cache.duration.push(d);
            cache.exposure.push(x);
            cache.on.push(on);
        }
        cache
    }

    pub fn log_joint(&self, params: &HardParams, e: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.gamma.len() + 1);
        out.push(params.pi[0].ln() + params.b0.ln() - params.b0 * self.duration[e]);
        for (h, &g) in params.gamma.iter().enumerate() {
            let lp = params.pi[h + 1].ln();
            out.push(if !self.on[e][h] || lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lp + g.ln() - g * self.exposure[e][h]
            });
        }
        out
    }

    pub fn e_step(&self, params: &HardParams) -> Result<Posterior> {
        Ok(self.e_step_with_likelihood(params)?.0)
    }

    /// Posterior and the observed-data log-likelihood at `params`, from one pass.
    pub fn e_step_with_likelihood(&self, params: &HardParams) -> Result<(Posterior, f64)> {
        let mut rows = Vec::with_capacity(self.duration.len());
        let mut ll = 0.0;
        for e in 0..self.duration.len() {
            let mut row = self.log_joint(params, e);
            let lse = log_sum_exp(&row);
            if !lse.is_finite() {
                let (sequence, event) = self.owner[e];
                return Err(Error::Unexplained { sequence, event });
            }
            ll += lse;
            let mut sum = 0.0;
            for x in &mut row {
                *x = (*x - lse).exp();
                sum += *x;
            }
            for x in &mut row {
                *x /= sum;
            }
            rows.push(row);
        }
        Ok((Posterior { rows }, ll))
    }

    pub fn log_likelihood(&self, params: &HardParams) -> f64 {
        (0..self.duration.len()).map(|e| log_sum_exp(&self.log_joint(params, e))).sum()
    }
}

/// Closed-form prior update: column means of `Q`.
pub fn m_step_pi(q: &Posterior) -> Vec<f64> {
    let n = q.rows.len() as f64;
    let mut sums = vec![0.0; q.components()];
    for row in &q.rows {
        for (s, x) in sums.iter_mut().zip(row) {
            *s += x;
        }
    }
    sums.into_iter().map(|s| s / n).collect()
}
