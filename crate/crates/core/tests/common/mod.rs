#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;
use rule_tpp::event_store::EventSequence;
use rule_tpp::rule_logic::{hard_intensity, HardParams, RelationType, Rule, RuleSet};

pub fn sorted_times<R: Rng>(rng: &mut R, n: usize, horizon: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..horizon)).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

pub fn random_sequence<R: Rng>(rng: &mut R, body_count: usize, horizon: f64) -> EventSequence {
    let body = (0..body_count)
        .map(|_| {
            let n = rng.random_range(0..6);
            sorted_times(rng, n, horizon)
        })
        .collect();
    let n = rng.random_range(1..6);
    let targets = sorted_times(rng, n, horizon);
    EventSequence::new(body, targets, horizon).unwrap()
}

pub fn random_relation<R: Rng>(rng: &mut R) -> RelationType {
    [RelationType::Before, RelationType::Equal, RelationType::After][rng.random_range(0..3)]
}

pub fn random_rule<R: Rng>(rng: &mut R, body_count: usize) -> Rule {
    let len = rng.random_range(1..=3.min(body_count));
    let mut body: Vec<usize> = sample(rng, body_count, len).into_vec();
    body.sort();
    let mut rels = Vec::new();
    for a in 0..body.len() {
        for b in a + 1..body.len() {
            if rng.random_bool(0.5) {
                rels.push(((body[a], body[b]), random_relation(rng)));
            }
        }
    }
    Rule::new(body, rels).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R, rules: usize) -> HardParams {
    let raw: Vec<f64> = (0..=rules).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    HardParams::new(
        rng.random_range(0.05..2.0),
        (0..rules).map(|_| rng.random_range(0.1..3.0)).collect(),
        raw.iter().map(|p| p / total).collect(),
    )
    .unwrap()
}

/// `∫ λ_z` over `(a, b)` by splitting at every body event and evaluating the
/// pointwise intensity at segment midpoints.
pub fn midpoint_compensator(params: &HardParams, rules: &RuleSet, seq: &EventSequence, z: usize, a: f64, b: f64, delta: f64) -> f64 {
    let mut cuts: Vec<f64> = seq.body_events().iter().flatten().copied().filter(|&t| t > a && t < b).collect();
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut lo = a;
    for hi in cuts.into_iter().chain([b]) {
        if hi > lo {
            total += (hi - lo) * hard_intensity(params, rules, seq, 0.5 * (lo + hi), z, delta).unwrap();
        }
        lo = hi;
    }
    total
}

/// Observed-data log-likelihood from pointwise intensities.
pub fn oracle_log_likelihood(params: &HardParams, rules: &RuleSet, seqs: &[EventSequence], delta: f64) -> f64 {
    let mut ll = 0.0;
    for seq in seqs {
        for (i, &t) in seq.target_times().iter().enumerate() {
            let a = seq.interval_start(i);
            let mut mix = 0.0;
            for z in 0..=rules.len() {
                let lam = hard_intensity(params, rules, seq, t, z, delta).unwrap();
                mix += params.pi[z] * lam * (-midpoint_compensator(params, rules, seq, z, a, t, delta)).exp();
            }
            ll += mix.ln();
        }
    }
    ll
}
