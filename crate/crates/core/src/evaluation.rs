//! Rule-set, parameter, assignment and event-time metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::EventSequence;
use crate::rule_logic::{feature_from_last, HardParams, RelationType, Rule, RuleSet};

/// Bodies equal as sets and relation maps equal, absent meaning `None`.
pub fn rule_equal(a: &Rule, b: &Rule) -> bool {
    a == b
}

fn collapse(set: &RuleSet) -> Vec<&Rule> {
    let mut out: Vec<&Rule> = Vec::new();
    for r in set.iter() {
        if !out.iter().any(|o| rule_equal(o, r)) {
            out.push(r);
        }
    }
    out
}

/// `|A ∩ B| / |A ∪ B|` after collapsing duplicates; two empty sets score 1.
pub fn jaccard(learned: &RuleSet, truth: &RuleSet) -> f64 {
    let a = collapse(learned);
    let b = collapse(truth);
    let inter = a.iter().filter(|r| b.iter().any(|t| rule_equal(r, t))).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Binary encoding of a rule: one slot per body predicate, then one slot per
/// ordered pair `(u, v)`, `u ≠ v`, and relation in Before/Equal/After.
/// A relation on `{u, v}` sets both its `(u, v)` slot and the flipped `(v, u)` slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleVector {
    pub bits: Vec<u8>,
}

impl RuleVector {
    pub fn len_for(body_count: usize) -> usize {
        body_count + body_count * body_count.saturating_sub(1) * 3
    }

    fn pair_slot(body_count: usize, u: usize, v: usize, kind: RelationType) -> usize {
        let col = if v < u { v } else { v - 1 };
        body_count + (u * (body_count - 1) + col) * 3 + kind.index()
    }

    pub fn encode(rule: &Rule, body_count: usize) -> Self {
        let mut bits = vec![0u8; Self::len_for(body_count)];
        for &j in rule.body() {
            bits[j] = 1;
        }
        for (&(u, v), &kind) in rule.relations() {
            bits[Self::pair_slot(body_count, u, v, kind)] = 1;
            bits[Self::pair_slot(body_count, v, u, kind.flipped())] = 1;
        }
        RuleVector { bits }
    }

    /// The spontaneous component: all zeros.
    pub fn spontaneous(body_count: usize) -> Self {
        RuleVector {
            bits: vec![0; Self::len_for(body_count)],
        }
    }

    fn is_zero(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }
}

/// Cosine similarity; 1 when both vectors are zero, 0 when exactly one is.
pub fn cosine(a: &RuleVector, b: &RuleVector) -> f64 {
    match (a.is_zero(), b.is_zero()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let dot: f64 = a.bits.iter().zip(&b.bits).map(|(&x, &y)| (x as f64) * (y as f64)).sum();
    let na: f64 = a.bits.iter().map(|&x| x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.bits.iter().map(|&x| x as f64).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn component_vector(rules: &RuleSet, z: usize, body_count: usize) -> RuleVector {
    if z == 0 {
        RuleVector::spontaneous(body_count)
    } else {
        RuleVector::encode(&rules.rules[z - 1], body_count)
    }
}

/// Mean over sequences of the mean over events of the cosine between the
/// inferred component's rule vector and the true one.
pub fn assignment_cosine(
    learned: &RuleSet,
    inferred: &[Vec<usize>],
    truth: &RuleSet,
    labels: &[Vec<usize>],
    body_count: usize,
) -> Result<f64> {
    if inferred.len() != labels.len() {
        return Err(Error::validation(format!("{} inferred sequences vs {} labelled", inferred.len(), labels.len())));
    }
    let mut total = 0.0;
    let mut seqs = 0usize;
    for (s, (inf, lab)) in inferred.iter().zip(labels).enumerate() {
        if inf.len() != lab.len() {
            return Err(Error::validation(format!("sequence {s}: event counts differ")));
        }
        if inf.is_empty() {
            continue;
        }
        let mean: f64 = inf
            .iter()
            .zip(lab)
            .map(|(&a, &b)| cosine(&component_vector(learned, a, body_count), &component_vector(truth, b, body_count)))
            .sum::<f64>()
            / inf.len() as f64;
        total += mean;
        seqs += 1;
    }
    Ok(if seqs == 0 { 0.0 } else { total / seqs as f64 })
}

/// Most probable component of every event, split back into sequences.
/// Ties go to the lowest component index.
pub fn hard_assignments(rows: &[Vec<f64>], seqs: &[EventSequence]) -> Result<Vec<Vec<usize>>> {
    let total: usize = seqs.iter().map(|s| s.target_times().len()).sum();
    if total != rows.len() {
        return Err(Error::validation(format!("{} posterior rows for {total} events", rows.len())));
    }
    let mut out = Vec::with_capacity(seqs.len());
    let mut it = rows.iter();
    for s in seqs {
        out.push(
            it.by_ref()
                .take(s.target_times().len())
                .map(|r| (0..r.len()).fold(0, |best, z| if r[z] > r[best] { z } else { best }))
                .collect(),
        );
    }
    Ok(out)
}

/// Learned rule index matched to each true rule by exact equality
/// (the matching rule with the largest prior when several agree).
pub fn match_rules(learned: &RuleSet, learned_params: &HardParams, truth: &RuleSet) -> Vec<Option<usize>> {
    truth
        .iter()
        .map(|t| {
            learned
                .iter()
                .enumerate()
                .filter(|(_, r)| rule_equal(r, t))
                .max_by(|a, b| learned_params.pi[a.0 + 1].total_cmp(&learned_params.pi[b.0 + 1]).then(b.0.cmp(&a.0)))
                .map(|(h, _)| h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrors {
    pub weight_mae: f64,
    pub prior_mae: f64,
    /// Learned γ per true rule (0 when unmatched).
    pub matched_gamma: Vec<f64>,
    /// Learned prior per component of the truth: spontaneous then each true rule.
    pub matched_pi: Vec<f64>,
}

/// MAE of weights over the true rules and of priors over spontaneous plus
/// the true rules. An unmatched true rule is scored as if learned as 0.
/// Duplicate learned copies of a true rule pool their priors.
pub fn parameter_mae(learned: &RuleSet, learned_params: &HardParams, truth: &RuleSet, truth_params: &HardParams) -> ParameterErrors {
    let matched = match_rules(learned, learned_params, truth);
    let matched_gamma: Vec<f64> = matched.iter().map(|m| m.map_or(0.0, |h| learned_params.gamma[h])).collect();
    let mut matched_pi = vec![learned_params.pi[0]];
    for t in truth.iter() {
        matched_pi.push(
            learned
                .iter()
                .enumerate()
                .filter(|(_, r)| rule_equal(r, t))
                .map(|(h, _)| learned_params.pi[h + 1])
                .sum(),
        );
    }
    let weight_mae = if truth.is_empty() {
        0.0
    } else {
        truth_params.gamma.iter().zip(&matched_gamma).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64
    };
    let prior_mae =
        truth_params.pi.iter().zip(&matched_pi).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth_params.pi.len() as f64;
    ParameterErrors {
        weight_mae,
        prior_mae,
        matched_gamma,
        matched_pi,
    }
}

/// Quadrature settings for the event-time predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSettings {
    /// Integration cap on the waiting time.
    pub cap: f64,
    /// Simpson panels (rounded up to even).
    pub panels: usize,
}

impl PredictorSettings {
    /// Cap at `10 ×` the mean inter-event time of `seqs`.
    pub fn from_mean_gap(gap: f64, panels: usize) -> Result<Self> {
        if !(gap > 0.0 && gap.is_finite()) {
            return Err(Error::validation("mean inter-event time must be positive"));
        }
        Ok(PredictorSettings { cap: 10.0 * gap, panels })
    }

    pub fn from_corpus(seqs: &[EventSequence], panels: usize) -> Result<Self> {
        let mut total = 0.0;
        let mut n = 0usize;
        for s in seqs {
            for i in 0..s.target_times().len() {
                total += s.target_times()[i] - s.interval_start(i);
                n += 1;
            }
        }
        if n == 0 || total <= 0.0 {
            return Err(Error::validation("no inter-event times to set the cap"));
        }
        Ok(PredictorSettings {
            cap: 10.0 * total / n as f64,
            panels,
        })
    }
}

/// Constant intensities of the components that can fire given the history
/// up to `t_prev`, with their renormalized priors.
pub fn frozen_mixture(params: &HardParams, rules: &RuleSet, seq: &EventSequence, t_prev: f64, delta: f64) -> Result<Vec<(f64, f64)>> {
    let last: Vec<Option<f64>> = seq
        .body_events()
        .iter()
        .map(|ts| ts[..ts.partition_point(|&x| x <= t_prev)].last().copied())
        .collect();
    let mut comps = Vec::new();
    if params.pi[0] > 0.0 {
        comps.push((params.pi[0], params.b0));
    }
    for (h, rule) in rules.iter().enumerate() {
        if params.pi[h + 1] > 0.0 && params.gamma[h] > 0.0 && feature_from_last(rule, &last, delta) {
            comps.push((params.pi[h + 1], params.gamma[h]));
        }
    }
    let mass: f64 = comps.iter().map(|c| c.0).sum();
    if comps.is_empty() || mass <= 0.0 {
        return Err(Error::Numerical("marginal intensity is zero".into()));
    }
    Ok(comps.into_iter().map(|(p, l)| (p / mass, l)).collect())
}

/// Expected next target time after `t_prev`: `t_prev + ∫_0^cap S(u) du` with
/// `S` the survival of the frozen mixture, by composite Simpson. The mass
/// beyond the cap is counted at the cap.
pub fn predict_next_event_time(
    params: &HardParams,
    rules: &RuleSet,
    seq: &EventSequence,
    t_prev: f64,
    delta: f64,
    settings: &PredictorSettings,
) -> Result<f64> {
    let comps = frozen_mixture(params, rules, seq, t_prev, delta)?;
    let survival = |u: f64| comps.iter().map(|(p, l)| p * (-l * u).exp()).sum::<f64>();
    Ok(t_prev + simpson(survival, settings.cap, settings.panels))
}

fn simpson(f: impl Fn(f64) -> f64, b: f64, panels: usize) -> f64 {
    let n = (panels.max(2) + 1) & !1;
    let h = b / n as f64;
    let mut acc = f(0.0) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    acc * h / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTimeErrors {
    pub model_mae: f64,
    pub baseline_mae: f64,
    /// Mean inter-event time used by the constant predictor.
    pub baseline_gap: f64,
    pub cap: f64,
    pub events: usize,
}

/// Event-time MAE of the model and of the constant mean-gap predictor on
/// `test`, both predicting each target from the previous one (or 0).
pub fn event_time_mae(
    params: &HardParams,
    rules: &RuleSet,
    train: &[EventSequence],
    test: &[EventSequence],
    delta: f64,
    panels: usize,
) -> Result<EventTimeErrors> {
    let settings = PredictorSettings::from_corpus(train, panels)?;
    event_time_mae_with(params, rules, test, delta, &settings)
}

/// As [`event_time_mae`] with the mean gap fixed to `settings.cap / 10`.
pub fn event_time_mae_with(
    params: &HardParams,
    rules: &RuleSet,
    test: &[EventSequence],
    delta: f64,
    settings: &PredictorSettings,
) -> Result<EventTimeErrors> {
    let gap = settings.cap / 10.0;
    let mut model = 0.0;
    let mut base = 0.0;
    let mut n = 0usize;
    for seq in test {
        for (i, &t) in seq.target_times().iter().enumerate() {
            let prev = seq.interval_start(i);
            let pred = predict_next_event_time(params, rules, seq, prev, delta, settings)?;
            model += (pred - t).abs();
            base += (prev + gap - t).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::validation("no test events"));
    }
    Ok(EventTimeErrors {
        model_mae: model / n as f64,
        baseline_mae: base / n as f64,
        baseline_gap: gap,
        cap: settings.cap,
        events: n,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub group: Option<String>,
    pub case: Option<String>,
    pub seed: Option<u64>,
    pub jaccard: f64,
    pub weight_mae: f64,
    pub prior_mae: f64,
    pub assignment_cosine: Option<f64>,
    pub event_time_mae: Option<f64>,
    pub baseline_event_time_mae: Option<f64>,
    /// Learned rule index matched to each true rule.
    pub matched: Vec<Option<usize>>,
    pub matched_gamma: Vec<f64>,
    pub matched_pi: Vec<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "group,case,seed,jaccard,weight_mae,prior_mae,assignment_cosine,event_time_mae,baseline_event_time_mae";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.group.clone().unwrap_or_default(),
            self.case.clone().unwrap_or_default(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.jaccard,
            self.weight_mae,
            self.prior_mae,
            opt(self.assignment_cosine),
            opt(self.event_time_mae),
            opt(self.baseline_event_time_mae),
        )
    }
}

/// Rule-set and parameter metrics; assignment and event-time fields are left empty.
pub fn evaluate_rules(learned: &RuleSet, learned_params: &HardParams, truth: &RuleSet, truth_params: &HardParams) -> EvalReport {
    let errs = parameter_mae(learned, learned_params, truth, truth_params);
    EvalReport {
        jaccard: jaccard(learned, truth),
        weight_mae: errs.weight_mae,
        prior_mae: errs.prior_mae,
        matched: match_rules(learned, learned_params, truth),
        matched_gamma: errs.matched_gamma,
        matched_pi: errs.matched_pi,
        ..EvalReport::default()
    }
}
