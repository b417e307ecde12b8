//! Discrete temporal logic rules and the exact (hard) mixture intensity.
//!
//! A rule `Y <- X_u ∧ X_v ∧ … ∧ (X_u Before X_v)` fires at time `t` when every
//! body predicate has occurred strictly before `t` and every declared pairwise
//! relation holds between the *last* occurrences. Given the rule set, target
//! event `i` has intensity `b0` under the spontaneous component and
//! `γ_h · φ_h(t)` under rule `h`; between body events the intensity is
//! constant, which makes the survival integral an exact finite sum.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::{last_before, EventSequence, PredicateCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationType {
    Before,
    Equal,
    After,
    None,
}

impl RelationType {
    /// Index order used by relation simplices: Before, Equal, After, None.
    pub const ALL: [RelationType; 4] = [
        RelationType::Before,
        RelationType::Equal,
        RelationType::After,
        RelationType::None,
    ];

    pub fn index(self) -> usize {
        match self {
            RelationType::Before => 0,
            RelationType::Equal => 1,
            RelationType::After => 2,
            RelationType::None => 3,
        }
    }

    /// The same constraint with the operands swapped.
    pub fn flipped(self) -> Self {
        match self {
            RelationType::Before => RelationType::After,
            RelationType::After => RelationType::Before,
            other => other,
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelationType::Before => "Before",
            RelationType::Equal => "Equal",
            RelationType::After => "After",
            RelationType::None => "None",
        };
        f.write_str(s)
    }
}

pub fn ground_relation(kind: RelationType, t_u: f64, t_v: f64, delta: f64) -> bool {
    let d = t_u - t_v;
    match kind {
        RelationType::Before => d < -delta,
        RelationType::Equal => d.abs() <= delta,
        RelationType::After => d > delta,
        RelationType::None => true,
    }
}

/// A Horn clause body: a set of body columns plus pairwise relations.
///
/// Relations are stored canonically on `(u, v)` with `u < v`; a `None`
/// relation is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Rule {
    body: BTreeSet<usize>,
    relations: BTreeMap<(usize, usize), RelationType>,
}

impl Rule {
    pub fn new(
        body: impl IntoIterator<Item = usize>,
        relations: impl IntoIterator<Item = ((usize, usize), RelationType)>,
    ) -> Result<Self> {
        let body: BTreeSet<usize> = body.into_iter().collect();
        let mut rule = Rule {
            body,
            relations: BTreeMap::new(),
        };
        for ((u, v), kind) in relations {
            rule.set_relation(u, v, kind)?;
        }
        Ok(rule)
    }

    /// Rule with no temporal constraints.
    pub fn conjunction(body: impl IntoIterator<Item = usize>) -> Self {
        Rule {
            body: body.into_iter().collect(),
            relations: BTreeMap::new(),
        }
    }

    pub fn set_relation(&mut self, u: usize, v: usize, kind: RelationType) -> Result<()> {
        if u == v {
            return Err(Error::Rule(format!("relation pair ({u}, {v}) is not distinct")));
        }
        if !self.body.contains(&u) || !self.body.contains(&v) {
            return Err(Error::Rule(format!("relation pair ({u}, {v}) outside the body")));
        }
        let (key, kind) = if u < v { ((u, v), kind) } else { ((v, u), kind.flipped()) };
        if kind == RelationType::None {
            self.relations.remove(&key);
        } else {
            self.relations.insert(key, kind);
        }
        Ok(())
    }

    pub fn body(&self) -> &BTreeSet<usize> {
        &self.body
    }

    pub fn relations(&self) -> &BTreeMap<(usize, usize), RelationType> {
        &self.relations
    }

    /// Relation between `u` and `v` in that operand order.
    pub fn relation(&self, u: usize, v: usize) -> RelationType {
        if u < v {
            self.relations.get(&(u, v)).copied().unwrap_or(RelationType::None)
        } else {
            self.relations
                .get(&(v, u))
                .map(|k| k.flipped())
                .unwrap_or(RelationType::None)
        }
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn describe(&self, catalog: &PredicateCatalog) -> String {
        let name = |j: usize| catalog.body_name(j).unwrap_or("?").to_owned();
        let mut parts: Vec<String> = self.body.iter().map(|&j| name(j)).collect();
        for (&(u, v), kind) in &self.relations {
            parts.push(format!("({} {} {})", name(u), kind, name(v)));
        }
        if parts.is_empty() {
            parts.push("true".into());
        }
        format!("{} <- {}", catalog.target_name(), parts.join(" ∧ "))
    }

    fn validate_columns(&self, body_count: usize) -> Result<()> {
        match self.body.iter().find(|&&j| j >= body_count) {
            Some(&j) => Err(Error::PredicateIndex(j)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Self {
        RuleSet { rules }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Rule> {
        self.rules.iter()
    }

    /// Index pairs `(a, b)`, `a < b`, of rules that are exactly equal.
    pub fn duplicates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.rules.len() {
            for b in a + 1..self.rules.len() {
                if self.rules[a] == self.rules[b] {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn to_specs(&self, catalog: &PredicateCatalog) -> Vec<RuleSpec> {
        self.rules.iter().map(|r| RuleSpec::from_rule(r, catalog)).collect()
    }

    pub fn from_specs(specs: &[RuleSpec], catalog: &PredicateCatalog) -> Result<Self> {
        specs.iter().map(|s| s.to_rule(catalog)).collect::<Result<Vec<_>>>().map(RuleSet::new)
    }

    pub fn to_json(&self, catalog: &PredicateCatalog) -> String {
        serde_json::to_string_pretty(&self.to_specs(catalog)).expect("rule specs serialize")
    }

    pub fn from_json(text: &str, catalog: &PredicateCatalog) -> Result<Self> {
        let specs: Vec<RuleSpec> = serde_json::from_str(text)?;
        Self::from_specs(&specs, catalog)
    }
}

/// Serialized rule: `{"body":["X1","X2"],"relations":[{"pair":["X1","X2"],"type":"Before"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub body: Vec<String>,
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub pair: [String; 2],
    #[serde(rename = "type")]
    pub kind: RelationType,
}

impl RuleSpec {
    pub fn from_rule(rule: &Rule, catalog: &PredicateCatalog) -> Self {
        let name = |j: usize| catalog.body_name(j).unwrap_or("?").to_owned();
        RuleSpec {
            body: rule.body.iter().map(|&j| name(j)).collect(),
            relations: rule
                .relations
                .iter()
                .map(|(&(u, v), &kind)| RelationSpec {
                    pair: [name(u), name(v)],
                    kind,
                })
                .collect(),
        }
    }

    pub fn to_rule(&self, catalog: &PredicateCatalog) -> Result<Rule> {
        let col = |n: &str| catalog.body_index(n).ok_or_else(|| Error::UnknownPredicate(n.to_owned()));
        let body = self.body.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
        let mut rule = Rule::conjunction(body);
        for rel in &self.relations {
            rule.set_relation(col(&rel.pair[0])?, col(&rel.pair[1])?, rel.kind)?;
        }
        Ok(rule)
    }
}

/// Continuous parameters of the hard mixture model. `pi[0]` is the
/// spontaneous component; `pi[h]` and `gamma[h - 1]` belong to rule `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardParams {
    pub b0: f64,
    pub gamma: Vec<f64>,
    pub pi: Vec<f64>,
}

impl HardParams {
    pub fn new(b0: f64, gamma: Vec<f64>, pi: Vec<f64>) -> Result<Self> {
        let p = HardParams { b0, gamma, pi };
        p.validate()?;
        Ok(p)
    }

    pub fn rule_count(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b0 > 0.0 && self.b0.is_finite()) {
            return Err(Error::config("b0", format!("{} must be positive", self.b0)));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::config("gamma", format!("{g} must be positive")));
        }
        if self.pi.len() != self.gamma.len() + 1 {
            return Err(Error::config(
                "pi",
                format!("length {} does not match {} rules + 1", self.pi.len(), self.gamma.len()),
            ));
        }
        if self.pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("pi", "entries must lie in [0, 1]"));
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config("pi", format!("sums to {total}, not 1")));
        }
        Ok(())
    }
}

fn check_rules(params: &HardParams, rules: &RuleSet, seq: &EventSequence) -> Result<()> {
    if params.rule_count() != rules.len() {
        return Err(Error::config(
            "gamma",
            format!("{} weights for {} rules", params.rule_count(), rules.len()),
        ));
    }
    for rule in rules.iter() {
        rule.validate_columns(seq.body_count())?;
    }
    Ok(())
}

/// Truth of the rule feature at `t`, grounding every body predicate at its
/// last occurrence strictly before `t`. Empty rules are always true.
pub fn ground_feature(rule: &Rule, seq: &EventSequence, t: f64, delta: f64) -> bool {
    let mut times = BTreeMap::new();
    for &j in &rule.body {
        match seq.predicate_times(j).and_then(|ts| last_before(ts, t)) {
            Some(tj) => {
                times.insert(j, tj);
            }
            None => return false,
        }
    }
    rule.relations
        .iter()
        .all(|(&(u, v), &kind)| ground_relation(kind, times[&u], times[&v], delta))
}

/// Evaluates a rule against a vector of last-occurrence times (one per body column).
pub fn feature_from_last(rule: &Rule, last: &[Option<f64>], delta: f64) -> bool {
    if rule.body.iter().any(|&j| last.get(j).copied().flatten().is_none()) {
        return false;
    }
    rule.relations.iter().all(|(&(u, v), &kind)| {
        let (tu, tv) = (last[u].unwrap(), last[v].unwrap());
        ground_relation(kind, tu, tv, delta)
    })
}

/// Mixture-component intensity of `z` (0 = spontaneous) at `t`.
pub fn hard_intensity(params: &HardParams, rules: &RuleSet, seq: &EventSequence, t: f64, z: usize, delta: f64) -> Result<f64> {
    if z > rules.len() {
        return Err(Error::config("z", format!("component {z} out of range")));
    }
    if z == 0 {
        return Ok(params.b0);
    }
    let on = ground_feature(&rules.rules[z - 1], seq, t, delta);
    Ok(if on { params.gamma[z - 1] } else { 0.0 })
}

/// Body event times of the rule strictly inside `(t_a, t_b)`, sorted and de-duplicated.
pub fn feature_change_points(rule: &Rule, seq: &EventSequence, window: (f64, f64), delta: f64) -> Vec<f64> {
    let _ = delta;
    change_points(seq, rule.body.iter().copied(), window)
}

fn change_points(seq: &EventSequence, columns: impl IntoIterator<Item = usize>, (t_a, t_b): (f64, f64)) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::new();
    for j in columns {
        if let Some(ts) = seq.predicate_times(j) {
            let lo = ts.partition_point(|&x| x <= t_a);
            let hi = ts.partition_point(|&x| x < t_b);
            pts.extend_from_slice(&ts[lo..hi]);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// One piece of an inter-event interval on which the history is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub length: f64,
    /// Last occurrence of every body column strictly before the segment end.
    pub last: Vec<Option<f64>>,
}

/// Decomposition of `(t_a, t_b]` at every body event, for all body columns.
///
/// The final segment's history is the history strictly before `t_b`, so it
/// also gives the state at the target event itself.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalGrid {
    pub start: f64,
    pub end: f64,
    pub segments: Vec<Segment>,
}

impl IntervalGrid {
    pub fn build(seq: &EventSequence, t_a: f64, t_b: f64) -> Self {
        let pts = change_points(seq, 0..seq.body_count(), (t_a, t_b));
        let mut bounds = Vec::with_capacity(pts.len() + 2);
        bounds.push(t_a);
        bounds.extend(pts);
        bounds.push(t_b);
        let segments = bounds
            .windows(2)
            .map(|w| Segment {
                length: w[1] - w[0],
                last: (0..seq.body_count())
                    .map(|j| seq.predicate_times(j).and_then(|ts| last_before(ts, w[1])))
                    .collect(),
            })
            .collect();
        IntervalGrid {
            start: t_a,
            end: t_b,
            segments,
        }
    }

    /// Grid of the interval ending at target event `i`.
    pub fn for_event(seq: &EventSequence, i: usize) -> Self {
        Self::build(seq, seq.interval_start(i), seq.target_times()[i])
    }

    pub fn event_state(&self) -> &[Option<f64>] {
        &self.segments.last().expect("grid has at least one segment").last
    }

    /// `∫ φ(s) ds` over the interval and `φ` at the right end.
    pub fn feature_integral(&self, rule: &Rule, delta: f64) -> (f64, bool) {
        let mut total = 0.0;
        let mut at_end = false;
        for seg in &self.segments {
            at_end = feature_from_last(rule, &seg.last, delta);
            if at_end {
                total += seg.length;
            }
        }
        (total, at_end)
    }
}

/// Interval grids for every target event of a corpus, in sequence order.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub grids: Vec<IntervalGrid>,
    /// `(sequence, event)` of each grid.
    pub owner: Vec<(usize, usize)>,
    pub body_count: usize,
    pub sequence_count: usize,
}

impl PreparedCorpus {
    pub fn new(seqs: &[EventSequence]) -> Self {
        use rayon::prelude::*;
        let per_seq: Vec<Vec<IntervalGrid>> = seqs
            .par_iter()
            .map(|s| (0..s.target_times().len()).map(|i| IntervalGrid::for_event(s, i)).collect())
            .collect();
        let mut grids = Vec::new();
        let mut owner = Vec::new();
        for (si, gs) in per_seq.into_iter().enumerate() {
            for (i, g) in gs.into_iter().enumerate() {
                grids.push(g);
                owner.push((si, i));
            }
        }
        PreparedCorpus {
            grids,
            owner,
            body_count: seqs.first().map(|s| s.body_count()).unwrap_or(0),
            sequence_count: seqs.len(),
        }
    }

    pub fn event_count(&self) -> usize {
        self.grids.len()
    }

    pub fn total_exposure(&self) -> f64 {
        self.grids.iter().map(|g| g.end - g.start).sum()
    }
}

/// Log of `λ(t_i | z) · exp(-∫ λ(s | z) ds)` over the interval ending at `t_i`.
/// Returns `-∞` when the component cannot produce the event.
pub fn component_event_log_density(params: &HardParams, rule: Option<&Rule>, grid: &IntervalGrid, z: usize, delta: f64) -> f64 {
    match rule {
        None => params.b0.ln() - params.b0 * (grid.end - grid.start),
        Some(rule) => {
            let (exposure, on) = grid.feature_integral(rule, delta);
            if !on {
                return f64::NEG_INFINITY;
            }
            let g = params.gamma[z - 1];
            g.ln() - g * exposure
        }
    }
}

pub fn component_event_likelihood(
    params: &HardParams,
    rules: &RuleSet,
    seq: &EventSequence,
    i: usize,
    z: usize,
    delta: f64,
) -> Result<f64> {
    check_rules(params, rules, seq)?;
    if i >= seq.target_times().len() {
        return Err(Error::config("i", format!("event {i} out of range")));
    }
    if z > rules.len() {
        return Err(Error::config("z", format!("component {z} out of range")));
    }
    let grid = IntervalGrid::for_event(seq, i);
    let rule = (z > 0).then(|| &rules.rules[z - 1]);
    Ok(component_event_log_density(params, rule, &grid, z, delta).exp())
}

/// Per-component log joint densities `log π_z + log p(t_i | z)` for one event.
pub fn event_log_joint(params: &HardParams, rules: &RuleSet, grid: &IntervalGrid, delta: f64) -> Vec<f64> {
    (0..=rules.len())
        .map(|z| {
            let rule = (z > 0).then(|| &rules.rules[z - 1]);
            let lp = params.pi[z].ln();
            if lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lp + component_event_log_density(params, rule, grid, z, delta)
            }
        })
        .collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Observed-data log-likelihood of one sequence, marginalizing the
/// per-event component. `-∞` when some event is unexplainable.
pub fn sequence_log_likelihood(params: &HardParams, rules: &RuleSet, seq: &EventSequence, delta: f64) -> Result<f64> {
    check_rules(params, rules, seq)?;
    let mut total = 0.0;
    for i in 0..seq.target_times().len() {
        let grid = IntervalGrid::for_event(seq, i);
        total += log_sum_exp(&event_log_joint(params, rules, &grid, delta));
    }
    Ok(total)
}
