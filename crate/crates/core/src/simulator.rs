//! Synthetic corpora drawn from a known rule-informed mixture process.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_store::{last_before, EventSequence, PredicateCatalog};
use crate::rule_logic::{feature_from_last, HardParams, Rule, RuleSet, RuleSpec};

/// Per-predicate background rates, either one shared value or one per body column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BodyRates {
    Shared(f64),
    PerPredicate(Vec<f64>),
}

impl Default for BodyRates {
    fn default() -> Self {
        BodyRates::Shared(0.5)
    }
}

impl BodyRates {
    pub fn expand(&self, body_count: usize) -> Result<Vec<f64>> {
        let rates = match self {
            BodyRates::Shared(r) => vec![*r; body_count],
            BodyRates::PerPredicate(v) => {
                if v.len() != body_count {
                    return Err(Error::config("body_rates", format!("{} rates for {body_count} predicates", v.len())));
                }
                v.clone()
            }
        };
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::config("body_rates", "rates must be positive"));
        }
        Ok(rates)
    }
}

fn default_horizon() -> f64 {
    20.0
}

fn default_retries() -> usize {
    100
}

/// On-disk form of a ground-truth model plus the corpus size to draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub catalog: PredicateCatalog,
    pub rules: Vec<RuleSpec>,
    pub b0: f64,
    pub gamma: Vec<f64>,
    pub pi: Vec<f64>,
    #[serde(default)]
    pub body_rates: BodyRates,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub catalog: PredicateCatalog,
    pub rule_set: RuleSet,
    pub params: HardParams,
    pub body_rates: Vec<f64>,
    pub horizon: f64,
    pub delta: f64,
}

impl GroundTruth {
    pub fn new(
        catalog: PredicateCatalog,
        rule_set: RuleSet,
        params: HardParams,
        body_rates: Vec<f64>,
        horizon: f64,
        delta: f64,
    ) -> Result<Self> {
        params.validate()?;
        if params.rule_count() != rule_set.len() {
            return Err(Error::config("gamma", "one weight per rule is required"));
        }
        if body_rates.len() != catalog.body_count() || body_rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::config("body_rates", "one positive rate per body predicate is required"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config("horizon", "must be positive"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::config("delta", "must be non-negative"));
        }
        for rule in rule_set.iter() {
            if rule.body().iter().any(|&j| j >= catalog.body_count()) {
                return Err(Error::config("rules", "rule references a column outside the catalog"));
            }
        }
        Ok(GroundTruth {
            catalog,
            rule_set,
            params,
            body_rates,
            horizon,
            delta,
        })
    }

    pub fn from_file_spec(spec: &GroundTruthFile) -> Result<Self> {
        let rule_set = RuleSet::from_specs(&spec.rules, &spec.catalog)?;
        let params = HardParams::new(spec.b0, spec.gamma.clone(), spec.pi.clone())?;
        let rates = spec.body_rates.expand(spec.catalog.body_count())?;
        Self::new(spec.catalog.clone(), rule_set, params, rates, spec.horizon, spec.delta)
    }

    pub fn to_file_spec(&self, count: usize, seed: u64) -> GroundTruthFile {
        GroundTruthFile {
            catalog: self.catalog.clone(),
            rules: self.rule_set.to_specs(&self.catalog),
            b0: self.params.b0,
            gamma: self.params.gamma.clone(),
            pi: self.params.pi.clone(),
            body_rates: BodyRates::PerPredicate(self.body_rates.clone()),
            horizon: self.horizon,
            delta: self.delta,
            count,
            seed,
            max_retries: default_retries(),
        }
    }

    /// Intensity of component `z` on `(start, horizon]`, as constant pieces
    /// `(end, rate)` split at the body events of the component's rule.
    pub fn component_pieces(&self, body: &[Vec<f64>], z: usize, start: f64) -> Vec<(f64, f64)> {
        if z == 0 {
            return vec![(self.horizon, self.params.b0)];
        }
        let rule = &self.rule_set.rules[z - 1];
        let gamma = self.params.gamma[z - 1];
        let mut cuts: Vec<f64> = rule
            .body()
            .iter()
            .flat_map(|&j| body[j].iter().copied().filter(|&t| t > start && t < self.horizon))
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.push(self.horizon);
        let mut last = vec![None; body.len()];
        cuts.into_iter()
            .map(|end| {
                for &j in rule.body() {
                    last[j] = last_before(&body[j], end);
                }
                let on = feature_from_last(rule, &last, self.delta);
                (end, if on { gamma } else { 0.0 })
            })
            .collect()
    }
}

/// Solves `∫_start^t λ = e` over constant pieces; `None` if the mass before the
/// last piece end falls short.
pub fn invert_cumulative_hazard(pieces: &[(f64, f64)], start: f64, e: f64) -> Option<f64> {
    let mut a = start;
    let mut left = e;
    for &(b, rate) in pieces {
        let mass = rate * (b - a);
        if mass >= left && rate > 0.0 {
            return Some((a + left / rate).min(b));
        }
        left -= mass;
        a = b;
    }
    None
}

/// Homogeneous Poisson times on `(0, horizon]`.
pub fn poisson_times<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += exponential(rate, rng);
        if t > horizon {
            return out;
        }
        if out.last().is_none_or(|&p| t > p) {
            out.push(t);
        }
    }
}

fn exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// One simulated sequence with its hidden component labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub sequence: EventSequence,
    pub labels: Vec<usize>,
}

/// Draws body processes then target events one at a time; `None` when no
/// target event lands before the horizon.
pub fn try_simulate_sequence<R: Rng + ?Sized>(gt: &GroundTruth, rng: &mut R) -> Option<Simulated> {
    let body: Vec<Vec<f64>> = gt.body_rates.iter().map(|&r| poisson_times(r, gt.horizon, rng)).collect();
    let mut targets = Vec::new();
    let mut labels = Vec::new();
    let mut t = 0.0;
    loop {
        let z = sample_component(&gt.params.pi, rng);
        let e = exponential(1.0, rng);
        let pieces = gt.component_pieces(&body, z, t);
        match invert_cumulative_hazard(&pieces, t, e) {
            Some(next) if next > t && next <= gt.horizon => {
                targets.push(next);
                labels.push(z);
                t = next;
            }
            _ => break,
        }
    }
    if targets.is_empty() {
        return None;
    }
    let sequence = EventSequence::new(body, targets, gt.horizon).expect("simulated sequence is valid");
    Some(Simulated { sequence, labels })
}

/// Like [`try_simulate_sequence`], redrawing until at least one target event occurs.
pub fn simulate_sequence<R: Rng + ?Sized>(gt: &GroundTruth, max_retries: usize, rng: &mut R) -> Result<(Simulated, usize)> {
    for attempt in 0..=max_retries {
        if let Some(sim) = try_simulate_sequence(gt, rng) {
            return Ok((sim, attempt));
        }
    }
    Err(Error::RetryBudget {
        sequence: 0,
        attempts: max_retries + 1,
    })
}

fn sample_component<R: Rng + ?Sized>(pi: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (z, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return z;
        }
    }
    pi.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Generator for sequence `index`: a ChaCha stream keyed by the master seed.
pub fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCorpus {
    pub sequences: Vec<EventSequence>,
    pub labels: Vec<Vec<usize>>,
    /// Total number of redraws caused by empty sequences.
    pub resampled: usize,
}

pub fn simulate_corpus(gt: &GroundTruth, count: usize, seed: u64, max_retries: usize) -> Result<SimulatedCorpus> {
    if count == 0 {
        return Err(Error::config("count", "must be at least 1"));
    }
    let drawn: Vec<Result<(Simulated, usize)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sequence_rng(seed, i);
            simulate_sequence(gt, max_retries, &mut rng).map_err(|e| match e {
                Error::RetryBudget { attempts, .. } => Error::RetryBudget { sequence: i, attempts },
                other => other,
            })
        })
        .collect();
    let mut out = SimulatedCorpus {
        sequences: Vec::with_capacity(count),
        labels: Vec::with_capacity(count),
        resampled: 0,
    };
    for d in drawn {
        let (sim, retries) = d?;
        out.sequences.push(sim.sequence);
        out.labels.push(sim.labels);
        out.resampled += retries;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub seq: usize,
    pub z: Vec<usize>,
}

pub fn save_labels(path: &Path, labels: &[Vec<usize>]) -> Result<()> {
    let mut text = String::new();
    for (seq, z) in labels.iter().enumerate() {
        text.push_str(&serde_json::to_string(&LabelRecord { seq, z: z.clone() })?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        if rec.seq != out.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected seq {}, found {}", out.len(), rec.seq),
            });
        }
        out.push(rec.z);
    }
    Ok(out)
}

fn predicate_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("X{i}")).collect()
}

/// Ground-truth rules of the four synthetic groups (one to four rules),
/// as `(body columns, relations)` with zero-based columns.
pub fn group_rules(group: usize) -> Result<RuleSet> {
    use crate::rule_logic::RelationType::{After, Before};
    let r = |body: &[usize], rel: &[((usize, usize), crate::rule_logic::RelationType)]| {
        Rule::new(body.iter().copied(), rel.iter().copied()).expect("preset rule is valid")
    };
    let rules = match group {
        1 => vec![r(&[0, 1, 2], &[((0, 1), Before)])],
        2 => vec![r(&[0, 1, 2], &[((0, 1), Before)]), r(&[3, 4], &[((3, 4), After)])],
        3 => vec![r(&[0, 1, 2], &[]), r(&[3, 4], &[((3, 4), Before)]), r(&[5, 6], &[((5, 6), After)])],
        4 => vec![r(&[0, 1, 2], &[]), r(&[3, 4], &[]), r(&[5, 7], &[]), r(&[6, 8, 9], &[])],
        _ => return Err(Error::config("group", format!("{group} is not one of 1..=4"))),
    };
    Ok(RuleSet::new(rules))
}

/// A preset ground truth for `group` over `predicates` body predicates
/// (`X1..Xn`, target `Y`), with equal rule weights and priors.
pub fn group_preset(group: usize, predicates: usize) -> Result<GroundTruth> {
    let rules = group_rules(group)?;
    let needed = rules.iter().flat_map(|r| r.body().iter().copied()).max().unwrap_or(0) + 1;
    if predicates < needed {
        return Err(Error::config("predicates", format!("group {group} needs at least {needed}")));
    }
    let names = predicate_names(predicates);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let catalog = PredicateCatalog::with_body(&refs, "Y")?;
    let h = rules.len();
    let spont = 0.2;
    let mut pi = vec![(1.0 - spont) / h as f64; h + 1];
    pi[0] = spont;
    let params = HardParams::new(0.2, vec![1.0; h], pi)?;
    GroundTruth::new(catalog, rules, params, vec![0.5; predicates], default_horizon(), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_rule_truth() -> GroundTruth {
        let catalog = PredicateCatalog::with_body(&["A", "B"], "Y").unwrap();
        let rules = RuleSet::new(vec![Rule::conjunction([0])]);
        let params = HardParams::new(0.3, vec![2.0], vec![0.5, 0.5]).unwrap();
        GroundTruth::new(catalog, rules, params, vec![0.5, 0.5], 10.0, 0.0).unwrap()
    }

    #[test]
    fn inversion_walks_pieces() {
        let pieces = [(1.0, 0.0), (2.0, 2.0), (5.0, 1.0)];
        assert_eq!(invert_cumulative_hazard(&pieces, 0.0, 1.0), Some(1.5));
        assert_eq!(invert_cumulative_hazard(&pieces, 0.0, 3.0), Some(3.0));
        assert_eq!(invert_cumulative_hazard(&pieces, 0.0, 6.0), None);
    }

    #[test]
    fn pieces_follow_rule_grounding() {
        let gt = single_rule_truth();
        let body = vec![vec![2.0, 4.0], vec![1.0]];
        let p = gt.component_pieces(&body, 1, 0.0);
        assert_eq!(p, vec![(2.0, 0.0), (4.0, 2.0), (10.0, 2.0)]);
        assert_eq!(gt.component_pieces(&body, 0, 3.0), vec![(10.0, 0.3)]);
    }

    #[test]
    fn ungroundable_rule_emits_nothing() {
        let catalog = PredicateCatalog::with_body(&["A"], "Y").unwrap();
        let rules = RuleSet::new(vec![Rule::conjunction([0])]);
        let params = HardParams::new(0.3, vec![2.0], vec![0.0, 1.0]).unwrap();
        let gt = GroundTruth::new(catalog, rules, params, vec![1e-9], 1.0, 0.0).unwrap();
        let mut rng = sequence_rng(1, 0);
        let body = vec![vec![]];
        let p = gt.component_pieces(&body, 1, 0.0);
        assert_eq!(invert_cumulative_hazard(&p, 0.0, 1e-9), None);
        assert!(matches!(simulate_sequence(&gt, 3, &mut rng), Err(Error::RetryBudget { attempts: 4, .. })));
    }

    #[test]
    fn corpus_is_reproducible_and_valid() {
        let gt = single_rule_truth();
        let a = simulate_corpus(&gt, 3, 7, 10).unwrap();
        let b = simulate_corpus(&gt, 3, 7, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sequences.len(), 3);
        for (s, l) in a.sequences.iter().zip(&a.labels) {
            assert_eq!(s.target_times().len(), l.len());
        }
        assert!(simulate_corpus(&gt, 0, 7, 10).is_err());
    }

    #[test]
    fn serial_matches_parallel() {
        let gt = single_rule_truth();
        let par = simulate_corpus(&gt, 20, 3, 10).unwrap();
        for i in 0..20 {
            let (sim, _) = simulate_sequence(&gt, 10, &mut sequence_rng(3, i)).unwrap();
            assert_eq!(sim.sequence, par.sequences[i]);
        }
    }

    #[test]
    fn spontaneous_waits_are_exponential() {
        let catalog = PredicateCatalog::with_body(&["A"], "Y").unwrap();
        let params = HardParams::new(2.0, vec![], vec![1.0]).unwrap();
        let gt = GroundTruth::new(catalog, RuleSet::default(), params, vec![1.0], 1e6, 0.0).unwrap();
        let mut rng = sequence_rng(11, 0);
        let mut gaps = Vec::new();
        while gaps.len() < 10_000 {
            let p = gt.component_pieces(&[vec![]], 0, 0.0);
            gaps.push(invert_cumulative_hazard(&p, 0.0, exponential(1.0, &mut rng)).unwrap());
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let se = 0.5 / (gaps.len() as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn presets_parse_and_round_trip() {
        for g in 1..=4 {
            let gt = group_preset(g, 10).unwrap();
            assert_eq!(gt.rule_set.len(), g);
            let spec = gt.to_file_spec(5, 1);
            let text = serde_json::to_string(&spec).unwrap();
            let back: GroundTruthFile = serde_json::from_str(&text).unwrap();
            assert_eq!(GroundTruth::from_file_spec(&back).unwrap(), gt);
        }
        assert!(group_preset(4, 9).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        let labels = vec![vec![0, 1], vec![1]];
        save_labels(&p, &labels).unwrap();
        assert_eq!(load_labels(&p).unwrap(), labels);
    }
}
