//! Serialized model reports and per-event explanations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::{explain, FitDiagnostics, FitResult, TrainConfig};
use crate::error::{Error, Result};
use crate::event_store::{last_before, EventSequence, PredicateCatalog};
use crate::rule_logic::{HardParams, RuleSet, RuleSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedComponent {
    /// 0 for spontaneous, `h` for rule `h`.
    pub component: usize,
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventExplanation {
    pub index: usize,
    pub time: f64,
    pub ranking: Vec<RankedComponent>,
    /// Last occurrence before the event of each body predicate of the top rule.
    pub groundings: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceExplanation {
    pub sequence: usize,
    pub events: Vec<EventExplanation>,
}

pub fn component_label(component: usize) -> String {
    if component == 0 {
        "spontaneous".to_string()
    } else {
        format!("rule {component}")
    }
}

/// Ranked posterior per target event of `seq`, with the top rule's groundings.
pub fn explain_sequence(
    index: usize,
    seq: &EventSequence,
    params: &HardParams,
    rules: &RuleSet,
    catalog: &PredicateCatalog,
    delta: f64,
) -> Result<SequenceExplanation> {
    let ranked = explain(seq, params, rules, delta)?;
    let events = ranked
        .into_iter()
        .enumerate()
        .map(|(i, list)| {
            let t = seq.target_times()[i];
            let top = list[0].0;
            let groundings = if top == 0 {
                Vec::new()
            } else {
                rules.rules[top - 1]
                    .body()
                    .iter()
                    .filter_map(|&j| {
                        let name = catalog.body_name(j)?.to_string();
                        last_before(seq.predicate_times(j)?, t).map(|tj| (name, tj))
                    })
                    .collect()
            };
            EventExplanation {
                index: i,
                time: t,
                ranking: list
                    .into_iter()
                    .map(|(component, probability)| RankedComponent {
                        component,
                        label: component_label(component),
                        probability,
                    })
                    .collect(),
                groundings,
            }
        })
        .collect();
    Ok(SequenceExplanation { sequence: index, events })
}

/// Aligned text table: one block per event, one row per component.
pub fn format_explanation(ex: &SequenceExplanation) -> String {
    let mut out = format!("sequence {}\n", ex.sequence);
    for ev in &ex.events {
        out.push_str(&format!("event {} at t={:.3}\n", ev.index, ev.time));
        for (r, rc) in ev.ranking.iter().enumerate() {
            let mut line = format!("  {:<12} {:.3}", format!("{},", rc.label), rc.probability);
            if r == 0 && !ev.groundings.is_empty() {
                let g: Vec<String> = ev.groundings.iter().map(|(n, t)| format!("{n}@{t:.3}")).collect();
                line = format!("  {}, {:.3}, groundings: {}", rc.label, rc.probability, g.join(" "));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
    }
    out
}

/// Everything a fit run writes: rules, parameters, traces and explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub catalog: PredicateCatalog,
    pub config: TrainConfig,
    pub seed: u64,
    pub rules: Vec<RuleSpec>,
    pub rules_text: Vec<String>,
    pub b0: f64,
    pub gamma: Vec<f64>,
    pub pi: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    /// Mean inter-event time of the training corpus.
    pub mean_inter_event: f64,
    pub explanations: Vec<SequenceExplanation>,
}

impl ModelReport {
    pub fn new(catalog: &PredicateCatalog, cfg: &TrainConfig, fit: &FitResult, corpus: &[EventSequence]) -> Result<Self> {
        let explanations = corpus
            .iter()
            .enumerate()
            .map(|(i, s)| explain_sequence(i, s, &fit.params, &fit.rule_set, catalog, cfg.delta))
            .collect::<Result<Vec<_>>>()?;
        let (gaps, n) = corpus.iter().fold((0.0, 0usize), |(g, n), s| {
            let last = *s.target_times().last().expect("non-empty target list");
            (g + last, n + s.target_times().len())
        });
        Ok(ModelReport {
            catalog: catalog.clone(),
            config: cfg.clone(),
            seed: cfg.seed,
            rules: fit.rule_set.to_specs(catalog),
            rules_text: fit.rule_set.iter().map(|r| r.describe(catalog)).collect(),
            b0: fit.params.b0,
            gamma: fit.params.gamma.clone(),
            pi: fit.params.pi.clone(),
            elbo_trace: fit.elbo_trace.clone(),
            diagnostics: fit.diagnostics.clone(),
            mean_inter_event: gaps / n as f64,
            explanations,
        })
    }

    pub fn rule_set(&self) -> Result<RuleSet> {
        RuleSet::from_specs(&self.rules, &self.catalog)
    }

    pub fn params(&self) -> Result<HardParams> {
        HardParams::new(self.b0, self.gamma.clone(), self.pi.clone())
    }

    /// Top-ranked component of every event, per sequence.
    pub fn top_components(&self) -> Vec<Vec<usize>> {
        self.explanations
            .iter()
            .map(|s| s.events.iter().map(|e| e.ranking[0].component).collect())
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Differences between two catalogs, empty when they agree.
pub fn catalog_differences(a: &PredicateCatalog, b: &PredicateCatalog) -> Vec<String> {
    let mut diff = Vec::new();
    for n in a.names() {
        if !b.names().contains(n) {
            diff.push(format!("-{n}"));
        }
    }
    for n in b.names() {
        if !a.names().contains(n) {
            diff.push(format!("+{n}"));
        }
    }
    if diff.is_empty() && (a.names() != b.names() || a.target_index() != b.target_index()) {
        diff.push("predicate order or target differs".into());
    }
    diff
}
