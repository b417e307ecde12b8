use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Polish, TrainConfig, TrainingPosterior};
use super::estep::{e_step, m_step_pi, observed_log_likelihood, FeatureCache, Posterior};
use super::mstep::{m_step_continuous, m_step_rules, selected_pairs, ComponentStats, RuleStepReport};
use crate::error::{Error, Result};
use crate::event_store::EventSequence;
use crate::relaxation::{top_k_indices, RelationSimplices, SelectionWeights, SoftObjective};
use crate::rule_logic::{log_sum_exp, HardParams, PreparedCorpus, RelationType, Rule, RuleSet};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HardenReport {
    /// Rules whose top-K was entirely dummy columns.
    pub degenerate: Vec<usize>,
    /// Pairs of rule indices that harden to the same rule.
    pub duplicates: Vec<(usize, usize)>,
}

/// Reads a discrete rule set off the selection weights and relation simplices.
///
/// Each row keeps its `K` largest weights (ties to the lower column), drops
/// dummy columns, and takes the argmax relation of every surviving pair;
/// ties resolve to `None`, then to the lower relation index.
pub fn harden(weights: &SelectionWeights, alphas: &RelationSimplices) -> (RuleSet, HardenReport) {
    let mut rules = Vec::with_capacity(weights.rows.len());
    let mut report = HardenReport::default();
    for (h, row) in weights.rows.iter().enumerate() {
        let mut cols: Vec<usize> = top_k_indices(row, weights.k)
            .into_iter()
            .filter(|&j| !weights.is_dummy(j))
            .collect();
        cols.sort_unstable();
        let mut rule = Rule::conjunction(cols.iter().copied());
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                let kind = argmax_relation(alphas.get(h, cols[a], cols[b]));
                rule.set_relation(cols[a], cols[b], kind).expect("pair drawn from the body");
            }
        }
        if rule.is_empty() {
            report.degenerate.push(h);
        }
        rules.push(rule);
    }
    let set = RuleSet::new(rules);
    report.duplicates = set.duplicates();
    (set, report)
}

fn argmax_relation(alpha: &[f64; 4]) -> RelationType {
    let mut best = RelationType::None;
    let mut best_val = alpha[3];
    for kind in [RelationType::Before, RelationType::Equal, RelationType::After] {
        if alpha[kind.index()] > best_val {
            best = kind;
            best_val = alpha[kind.index()];
        }
    }
    best
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub final_tau: f64,
    pub selection_grad_norm: f64,
    pub relation_grad_norm: f64,
    pub rules_changed: bool,
    /// Hardened rules at the end of the iteration.
    #[serde(skip)]
    pub rules: RuleSet,
}

impl IterationDiagnostics {
    fn record(&mut self, step: &RuleStepReport) {
        self.final_tau = step.final_tau;
        self.selection_grad_norm = step.selection_grad_norm;
        self.relation_grad_norm = step.relation_grad_norm;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub initial_log_likelihood: f64,
    pub per_iteration: Vec<IterationDiagnostics>,
    pub harden: HardenReport,
    /// Final soft-model `b0`, `γ`, `π` when rules were learned under soft posteriors.
    pub soft_rates: Option<HardParams>,
    /// Iteration whose rules were returned, when it was not the last one.
    pub best_iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: HardParams,
    pub rule_set: RuleSet,
    pub posteriors: Posterior,
    /// Observed-data log-likelihood under the hardened rules, one per iteration.
    pub elbo_trace: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    pub weights: SelectionWeights,
    pub alphas: RelationSimplices,
}

fn initial_weights<R: Rng + ?Sized>(cfg: &TrainConfig, body: usize, init: Option<&RuleSet>, rng: &mut R) -> Result<SelectionWeights> {
    let m = cfg.dummy_count();
    let cols = body + m;
    let mut rows: Vec<Vec<f64>> = (0..cfg.rules)
        .map(|_| (0..cols).map(|_| 1.0 + cfg.init_jitter * rng.random::<f64>()).collect())
        .collect();
    if let Some(set) = init {
        for (row, rule) in rows.iter_mut().zip(set.iter()) {
            for &j in rule.body() {
                row[j] += 1.0;
            }
            for d in 0..cfg.max_len.saturating_sub(rule.len()).min(m) {
                row[body + d] += 1.0;
            }
        }
    }
    if cfg.rules == 0 {
        return Ok(SelectionWeights {
            rows,
            body_count: body,
            dummies: m,
            k: cfg.max_len,
        });
    }
    SelectionWeights::new(rows, body, m, cfg.max_len)
}

fn initial_alphas(cfg: &TrainConfig, body: usize, init: Option<&RuleSet>) -> RelationSimplices {
    let mut alphas = RelationSimplices::uniform(cfg.rules, body);
    if let Some(set) = init {
        for (h, rule) in set.iter().enumerate() {
            for (&(u, v), &kind) in rule.relations() {
                let mut a = [0.1; 4];
                a[kind.index()] = 0.7;
                *alphas.get_mut(h, u, v) = a;
            }
        }
    }
    alphas
}

/// EM with the seed taken from `cfg.seed`.
pub fn fit(data: &[EventSequence], cfg: &TrainConfig, initial_rules: Option<RuleSet>) -> Result<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fit_with_rng(data, cfg, initial_rules, &mut rng)
}

pub fn fit_with_rng<R: Rng + ?Sized>(
    data: &[EventSequence],
    cfg: &TrainConfig,
    initial_rules: Option<RuleSet>,
    rng: &mut R,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::validation("no sequences to fit"));
    }
    let body = data[0].body_count();
    if data.iter().any(|s| s.body_count() != body) {
        return Err(Error::validation("sequences disagree on the number of body predicates"));
    }
    cfg.validate(body)?;
    if let Some(init) = &initial_rules {
        if init.len() != cfg.rules {
            return Err(Error::config("initial_rules", "length must equal H"));
        }
    }
    let corpus = PreparedCorpus::new(data);
    let n_events = corpus.event_count() as f64;

    let mut weights = initial_weights(cfg, body, initial_rules.as_ref(), rng)?;
    let mut alphas = initial_alphas(cfg, body, initial_rules.as_ref());
    let (mut rules, mut harden_report) = match &initial_rules {
        Some(set) => (set.clone(), HardenReport::default()),
        None => harden(&weights, &alphas),
    };

    let b0 = n_events / corpus.total_exposure();
    let mut params = HardParams {
        b0,
        gamma: vec![b0; cfg.rules],
        pi: vec![1.0 / (cfg.rules + 1) as f64; cfg.rules + 1],
    };

    let initial_ll = observed_log_likelihood(&corpus, &params, &rules, cfg.delta);
    let mut diagnostics = FitDiagnostics {
        initial_log_likelihood: initial_ll,
        ..FitDiagnostics::default()
    };
    let mut trace = Vec::new();
    let mut prev_ll = initial_ll;
    let learn = !cfg.freeze_rules && cfg.rules > 0;
    let soft = learn && cfg.training_posterior == TrainingPosterior::Soft;
    let mut soft_params = params.clone();
    let mut best: Option<(f64, RuleSet, HardParams)> = None;
    let mut polished: Option<(RuleSet, RuleSet, HardParams, f64)> = None;

    for iteration in 0..cfg.em_max_iters {
        let mut iter_diag = IterationDiagnostics {
            iteration,
            ..IterationDiagnostics::default()
        };
        let ll = if soft {
            let q = soft_e_step(&corpus, &soft_params, &weights, &alphas, cfg)?;
            soft_params.pi = m_step_pi(&q);
            let step = m_step_rules(&corpus, &q, &mut soft_params, true, &mut weights, &mut alphas, cfg, rng)?;
            iter_diag.record(&step);
            let (hardened, report) = harden(&weights, &alphas);
            harden_report = report;
            let reuse = polished.as_ref().filter(|(from, _, _, _)| *from == hardened);
            let (new_rules, refit, ll) = if let Some((_, r, p, ll)) = reuse {
                (r.clone(), p.clone(), *ll)
            } else {
                let out = polish_rules(&corpus, &hardened, &params, cfg)?;
                polished = Some((hardened.clone(), out.0.clone(), out.1.clone(), out.2));
                out
            };
            iter_diag.rules_changed = new_rules != rules;
            rules = new_rules;
            params = refit;
            ll
        } else {
            let q = e_step(&corpus, &params, &rules, cfg.delta)?;
            params.pi = m_step_pi(&q);
            let stats = ComponentStats::collect(&corpus, &q, &rules, cfg.delta);
            let (b0, gamma, _) = m_step_continuous(&stats, &params, cfg.continuous_steps)?;
            params.b0 = b0;
            params.gamma = gamma;
            if learn {
                let step = m_step_rules(&corpus, &q, &mut params.clone(), false, &mut weights, &mut alphas, cfg, rng)?;
                iter_diag.record(&step);
                let (new_rules, report) = harden(&weights, &alphas);
                iter_diag.rules_changed = new_rules != rules;
                rules = new_rules;
                harden_report = report;
            }
            observed_log_likelihood(&corpus, &params, &rules, cfg.delta)
        };
        if ll.is_nan() {
            return Err(Error::Numerical(format!("log-likelihood is NaN at iteration {iteration}")));
        }
        iter_diag.log_likelihood = ll;
        iter_diag.rules = rules.clone();
        trace.push(ll);
        if best.as_ref().is_none_or(|(b, _, _)| ll > *b) {
            best = Some((ll, rules.clone(), params.clone()));
        }
        let changed = iter_diag.rules_changed;
        diagnostics.per_iteration.push(iter_diag);
        diagnostics.iterations = iteration + 1;
        log::debug!("iteration {iteration}: log-likelihood {ll:.6}");
        if !changed && ll.is_finite() && prev_ll.is_finite() && (ll - prev_ll).abs() < cfg.elbo_tol {
            diagnostics.converged = true;
            break;
        }
        prev_ll = ll;
    }
    diagnostics.harden = harden_report;
    if let Some((ll, best_rules, best_params)) = best {
        if cfg.keep_best && ll > observed_log_likelihood(&corpus, &params, &rules, cfg.delta) {
            diagnostics.best_iteration = trace.iter().position(|&x| x == ll);
            rules = best_rules;
            params = best_params;
        }
    }
    if soft {
        diagnostics.soft_rates = Some(soft_params);
    }

    let posteriors = e_step(&corpus, &params, &rules, cfg.delta)?;
    Ok(FitResult {
        params,
        rule_set: rules,
        posteriors,
        elbo_trace: trace,
        diagnostics,
        weights,
        alphas,
    })
}

/// Responsibilities under the soft intensity, with the selection hardened
/// to the top-K columns of `W` and relations over the selected pairs.
pub fn soft_e_step(
    corpus: &PreparedCorpus,
    params: &HardParams,
    weights: &SelectionWeights,
    alphas: &RelationSimplices,
    cfg: &TrainConfig,
) -> Result<Posterior> {
    let a_hard: Vec<Vec<f64>> = weights
        .rows
        .iter()
        .map(|row| {
            let mut a = vec![0.0; row.len()];
            for j in top_k_indices(row, weights.k) {
                a[j] = 1.0;
            }
            a
        })
        .collect();
    let pairs = selected_pairs(weights);
    let obj = SoftObjective {
        corpus,
        posterior: &[],
        b0: params.b0,
        gamma: &params.gamma,
        pi: &params.pi,
        k: weights.k,
        alphas,
        pairs: &pairs,
        use_relations: true,
        ctx: cfg.soft_context(cfg.tau_min),
        delta: cfg.delta,
    };
    let joints = obj.event_log_joints(&a_hard)?;
    let mut rows = Vec::with_capacity(joints.len());
    for (e, lj) in joints.iter().enumerate() {
        let lse = log_sum_exp(lj);
        if !lse.is_finite() {
            let (sequence, event) = corpus.owner[e];
            return Err(Error::Unexplained { sequence, event });
        }
        rows.push(lj.iter().map(|x| (x - lse).exp()).collect());
    }
    Ok(Posterior { rows })
}

/// Hard-model EM on `π`, `b0`, `γ` with the rule set held fixed, starting
/// from `params` with its prior mixed halfway toward uniform (so no
/// component starts at zero). Returns the refit parameters, the final observed-data
/// log-likelihood and the iteration count.
pub fn refit_hard(corpus: &PreparedCorpus, rules: &RuleSet, params: &HardParams, cfg: &TrainConfig) -> Result<(HardParams, f64, usize)> {
    let cache = FeatureCache::new(corpus, rules, cfg.delta);
    let mut p = params.clone();
    let uniform = 1.0 / (rules.len() + 1) as f64;
    p.pi = p.pi.iter().map(|x| 0.5 * x + 0.5 * uniform).collect();
    for g in &mut p.gamma {
        if !(*g > 0.0 && g.is_finite()) {
            *g = p.b0;
        }
    }
    let mut prev = f64::NEG_INFINITY;
    for it in 0..cfg.refit_iters {
        let (q, ll) = cache.e_step_with_likelihood(&p)?;
        if (ll - prev).abs() < cfg.refit_tol * ll.abs().max(1.0) {
            return Ok((p, ll, it));
        }
        prev = ll;
        p.pi = m_step_pi(&q);
        let stats = ComponentStats::from_cache(&cache, &q);
        let (b0, gamma, _) = m_step_continuous(&stats, &p, cfg.continuous_steps)?;
        p.b0 = b0;
        p.gamma = gamma;
    }
    let ll = cache.log_likelihood(&p);
    Ok((p, ll, cfg.refit_iters))
}

fn rule_moves(rule: &Rule, body_count: usize, max_len: usize, mode: Polish) -> Vec<Rule> {
    let body: Vec<usize> = rule.body().iter().copied().collect();
    let mut out = Vec::new();
    for a in 0..body.len() {
        for b in a + 1..body.len() {
            let (u, v) = (body[a], body[b]);
            let current = rule.relation(u, v);
            for kind in RelationType::ALL {
                if kind != current {
                    let mut cand = rule.clone();
                    cand.set_relation(u, v, kind).expect("pair from the body");
                    out.push(cand);
                }
            }
        }
    }
    if mode != Polish::Full {
        return out;
    }
    let keep_relations = |cand_body: &[usize]| {
        let mut r = Rule::conjunction(cand_body.iter().copied());
        for (&(u, v), &kind) in rule.relations() {
            if cand_body.contains(&u) && cand_body.contains(&v) {
                r.set_relation(u, v, kind).expect("pair from the body");
            }
        }
        r
    };
    for i in 0..body.len() {
        let rest: Vec<usize> = body.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &x)| x).collect();
        if !rest.is_empty() {
            out.push(keep_relations(&rest));
        }
        for c in (0..body_count).filter(|c| !body.contains(c)) {
            let mut swapped = rest.clone();
            swapped.push(c);
            out.push(keep_relations(&swapped));
        }
    }
    if body.len() < max_len {
        for c in (0..body_count).filter(|c| !body.contains(c)) {
            let mut grown = body.clone();
            grown.push(c);
            out.push(keep_relations(&grown));
        }
    }
    out
}

/// Greedy local search on the hardened rules, scoring every candidate rule
/// set by its refit hard-model log-likelihood. A sweep visits each rule's
/// relation changes and, in [`Polish::Full`], predicate swaps, drops and
/// additions up to length `K`. Candidates are screened with a short refit
/// of `cfg.polish_screen_iters` iterations and accepted on strict improvement. Sweeps
/// repeat until none improves or `cfg.polish_sweeps` is reached.
pub fn polish_rules(corpus: &PreparedCorpus, rules: &RuleSet, params: &HardParams, cfg: &TrainConfig) -> Result<(RuleSet, HardParams, f64)> {
    let mut best = rules.clone();
    let (mut best_params, mut best_ll, _) = refit_hard(corpus, &best, params, cfg)?;
    if cfg.polish == Polish::None {
        return Ok((best, best_params, best_ll));
    }
    let screen = TrainConfig {
        refit_iters: cfg.polish_screen_iters,
        ..cfg.clone()
    };
    for _ in 0..cfg.polish_sweeps {
        let mut improved = false;
        for h in 0..best.len() {
            for cand_rule in rule_moves(&best.rules[h], corpus.body_count, cfg.max_len, cfg.polish) {
                if cand_rule == best.rules[h] {
                    continue;
                }
                let mut cand = best.clone();
                cand.rules[h] = cand_rule;
                let (_, screened, _) = refit_hard(corpus, &cand, &best_params, &screen)?;
                if screened > best_ll + cfg.elbo_tol.max(1e-9) {
                    let (p, ll, _) = refit_hard(corpus, &cand, &best_params, cfg)?;
                    best = cand;
                    best_params = p;
                    best_ll = ll;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok((best, best_params, best_ll))
}

/// Ranked `(component, probability)` pairs for each target event of `seq`.
pub fn explain(seq: &EventSequence, params: &HardParams, rules: &RuleSet, delta: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    let corpus = PreparedCorpus::new(std::slice::from_ref(seq));
    let q = e_step(&corpus, params, rules, delta)?;
    Ok(q.rows
        .into_iter()
        .map(|row| {
            let mut ranked: Vec<(usize, f64)> = row.into_iter().enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked
        })
        .collect())
}
