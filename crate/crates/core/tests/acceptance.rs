//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails. `ACCEPTANCE_ONLY=5,7` restricts the run to a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rule_tpp::em::{e_step, evidence_lower_bound, fit, m_step_pi, observed_log_likelihood, Posterior, TrainConfig, TrainingPosterior};
use rule_tpp::evaluation::{assignment_cosine, evaluate_rules, event_time_mae, hard_assignments};
use rule_tpp::event_store::EventSequence;
use rule_tpp::relaxation::{
    pair_count, relaxed_top_k, top_k_indices, weights_gradient, RelationSimplices, SelectionSample, SelectionWeights,
    SoftFeatureContext, SoftObjective,
};
use rule_tpp::rule_logic::{ground_feature, IntervalGrid, PreparedCorpus, RuleSet};
use rule_tpp::simulator::{group_preset, simulate_corpus, GroundTruth};
use rule_tpp::stats::{ks_one_sample, ks_two_sample};

use common::{midpoint_compensator, oracle_log_likelihood, random_params, random_rule, random_sequence};

// Criterion 1-4 fixture.
const RECOVERY_SEEDS: u64 = 10;
const RECOVERY_SEQUENCES: usize = 2000;
const RECOVERY_PREDICATES: usize = 10;
const RECOVERY_HORIZON: f64 = 40.0;
const HELD_OUT_SEQUENCES: usize = 500;
const MIN_RECOVERED: usize = 8;
const MIN_JACCARD: f64 = 0.5;
const MIN_COSINE: f64 = 0.70;
const MAX_PRIOR_MAE: f64 = 0.1;
const MAX_WEIGHT_MAE: f64 = 0.15;

const ROW_SUM_TOL: f64 = 1e-10;
const JENSEN_TOL: f64 = 1e-8;
const MONOTONE_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const TOPK_SUM_TOL: f64 = 1e-9;
const INTEGRAL_REL_TOL: f64 = 1e-6;
const KS_MIN_P: f64 = 0.01;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- 1-4

struct SeedRun {
    seed: u64,
    recovered: bool,
    jaccard: f64,
    cosine: f64,
    prior_mae: f64,
    weight_mae: f64,
    model_et: f64,
    baseline_et: f64,
    secs: f64,
}

fn recovery_runs() -> Vec<SeedRun> {
    let mut gt = group_preset(1, RECOVERY_PREDICATES).unwrap();
    gt.horizon = RECOVERY_HORIZON;
    (0..RECOVERY_SEEDS)
        .map(|seed| {
            let start = Instant::now();
            let train = simulate_corpus(&gt, RECOVERY_SEQUENCES, seed, 100).unwrap();
            let test = simulate_corpus(&gt, HELD_OUT_SEQUENCES, seed + 10_000, 100).unwrap();
            let cfg = TrainConfig {
                rules: 2,
                max_len: 3,
                seed,
                ..TrainConfig::default()
            };
            let result = fit(&train.sequences, &cfg, None).unwrap();
            let report = evaluate_rules(&result.rule_set, &result.params, &gt.rule_set, &gt.params);
            let inferred = hard_assignments(&result.posteriors.rows, &train.sequences).unwrap();
            let cosine = assignment_cosine(&result.rule_set, &inferred, &gt.rule_set, &train.labels, gt.catalog.body_count()).unwrap();
            let et = event_time_mae(&result.params, &result.rule_set, &train.sequences, &test.sequences, gt.delta, 2000).unwrap();
            let run = SeedRun {
                seed,
                recovered: report.matched.iter().all(Option::is_some),
                jaccard: report.jaccard,
                cosine,
                prior_mae: report.prior_mae,
                weight_mae: report.weight_mae,
                model_et: et.model_mae,
                baseline_et: et.baseline_mae,
                secs: start.elapsed().as_secs_f64(),
            };
            let rules: Vec<String> = result.rule_set.iter().map(|r| r.describe(&gt.catalog)).collect();
            println!(
                "  seed {}: recovered {} jaccard {:.3} cosine {:.3} prior_mae {:.4} weight_mae {:.4} event_time {:.3} vs {:.3} ({:.0}s) [{}]",
                run.seed,
                run.recovered,
                run.jaccard,
                run.cosine,
                run.prior_mae,
                run.weight_mae,
                run.model_et,
                run.baseline_et,
                run.secs,
                rules.join(" | ")
            );
            run
        })
        .collect()
}

fn passing(runs: &[SeedRun]) -> Vec<&SeedRun> {
    runs.iter().filter(|r| r.recovered && r.jaccard >= MIN_JACCARD).collect()
}

fn criterion_1(runs: &[SeedRun]) -> Outcome {
    let recovered = runs.iter().filter(|r| r.recovered).count();
    let low_jaccard = runs.iter().filter(|r| r.recovered && r.jaccard < MIN_JACCARD).count();
    let worst = runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    check(
        recovered >= MIN_RECOVERED && low_jaccard == 0,
        format!(
            "exact rule in {recovered}/{} seeds (need {MIN_RECOVERED}), {low_jaccard} recovered seeds below Jaccard {MIN_JACCARD}, slowest seed {worst:.0}s",
            runs.len()
        ),
    )
}

fn criterion_2(runs: &[SeedRun]) -> Outcome {
    let pass = passing(runs);
    if pass.is_empty() {
        return Err("no passing seeds".into());
    }
    let mean = pass.iter().map(|r| r.cosine).sum::<f64>() / pass.len() as f64;
    check(mean >= MIN_COSINE, format!("mean assignment cosine {mean:.4} over {} seeds (need >= {MIN_COSINE})", pass.len()))
}

fn criterion_3(runs: &[SeedRun]) -> Outcome {
    let pass = passing(runs);
    if pass.is_empty() {
        return Err("no passing seeds".into());
    }
    let worst_prior = pass.iter().map(|r| r.prior_mae).fold(0.0, f64::max);
    let worst_weight = pass.iter().map(|r| r.weight_mae).fold(0.0, f64::max);
    check(
        worst_prior <= MAX_PRIOR_MAE && worst_weight <= MAX_WEIGHT_MAE,
        format!("worst prior MAE {worst_prior:.4} (<= {MAX_PRIOR_MAE}), worst weight MAE {worst_weight:.4} (<= {MAX_WEIGHT_MAE})"),
    )
}

fn criterion_4(runs: &[SeedRun]) -> Outcome {
    let better = runs.iter().filter(|r| r.model_et < r.baseline_et).count();
    let model = runs.iter().map(|r| r.model_et).sum::<f64>() / runs.len() as f64;
    let base = runs.iter().map(|r| r.baseline_et).sum::<f64>() / runs.len() as f64;
    check(
        better == runs.len(),
        format!("model beats constant-gap predictor on {better}/{} held-out splits (mean MAE {model:.4} vs {base:.4})", runs.len()),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let mut worst_row: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..100 {
        let body = r.random_range(2..6);
        let h = r.random_range(1..4);
        let rules = RuleSet::new((0..h).map(|_| random_rule(&mut r, body)).collect());
        let params = random_params(&mut r, h);
        let delta = if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..0.5) };
        let seqs: Vec<EventSequence> = (0..r.random_range(1..5)).map(|_| random_sequence(&mut r, body, 10.0)).collect();
        let corpus = PreparedCorpus::new(&seqs);
        let q = e_step(&corpus, &params, &rules, delta).unwrap();
        for row in &q.rows {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let elbo = evidence_lower_bound(&corpus, &params, &rules, &q, delta);
        let ll = observed_log_likelihood(&corpus, &params, &rules, delta);
        let oracle = oracle_log_likelihood(&params, &rules, &seqs, delta);
        worst_gap = worst_gap.max((elbo - ll).abs());
        worst_oracle = worst_oracle.max((elbo - oracle).abs());
    }
    check(
        worst_row <= ROW_SUM_TOL && worst_gap <= JENSEN_TOL && worst_oracle <= JENSEN_TOL,
        format!("max |row sum - 1| {worst_row:.2e}, max |ELBO - loglik| {worst_gap:.2e}, max |ELBO - pointwise oracle| {worst_oracle:.2e} over 100 instances"),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst_drop: f64 = 0.0;
    let mut iterations = 0usize;
    for f in 0..20 {
        let group = 1 + f % 3;
        let mut gt = group_preset(group, 8).unwrap();
        gt.params.b0 = r.random_range(0.1..0.5);
        for g in gt.params.gamma.iter_mut() {
            *g = r.random_range(0.5..2.0);
        }
        let gt = GroundTruth::new(gt.catalog, gt.rule_set, gt.params, gt.body_rates, gt.horizon, gt.delta).unwrap();
        let data = simulate_corpus(&gt, 150, 600 + f as u64, 100).unwrap();
        let h = r.random_range(1..4);
        let frozen = RuleSet::new((0..h).map(|_| random_rule(&mut r, 8)).collect());
        let cfg = TrainConfig {
            rules: h,
            max_len: 3,
            freeze_rules: true,
            gumbel_noise: false,
            training_posterior: TrainingPosterior::Hard,
            em_max_iters: 20,
            elbo_tol: 0.0,
            keep_best: false,
            continuous_steps: 3,
            seed: f as u64,
            ..TrainConfig::default()
        };
        let result = fit(&data.sequences, &cfg, Some(frozen)).unwrap();
        let mut trace = vec![result.diagnostics.initial_log_likelihood];
        trace.extend(&result.elbo_trace);
        iterations += result.elbo_trace.len();
        for w in trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    check(
        worst_drop <= MONOTONE_TOL && iterations == 400,
        format!("largest log-likelihood decrease {worst_drop:.2e} over {iterations} iterations on 20 fixtures"),
    )
}

// ---------------------------------------------------------------- 7

struct GradFixture {
    corpus: PreparedCorpus,
    posterior: Vec<Vec<f64>>,
    b0: f64,
    gamma: Vec<f64>,
    pi: Vec<f64>,
    weights: SelectionWeights,
    noise: Vec<Vec<f64>>,
    alphas: RelationSimplices,
    pairs: Vec<Vec<(usize, usize)>>,
    ctx: SoftFeatureContext,
    delta: f64,
}

impl GradFixture {
    fn random(r: &mut ChaCha8Rng) -> Self {
        let body = r.random_range(3..6);
        let dummies = r.random_range(1..3);
        let h = r.random_range(1..3);
        let k = r.random_range(1..=3);
        let seqs: Vec<EventSequence> = (0..3).map(|_| random_sequence(r, body, 8.0)).collect();
        let corpus = PreparedCorpus::new(&seqs);
        let posterior = (0..corpus.event_count())
            .map(|_| {
                let raw: Vec<f64> = (0..=h).map(|_| r.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            })
            .collect();
        let params = random_params(r, h);
        let rows = (0..h).map(|_| (0..body + dummies).map(|_| r.random_range(0.3..3.0)).collect()).collect();
        let weights = SelectionWeights::new(rows, body, dummies, k).unwrap();
        let noise = (0..h).map(|_| (0..body + dummies).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let mut alphas = RelationSimplices::uniform(h, body);
        for rule in alphas.rules.iter_mut() {
            for simplex in rule.iter_mut() {
                let raw: [f64; 4] = std::array::from_fn(|_| r.random_range(0.05..1.0));
                let s: f64 = raw.iter().sum();
                *simplex = raw.map(|x| x / s);
            }
        }
        let all_pairs: Vec<(usize, usize)> = (0..body).flat_map(|u| (u + 1..body).map(move |v| (u, v))).collect();
        assert_eq!(all_pairs.len(), pair_count(body));
        let pairs = (0..h).map(|_| all_pairs.iter().copied().filter(|_| r.random_bool(0.7)).collect()).collect();
        GradFixture {
            corpus,
            posterior,
            b0: params.b0,
            gamma: params.gamma,
            pi: params.pi,
            weights,
            noise,
            alphas,
            pairs,
            ctx: SoftFeatureContext {
                kernel_bandwidth: 2.0,
                softmin_sharpness: 10.0,
                temperature: r.random_range(0.2..1.0),
            },
            delta: r.random_range(0.0..0.5),
        }
    }

    fn objective<'a>(&'a self, b0: f64, gamma: &'a [f64], alphas: &'a RelationSimplices) -> SoftObjective<'a> {
        SoftObjective {
            corpus: &self.corpus,
            posterior: &self.posterior,
            b0,
            gamma,
            pi: &self.pi,
            k: self.weights.k,
            alphas,
            pairs: &self.pairs,
            use_relations: true,
            ctx: self.ctx,
            delta: self.delta,
        }
    }

    fn sample(&self, weights: &SelectionWeights) -> SelectionSample {
        SelectionSample::from_noise(weights, self.noise.clone(), self.ctx.temperature).unwrap()
    }

    fn value(&self, weights: &SelectionWeights, b0: f64, gamma: &[f64], alphas: &RelationSimplices) -> f64 {
        self.objective(b0, gamma, alphas).value(&self.sample(weights).a_tilde).unwrap()
    }
}

/// `max |analytic - fd| / max(max |fd|, max |analytic|)` over one block.
fn block_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = analytic.iter().chain(fd).fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut worst = [0.0f64; 4];
    for _ in 0..50 {
        let fx = GradFixture::random(&mut r);
        let sample = fx.sample(&fx.weights);
        let g = fx.objective(fx.b0, &fx.gamma, &fx.alphas).value_and_gradient(&sample.a_tilde).unwrap();

        let grad_w: Vec<f64> = weights_gradient(&fx.weights, &sample, &g.a_tilde).concat();
        let mut fd_w = Vec::new();
        for h in 0..fx.weights.rows.len() {
            for j in 0..fx.weights.columns() {
                fd_w.push(central(
                    |x| {
                        let mut w = fx.weights.clone();
                        w.rows[h][j] = x;
                        fx.value(&w, fx.b0, &fx.gamma, &fx.alphas)
                    },
                    fx.weights.rows[h][j],
                ));
            }
        }
        worst[0] = worst[0].max(block_error(&grad_w, &fd_w));

        let mut grad_a = Vec::new();
        let mut fd_a = Vec::new();
        for h in 0..fx.gamma.len() {
            for &(u, v) in &fx.pairs[h] {
                for k in 0..4 {
                    grad_a.push(g.alpha.get(h, u, v)[k]);
                    fd_a.push(central(
                        |x| {
                            let mut a = fx.alphas.clone();
                            a.get_mut(h, u, v)[k] = x;
                            fx.value(&fx.weights, fx.b0, &fx.gamma, &a)
                        },
                        fx.alphas.get(h, u, v)[k],
                    ));
                }
            }
        }
        worst[1] = worst[1].max(block_error(&grad_a, &fd_a));

        let fd_g: Vec<f64> = (0..fx.gamma.len())
            .map(|h| {
                central(
                    |x| {
                        let mut gamma = fx.gamma.clone();
                        gamma[h] = x;
                        fx.value(&fx.weights, fx.b0, &gamma, &fx.alphas)
                    },
                    fx.gamma[h],
                )
            })
            .collect();
        worst[2] = worst[2].max(block_error(&g.gamma, &fd_g));

        let fd_b = central(|x| fx.value(&fx.weights, x, &fx.gamma, &fx.alphas), fx.b0);
        worst[3] = worst[3].max(block_error(&[g.b0], &[fd_b]));
    }
    check(
        worst.iter().all(|&e| e <= FD_REL_TOL),
        format!(
            "max relative error W {:.2e}, alpha {:.2e}, gamma {:.2e}, b0 {:.2e} over 50 instances each",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut r = rng(8);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..10_000 {
        let n = r.random_range(2..20);
        let k = r.random_range(1..=n);
        let tau = (r.random_range(-3.0f64..1.0)).exp();
        let keys: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
        let out = relaxed_top_k(&keys, k, tau).unwrap();
        worst_sum = worst_sum.max((out.iter().sum::<f64>() - k as f64).abs());
    }
    let mut mismatches = 0;
    let mut closest_mismatch = f64::INFINITY;
    for _ in 0..100 {
        let n = r.random_range(3..20);
        let k = r.random_range(1..n);
        let keys: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
        if !top_k_agrees(&keys, k) {
            mismatches += 1;
            closest_mismatch = closest_mismatch.min(min_gap(&keys));
        }
    }
    // Same draw count with keys at least 10 τ apart.
    let mut separated_mismatches = 0;
    for _ in 0..100 {
        let n = r.random_range(3..20);
        let k = r.random_range(1..n);
        let keys = loop {
            let keys: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
            if min_gap(&keys) >= 10.0 * TOPK_TAU {
                break keys;
            }
        };
        if !top_k_agrees(&keys, k) {
            separated_mismatches += 1;
        }
    }
    check(
        worst_sum <= TOPK_SUM_TOL && mismatches == 0,
        format!(
            "max |row sum - K| {worst_sum:.2e} over 10^4 draws, {mismatches}/100 top-K mismatches at tau {TOPK_TAU} \
             (smallest key gap in a mismatch {closest_mismatch:.3}); {separated_mismatches}/100 with key gaps >= {}",
            10.0 * TOPK_TAU
        ),
    )
}

const TOPK_TAU: f64 = 0.01;

fn top_k_agrees(keys: &[f64], k: usize) -> bool {
    let out = relaxed_top_k(keys, k, TOPK_TAU).unwrap();
    let mut soft = top_k_indices(&out, k);
    let mut hard = top_k_indices(keys, k);
    soft.sort();
    hard.sort();
    soft == hard
}

fn min_gap(keys: &[f64]) -> f64 {
    let mut sorted = keys.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------- 9

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    // Fine initial panels so short on-windows are not stepped over.
    let panels = 4096;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            rec(f, lo, hi, fa, fm, fb, (hi - lo) / 6.0 * (fa + 4.0 * fm + fb), tol / panels as f64, 50)
        })
        .sum()
}

fn criterion_9() -> Outcome {
    let mut r = rng(9);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let body = r.random_range(2..6);
        let seq = random_sequence(&mut r, body, 10.0);
        let rule = random_rule(&mut r, body);
        let delta = if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..0.5) };
        let a = r.random_range(0.0..8.0);
        let b = r.random_range(a + 0.1..10.0);
        let exact = IntervalGrid::build(&seq, a, b).feature_integral(&rule, delta).0;
        let quad = adaptive_simpson(&|t| ground_feature(&rule, &seq, t, delta) as u8 as f64, a, b, 1e-11);
        let rel = (exact - quad).abs() / exact.abs().max(1e-9 * (b - a)).max(f64::MIN_POSITIVE);
        worst = worst.max(if exact == 0.0 && quad.abs() < 1e-12 { 0.0 } else { rel });
    }
    check(worst <= INTEGRAL_REL_TOL, format!("max relative error {worst:.2e} over 200 triples"))
}

// ---------------------------------------------------------------- 10

fn exponential(r: &mut ChaCha8Rng, rate: f64) -> f64 {
    -(1.0 - r.random::<f64>()).ln() / rate
}

/// Target times by Ogata thinning, with the same component-per-event
/// generative story and redraw-on-empty rule as the library sampler.
fn ogata_sequence(gt: &GroundTruth, r: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let body: Vec<Vec<f64>> = gt
            .body_rates
            .iter()
            .map(|&rate| {
                let mut ts = Vec::new();
                let mut t = exponential(r, rate);
                while t <= gt.horizon {
                    ts.push(t);
                    t += exponential(r, rate);
                }
                ts
            })
            .collect();
        let probe = EventSequence::new(body, vec![gt.horizon], gt.horizon).unwrap();
        let mut targets = Vec::new();
        let mut t = 0.0;
        'events: loop {
            let u: f64 = r.random();
            let mut z = 0;
            let mut acc = 0.0;
            for (c, p) in gt.params.pi.iter().enumerate() {
                acc += p;
                z = c;
                if u < acc {
                    break;
                }
            }
            let bound = if z == 0 { gt.params.b0 } else { gt.params.gamma[z - 1] };
            let mut s = t;
            loop {
                s += exponential(r, bound);
                if s > gt.horizon {
                    break 'events;
                }
                let lam = if z == 0 {
                    gt.params.b0
                } else if ground_feature(&gt.rule_set.rules[z - 1], &probe, s, gt.delta) {
                    gt.params.gamma[z - 1]
                } else {
                    0.0
                };
                if r.random::<f64>() * bound < lam {
                    targets.push(s);
                    t = s;
                    continue 'events;
                }
            }
        }
        if !targets.is_empty() {
            return targets;
        }
    }
}

fn criterion_10() -> Outcome {
    const SAMPLES: usize = 5000;
    let mut long = group_preset(2, 10).unwrap();
    long.horizon = 400.0;
    let sim = simulate_corpus(&long, 60, 10, 100).unwrap();
    let mut rescaled = Vec::new();
    'outer: for (seq, labels) in sim.sequences.iter().zip(&sim.labels) {
        for (i, &t) in seq.target_times().iter().enumerate() {
            let a = seq.interval_start(i);
            rescaled.push(midpoint_compensator(&long.params, &long.rule_set, seq, labels[i], a, t, long.delta));
            if rescaled.len() == SAMPLES {
                break 'outer;
            }
        }
    }
    let n_rescaled = rescaled.len();
    let one = ks_one_sample(&rescaled, |x| 1.0 - (-x.max(0.0)).exp());

    let gt = group_preset(1, 10).unwrap();
    let exact: Vec<f64> = simulate_corpus(&gt, SAMPLES, 11, 100).unwrap().sequences.iter().map(|s| s.target_times()[0]).collect();
    let mut r = rng(12);
    let thinned: Vec<f64> = (0..SAMPLES).map(|_| ogata_sequence(&gt, &mut r)[0]).collect();
    let two = ks_two_sample(&exact, &thinned);
    check(
        n_rescaled == SAMPLES && one.p_value > KS_MIN_P && two.p_value > KS_MIN_P,
        format!(
            "rescaled vs Exp(1): D {:.4} p {:.3} ({n_rescaled} samples); sampler vs thinning: D {:.4} p {:.3}",
            one.statistic, one.p_value, two.statistic, two.p_value
        ),
    )
}

// ---------------------------------------------------------------- 11

fn criterion_11() -> Outcome {
    let mut r = rng(11);
    let mut mismatches = 0usize;
    let mut entries = 0usize;
    for _ in 0..200 {
        let n = r.random_range(1..300);
        let c = r.random_range(1..6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| r.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            })
            .collect();
        let q = Posterior { rows: rows.clone() };
        let pi = m_step_pi(&q);
        for z in 0..c {
            let mut sum = 0.0;
            for row in &rows {
                sum += row[z];
            }
            let mean = sum / n as f64;
            entries += 1;
            if mean.to_bits() != pi[z].to_bits() {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, format!("{mismatches}/{entries} entries differ from column means"))
}

// ----------------------------------------------------------------

fn run(id: usize, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {id:>2}: PASS  {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("criterion {id:>2}: FAIL  {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut ok = true;
    let quick: [(usize, fn() -> Outcome); 7] = [
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    for (id, f) in quick {
        if wanted(id) {
            ok &= run(id, f);
        }
    }
    if (1..=4).any(wanted) {
        println!("recovery fixture: {RECOVERY_SEEDS} seeds x {RECOVERY_SEQUENCES} sequences, horizon {RECOVERY_HORIZON}");
        let runs = recovery_runs();
        let table: [(usize, fn(&[SeedRun]) -> Outcome); 4] = [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4)];
        for (id, f) in table {
            if wanted(id) {
                ok &= run(id, || f(&runs));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
