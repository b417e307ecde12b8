//! Fits the group-1 preset on a simulated corpus and prints recovery metrics.
//!
//! `cargo run --release --example recovery -- [seed] [count] [horizon] [config.toml]`

use std::time::Instant;

use rule_tpp::em::{fit, TrainConfig};
use rule_tpp::evaluation::{assignment_cosine, evaluate_rules, event_time_mae, hard_assignments};
use rule_tpp::simulator::{group_preset, simulate_corpus};

fn main() -> rule_tpp::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let horizon: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(40.0);
    let base = match args.next() {
        Some(path) => TrainConfig::from_file(std::path::Path::new(&path))?,
        None => TrainConfig::default(),
    };
    let mut gt = group_preset(1, 10)?;
    gt.horizon = horizon;
    let corpus = simulate_corpus(&gt, count, seed, 100)?;
    let test = simulate_corpus(&gt, 500, seed + 10_000, 100)?;
    let cfg = TrainConfig { seed, ..base };
    let start = Instant::now();
    let result = fit(&corpus.sequences, &cfg, None)?;
    let elapsed = start.elapsed().as_secs_f64();
    for d in &result.diagnostics.per_iteration {
        let rules: Vec<String> = d.rules.iter().map(|r| r.describe(&gt.catalog)).collect();
        println!("iter {}: ll {:.3} {}", d.iteration, d.log_likelihood, rules.join(" | "));
    }
    for (h, rule) in result.rule_set.iter().enumerate() {
        println!("rule {h}: {} gamma {:.3} pi {:.3}", rule.describe(&gt.catalog), result.params.gamma[h], result.params.pi[h + 1]);
    }
    println!("b0 {:.3} pi0 {:.3}", result.params.b0, result.params.pi[0]);

    let inferred = hard_assignments(&result.posteriors.rows, &corpus.sequences)?;
    let report = evaluate_rules(&result.rule_set, &result.params, &gt.rule_set, &gt.params);
    let cos = assignment_cosine(&result.rule_set, &inferred, &gt.rule_set, &corpus.labels, gt.catalog.body_count())?;
    let et = event_time_mae(&result.params, &result.rule_set, &corpus.sequences, &test.sequences, gt.delta, 2000)?;
    println!(
        "seed {seed} jaccard {:.3} weight_mae {:.3} prior_mae {:.3} cosine {:.3} et {:.3} vs {:.3} iters {} elapsed {elapsed:.1}s",
        report.jaccard, report.weight_mae, report.prior_mae, cos, et.model_mae, et.baseline_mae, result.diagnostics.iterations
    );
    Ok(())
}
