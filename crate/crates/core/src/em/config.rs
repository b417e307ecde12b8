use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relaxation::SoftFeatureContext;

/// Which model supplies the responsibilities that drive rule learning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingPosterior {
    /// Responsibilities under the soft intensity `b0 + γ K T` with the hardened selection.
    #[default]
    Soft,
    /// Responsibilities under the hard model with the hardened rules.
    Hard,
}

/// Local moves tried after hardening.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polish {
    None,
    /// Re-choose the relation of every body pair.
    Relations,
    /// Relation changes plus predicate swaps, drops and additions.
    #[default]
    Full,
}

/// Training hyperparameters. Serialized field names follow the config file
/// schema (`H`, `K`, `M`, `lr_selection`, …).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of rules.
    #[serde(rename = "H")]
    pub rules: usize,
    /// Maximum rule length.
    #[serde(rename = "K")]
    pub max_len: usize,
    /// Dummy columns; `None` means `M = K`.
    #[serde(rename = "M")]
    pub dummies: Option<usize>,
    pub delta: f64,
    pub lr_selection: f64,
    pub lr_relations: f64,
    /// Log-space step size for `b0` and `γ` under the soft objective.
    pub lr_rates: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    pub em_max_iters: usize,
    pub elbo_tol: f64,
    pub seed: u64,
    pub w_phase_steps: usize,
    pub alpha_phase_steps: usize,
    pub gumbel_samples: usize,
    /// Gradient-ascent steps for `b0` and `γ` per M-step.
    pub continuous_steps: usize,
    pub kernel_bandwidth: f64,
    pub softmin_sharpness: f64,
    /// Uniform jitter added to the all-ones initial selection weights.
    pub init_jitter: f64,
    /// Keep the initial rule structure fixed (no selection or relation updates).
    pub freeze_rules: bool,
    /// Sample Gumbel keys; when false the relaxation uses `ln w` directly.
    pub gumbel_noise: bool,
    pub training_posterior: TrainingPosterior,
    /// Hard-likelihood local search applied to each newly hardened rule set.
    pub polish: Polish,
    /// Maximum local-search sweeps per hardening.
    pub polish_sweeps: usize,
    /// Refit iterations used to screen each local-search candidate.
    pub polish_screen_iters: usize,
    /// Return the iterate with the highest hard-model log-likelihood.
    pub keep_best: bool,
    /// Hard-model EM iterations used to refit `π`, `b0`, `γ` for a fixed rule set.
    pub refit_iters: usize,
    /// Relative log-likelihood change that ends a refit.
    pub refit_tol: f64,
    /// Optional fixed initial rule set, as rule specs (used with `freeze_rules`).
    #[serde(default)]
    pub initial_rules: Option<Vec<crate::rule_logic::RuleSpec>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rules: 2,
            max_len: 3,
            dummies: None,
            delta: 0.0,
            lr_selection: 0.0001,
            lr_relations: 0.0035,
            lr_rates: 0.5,
            tau_max: 1.0,
            tau_min: 0.05,
            em_max_iters: 30,
            elbo_tol: 1e-3,
            seed: 0,
            w_phase_steps: 20,
            alpha_phase_steps: 20,
            gumbel_samples: 1,
            continuous_steps: 50,
            kernel_bandwidth: 2.0,
            softmin_sharpness: 10.0,
            init_jitter: 0.01,
            freeze_rules: false,
            gumbel_noise: true,
            training_posterior: TrainingPosterior::Soft,
            polish: Polish::Full,
            polish_sweeps: 3,
            polish_screen_iters: 8,
            keep_best: true,
            refit_iters: 50,
            refit_tol: 1e-7,
            initial_rules: None,
        }
    }
}

impl TrainConfig {
    pub fn dummy_count(&self) -> usize {
        self.dummies.unwrap_or(self.max_len)
    }

    pub fn soft_context(&self, temperature: f64) -> SoftFeatureContext {
        SoftFeatureContext {
            kernel_bandwidth: self.kernel_bandwidth,
            softmin_sharpness: self.softmin_sharpness,
            temperature,
        }
    }

    /// Checks every invariant against a catalog with `body_count` body predicates.
    pub fn validate(&self, body_count: usize) -> Result<()> {
        let m = self.dummy_count();
        if self.rules > 0 {
            if m < 1 {
                return Err(Error::config("M", "at least one dummy column is required"));
            }
            if self.max_len < 1 || self.max_len > body_count + m {
                return Err(Error::config("K", format!("{} must lie in 1..={}", self.max_len, body_count + m)));
            }
        }
        let positive = [
            ("lr_selection", self.lr_selection),
            ("lr_relations", self.lr_relations),
            ("lr_rates", self.lr_rates),
            ("tau_min", self.tau_min),
            ("kernel_bandwidth", self.kernel_bandwidth),
            ("softmin_sharpness", self.softmin_sharpness),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("{v} must be positive")));
            }
        }
        if !(self.tau_max > self.tau_min && self.tau_max.is_finite()) {
            return Err(Error::config("tau_max", "must exceed tau_min"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta", "must be non-negative"));
        }
        if self.em_max_iters == 0 {
            return Err(Error::config("em_max_iters", "must be at least 1"));
        }
        if self.gumbel_samples == 0 {
            return Err(Error::config("gumbel_samples", "must be at least 1"));
        }
        if !(self.elbo_tol >= 0.0) {
            return Err(Error::config("elbo_tol", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.init_jitter) {
            return Err(Error::config("init_jitter", "must lie in [0, 1)"));
        }
        if let Some(init) = &self.initial_rules {
            if init.len() != self.rules {
                return Err(Error::config("initial_rules", format!("{} rules given, H = {}", init.len(), self.rules)));
            }
        }
        Ok(())
    }

    /// Reads a TOML or JSON config, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::config("<file>", e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| Error::config("<file>", e.to_string()))
        }
    }
}

/// Geometric temperature schedule over one phase of `budget` steps:
/// `tau_max` at step 0, `tau_min` at the final step.
pub fn anneal_tau(cfg: &TrainConfig, inner_step: usize, budget: usize) -> f64 {
    if budget <= 1 {
        return cfg.tau_min;
    }
    let frac = inner_step.min(budget - 1) as f64 / (budget - 1) as f64;
    cfg.tau_max * (cfg.tau_min / cfg.tau_max).powf(frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let cfg = TrainConfig {
            tau_max: 2.0,
            tau_min: 0.02,
            ..TrainConfig::default()
        };
        assert_eq!(anneal_tau(&cfg, 0, 51), 2.0);
        assert!((anneal_tau(&cfg, 50, 51) - 0.02).abs() < 1e-15);
        assert!((anneal_tau(&cfg, 25, 51) - (2.0f64 * 0.02).sqrt()).abs() < 1e-12);
        let taus: Vec<f64> = (0..51).map(|s| anneal_tau(&cfg, s, 51)).collect();
        assert!(taus.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate(10).is_ok());
        let bad = TrainConfig {
            max_len: 20,
            dummies: Some(3),
            ..TrainConfig::default()
        };
        assert!(bad.validate(10).is_err());
        let bad = TrainConfig {
            tau_min: 2.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate(10).is_err());
        let bad = TrainConfig {
            lr_selection: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate(10).is_err());
        let zero = TrainConfig {
            rules: 0,
            ..TrainConfig::default()
        };
        assert!(zero.validate(10).is_ok());
    }

    #[test]
    fn parses_toml_names() {
        let cfg: TrainConfig = toml::from_str("H = 1\nK = 2\nM = 1\nlr_selection = 0.001\nseed = 9\n").unwrap();
        assert_eq!((cfg.rules, cfg.max_len, cfg.dummy_count(), cfg.seed), (1, 2, 1, 9));
        assert!(toml::from_str::<TrainConfig>("bogus = 1\n").is_err());
    }
}
