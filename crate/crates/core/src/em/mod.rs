//! EM training: closed-form E-step, alternating M-step, hardening.

mod config;
mod estep;
mod fit;
mod mstep;

pub use config::{anneal_tau, Polish, TrainConfig, TrainingPosterior};
pub use estep::{e_step, evidence_lower_bound, log_joints, m_step_pi, observed_log_likelihood, FeatureCache, Posterior};
pub use fit::{explain, fit, fit_with_rng, harden, polish_rules, refit_hard, soft_e_step, FitDiagnostics, FitResult, HardenReport, IterationDiagnostics};
pub use mstep::{m_step_continuous, m_step_rules, selected_pairs, ComponentStats, RuleStepReport};
