//! Latent temporal logic rule discovery for event explanation.
//!
//! Target events are modelled by a mixture point process: each event is either
//! spontaneous or triggered by one of `H` logic rules over body predicates and
//! their pairwise temporal relations. Rules are learned through a
//! differentiable relaxation inside EM.

pub mod cli;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod event_store;
pub mod relaxation;
pub mod report;
pub mod rule_logic;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
