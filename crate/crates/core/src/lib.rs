//! Monte Carlo simulator and analysis toolkit for the common-card group task.
//!
//! `N` agents each hold `N` of `N + 1` card types; exactly one card is held by
//! everybody. Agents repeatedly observe limited card samples displayed by their
//! peers, count how often they see each of their own cards, and vote for their
//! highest-confidence card. The crate simulates that process for uniform,
//! top-C and Gibbs display strategies and analyzes the resulting group failure
//! probabilities.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod draws;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod samplers;
pub mod seeding;

pub use config::{SimConfig, Strategy};
pub use error::{Error, Result};
pub use model::{CardId, DeckSet, GroupState, Topology, TopologyKind};
