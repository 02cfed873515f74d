//! Bayesian decision engine for revenue-driven A/B/n experiments.
//!
//! Each variant's revenue per visitor is modeled in two parts: a Beta
//! posterior on the conversion rate and a Normal-Inverse-Gamma posterior on
//! order values. Paired Monte Carlo draws of their product drive the
//! probability to be best and the expected-loss stopping rule. A daily
//! two-proportion Z-test ("peeking") serves as the baseline, and [`sim`]
//! runs both methods over synthetic scenarios.

pub mod baseline;
pub mod decision;
pub mod diagnostics;
mod error;
pub mod posterior;
pub mod sim;

pub use decision::{Decision, RpvSampleMatrix, VariantState, Verdict};
pub use error::{Error, Result};
pub use posterior::{BetaPosterior, NigPosterior, StudentTParams, ValueSummary};
pub use sim::{EngineConfig, Method, Outcome, RunRecord, ScenarioConfig};
