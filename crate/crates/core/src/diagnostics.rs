//! Posterior predictive checks for the conversion and order-value model.
//!
//! Each replicate draws `(p, mu, sigma^2)` from the joint posterior and
//! simulates as many visitors as were observed: Binomial conversions and
//! Normal transaction values. The check reports how often the replicated
//! statistic reaches the observed one.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Normal};

use crate::decision::VariantState;
use crate::error::{Error, Result};
use crate::posterior::ValueSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PpcStatistic {
    /// Mean transaction value.
    Mean,
    /// Sample variance (n - 1 denominator) of transaction values.
    Variance,
    /// Largest transaction value.
    Max,
    /// Fraction of visitors who did not convert.
    ZeroFraction,
}

impl PpcStatistic {
    pub const ALL: [PpcStatistic; 4] = [Self::Mean, Self::Variance, Self::Max, Self::ZeroFraction];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Variance => "variance",
            Self::Max => "max",
            Self::ZeroFraction => "zero_fraction",
        }
    }

    /// Evaluates the statistic on `transactions` from `visitors` visitors.
    /// Value statistics of an empty set are zero.
    pub fn evaluate(&self, transactions: &[f64], visitors: u64) -> f64 {
        let n = transactions.len();
        match self {
            Self::Mean if n > 0 => transactions.iter().sum::<f64>() / n as f64,
            Self::Variance if n > 1 => {
                let mean = transactions.iter().sum::<f64>() / n as f64;
                transactions.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            }
            Self::Max if n > 0 => transactions.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Self::ZeroFraction if visitors > 0 => (visitors - n as u64) as f64 / visitors as f64,
            _ => 0.0,
        }
    }
}

impl fmt::Display for PpcStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownStatistic(pub String);

impl fmt::Display for UnknownStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = PpcStatistic::ALL.iter().map(|s| s.name()).collect();
        write!(f, "unknown statistic `{}` (expected one of: {})", self.0, names.join(", "))
    }
}

impl std::error::Error for UnknownStatistic {}

impl FromStr for PpcStatistic {
    type Err = UnknownStatistic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PpcStatistic::ALL
            .into_iter()
            .find(|stat| stat.name() == s)
            .ok_or_else(|| UnknownStatistic(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpcResult {
    pub statistic: PpcStatistic,
    pub observed_value: f64,
    pub replicated_values: Vec<f64>,
    pub ppc_p_value: f64,
}

/// Fraction of replicates at or above the observed value.
pub fn ppc_p_value(observed: f64, replicated: &[f64]) -> f64 {
    replicated.iter().filter(|&&x| x >= observed).count() as f64 / replicated.len() as f64
}

/// Checks one variant's fitted model against its observed transactions.
pub fn posterior_predictive_check<R: Rng + ?Sized>(
    state: &VariantState,
    observed_transactions: &[f64],
    statistic: PpcStatistic,
    replicates: usize,
    rng: &mut R,
) -> Result<PpcResult> {
    if replicates == 0 {
        return Err(Error::InvalidParameter {
            name: "replicates",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    state.validate()?;
    check_consistent(&state.values, observed_transactions)?;

    let conv = state.conversion_posterior();
    let value = state.value_posterior();
    let rate_dist = Beta::new(conv.alpha, conv.beta).expect("validated beta posterior");
    // sigma^2 ~ InvGamma(alpha, beta), drawn as beta / Gamma(alpha, 1).
    let precision_dist = Gamma::new(value.alpha, 1.0).expect("validated value posterior");

    let observed_value = statistic.evaluate(observed_transactions, state.visitors);
    let mut replicated_values = Vec::with_capacity(replicates);
    let mut transactions = Vec::new();
    for _ in 0..replicates {
        let p = rate_dist.sample(rng);
        let variance = value.beta / precision_dist.sample(rng);
        let mu = Normal::new(value.mu, (variance / value.n_pseudo).sqrt())
            .expect("finite scale")
            .sample(rng);
        let conversions = Binomial::new(state.visitors, p).expect("rate in [0, 1]").sample(rng);
        let likelihood = Normal::new(mu, variance.sqrt()).expect("finite scale");
        transactions.clear();
        transactions.extend((0..conversions).map(|_| likelihood.sample(rng)));
        replicated_values.push(statistic.evaluate(&transactions, state.visitors));
    }
    let ppc_p_value = ppc_p_value(observed_value, &replicated_values);
    Ok(PpcResult {
        statistic,
        observed_value,
        replicated_values,
        ppc_p_value,
    })
}

fn check_consistent(summary: &ValueSummary, observed: &[f64]) -> Result<()> {
    if observed.len() as u64 != summary.count {
        return Err(Error::InconsistentData(format!(
            "{} transactions supplied but the state records {}",
            observed.len(),
            summary.count
        )));
    }
    let recomputed = ValueSummary::from_values(observed);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0);
    if !close(recomputed.sum, summary.sum) || !close(recomputed.sum_sq, summary.sum_sq) {
        return Err(Error::InconsistentData(format!(
            "transaction sums ({}, {}) do not match the state ({}, {})",
            recomputed.sum, recomputed.sum_sq, summary.sum, summary.sum_sq
        )));
    }
    Ok(())
}
