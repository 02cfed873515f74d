//! Revenue-per-visitor inference and the expected-loss stopping rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{
    marginal_mean, sample_conversion, sample_mean_value, update_conversion, update_value,
    BetaPosterior, NigPosterior, ValueSummary,
};

/// Cumulative data and priors for one arm of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantState {
    pub id: usize,
    pub visitors: u64,
    pub conversions: u64,
    pub values: ValueSummary,
    pub conv_prior: BetaPosterior,
    pub value_prior: NigPosterior,
}

impl VariantState {
    /// An arm with no data yet.
    pub fn new(id: usize, conv_prior: BetaPosterior, value_prior: NigPosterior) -> Self {
        Self {
            id,
            visitors: 0,
            conversions: 0,
            values: ValueSummary::default(),
            conv_prior,
            value_prior,
        }
    }

    /// Folds one batch of new traffic into the running totals.
    pub fn record(&mut self, visitors: u64, conversions: u64, values: &ValueSummary) {
        self.visitors += visitors;
        self.conversions += conversions;
        self.values.merge(values);
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidVariant { variant: self.id, reason };
        if self.conversions > self.visitors {
            return Err(invalid(format!(
                "conversions ({}) exceed visitors ({})",
                self.conversions, self.visitors
            )));
        }
        if self.values.count != self.conversions {
            return Err(invalid(format!(
                "transaction count ({}) differs from conversions ({})",
                self.values.count, self.conversions
            )));
        }
        self.values.validate().map_err(|e| invalid(e.to_string()))?;
        self.conv_prior.validate().map_err(|e| invalid(e.to_string()))?;
        self.value_prior.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn conversion_posterior(&self) -> BetaPosterior {
        update_conversion(self.conv_prior, self.conversions, self.visitors)
            .expect("conversions never exceed visitors")
    }

    pub fn value_posterior(&self) -> NigPosterior {
        update_value(self.value_prior, &self.values)
    }

    pub fn observed_rate(&self) -> f64 {
        if self.visitors == 0 {
            0.0
        } else {
            self.conversions as f64 / self.visitors as f64
        }
    }
}

/// Paired Monte Carlo draws of revenue per visitor, one column per variant.
/// Row `s` holds the `s`-th draw of every variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RpvSampleMatrix {
    samples: Vec<f64>,
    sample_count: usize,
    variant_count: usize,
}

impl RpvSampleMatrix {
    /// Builds a matrix from explicit rows; every row must have the same
    /// nonzero length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let variant_count = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || variant_count == 0 {
            return Err(Error::EmptySample);
        }
        if rows.iter().any(|r| r.len() != variant_count) {
            return Err(Error::InconsistentData("ragged sample rows".into()));
        }
        Ok(Self {
            samples: rows.concat(),
            sample_count: rows.len(),
            variant_count,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn variant_count(&self) -> usize {
        self.variant_count
    }

    pub fn get(&self, sample: usize, variant: usize) -> f64 {
        self.samples[sample * self.variant_count + variant]
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        let start = sample * self.variant_count;
        &self.samples[start..start + self.variant_count]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.variant_count)
    }

    pub fn column_mean(&self, variant: usize) -> f64 {
        self.rows().map(|r| r[variant]).sum::<f64>() / self.sample_count as f64
    }
}

/// Draws `sample_count` RPV samples per variant from the posteriors implied
/// by each state's cumulative data.
///
/// Each variant consumes the generator in turn: all of its conversion draws,
/// then all of its mean-value draws.
pub fn derive_rpv_samples<R: Rng + ?Sized>(
    states: &[VariantState],
    sample_count: usize,
    rng: &mut R,
) -> RpvSampleMatrix {
    assert!(sample_count >= 1, "at least one Monte Carlo sample is required");
    let variant_count = states.len();
    let mut samples = vec![0.0; sample_count * variant_count];
    for (column, state) in states.iter().enumerate() {
        let rates = sample_conversion(&state.conversion_posterior(), sample_count, rng);
        let means = sample_mean_value(&marginal_mean(&state.value_posterior()), sample_count, rng);
        for (s, (p, mu)) in rates.iter().zip(&means).enumerate() {
            samples[s * variant_count + column] = p * mu;
        }
    }
    RpvSampleMatrix {
        samples,
        sample_count,
        variant_count,
    }
}

/// Index of the row maximum; exact ties go to the lowest index.
fn row_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Probability to be best: the fraction of rows in which each variant holds
/// the row maximum.
pub fn compute_pbb(m: &RpvSampleMatrix) -> Vec<f64> {
    let mut wins = vec![0u64; m.variant_count];
    for row in m.rows() {
        wins[row_argmax(row)] += 1;
    }
    let total = m.sample_count as f64;
    wins.into_iter().map(|w| w as f64 / total).collect()
}

/// Expected opportunity loss of shipping each variant: the mean over rows of
/// the row maximum minus that variant's draw.
pub fn compute_expected_loss(m: &RpvSampleMatrix) -> Vec<f64> {
    let mut losses = vec![0.0; m.variant_count];
    for row in m.rows() {
        let best = row[row_argmax(row)];
        for (loss, &x) in losses.iter_mut().zip(row) {
            *loss += best - x;
        }
    }
    let total = m.sample_count as f64;
    losses.into_iter().map(|l| l / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Continue,
    StopWinner(usize),
    StopFutility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub expected_losses: Vec<f64>,
    pub pbb: Vec<f64>,
    pub day: u32,
}

/// Index with the smallest loss. Ties prefer `control`, then the lowest index.
pub fn min_loss_variant(losses: &[f64], control: usize) -> usize {
    let mut best = control;
    for (i, &loss) in losses.iter().enumerate() {
        // Scanning upward, a strict comparison keeps the lowest index among
        // equal non-control losses.
        if loss < losses[best] {
            best = i;
        }
    }
    best
}

/// Applies the stopping rule: stop once the least risky variant's expected
/// loss is below `epsilon`, shipping it unless it is the control.
pub fn decide(losses: &[f64], pbb: &[f64], epsilon: f64, control: usize, day: u32) -> Decision {
    let best = min_loss_variant(losses, control);
    let verdict = if losses[best] < epsilon {
        if best == control {
            Verdict::StopFutility
        } else {
            Verdict::StopWinner(best)
        }
    } else {
        Verdict::Continue
    };
    Decision {
        verdict,
        expected_losses: losses.to_vec(),
        pbb: pbb.to_vec(),
        day,
    }
}

/// Probability that each variant has the highest conversion rate, estimated
/// from paired Beta draws. This is the proxy signal a conversion-only
/// analysis would report.
pub fn conversion_pbb<R: Rng + ?Sized>(states: &[VariantState], sample_count: usize, rng: &mut R) -> Vec<f64> {
    let columns: Vec<Vec<f64>> = states
        .iter()
        .map(|s| sample_conversion(&s.conversion_posterior(), sample_count, rng))
        .collect();
    let rows: Vec<Vec<f64>> = (0..sample_count)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    compute_pbb(&RpvSampleMatrix::from_rows(&rows).expect("nonempty samples"))
}
