//! Experiment state files for `evaluate` and `ppc`, and transaction lists.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rpv_core::sim::DEFAULT_SEED;
use rpv_core::{BetaPosterior, NigPosterior, ValueSummary, VariantState};
use serde::Deserialize;

/// Cumulative data for a live experiment.
///
/// ```toml
/// epsilon = 0.01
/// control = 0
///
/// [[variant]]
/// name = "A"
/// visitors = 26000
/// conversions = 780
/// value_count = 780
/// value_sum = 78000.0
/// value_sum_sq = 9048000.0
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub control: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_day")]
    pub day: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(rename = "variant")]
    pub variants: Vec<VariantEntry>,
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_samples() -> usize {
    20_000
}

fn default_day() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantEntry {
    pub name: String,
    pub visitors: u64,
    pub conversions: u64,
    pub value_count: u64,
    pub value_sum: f64,
    pub value_sum_sq: f64,
    #[serde(default)]
    pub conv_prior: Option<BetaPosterior>,
    #[serde(default)]
    pub value_prior: Option<NigPosterior>,
}

impl StateFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read state file {}", path.display()))?;
        let file: StateFile =
            toml::from_str(&text).with_context(|| format!("invalid state file {}", path.display()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            bail!("state file lists no variants");
        }
        if self.control >= self.variants.len() {
            bail!("control index {} out of range for {} variants", self.control, self.variants.len());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            bail!("epsilon must be positive, got {}", self.epsilon);
        }
        if self.samples == 0 {
            bail!("samples must be at least 1");
        }
        for state in self.states() {
            let name = &self.variants[state.id].name;
            state
                .validate()
                .with_context(|| format!("variant `{name}` (index {}) is invalid", state.id))?;
        }
        Ok(())
    }

    pub fn states(&self) -> Vec<VariantState> {
        self.variants
            .iter()
            .enumerate()
            .map(|(i, v)| VariantState {
                id: i,
                visitors: v.visitors,
                conversions: v.conversions,
                values: ValueSummary {
                    count: v.value_count,
                    sum: v.value_sum,
                    sum_sq: v.value_sum_sq,
                },
                conv_prior: v.conv_prior.unwrap_or_default(),
                value_prior: v.value_prior.unwrap_or_default(),
            })
            .collect()
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }
}

/// Reads one transaction value per line. Blank lines and `#` comments are
/// skipped.
pub fn load_transactions(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read transactions file {}", path.display()))?;
    parse_transactions(&text).with_context(|| format!("invalid transactions file {}", path.display()))
}

pub fn parse_transactions(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(x) if x.is_finite() => values.push(x),
            _ => bail!("line {}: cannot parse `{line}` as a transaction value", i + 1),
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transactions_report_line_numbers() {
        assert_eq!(parse_transactions("1.5\n\n# note\n2 # trailing\n").unwrap(), vec![1.5, 2.0]);
        let err = parse_transactions("1\n2\nabc\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_transactions("nan\n").is_err());
    }

    #[test]
    fn validation_names_the_variant() {
        let text = r#"
[[variant]]
name = "A"
visitors = 100
conversions = 3
value_count = 3
value_sum = 300.0
value_sum_sq = 30000.0

[[variant]]
name = "B"
visitors = 10
conversions = 11
value_count = 11
value_sum = 1100.0
value_sum_sq = 110000.0
"#;
        let file: StateFile = toml::from_str(text).unwrap();
        let err = format!("{:#}", file.validate().unwrap_err());
        assert!(err.contains("`B`") && err.contains("exceed visitors"), "{err}");
    }
}
