//! Study configuration files.
//!
//! ```toml
//! [engine]
//! epsilon = 0.01
//! samples = 5000
//! n_runs = 500
//!
//! [[scenario]]
//! name = "revenue-trap"
//! daily_visitors = 4000
//! max_days = 200
//!
//! [[scenario.variant]]
//! name = "A"
//! conv_rate = 0.03
//! aov = 100.0
//! aov_std = 40.0
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use rpv_core::baseline::PeekingTail;
use rpv_core::sim::{presets, Expected, VariantPriors, VariantTruth, DEFAULT_SEED};
use rpv_core::{BetaPosterior, EngineConfig, NigPosterior, ScenarioConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RUNS: u64 = 500;
pub const DEFAULT_SAMPLES: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<ScenarioSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub epsilon: f64,
    pub samples: usize,
    pub alpha: f64,
    pub peeking_tail: PeekingTail,
    pub min_days: u32,
    pub n_runs: u64,
    pub seed: u64,
    pub conv_prior: BetaPosterior,
    pub value_prior: NigPosterior,
}

impl Default for EngineSection {
    fn default() -> Self {
        let engine = EngineConfig::default();
        Self {
            epsilon: engine.epsilon,
            samples: DEFAULT_SAMPLES,
            alpha: engine.alpha,
            peeking_tail: engine.peeking_tail,
            min_days: engine.min_days,
            n_runs: DEFAULT_RUNS,
            seed: DEFAULT_SEED,
            conv_prior: engine.conv_prior,
            value_prior: engine.value_prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub daily_visitors: u64,
    #[serde(default = "default_max_days")]
    pub max_days: u32,
    #[serde(default)]
    pub control: usize,
    /// `"no-change"` or the index of the variant that should win.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ExpectedField>,
    #[serde(rename = "variant")]
    pub variants: Vec<VariantSection>,
}

fn default_max_days() -> u32 {
    200
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpectedField {
    Winner(usize),
    Keyword(NoChange),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoChange {
    NoChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSection {
    pub name: String,
    pub conv_rate: f64,
    pub aov: f64,
    pub aov_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv_prior: Option<BetaPosterior>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_prior: Option<NigPosterior>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_runs: Option<u64>,
    pub samples: Option<usize>,
    pub epsilon: Option<f64>,
    pub max_days: Option<u32>,
    pub alpha: Option<f64>,
    pub min_days: Option<u32>,
}

impl StudyFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn from_presets(names: &[String]) -> Result<Self> {
        let mut scenarios = Vec::new();
        for name in names {
            if name == "all" {
                scenarios.extend(presets::NAMES.iter().map(|n| preset_section(n).expect("known preset")));
                continue;
            }
            match preset_section(name) {
                Some(s) => scenarios.push(s),
                None => bail!(
                    "unknown preset `{name}` (expected one of: {}, all)",
                    presets::NAMES.join(", ")
                ),
            }
        }
        Ok(Self {
            engine: EngineSection::default(),
            scenarios,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        let e = &mut self.engine;
        if let Some(v) = o.seed {
            e.seed = v;
        }
        if let Some(v) = o.n_runs {
            e.n_runs = v;
        }
        if let Some(v) = o.samples {
            e.samples = v;
        }
        if let Some(v) = o.epsilon {
            e.epsilon = v;
        }
        if let Some(v) = o.alpha {
            e.alpha = v;
        }
        if let Some(v) = o.min_days {
            e.min_days = v;
        }
        if let Some(v) = o.max_days {
            for s in &mut self.scenarios {
                s.max_days = v;
            }
        }
    }

    /// Validated engine and scenario pairs, one per scenario section.
    pub fn resolve(&self) -> Result<Vec<(ScenarioConfig, EngineConfig)>> {
        if self.scenarios.is_empty() {
            bail!("no scenarios configured");
        }
        if self.engine.n_runs == 0 {
            bail!("n_runs must be at least 1");
        }
        self.scenarios
            .iter()
            .map(|s| {
                let scenario = s.to_scenario();
                scenario.validate()?;
                let engine = EngineConfig {
                    epsilon: self.engine.epsilon,
                    sample_count: self.engine.samples,
                    alpha: self.engine.alpha,
                    peeking_tail: self.engine.peeking_tail,
                    min_days: self.engine.min_days,
                    conv_prior: self.engine.conv_prior,
                    value_prior: self.engine.value_prior,
                    variant_priors: s
                        .variants
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| v.conv_prior.is_some() || v.value_prior.is_some())
                        .map(|(i, v)| VariantPriors {
                            variant: i,
                            conv_prior: v.conv_prior,
                            value_prior: v.value_prior,
                        })
                        .collect(),
                    seed: self.engine.seed,
                };
                engine
                    .validate()
                    .with_context(|| format!("invalid engine settings for scenario `{}`", s.name))?;
                Ok((scenario, engine))
            })
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("study config serializes")
    }
}

impl ScenarioSection {
    fn to_scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            name: self.name.clone(),
            daily_visitors: self.daily_visitors,
            max_days: self.max_days,
            variants: self
                .variants
                .iter()
                .map(|v| VariantTruth::new(&v.name, v.conv_rate, v.aov, v.aov_std))
                .collect(),
            control: self.control,
            expected: self.expected.map(|e| match e {
                ExpectedField::Winner(i) => Expected::Winner(i),
                ExpectedField::Keyword(NoChange::NoChange) => Expected::NoChange,
            }),
        }
    }
}

fn preset_section(name: &str) -> Option<ScenarioSection> {
    let s = presets::by_name(name)?;
    Some(ScenarioSection {
        name: s.name,
        daily_visitors: s.daily_visitors,
        max_days: s.max_days,
        control: s.control,
        expected: s.expected.map(|e| match e {
            Expected::NoChange => ExpectedField::Keyword(NoChange::NoChange),
            Expected::Winner(i) => ExpectedField::Winner(i),
        }),
        variants: s
            .variants
            .into_iter()
            .map(|v| VariantSection {
                name: v.name,
                conv_rate: v.conv_rate,
                aov: v.aov,
                aov_std: v.aov_std,
                conv_prior: None,
                value_prior: None,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[engine]
epsilon = 0.02
samples = 1000
n_runs = 3
seed = 5

[[scenario]]
name = "custom"
daily_visitors = 900
max_days = 30
expected = 1

[[scenario.variant]]
name = "A"
conv_rate = 0.03
aov = 100.0
aov_std = 40.0

[[scenario.variant]]
name = "B"
conv_rate = 0.05
aov = 100.0
aov_std = 40.0
conv_prior = { alpha = 2.0, beta = 50.0 }
"#;

    #[test]
    fn parses_and_resolves() {
        let file: StudyFile = toml::from_str(SAMPLE).unwrap();
        let resolved = file.resolve().unwrap();
        let (scenario, engine) = &resolved[0];
        assert_eq!(scenario.expected, Some(Expected::Winner(1)));
        assert_eq!(engine.epsilon, 0.02);
        assert_eq!(engine.priors_for(1).0, BetaPosterior { alpha: 2.0, beta: 50.0 });
        assert_eq!(engine.priors_for(0).0, BetaPosterior::uniform());
    }

    #[test]
    fn echo_round_trips() {
        let mut file: StudyFile = toml::from_str(SAMPLE).unwrap();
        file.apply(&Overrides {
            seed: Some(99),
            max_days: Some(12),
            ..Overrides::default()
        });
        let echoed: StudyFile = toml::from_str(&file.to_toml()).unwrap();
        assert_eq!(echoed, file);

        let presets = StudyFile::from_presets(&["all".to_string()]).unwrap();
        let echoed: StudyFile = toml::from_str(&presets.to_toml()).unwrap();
        assert_eq!(echoed, presets);
        assert_eq!(echoed.scenarios.len(), 3);
    }

    #[test]
    fn rejects_unknown_fields_and_presets() {
        assert!(toml::from_str::<StudyFile>("[engine]\nepsilonn = 1.0\n").is_err());
        assert!(StudyFile::from_presets(&["nope".to_string()]).is_err());
    }

    #[test]
    fn invalid_values_fail_resolution() {
        let mut file: StudyFile = toml::from_str(SAMPLE).unwrap();
        file.scenarios[0].variants[0].conv_rate = 1.5;
        assert!(file.resolve().is_err());
        let mut file: StudyFile = toml::from_str(SAMPLE).unwrap();
        file.engine.alpha = 0.0;
        assert!(file.resolve().is_err());
    }
}
