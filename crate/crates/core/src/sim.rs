//! Synthetic experiments: ground-truth scenarios, daily traffic generation,
//! the monitoring loop for both methods, and study-level aggregation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{peeking_step_with, PeekingTail};
use crate::decision::{
    compute_expected_loss, compute_pbb, conversion_pbb, decide, derive_rpv_samples, Decision,
    VariantState, Verdict,
};
use crate::error::{positive, Error, Result};
use crate::posterior::{BetaPosterior, NigPosterior, ValueSummary};

/// Ground truth for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTruth {
    pub name: String,
    pub conv_rate: f64,
    pub aov: f64,
    pub aov_std: f64,
}

impl VariantTruth {
    pub fn new(name: &str, conv_rate: f64, aov: f64, aov_std: f64) -> Self {
        Self {
            name: name.to_string(),
            conv_rate,
            aov,
            aov_std,
        }
    }

    pub fn rpv(&self) -> f64 {
        self.conv_rate * self.aov
    }
}

/// Which terminal outcome counts as correct for a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expected {
    /// Nothing is worth shipping: futility or a timeout is correct.
    NoChange,
    /// The given variant should be shipped.
    Winner(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub daily_visitors: u64,
    pub max_days: u32,
    pub variants: Vec<VariantTruth>,
    pub control: usize,
    /// Overrides the correctness rule derived from the ground truth.
    pub expected: Option<Expected>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidScenario {
            scenario: self.name.clone(),
            reason,
        };
        if self.variants.is_empty() {
            return Err(bad("no variants".into()));
        }
        if self.control >= self.variants.len() {
            return Err(bad(format!("control index {} out of range", self.control)));
        }
        if self.daily_visitors == 0 {
            return Err(bad("daily_visitors must be positive".into()));
        }
        if self.max_days == 0 {
            return Err(bad("max_days must be positive".into()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if !(0.0..=1.0).contains(&v.conv_rate) {
                return Err(bad(format!("variant {i}: conv_rate {} outside [0, 1]", v.conv_rate)));
            }
            gamma_params_from_moments(v.aov, v.aov_std).map_err(|e| bad(format!("variant {i}: {e}")))?;
        }
        if let Some(Expected::Winner(w)) = self.expected {
            if w >= self.variants.len() || w == self.control {
                return Err(bad(format!("expected winner {w} is not a treatment variant")));
            }
        }
        Ok(())
    }

    /// The correctness rule: the explicit override if present, otherwise the
    /// best true RPV, unless its lift over the control is within `epsilon`.
    pub fn expected_outcome(&self, epsilon: f64) -> Expected {
        if let Some(e) = self.expected {
            return e;
        }
        let mut best = self.control;
        for (i, v) in self.variants.iter().enumerate() {
            if v.rpv() > self.variants[best].rpv() {
                best = i;
            }
        }
        let lift = self.variants[best].rpv() - self.variants[self.control].rpv();
        if best == self.control || lift <= epsilon * (1.0 + 1e-9) {
            Expected::NoChange
        } else {
            Expected::Winner(best)
        }
    }

    pub fn variant_names(&self) -> Vec<String> {
        self.variants.iter().map(|v| v.name.clone()).collect()
    }
}

/// Built-in scenarios.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 3] = ["revenue-trap", "clear-winner", "futility"];

    /// B converts better but earns less per visitor than the control.
    pub fn revenue_trap() -> ScenarioConfig {
        ScenarioConfig {
            name: "revenue-trap".into(),
            daily_visitors: 4000,
            max_days: 200,
            variants: vec![
                VariantTruth::new("A", 0.030, 100.0, 40.0),
                VariantTruth::new("B", 0.032, 90.0, 35.0),
            ],
            control: 0,
            expected: Some(Expected::NoChange),
        }
    }

    /// C is the only real improvement; B is slightly worse and D is flat.
    pub fn clear_winner() -> ScenarioConfig {
        ScenarioConfig {
            name: "clear-winner".into(),
            daily_visitors: 4000,
            max_days: 200,
            variants: vec![
                VariantTruth::new("A", 0.030, 100.0, 40.0),
                VariantTruth::new("B", 0.029, 100.0, 40.0),
                VariantTruth::new("C", 0.031, 105.0, 45.0),
                VariantTruth::new("D", 0.030, 100.0, 40.0),
            ],
            control: 0,
            expected: Some(Expected::Winner(2)),
        }
    }

    /// Both treatments differ from the control by at most one cent per
    /// visitor.
    pub fn futility() -> ScenarioConfig {
        ScenarioConfig {
            name: "futility".into(),
            daily_visitors: 3000,
            max_days: 200,
            variants: vec![
                VariantTruth::new("A", 0.0300, 100.0, 40.0),
                VariantTruth::new("B", 0.0301, 100.0, 40.0),
                VariantTruth::new("C", 0.0300, 100.2, 40.0),
            ],
            control: 0,
            expected: Some(Expected::NoChange),
        }
    }

    pub fn by_name(name: &str) -> Option<ScenarioConfig> {
        match name {
            "revenue-trap" => Some(revenue_trap()),
            "clear-winner" => Some(clear_winner()),
            "futility" => Some(futility()),
            _ => None,
        }
    }
}

/// A prior override for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPriors {
    pub variant: usize,
    pub conv_prior: Option<BetaPosterior>,
    pub value_prior: Option<NigPosterior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub epsilon: f64,
    pub sample_count: usize,
    pub alpha: f64,
    pub peeking_tail: PeekingTail,
    pub min_days: u32,
    pub conv_prior: BetaPosterior,
    pub value_prior: NigPosterior,
    pub variant_priors: Vec<VariantPriors>,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            sample_count: 20_000,
            alpha: 0.05,
            peeking_tail: PeekingTail::Upper,
            min_days: 1,
            conv_prior: BetaPosterior::uniform(),
            value_prior: NigPosterior::default(),
            variant_priors: Vec::new(),
            seed: DEFAULT_SEED,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        positive("epsilon", self.epsilon)?;
        if self.sample_count == 0 {
            return Err(Error::EmptySample);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                value: self.alpha,
                reason: "must lie in (0, 1)",
            });
        }
        if self.min_days == 0 {
            return Err(Error::InvalidParameter {
                name: "min_days",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        self.conv_prior.validate()?;
        self.value_prior.validate()?;
        for p in &self.variant_priors {
            if let Some(c) = p.conv_prior {
                c.validate()?;
            }
            if let Some(v) = p.value_prior {
                v.validate()?;
            }
        }
        Ok(())
    }

    pub fn priors_for(&self, variant: usize) -> (BetaPosterior, NigPosterior) {
        let mut priors = (self.conv_prior, self.value_prior);
        for p in self.variant_priors.iter().filter(|p| p.variant == variant) {
            if let Some(c) = p.conv_prior {
                priors.0 = c;
            }
            if let Some(v) = p.value_prior {
                priors.1 = v;
            }
        }
        priors
    }

    pub fn initial_states(&self, scenario: &ScenarioConfig) -> Vec<VariantState> {
        (0..scenario.variants.len())
            .map(|i| {
                let (c, v) = self.priors_for(i);
                VariantState::new(i, c, v)
            })
            .collect()
    }
}

pub const DEFAULT_SEED: u64 = 20_240_601;

/// Generator stream for simulated traffic.
pub const DATA_STREAM: u64 = 0x6461_7461;
/// Generator stream for posterior sampling.
pub const ANALYSIS_STREAM: u64 = 0x616e_616c;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one generator stream of one run:
/// `splitmix64(splitmix64(splitmix64(base) ^ run_id) ^ stream)`.
///
/// Depends only on its arguments, so a run's draws do not change with the
/// number of runs or the order in which runs are scheduled.
pub fn derive_seed(base: u64, run_id: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ run_id) ^ stream)
}

/// Gamma shape and scale with the given mean and standard deviation.
pub fn gamma_params_from_moments(mean: f64, std: f64) -> Result<(f64, f64)> {
    positive("mean", mean)?;
    positive("std", std)?;
    Ok(((mean / std).powi(2), std * std / mean))
}

/// One day's new traffic for one variant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DailyBatch {
    pub visitors: u64,
    pub conversions: u64,
    pub values: ValueSummary,
}

/// Splits `total` evenly over `arms`, giving the remainder to the lowest
/// indices.
pub fn split_traffic(total: u64, arms: usize) -> Vec<u64> {
    let arms_u = arms as u64;
    (0..arms_u)
        .map(|i| total / arms_u + u64::from(i < total % arms_u))
        .collect()
}

/// Precomputed samplers for a scenario's daily traffic.
#[derive(Debug, Clone)]
pub struct TrafficGenerator {
    arms: Vec<(u64, f64, Gamma<f64>)>,
}

impl TrafficGenerator {
    pub fn new(scenario: &ScenarioConfig) -> Result<Self> {
        scenario.validate()?;
        let split = split_traffic(scenario.daily_visitors, scenario.variants.len());
        let arms = scenario
            .variants
            .iter()
            .zip(split)
            .map(|(v, n)| {
                let (shape, scale) = gamma_params_from_moments(v.aov, v.aov_std)?;
                let gamma = Gamma::new(shape, scale).map_err(|_| Error::InvalidParameter {
                    name: "aov_std",
                    value: v.aov_std,
                    reason: "invalid gamma parameters",
                })?;
                Ok((n, v.conv_rate, gamma))
            })
            .collect::<Result<_>>()?;
        Ok(Self { arms })
    }

    /// Conversions are Binomial over the day's visitors; each conversion
    /// contributes one Gamma-distributed transaction.
    pub fn day<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DailyBatch> {
        self.arms
            .iter()
            .map(|&(visitors, rate, ref gamma)| {
                let conversions = Binomial::new(visitors, rate)
                    .expect("rate validated to lie in [0, 1]")
                    .sample(rng);
                let mut values = ValueSummary::default();
                for _ in 0..conversions {
                    values.push(gamma.sample(rng));
                }
                DailyBatch {
                    visitors,
                    conversions,
                    values,
                }
            })
            .collect()
    }
}

/// Generates one day of traffic for every variant.
pub fn simulate_day<R: Rng + ?Sized>(scenario: &ScenarioConfig, rng: &mut R) -> Result<Vec<DailyBatch>> {
    Ok(TrafficGenerator::new(scenario)?.day(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bayesian,
    Peeking,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Bayesian, Method::Peeking];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bayesian => "bayesian",
            Method::Peeking => "peeking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Winner(usize),
    Futility,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: u64,
    pub method: Method,
    pub outcome: Outcome,
    pub duration_days: u32,
    /// Expected losses on the final day (Bayesian runs only).
    pub final_losses: Option<Vec<f64>>,
    pub data_seed: u64,
    pub analysis_seed: u64,
}

/// One monitored day of a Bayesian run.
#[derive(Debug, Clone, PartialEq)]
pub struct DayTrace {
    pub decision: Decision,
    /// Probability each variant has the best conversion rate.
    pub conversion_pbb: Vec<f64>,
}

struct RunResult {
    outcome: Outcome,
    duration_days: u32,
    final_losses: Option<Vec<f64>>,
}

fn monitor(
    scenario: &ScenarioConfig,
    method: Method,
    cfg: &EngineConfig,
    data_rng: &mut ChaCha8Rng,
    analysis_rng: &mut ChaCha8Rng,
    mut trace: Option<&mut Vec<DayTrace>>,
) -> Result<RunResult> {
    cfg.validate()?;
    let traffic = TrafficGenerator::new(scenario)?;
    let mut states = cfg.initial_states(scenario);
    let mut final_losses = None;
    for day in 1..=scenario.max_days {
        for (state, batch) in states.iter_mut().zip(traffic.day(data_rng)) {
            state.record(batch.visitors, batch.conversions, &batch.values);
        }
        if day < cfg.min_days {
            continue;
        }
        let outcome = match method {
            Method::Bayesian => {
                let m = derive_rpv_samples(&states, cfg.sample_count, analysis_rng);
                let losses = compute_expected_loss(&m);
                let decision = decide(&losses, &compute_pbb(&m), cfg.epsilon, scenario.control, day);
                if let Some(trace) = trace.as_deref_mut() {
                    trace.push(DayTrace {
                        conversion_pbb: conversion_pbb(&states, cfg.sample_count, analysis_rng),
                        decision: decision.clone(),
                    });
                }
                final_losses = Some(losses);
                match decision.verdict {
                    Verdict::Continue => None,
                    Verdict::StopWinner(i) => Some(Outcome::Winner(i)),
                    Verdict::StopFutility => Some(Outcome::Futility),
                }
            }
            Method::Peeking => {
                peeking_step_with(&states, cfg.alpha, scenario.control, cfg.peeking_tail).map(Outcome::Winner)
            }
        };
        if let Some(outcome) = outcome {
            return Ok(RunResult {
                outcome,
                duration_days: day,
                final_losses,
            });
        }
    }
    Ok(RunResult {
        outcome: Outcome::TimedOut,
        duration_days: scenario.max_days,
        final_losses,
    })
}

/// Runs one experiment to its first stop or to `max_days`.
///
/// Traffic comes from the run's data stream and posterior draws from its
/// analysis stream, so both methods see identical data for the same
/// `run_id`.
pub fn run_experiment(scenario: &ScenarioConfig, method: Method, cfg: &EngineConfig, run_id: u64) -> Result<RunRecord> {
    let data_seed = derive_seed(cfg.seed, run_id, DATA_STREAM);
    let analysis_seed = derive_seed(cfg.seed, run_id, ANALYSIS_STREAM);
    let result = monitor(
        scenario,
        method,
        cfg,
        &mut ChaCha8Rng::seed_from_u64(data_seed),
        &mut ChaCha8Rng::seed_from_u64(analysis_seed),
        None,
    )?;
    Ok(RunRecord {
        run_id,
        method,
        outcome: result.outcome,
        duration_days: result.duration_days,
        final_losses: result.final_losses,
        data_seed,
        analysis_seed,
    })
}

/// Runs the Bayesian method for one run id and returns every day's decision
/// alongside the conversion-only probability to be best.
pub fn trace_bayesian_run(scenario: &ScenarioConfig, cfg: &EngineConfig, run_id: u64) -> Result<Vec<DayTrace>> {
    let mut trace = Vec::new();
    monitor(
        scenario,
        Method::Bayesian,
        cfg,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, run_id, DATA_STREAM)),
        &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, run_id, ANALYSIS_STREAM)),
        Some(&mut trace),
    )?;
    Ok(trace)
}

/// Outcome tallies for one method over a study.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    /// Runs that declared each variant the winner, indexed by variant.
    pub winners: Vec<usize>,
    pub futility: usize,
    pub timed_out: usize,
    pub correct: usize,
    pub false_positives: usize,
    /// Mean duration over runs that stopped before timing out.
    pub mean_duration_concluded: Option<f64>,
    pub mean_duration_all: f64,
}

impl MethodSummary {
    fn pct(&self, count: usize) -> f64 {
        100.0 * count as f64 / self.runs as f64
    }

    pub fn winner_pct(&self, variant: usize) -> f64 {
        self.pct(self.winners[variant])
    }

    pub fn futility_pct(&self) -> f64 {
        self.pct(self.futility)
    }

    pub fn timed_out_pct(&self) -> f64 {
        self.pct(self.timed_out)
    }

    pub fn correct_pct(&self) -> f64 {
        self.pct(self.correct)
    }

    pub fn false_positive_pct(&self) -> f64 {
        self.pct(self.false_positives)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub scenario: String,
    pub variant_names: Vec<String>,
    pub control: usize,
    pub expected: Expected,
    pub methods: Vec<MethodSummary>,
}

impl AggregateReport {
    pub fn method(&self, method: Method) -> &MethodSummary {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .expect("report covers both methods")
    }
}

pub fn is_correct(outcome: Outcome, expected: Expected) -> bool {
    match (expected, outcome) {
        (Expected::NoChange, Outcome::Futility | Outcome::TimedOut) => true,
        (Expected::Winner(w), Outcome::Winner(i)) => w == i,
        _ => false,
    }
}

/// Tallies records into a report. Records of methods absent from `records`
/// yield empty summaries.
pub fn aggregate(scenario: &ScenarioConfig, cfg: &EngineConfig, records: &[RunRecord]) -> AggregateReport {
    let expected = scenario.expected_outcome(cfg.epsilon);
    let methods = Method::ALL
        .iter()
        .map(|&method| {
            let mut s = MethodSummary {
                method,
                runs: 0,
                winners: vec![0; scenario.variants.len()],
                futility: 0,
                timed_out: 0,
                correct: 0,
                false_positives: 0,
                mean_duration_concluded: None,
                mean_duration_all: 0.0,
            };
            let (mut concluded_days, mut concluded, mut all_days) = (0u64, 0u64, 0u64);
            for r in records.iter().filter(|r| r.method == method) {
                s.runs += 1;
                all_days += u64::from(r.duration_days);
                match r.outcome {
                    Outcome::Winner(i) => s.winners[i] += 1,
                    Outcome::Futility => s.futility += 1,
                    Outcome::TimedOut => s.timed_out += 1,
                }
                if r.outcome != Outcome::TimedOut {
                    concluded += 1;
                    concluded_days += u64::from(r.duration_days);
                }
                if is_correct(r.outcome, expected) {
                    s.correct += 1;
                } else if matches!(r.outcome, Outcome::Winner(_)) {
                    s.false_positives += 1;
                }
            }
            if s.runs > 0 {
                s.mean_duration_all = all_days as f64 / s.runs as f64;
            }
            if concluded > 0 {
                s.mean_duration_concluded = Some(concluded_days as f64 / concluded as f64);
            }
            s
        })
        .collect();
    AggregateReport {
        scenario: scenario.name.clone(),
        variant_names: scenario.variant_names(),
        control: scenario.control,
        expected,
        methods,
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    /// Ordered by run id, Bayesian before peeking within a run.
    pub records: Vec<RunRecord>,
    pub report: AggregateReport,
}

/// Runs `n_runs` paired experiments (both methods per run id) on `jobs`
/// worker threads. Output does not depend on `jobs`.
pub fn run_study(scenario: &ScenarioConfig, cfg: &EngineConfig, n_runs: u64, jobs: usize) -> Result<StudyOutput> {
    if n_runs == 0 {
        return Err(Error::InvalidParameter {
            name: "n_runs",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    scenario.validate()?;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let per_run: Vec<Result<Vec<RunRecord>>> = pool.install(|| {
        (0..n_runs)
            .into_par_iter()
            .map(|run_id| {
                Method::ALL
                    .iter()
                    .map(|&m| run_experiment(scenario, m, cfg, run_id))
                    .collect()
            })
            .collect()
    });
    let mut records = Vec::with_capacity(2 * n_runs as usize);
    for r in per_run {
        records.extend(r?);
    }
    let report = aggregate(scenario, cfg, &records);
    Ok(StudyOutput { records, report })
}
