//! Daily two-proportion Z-test on conversion rate ("peeking").

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::decision::VariantState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZTest {
    pub z: f64,
    pub p_value: f64,
}

/// A variant's test against the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZTestResult {
    pub variant: usize,
    pub z: f64,
    pub p_value: f64,
}

/// Two-sided tail probability `P(|Z| >= |z|)` under the standard normal.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Upper tail probability `P(Z >= z)` under the standard normal.
pub fn upper_tail_p(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// How a daily look turns a Z statistic into a stopping p-value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeekingTail {
    /// `P(Z >= z)`: only an improvement over the control can be significant.
    #[default]
    Upper,
    /// `P(|Z| >= |z|)`, then only variants observed above the control may win.
    TwoSided,
}

/// Pooled two-proportion Z-test of group b against group a. A pooled rate of
/// exactly 0 or 1 carries no evidence and yields `z = 0, p = 1`.
pub fn two_proportion_z(k_a: u64, n_a: u64, k_b: u64, n_b: u64) -> Result<ZTest> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::EmptySample);
    }
    if k_a > n_a {
        return Err(Error::SuccessesExceedTrials { successes: k_a, trials: n_a });
    }
    if k_b > n_b {
        return Err(Error::SuccessesExceedTrials { successes: k_b, trials: n_b });
    }
    let (ka, na, kb, nb) = (k_a as f64, n_a as f64, k_b as f64, n_b as f64);
    let pooled = (ka + kb) / (na + nb);
    if pooled <= 0.0 || pooled >= 1.0 {
        return Ok(ZTest { z: 0.0, p_value: 1.0 });
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    let z = (kb / nb - ka / na) / se;
    Ok(ZTest { z, p_value: two_sided_p(z) })
}

/// Tests every non-control variant against the control on cumulative counts.
pub fn compare_to_control(states: &[VariantState], control: usize) -> Result<Vec<ZTestResult>> {
    let base = &states[control];
    states
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != control)
        .map(|(i, s)| {
            let t = two_proportion_z(base.conversions, base.visitors, s.conversions, s.visitors)?;
            Ok(ZTestResult { variant: i, z: t.z, p_value: t.p_value })
        })
        .collect()
}

/// One daily look with the default upper-tail test. Returns the variant with
/// the smallest p-value below `alpha`, if any. Multiple variants are not
/// corrected for.
pub fn peeking_step(states: &[VariantState], alpha: f64, control: usize) -> Option<usize> {
    peeking_step_with(states, alpha, control, PeekingTail::Upper)
}

/// One daily look. A variant qualifies when its p-value under `tail` is below
/// `alpha` and its observed rate is above the control's; the smallest p-value
/// wins, then the lowest index.
pub fn peeking_step_with(states: &[VariantState], alpha: f64, control: usize, tail: PeekingTail) -> Option<usize> {
    let control_rate = states[control].observed_rate();
    let tests = compare_to_control(states, control).ok()?;
    let mut winner: Option<(usize, f64)> = None;
    for t in tests {
        let p = match tail {
            PeekingTail::Upper => upper_tail_p(t.z),
            PeekingTail::TwoSided => t.p_value,
        };
        if p >= alpha || states[t.variant].observed_rate() <= control_rate {
            continue;
        }
        if winner.is_none_or(|(_, best)| p < best) {
            winner = Some((t.variant, p));
        }
    }
    winner.map(|(variant, _)| variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{BetaPosterior, NigPosterior, ValueSummary};
    use proptest::prelude::*;

    fn arm(id: usize, k: u64, n: u64) -> VariantState {
        let mut s = VariantState::new(id, BetaPosterior::uniform(), NigPosterior::default());
        s.record(n, k, &ValueSummary::from_values(&vec![100.0; k as usize]));
        s
    }

    #[test]
    fn reference_values() {
        let t = two_proportion_z(30, 1000, 50, 1000).unwrap();
        // pooled 0.04, se = sqrt(0.04 * 0.96 * 0.002) = 0.0087636, z = 0.02 / se
        assert!((t.z - 2.2822).abs() < 1e-3, "{t:?}");
        assert!((t.p_value - 0.0225).abs() < 1e-3, "{t:?}");
    }

    #[test]
    fn symmetric_and_degenerate_inputs() {
        assert_eq!(two_proportion_z(40, 1000, 40, 1000).unwrap(), ZTest { z: 0.0, p_value: 1.0 });
        assert_eq!(two_proportion_z(0, 100, 0, 100).unwrap(), ZTest { z: 0.0, p_value: 1.0 });
        assert_eq!(two_proportion_z(100, 100, 50, 50).unwrap(), ZTest { z: 0.0, p_value: 1.0 });
    }

    #[test]
    fn rejects_empty_groups() {
        assert_eq!(two_proportion_z(0, 0, 1, 10), Err(Error::EmptySample));
        assert!(two_proportion_z(11, 10, 1, 10).is_err());
    }

    #[test]
    fn normal_tail_accuracy() {
        // Reference two-sided tails from standard tables.
        let table = [
            (0.0, 1.0),
            (1.0, 0.317_310_507_862_914),
            (1.959_963_984_540_054, 0.05),
            (3.0, 0.002_699_796_063_260_2),
            (5.0, 5.733_031_437_583_8e-7),
            (8.0, 1.244_192_114_854_4e-15),
        ];
        for (z, p) in table {
            assert!((two_sided_p(z) - p).abs() < 1e-7, "z={z}");
            assert!((two_sided_p(-z) - p).abs() < 1e-7);
        }
    }

    #[test]
    fn peeking_examples() {
        assert_eq!(peeking_step(&[arm(0, 30, 1000), arm(1, 30, 1000)], 0.05, 0), None);
        assert_eq!(peeking_step(&[arm(0, 30, 1000), arm(1, 50, 1000)], 0.05, 0), Some(1));
        assert_eq!(peeking_step(&[arm(0, 50, 1000), arm(1, 30, 1000)], 0.05, 0), None);
    }

    #[test]
    fn tails_differ_only_in_threshold() {
        // z is about 1.80: upper tail 0.036, two-sided 0.072.
        let states = [arm(0, 300, 10_000), arm(1, 345, 10_000)];
        let z = two_proportion_z(300, 10_000, 345, 10_000).unwrap().z;
        assert!((upper_tail_p(z) - 0.036).abs() < 0.002, "{z}");
        assert_eq!(peeking_step_with(&states, 0.05, 0, PeekingTail::Upper), Some(1));
        assert_eq!(peeking_step_with(&states, 0.05, 0, PeekingTail::TwoSided), None);
        assert_eq!(upper_tail_p(0.0), 0.5);
    }

    #[test]
    fn peeking_picks_smallest_p_then_lowest_index() {
        let states = [arm(0, 30, 1000), arm(1, 50, 1000), arm(2, 60, 1000), arm(3, 60, 1000)];
        assert_eq!(peeking_step(&states, 0.05, 0), Some(2));
    }

    #[test]
    fn two_sided_examples() {
        let tail = PeekingTail::TwoSided;
        assert_eq!(peeking_step_with(&[arm(0, 30, 1000), arm(1, 50, 1000)], 0.05, 0, tail), Some(1));
        assert_eq!(peeking_step_with(&[arm(0, 50, 1000), arm(1, 30, 1000)], 0.05, 0, tail), None);
    }

    proptest! {
        #[test]
        fn swap_symmetry(n_a in 1u64..5000, n_b in 1u64..5000, fa in 0.0f64..1.0, fb in 0.0f64..1.0) {
            let k_a = (fa * n_a as f64) as u64;
            let k_b = (fb * n_b as f64) as u64;
            let ab = two_proportion_z(k_a, n_a, k_b, n_b).unwrap();
            let ba = two_proportion_z(k_b, n_b, k_a, n_a).unwrap();
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
            prop_assert!((ab.z + ba.z).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
        }

        #[test]
        fn never_declares_an_observed_loser(k0 in 0u64..200, k1 in 0u64..200, k2 in 0u64..200) {
            let states = [arm(0, k0, 2000), arm(1, k1, 2000), arm(2, k2, 2000)];
            for tail in [PeekingTail::Upper, PeekingTail::TwoSided] {
                if let Some(w) = peeking_step_with(&states, 0.05, 0, tail) {
                    prop_assert!(states[w].observed_rate() > states[0].observed_rate());
                }
            }
        }
    }
}
