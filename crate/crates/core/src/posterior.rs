//! Conjugate updating for the two-part revenue model.
//!
//! Conversion is Beta-Bernoulli. Order value is Normal with unknown mean and
//! variance under a Normal-Inverse-Gamma prior, whose mean marginal is a
//! location-scale Student-t.

use rand::Rng;
use rand_distr::{Beta, Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{finite, positive, Error, Result};

/// Beta distribution over a conversion rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            alpha: positive("alpha", alpha)?,
            beta: positive("beta", beta)?,
        })
    }

    /// The uniform prior, Beta(1, 1).
    pub const fn uniform() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.alpha, self.beta).map(|_| ())
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let total = self.alpha + self.beta;
        self.alpha * self.beta / (total * total * (total + 1.0))
    }
}

impl Default for BetaPosterior {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Sufficient statistics of a batch of transaction values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ValueSummary {
    pub fn new(count: u64, sum: f64, sum_sq: f64) -> Result<Self> {
        let summary = Self { count, sum, sum_sq };
        summary.validate()?;
        Ok(summary)
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut summary = Self::default();
        for &x in values {
            summary.push(x);
        }
        summary
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &ValueSummary) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn validate(&self) -> Result<()> {
        finite("sum", self.sum)?;
        finite("sum_sq", self.sum_sq)?;
        if self.count == 0 {
            if self.sum != 0.0 || self.sum_sq != 0.0 {
                return Err(Error::InconsistentData(
                    "empty value summary must have zero sums".into(),
                ));
            }
            return Ok(());
        }
        if self.sum_sq < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sum_sq",
                value: self.sum_sq,
                reason: "must be nonnegative",
            });
        }
        // Cauchy-Schwarz, with slack for rounding in the streamed sums.
        let floor = self.sum * self.sum / self.count as f64;
        if self.sum_sq < floor - 1e-9 * floor.abs().max(1.0) {
            return Err(Error::InconsistentData(format!(
                "sum_sq {} is below sum^2/count {}",
                self.sum_sq, floor
            )));
        }
        Ok(())
    }

    /// Sample mean, zero when empty.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Sum of squared deviations from the sample mean, clamped at zero.
    pub fn ssd(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.sum_sq - self.sum * self.sum / self.count as f64).max(0.0)
    }
}

impl std::ops::Add for ValueSummary {
    type Output = ValueSummary;

    fn add(mut self, rhs: ValueSummary) -> ValueSummary {
        self.merge(&rhs);
        self
    }
}

/// Normal-Inverse-Gamma distribution over the mean and variance of order
/// values: `sigma^2 ~ InvGamma(alpha, beta)` and
/// `mu | sigma^2 ~ Normal(mu, sigma^2 / n_pseudo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigPosterior {
    pub mu: f64,
    pub n_pseudo: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigPosterior {
    pub fn new(mu: f64, n_pseudo: f64, alpha: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            mu: finite("mu", mu)?,
            n_pseudo: positive("n_pseudo", n_pseudo)?,
            alpha: positive("alpha", alpha)?,
            beta: positive("beta", beta)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.mu, self.n_pseudo, self.alpha, self.beta).map(|_| ())
    }
}

impl Default for NigPosterior {
    /// A $100 prior mean worth one pseudo-observation, with a weak variance
    /// prior.
    fn default() -> Self {
        Self {
            mu: 100.0,
            n_pseudo: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Location-scale Student-t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub dof: f64,
    pub loc: f64,
    pub scale: f64,
}

impl StudentTParams {
    /// Variance, infinite for `dof <= 2`.
    pub fn variance(&self) -> f64 {
        if self.dof > 2.0 {
            self.scale * self.scale * self.dof / (self.dof - 2.0)
        } else {
            f64::INFINITY
        }
    }
}

/// Beta-Binomial update with `successes` out of `trials`.
pub fn update_conversion(prior: BetaPosterior, successes: u64, trials: u64) -> Result<BetaPosterior> {
    if successes > trials {
        return Err(Error::SuccessesExceedTrials { successes, trials });
    }
    Ok(BetaPosterior {
        alpha: prior.alpha + successes as f64,
        beta: prior.beta + (trials - successes) as f64,
    })
}

/// Normal-Inverse-Gamma update with a batch of transaction values.
pub fn update_value(prior: NigPosterior, data: &ValueSummary) -> NigPosterior {
    if data.count == 0 {
        return prior;
    }
    let k = data.count as f64;
    let mean = data.mean();
    let n_post = prior.n_pseudo + k;
    let shift = mean - prior.mu;
    NigPosterior {
        mu: (prior.n_pseudo * prior.mu + k * mean) / n_post,
        n_pseudo: n_post,
        alpha: prior.alpha + k / 2.0,
        beta: prior.beta
            + data.ssd() / 2.0
            + k * prior.n_pseudo / (2.0 * n_post) * shift * shift,
    }
}

/// Marginal distribution of the mean after integrating out the variance.
pub fn marginal_mean(post: &NigPosterior) -> StudentTParams {
    StudentTParams {
        dof: 2.0 * post.alpha,
        loc: post.mu,
        scale: (post.beta / (post.alpha * post.n_pseudo)).sqrt(),
    }
}

/// Draw `count` conversion rates from `post`.
pub fn sample_conversion<R: Rng + ?Sized>(post: &BetaPosterior, count: usize, rng: &mut R) -> Vec<f64> {
    let dist = Beta::new(post.alpha, post.beta).expect("validated beta parameters");
    (0..count).map(|_| dist.sample(rng)).collect()
}

/// Draw `count` mean order values from the Student-t marginal. Negative
/// draws are kept.
pub fn sample_mean_value<R: Rng + ?Sized>(t: &StudentTParams, count: usize, rng: &mut R) -> Vec<f64> {
    let dist = StudentT::new(t.dof).expect("positive degrees of freedom");
    (0..count).map(|_| t.loc + t.scale * dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn conversion_update_examples() {
        let flat = BetaPosterior::uniform();
        assert_eq!(update_conversion(flat, 0, 0).unwrap(), flat);
        assert_eq!(
            update_conversion(flat, 3, 100).unwrap(),
            BetaPosterior { alpha: 4.0, beta: 98.0 }
        );
        let prior = BetaPosterior::new(2.0, 5.0).unwrap();
        assert_eq!(
            update_conversion(prior, 10, 40).unwrap(),
            BetaPosterior { alpha: 12.0, beta: 35.0 }
        );
    }

    #[test]
    fn conversion_rejects_more_successes_than_trials() {
        let err = update_conversion(BetaPosterior::uniform(), 5, 4).unwrap_err();
        assert_eq!(err, Error::SuccessesExceedTrials { successes: 5, trials: 4 });
    }

    #[test]
    fn beta_rejects_nonpositive() {
        assert!(BetaPosterior::new(0.0, 1.0).is_err());
        assert!(BetaPosterior::new(1.0, -1.0).is_err());
        assert!(BetaPosterior::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn value_update_zero_data_is_identity() {
        let prior = NigPosterior::default();
        assert_eq!(update_value(prior, &ValueSummary::default()), prior);
    }

    #[test]
    fn value_update_four_points() {
        let data = ValueSummary::from_values(&[90.0, 100.0, 110.0, 100.0]);
        assert_eq!(data, ValueSummary { count: 4, sum: 400.0, sum_sq: 40200.0 });
        let post = update_value(NigPosterior::default(), &data);
        assert_eq!(post, NigPosterior { mu: 100.0, n_pseudo: 5.0, alpha: 3.0, beta: 101.0 });
    }

    #[test]
    fn value_update_single_zero_observation() {
        let prior = NigPosterior::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let post = update_value(prior, &ValueSummary::from_values(&[0.0]));
        assert_eq!(post, NigPosterior { mu: 0.0, n_pseudo: 2.0, alpha: 1.5, beta: 1.0 });
    }

    #[test]
    fn marginal_examples() {
        let t = marginal_mean(&NigPosterior::new(100.0, 5.0, 3.0, 101.0).unwrap());
        assert_eq!(t.dof, 6.0);
        assert_eq!(t.loc, 100.0);
        // 101 / 15 = 6.7333..., sqrt = 2.594866...
        assert!((t.scale - 2.594866).abs() < 1e-4);

        let t = marginal_mean(&NigPosterior::new(0.0, 1.0, 1.0, 1.0).unwrap());
        assert_eq!((t.dof, t.loc, t.scale), (2.0, 0.0, 1.0));

        let t = marginal_mean(&NigPosterior::new(50.0, 4.0, 8.0, 32.0).unwrap());
        assert_eq!((t.dof, t.loc, t.scale), (16.0, 50.0, 1.0));
    }

    #[test]
    fn ssd_clamps_cancellation() {
        let s = ValueSummary { count: 3, sum: 3.0e8, sum_sq: 3.0e16 * (1.0 - 1e-17) };
        assert_eq!(s.ssd(), 0.0);
    }

    #[test]
    fn summary_validation() {
        assert!(ValueSummary::new(0, 1.0, 0.0).is_err());
        assert!(ValueSummary::new(2, 10.0, 10.0).is_err());
        assert!(ValueSummary::new(2, 10.0, 50.0).is_ok());
        assert!(ValueSummary::new(0, 0.0, 0.0).is_ok());
    }

    /// Conversion update against a 10^4-point grid posterior.
    #[test]
    fn conversion_update_matches_grid() {
        for &(a0, b0, k, n) in &[(1.0, 1.0, 3u64, 100u64), (2.0, 5.0, 10, 40), (1.0, 1.0, 60, 2000)] {
            let (gm, gv) = grid_beta_moments(a0, b0, k, n, 10_000);
            let post = update_conversion(BetaPosterior::new(a0, b0).unwrap(), k, n).unwrap();
            assert!((post.mean() - gm).abs() < 1e-4, "mean {} vs grid {}", post.mean(), gm);
            assert!((post.variance() - gv).abs() < 1e-4);
        }
    }

    fn grid_beta_moments(a0: f64, b0: f64, k: u64, n: u64, points: usize) -> (f64, f64) {
        let mut w_sum = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let logs: Vec<(f64, f64)> = (0..points)
            .map(|i| {
                let p = (i as f64 + 0.5) / points as f64;
                let log_w = (a0 - 1.0 + k as f64) * p.ln() + (b0 - 1.0 + (n - k) as f64) * (1.0 - p).ln();
                (p, log_w)
            })
            .collect();
        let max = logs.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        for (p, lw) in logs {
            let w = (lw - max).exp();
            w_sum += w;
            m1 += w * p;
            m2 += w * p * p;
        }
        let mean = m1 / w_sum;
        (mean, m2 / w_sum - mean * mean)
    }

    #[test]
    fn conversion_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = sample_conversion(&BetaPosterior::uniform(), 100_000, &mut rng);
        assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!((mean_var(&xs).0 - 0.5).abs() < 0.005);
        let xs = sample_conversion(&BetaPosterior::new(4.0, 98.0).unwrap(), 100_000, &mut rng);
        assert!((mean_var(&xs).0 - 4.0 / 102.0).abs() < 0.003);
    }

    #[test]
    fn sampling_is_reproducible() {
        let post = BetaPosterior::new(4.0, 98.0).unwrap();
        let t = StudentTParams { dof: 6.0, loc: 100.0, scale: 2.5949 };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (sample_conversion(&post, 64, &mut rng), sample_mean_value(&t, 64, &mut rng))
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn student_t_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = StudentTParams { dof: 6.0, loc: 100.0, scale: 2.5949 };
        let xs = sample_mean_value(&t, 100_000, &mut rng);
        assert!((mean_var(&xs).0 - 100.0).abs() < 0.1);

        let unit = StudentTParams { dof: 6.0, loc: 0.0, scale: 1.0 };
        let xs = sample_mean_value(&unit, 100_000, &mut rng);
        let v = mean_var(&xs).1;
        assert!((v - 1.5).abs() < 0.05 * 1.5, "variance {v}");
    }

    #[test]
    fn student_t_two_dof_is_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = StudentTParams { dof: 2.0, loc: 0.0, scale: 1.0 };
        let xs = sample_mean_value(&t, 10_000, &mut rng);
        assert!(xs.iter().all(|x| x.is_finite()));
        assert!(t.variance().is_infinite());
    }

    #[test]
    fn beta_mean_approaches_observed_rate() {
        let mut previous = f64::INFINITY;
        for n in [100u64, 1_000, 10_000, 100_000, 1_000_000] {
            let k = 3 * n / 100;
            let post = update_conversion(BetaPosterior::uniform(), k, n).unwrap();
            let gap = (post.mean() - 0.03).abs();
            assert!(gap < previous);
            previous = gap;
        }
    }

    proptest! {
        #[test]
        fn pooled_update_equals_sequential(values in prop::collection::vec(0.0f64..500.0, 0..40)) {
            let prior = NigPosterior::default();
            let pooled = update_value(prior, &ValueSummary::from_values(&values));
            // Sequential updating treats each posterior as the next prior.
            let mut seq = prior;
            for &x in &values {
                seq = update_value(seq, &ValueSummary::from_values(&[x]));
            }
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
            prop_assert!(close(pooled.mu, seq.mu));
            prop_assert!(close(pooled.n_pseudo, seq.n_pseudo));
            prop_assert!(close(pooled.alpha, seq.alpha));
            prop_assert!(close(pooled.beta, seq.beta));
        }

        #[test]
        fn marginal_is_consistent(mu in -50.0f64..500.0, n in 0.1f64..1e4, a in 0.1f64..1e4, b in 0.1f64..1e6) {
            let post = NigPosterior::new(mu, n, a, b).unwrap();
            let t = marginal_mean(&post);
            prop_assert_eq!(t, marginal_mean(&post));
            prop_assert_eq!(t.dof, 2.0 * a);
            prop_assert!((t.scale * t.scale - b / (a * n)).abs() <= 1e-12 * (b / (a * n)));
        }

        #[test]
        fn summary_is_additive(xs in prop::collection::vec(0.0f64..1e3, 0..20), ys in prop::collection::vec(0.0f64..1e3, 0..20)) {
            let mut all = xs.clone();
            all.extend_from_slice(&ys);
            let joined = ValueSummary::from_values(&xs) + ValueSummary::from_values(&ys);
            let direct = ValueSummary::from_values(&all);
            prop_assert_eq!(joined.count, direct.count);
            prop_assert!((joined.sum - direct.sum).abs() <= 1e-9 * direct.sum.max(1.0));
            prop_assert!(direct.ssd() >= 0.0);
        }
    }
}
