//! Beta-distribution reputation engine.
//!
//! A processor's history is folded into two discounted, reward-weighted
//! counters: `r` (favorable) and `s` (unfavorable). With discount factor
//! `λ ∈ (0, 1)` the update after outcome `i` with weight `w_i` is
//!
//! ```text
//! r ← λ·r + w_i   (favorable)      s ← λ·s + w_i   (unfavorable)
//! ```
//!
//! so `r = Σ w_i λ^(n-i)` over favorable outcomes, bounded by `1/(1-λ)`.
//! The score is the beta expectation `(r+1)/(r+s+2)` rescaled by its
//! attainable maximum `μ = (1/(1-λ) + 1)/(1/(1-λ) + 2)`.
//!
//! Weights follow the transaction value: the first update has weight 1, later
//! ones `φ / (φ̄ + φ)` where `φ̄` is the mean reward of earlier updates. Every
//! operation is constant time; no history is stored.

use crate::domain::Amount;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LAMBDA: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReputationError {
    #[error("discount factor must lie strictly inside (0, 1), got {0}")]
    InvalidLambda(f64),
    #[error("reward must be positive once a history exists")]
    NonPositiveReward,
    #[error("weight must lie in (0, 1], got {0}")]
    WeightOutOfRange(f64),
}

/// Expected value of a beta posterior after `favorable` good and
/// `unfavorable` bad observations, with a uniform prior.
pub fn naive_score(favorable: u64, unfavorable: u64) -> f64 {
    (favorable as f64 + 1.0) / (favorable as f64 + unfavorable as f64 + 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ReputationParams {
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(with = "crate::serde_f64")]
    lambda: f64,
}

impl TryFrom<RawParams> for ReputationParams {
    type Error = ReputationError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        Self::new(raw.lambda)
    }
}

impl From<ReputationParams> for RawParams {
    fn from(p: ReputationParams) -> Self {
        Self { lambda: p.lambda }
    }
}

impl Default for ReputationParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl ReputationParams {
    pub fn new(lambda: f64) -> Result<Self, ReputationError> {
        if lambda > 0.0 && lambda < 1.0 {
            Ok(Self { lambda })
        } else {
            Err(ReputationError::InvalidLambda(lambda))
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Upper bound of either discounted counter: `1/(1-λ)`.
    pub fn max_counter(&self) -> f64 {
        1.0 / (1.0 - self.lambda)
    }

    /// Largest unscaled score reachable under discounting.
    pub fn mu(&self) -> f64 {
        let m = self.max_counter();
        (m + 1.0) / (m + 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReputationAccumulator {
    #[serde(with = "crate::serde_f64")]
    pub r: f64,
    #[serde(with = "crate::serde_f64")]
    pub s: f64,
    pub n: u64,
    pub reward_sum: u128,
    pub params: ReputationParams,
}

impl Default for ReputationAccumulator {
    fn default() -> Self {
        Self::new(ReputationParams::default())
    }
}

impl ReputationAccumulator {
    pub fn new(params: ReputationParams) -> Self {
        Self {
            r: 0.0,
            s: 0.0,
            n: 0,
            reward_sum: 0,
            params,
        }
    }

    /// Weight of the next update for a deployment paying `reward`.
    pub fn weight_for(&self, reward: Amount) -> Result<f64, ReputationError> {
        if self.n == 0 {
            return Ok(1.0);
        }
        if reward == 0 {
            return Err(ReputationError::NonPositiveReward);
        }
        let reward = reward as f64;
        let mean = self.reward_sum as f64 / self.n as f64;
        Ok(reward / (mean + reward))
    }

    /// Discounts both counters and adds `weight` to the one matching the
    /// outcome. Does not touch `reward_sum`.
    pub fn update(&self, favorable: bool, weight: f64) -> Result<Self, ReputationError> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(ReputationError::WeightOutOfRange(weight));
        }
        let lambda = self.params.lambda;
        let (dr, ds) = if favorable {
            (weight, 0.0)
        } else {
            (0.0, weight)
        };
        Ok(Self {
            r: self.r * lambda + dr,
            s: self.s * lambda + ds,
            n: self.n + 1,
            ..*self
        })
    }

    /// Weights the outcome by its reward, applies it and records the reward.
    pub fn record_outcome(&self, favorable: bool, reward: Amount) -> Result<Self, ReputationError> {
        let weight = self.weight_for(reward)?;
        let mut next = self.update(favorable, weight)?;
        next.reward_sum += u128::from(reward);
        Ok(next)
    }

    /// Scaled reputation score in `(0, 1]`.
    pub fn score(&self) -> f64 {
        let raw = (self.r + 1.0) / (self.r + self.s + 2.0);
        (raw / self.params.mu()).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn acc(lambda: f64) -> ReputationAccumulator {
        ReputationAccumulator::new(ReputationParams::new(lambda).unwrap())
    }

    /// Recomputes both counters from the full outcome history.
    fn batch(lambda: f64, history: &[(bool, f64)]) -> (f64, f64) {
        let n = history.len() as i32;
        let mut r = 0.0;
        let mut s = 0.0;
        for (i, (favorable, w)) in history.iter().enumerate() {
            let discount = lambda.powi(n - 1 - i as i32);
            if *favorable {
                r += w * discount;
            } else {
                s += w * discount;
            }
        }
        (r, s)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    #[test]
    fn naive_score_values() {
        assert_eq!(naive_score(0, 0), 0.5);
        assert_eq!(naive_score(1, 0), 2.0 / 3.0);
        assert_eq!(naive_score(10, 10), 0.5);
    }

    #[test]
    fn lambda_bounds() {
        assert!(ReputationParams::new(0.0).is_err());
        assert!(ReputationParams::new(1.0).is_err());
        assert!(ReputationParams::new(f64::NAN).is_err());
        assert!(ReputationParams::new(0.5).is_ok());
    }

    #[test]
    fn mu_values() {
        assert_eq!(ReputationParams::new(0.9).unwrap().mu(), 11.0 / 12.0);
        let mu = ReputationParams::new(0.98).unwrap().mu();
        assert!((mu - 51.0 / 52.0).abs() < 1e-15);
    }

    #[test]
    fn empty_accumulator_score() {
        let score = acc(0.98).score();
        assert!((score - 26.0 / 51.0).abs() < 1e-15);
        assert!((score - 0.5098).abs() < 1e-4);
    }

    #[test]
    fn weights() {
        let a = acc(0.98);
        assert_eq!(a.weight_for(12345).unwrap(), 1.0);
        assert_eq!(a.weight_for(0).unwrap(), 1.0);
        let a = a
            .record_outcome(true, 100)
            .unwrap()
            .record_outcome(true, 100)
            .unwrap();
        assert_eq!(a.weight_for(100).unwrap(), 0.5);
        assert_eq!(a.weight_for(0), Err(ReputationError::NonPositiveReward));
        assert!((a.weight_for(1000).unwrap() - 10.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn zero_reward_history_gives_full_weight() {
        let a = acc(0.9).update(true, 1.0).unwrap();
        assert_eq!(a.reward_sum, 0);
        assert_eq!(a.weight_for(50).unwrap(), 1.0);
    }

    #[test]
    fn update_examples() {
        let a = acc(0.9).update(true, 1.0).unwrap();
        assert_eq!((a.r, a.s, a.n), (1.0, 0.0, 1));
        let a = a.update(false, 0.5).unwrap();
        assert_eq!((a.r, a.s, a.n), (0.9, 0.5, 2));
        assert_eq!(
            a.update(true, 0.0),
            Err(ReputationError::WeightOutOfRange(0.0))
        );
        assert!(a.update(true, 1.0 + 1e-12).is_err());
    }

    #[test]
    fn first_outcome_has_full_weight() {
        let a = acc(0.98).record_outcome(true, 100).unwrap();
        assert_eq!((a.r, a.s, a.n, a.reward_sum), (1.0, 0.0, 1, 100));
    }

    #[test]
    fn alternating_outcomes_follow_batch_recomputation() {
        let lambda = 0.9;
        let mut a = acc(lambda);
        let mut history = Vec::new();
        for i in 0..400 {
            let favorable = i % 2 == 0;
            let w = a.weight_for(100).unwrap();
            history.push((favorable, w));
            a = a.record_outcome(favorable, 100).unwrap();
        }
        let (r, s) = batch(lambda, &history);
        assert!(rel_err(a.r, r) < 1e-12);
        assert!(rel_err(a.s, s) < 1e-12);
        // after the first, every weight is 1/2; the two counters approach
        // 0.5/(1-λ²) and 0.5·λ/(1-λ²), ending on a favorable/unfavorable pair
        let hi = 0.5 / (1.0 - lambda * lambda);
        assert!((a.s - hi).abs() < 1e-9, "{} vs {hi}", a.s);
        assert!((a.r - hi * lambda).abs() < 1e-9);
    }

    #[test]
    fn all_favorable_run_converges_to_one_from_below() {
        let lambda = 0.98;
        let mut a = acc(lambda);
        let mut prev = a.score();
        for _ in 0..500 {
            a = a.update(true, 1.0).unwrap();
            let score = a.score();
            assert!(score >= prev && score <= 1.0);
            prev = score;
        }
        let limit = a.params.max_counter();
        let expected_r = limit * (1.0 - lambda.powi(500));
        assert!((a.r - expected_r).abs() < 1e-9);
        assert!(1.0 - prev < 1e-3);
    }

    #[test]
    fn counter_reaches_its_bound() {
        for lambda in [0.9, 0.98, 0.999] {
            let steps = (1e-6f64.ln() / f64::ln(lambda)).ceil() as usize;
            let mut a = acc(lambda);
            for _ in 0..steps + 200 {
                a = a.update(true, 1.0).unwrap();
            }
            let bound = a.params.max_counter();
            assert!((bound - a.r) / bound <= 1e-6, "λ={lambda}");
        }
    }

    #[test]
    fn recent_failures_hurt_more() {
        let failures = 5;
        let mut ends_bad = acc(0.9).update(true, 1.0).unwrap();
        for _ in 0..failures {
            ends_bad = ends_bad.update(false, 1.0).unwrap();
        }
        let mut ends_good = acc(0.9);
        for _ in 0..failures {
            ends_good = ends_good.update(false, 1.0).unwrap();
        }
        ends_good = ends_good.update(true, 1.0).unwrap();
        assert!(ends_bad.score() < ends_good.score());
    }

    #[test]
    fn favorable_update_with_tiny_weight_can_lower_a_high_score() {
        // Discounting pulls both counters toward the prior. Near the top of
        // the range a favorable update worth less than (1-λ)(r-s)/(s+1) does
        // not make up for it.
        let mut a = acc(0.98);
        for _ in 0..2000 {
            a = a.update(true, 1.0).unwrap();
        }
        let before = a.score();
        let after = a.update(true, 0.01).unwrap().score();
        assert!(after < before);
    }

    #[test]
    fn round_trips_through_json_bit_exactly() {
        let a = acc(0.98)
            .record_outcome(true, 101)
            .unwrap()
            .record_outcome(false, 97)
            .unwrap()
            .record_outcome(true, 103)
            .unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert!(
            json.contains(r#""lambda":"9.7999999999999998e-1""#),
            "{json}"
        );
        let back: ReputationAccumulator = serde_json::from_str(&json).unwrap();
        assert_eq!(back.r.to_bits(), a.r.to_bits());
        assert_eq!(back.s.to_bits(), a.s.to_bits());
        assert_eq!(back, a);
        let bad = json.replace("9.7999999999999998e-1", "1.5");
        assert!(serde_json::from_str::<ReputationAccumulator>(&bad).is_err());
    }

    fn arb_history() -> impl Strategy<Value = Vec<(bool, u64)>> {
        prop::collection::vec((any::<bool>(), 1u64..1_000), 0..300)
    }

    proptest! {
        #[test]
        fn incremental_equals_batch(lambda in prop::sample::select(vec![0.5, 0.9, 0.98, 0.999]), outcomes in arb_history()) {
            let mut a = acc(lambda);
            let mut history = Vec::new();
            for (favorable, reward) in &outcomes {
                history.push((*favorable, a.weight_for(*reward).unwrap()));
                a = a.record_outcome(*favorable, *reward).unwrap();
                let score = a.score();
                prop_assert!(score > 0.0 && score <= 1.0);
            }
            let (r, s) = batch(lambda, &history);
            prop_assert!(rel_err(a.r, r) <= 1e-9);
            prop_assert!(rel_err(a.s, s) <= 1e-9);
            prop_assert!(a.r <= a.params.max_counter() && a.s <= a.params.max_counter());
            prop_assert_eq!(a.n == 0, a.r == 0.0 && a.s == 0.0 && a.reward_sum == 0);
        }

        #[test]
        fn outcome_direction_is_monotone(outcomes in arb_history(), reward in 1u64..1_000) {
            let mut a = acc(0.98);
            for (favorable, r) in &outcomes {
                a = a.record_outcome(*favorable, *r).unwrap();
            }
            let w = a.weight_for(reward).unwrap();
            let base = a.score();
            let good = a.record_outcome(true, reward).unwrap().score();
            let bad = a.record_outcome(false, reward).unwrap().score();
            prop_assert!(good > bad);
            // exact condition under which a favorable update cannot lower the score
            let lambda = a.params.lambda();
            if w * (a.s + 1.0) >= (1.0 - lambda) * (a.r - a.s) + 1e-12 {
                prop_assert!(good >= base - 1e-15);
            }
            if w * (a.r + 1.0) >= (1.0 - lambda) * (a.s - a.r) + 1e-12 {
                prop_assert!(bad <= base + 1e-15);
            }
        }
    }
}
