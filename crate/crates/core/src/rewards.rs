//! Set-similarity rewards, condition adherence and group-relative policy
//! optimization arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{check_condition, Condition, Hypothesis};
use crate::set::EntitySet;

/// Default normalization epsilon for [`group_advantages`].
pub const ADVANTAGE_EPSILON: f64 = 1e-8;
pub const DEFAULT_CLIP_EPSILON: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 0.04;
pub const DEFAULT_GROUP_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 0.5,
            alpha: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3];
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::contract("reward weights must be finite and non-negative"));
        }
        if lambdas.iter().sum::<f64>() <= 0.0 {
            return Err(Error::contract("at least one reward weight must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::contract(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn lambda_sum(&self) -> f64 {
        self.lambda1 + self.lambda2 + self.lambda3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub jaccard: f64,
    pub dice: f64,
    pub overlap: f64,
    pub r_sem: f64,
    pub r_cond: f64,
    pub r_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Similarity {
    pub jaccard: f64,
    pub dice: f64,
    pub overlap: f64,
}

/// Jaccard, Dice and Overlap of two sets; all zero when either is empty.
pub fn similarity(a: &EntitySet, b: &EntitySet) -> Similarity {
    if a.is_empty() || b.is_empty() {
        return Similarity::default();
    }
    let inter = a.intersection_len(b) as f64;
    let (la, lb) = (a.len() as f64, b.len() as f64);
    Similarity {
        jaccard: inter / (la + lb - inter),
        dice: 2.0 * inter / (la + lb),
        overlap: inter / la.min(lb),
    }
}

/// Semantic fields of the breakdown; `r_cond` and `r_hat` are left at zero.
pub fn semantic_reward(conclusion: &EntitySet, observation: &EntitySet, w: &RewardWeights) -> Result<RewardBreakdown> {
    if observation.is_empty() {
        return Err(Error::contract("observation must be nonempty"));
    }
    let s = similarity(conclusion, observation);
    Ok(RewardBreakdown {
        jaccard: s.jaccard,
        dice: s.dice,
        overlap: s.overlap,
        r_sem: w.lambda1 * s.jaccard + w.lambda2 * s.dice + w.lambda3 * s.overlap,
        ..Default::default()
    })
}

pub fn condition_reward(h: &Hypothesis, c: &Condition) -> f64 {
    if check_condition(h, c) {
        1.0
    } else {
        0.0
    }
}

pub fn combined_reward(
    conclusion: &EntitySet,
    observation: &EntitySet,
    h: &Hypothesis,
    c: &Condition,
    w: &RewardWeights,
) -> Result<RewardBreakdown> {
    let mut b = semantic_reward(conclusion, observation, w)?;
    b.r_cond = condition_reward(h, c);
    b.r_hat = w.alpha * b.r_sem + (1.0 - w.alpha) * b.r_cond;
    Ok(b)
}

/// `(r_i - mean) / (population_std + epsilon)`.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::contract(format!(
            "group normalization needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let k = rewards.len() as f64;
    // Centered on the first reward so equal or uniformly shifted groups
    // produce bit-identical differences.
    let d: Vec<f64> = rewards.iter().map(|r| r - rewards[0]).collect();
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
    let denom = var.sqrt() + epsilon;
    Ok(d.iter().map(|x| (x - mean) / denom).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub rewards: Vec<f64>,
    pub token_logprobs_current: Vec<Vec<f64>>,
    pub token_logprobs_old: Vec<Vec<f64>>,
    pub token_logprobs_ref: Vec<Vec<f64>>,
    pub beta: f64,
    pub clip_epsilon: f64,
}

impl GroupSample {
    pub fn validate(&self) -> Result<()> {
        let k = self.rewards.len();
        if self.token_logprobs_current.len() != k || self.token_logprobs_old.len() != k || self.token_logprobs_ref.len() != k
        {
            return Err(Error::contract("every log-probability list needs one entry per sample"));
        }
        for i in 0..k {
            let n = self.token_logprobs_current[i].len();
            if n == 0 {
                return Err(Error::contract(format!("sample {i} has no tokens")));
            }
            if self.token_logprobs_old[i].len() != n || self.token_logprobs_ref[i].len() != n {
                return Err(Error::contract(format!("sample {i} has misaligned token log-probabilities")));
            }
        }
        if !(self.beta >= 0.0) || !(self.clip_epsilon > 0.0) {
            return Err(Error::contract("beta must be non-negative and clip_epsilon positive"));
        }
        Ok(())
    }
}

/// Per-token KL estimate `exp(ref - cur) - (ref - cur) - 1`, never negative.
pub fn kl_k3(logp_cur: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_cur;
    (d.exp() - d - 1.0).max(0.0)
}

/// Group-averaged, length-normalized clipped surrogate minus the KL penalty.
/// Only the importance ratio is clipped.
pub fn grpo_token_objective(gs: &GroupSample, advantages: &[f64]) -> Result<f64> {
    gs.validate()?;
    if advantages.len() != gs.rewards.len() {
        return Err(Error::contract(format!(
            "expected {} advantages, got {}",
            gs.rewards.len(),
            advantages.len()
        )));
    }
    let (lo, hi) = (1.0 - gs.clip_epsilon, 1.0 + gs.clip_epsilon);
    let mut total = 0.0;
    for (i, &a) in advantages.iter().enumerate() {
        let cur = &gs.token_logprobs_current[i];
        let per_sample: f64 = cur
            .iter()
            .zip(&gs.token_logprobs_old[i])
            .zip(&gs.token_logprobs_ref[i])
            .map(|((&c, &o), &r)| (c - o).exp().clamp(lo, hi) * a - gs.beta * kl_k3(c, r))
            .sum();
        total += per_sample / cur.len() as f64;
    }
    Ok(total / advantages.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::{parse, PatternId};
    use crate::RelationId;
    use proptest::prelude::*;

    fn set(ids: &[u32]) -> EntitySet {
        EntitySet::from_ids(ids.iter().copied())
    }

    #[test]
    fn worked_example() {
        let w = RewardWeights::default();
        let b = semantic_reward(&set(&[0, 1]), &set(&[1, 2]), &w).unwrap();
        assert!((b.jaccard - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((b.dice, b.overlap), (0.5, 0.5));
        assert!((b.r_sem - 5.0 / 6.0).abs() < 1e-9);
        let h = parse("(p r1 (e e0))").unwrap();
        let b = combined_reward(&set(&[0, 1]), &set(&[1, 2]), &h, &Condition::Pattern(PatternId::P1), &w).unwrap();
        assert_eq!(b.r_cond, 1.0);
        assert!((b.r_hat - 0.916_666_666_666).abs() < 1e-9);
    }

    #[test]
    fn degenerate_sets() {
        let w = RewardWeights::default();
        let same = semantic_reward(&set(&[3, 4]), &set(&[3, 4]), &w).unwrap();
        assert_eq!((same.jaccard, same.dice, same.overlap, same.r_sem), (1.0, 1.0, 1.0, 2.0));
        let disjoint = semantic_reward(&set(&[1]), &set(&[2]), &w).unwrap();
        assert_eq!(disjoint.r_sem, 0.0);
        let empty = semantic_reward(&EntitySet::default(), &set(&[2]), &w).unwrap();
        assert_eq!((empty.jaccard, empty.dice, empty.overlap), (0.0, 0.0, 0.0));
        assert!(matches!(semantic_reward(&set(&[1]), &EntitySet::default(), &w), Err(Error::Contract(_))));
    }

    #[test]
    fn alpha_boundaries_and_condition_reward() {
        let h = parse("(p r7 (e e0))").unwrap();
        assert_eq!(condition_reward(&h, &Condition::RelationCount(2)), 0.0);
        assert_eq!(condition_reward(&h, &Condition::SpecificRelation(RelationId(7))), 1.0);
        let (a, b) = (set(&[0, 1]), set(&[1, 2]));
        let c = Condition::RelationCount(2);
        let w1 = RewardWeights { alpha: 1.0, ..Default::default() };
        let r = combined_reward(&a, &b, &h, &c, &w1).unwrap();
        assert_eq!(r.r_hat, r.r_sem);
        let w0 = RewardWeights { alpha: 0.0, ..Default::default() };
        assert_eq!(combined_reward(&a, &b, &h, &c, &w0).unwrap().r_hat, 0.0);
    }

    #[test]
    fn weight_validation() {
        assert!(RewardWeights::default().validate().is_ok());
        for bad in [
            RewardWeights { alpha: 1.5, ..Default::default() },
            RewardWeights { lambda2: -0.1, ..Default::default() },
            RewardWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, alpha: 0.5 },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn advantages() {
        assert_eq!(group_advantages(&[1.0; 4], ADVANTAGE_EPSILON).unwrap(), vec![0.0; 4]);
        let a = group_advantages(&[0.0, 1.0], ADVANTAGE_EPSILON).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-7 && (a[1] - 1.0).abs() < 1e-7);
        assert!(a[1] < 1.0);
        assert!(group_advantages(&[1.0], ADVANTAGE_EPSILON).is_err());
    }

    #[test]
    fn clipped_ratio_example() {
        let gs = GroupSample {
            rewards: vec![1.0],
            token_logprobs_current: vec![vec![2f64.ln()]],
            token_logprobs_old: vec![vec![0.0]],
            token_logprobs_ref: vec![vec![0.0]],
            beta: 0.0,
            clip_epsilon: 0.2,
        };
        assert!((grpo_token_objective(&gs, &[1.0]).unwrap() - 1.2).abs() < 1e-12);
        assert!(grpo_token_objective(&gs, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identity_policies_give_mean_advantage() {
        let lp = vec![vec![-0.3, -1.2], vec![-0.7], vec![-2.0, -0.1, -0.4]];
        let gs = GroupSample {
            rewards: vec![0.2, 0.9, 0.4],
            token_logprobs_current: lp.clone(),
            token_logprobs_old: lp.clone(),
            token_logprobs_ref: lp,
            beta: DEFAULT_BETA,
            clip_epsilon: DEFAULT_CLIP_EPSILON,
        };
        let adv = [0.5, -1.0, 2.0];
        let mean = adv.iter().sum::<f64>() / 3.0;
        assert!((grpo_token_objective(&gs, &adv).unwrap() - mean).abs() < 1e-12);
        let ragged = GroupSample { token_logprobs_old: vec![vec![0.0], vec![0.0], vec![0.0]], ..gs };
        assert!(matches!(grpo_token_objective(&ragged, &adv), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn metric_ordering(a in prop::collection::btree_set(0u32..40, 1..20), b in prop::collection::btree_set(0u32..40, 1..20)) {
            let s = similarity(&EntitySet::from_ids(a), &EntitySet::from_ids(b));
            prop_assert!(s.jaccard <= s.dice && s.dice <= s.overlap && s.overlap <= 1.0);
        }

        #[test]
        fn advantages_are_scale_and_shift_invariant(r in prop::collection::vec(-5.0f64..5.0, 2..8), shift in -3.0f64..3.0) {
            let base = group_advantages(&r, ADVANTAGE_EPSILON).unwrap();
            let shifted: Vec<f64> = r.iter().map(|x| x + shift).collect();
            let s = group_advantages(&shifted, ADVANTAGE_EPSILON).unwrap();
            for (x, y) in base.iter().zip(&s) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            prop_assert!(base.iter().sum::<f64>().abs() < 1e-6);
        }

        #[test]
        fn kl_is_nonnegative(c in -20.0f64..0.0, r in -20.0f64..0.0) {
            prop_assert!(kl_k3(c, r) >= 0.0);
        }
    }
}
