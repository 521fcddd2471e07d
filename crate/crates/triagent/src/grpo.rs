//! Group-relative policy optimization numerics: within-group standardized
//! advantages, importance ratios, the clipped surrogate and a non-negative
//! per-sample KL estimator.

use crate::model::GrpoConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrpoError {
    #[error("empty candidate group")]
    EmptyGroup,
    #[error("non-finite input")]
    NonFinite,
    #[error("candidate {0} is missing a required log-probability")]
    MissingLogProb(usize),
}

/// One sampled output: its payload text, scalar reward, and optional
/// token-summed log-probabilities under the new, old and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub payload: String,
    pub reward: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logp_new: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logp_old: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub logp_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGroup {
    pub candidates: Vec<Candidate>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub advantages: Option<Vec<f64>>,
}

impl CandidateGroup {
    pub fn new(candidates: Vec<Candidate>) -> CandidateGroup {
        CandidateGroup { candidates, advantages: None }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.reward).collect()
    }

    /// Fills `advantages` from the candidate rewards.
    pub fn standardize(&mut self, std_floor: f64) -> Result<(), GrpoError> {
        self.advantages = Some(group_advantages(&self.rewards(), std_floor)?);
        Ok(())
    }
}

/// Within-group standardized advantages using the population standard
/// deviation. Groups whose std falls below `std_floor` get all-zero
/// advantages, which skips the update rather than amplifying noise.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// exp(logp_new - logp_old).
pub fn importance_ratio(logp_new: f64, logp_old: f64) -> Result<f64, GrpoError> {
    if !logp_new.is_finite() || !logp_old.is_finite() {
        return Err(GrpoError::NonFinite);
    }
    Ok((logp_new - logp_old).exp())
}

/// min(rho * adv, clamp(rho, 1-eps, 1+eps) * adv): the pessimistic clipped
/// surrogate term.
pub fn clipped_surrogate(rho: f64, adv: f64, clip_epsilon: f64) -> f64 {
    let clipped = rho.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (rho * adv).min(clipped * adv)
}

/// Per-sample KL estimate k3 = r - ln r - 1 with r = exp(logp_ref - logp_new).
/// Non-negative for all finite inputs, zero iff the log-probs agree.
pub fn kl_penalty(logp_new: f64, logp_ref: f64) -> Result<f64, GrpoError> {
    if !logp_new.is_finite() || !logp_ref.is_finite() {
        return Err(GrpoError::NonFinite);
    }
    let log_r = logp_ref - logp_new;
    Ok(log_r.exp() - log_r - 1.0)
}

/// Mean clipped surrogate over the group minus the KL penalty term.
///
/// Requires standardized advantages plus new/old log-probs on every
/// candidate; reference log-probs only when `kl_beta > 0`.
pub fn grpo_objective(group: &CandidateGroup, cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    let advantages = group.advantages.as_ref().ok_or(GrpoError::EmptyGroup)?;
    if group.candidates.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    let n = group.candidates.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for (i, (c, adv)) in group.candidates.iter().zip(advantages).enumerate() {
        let logp_new = c.logp_new.ok_or(GrpoError::MissingLogProb(i))?;
        let logp_old = c.logp_old.ok_or(GrpoError::MissingLogProb(i))?;
        let rho = importance_ratio(logp_new, logp_old)?;
        surrogate += clipped_surrogate(rho, *adv, cfg.clip_epsilon);
        if cfg.kl_beta > 0.0 {
            let logp_ref = c.logp_ref.ok_or(GrpoError::MissingLogProb(i))?;
            kl += kl_penalty(logp_new, logp_ref)?;
        }
    }
    Ok(surrogate / n - cfg.kl_beta * kl / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(reward: f64, logp_new: f64, logp_old: f64, logp_ref: f64) -> Candidate {
        Candidate {
            payload: String::new(),
            reward,
            logp_new: Some(logp_new),
            logp_old: Some(logp_old),
            logp_ref: Some(logp_ref),
        }
    }

    #[test]
    fn group_advantages_examples() {
        let adv = group_advantages(&[1.0, 0.0, 0.0, 1.0], 1e-8).unwrap();
        for (a, e) in adv.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((a - e).abs() < 1e-12, "{adv:?}");
        }
        assert_eq!(group_advantages(&[0.28; 4], 1e-8).unwrap(), vec![0.0; 4]);
        let adv = group_advantages(&[1.0, 0.0], 1e-8).unwrap();
        assert!((adv[0] - 1.0).abs() < 1e-12 && (adv[1] + 1.0).abs() < 1e-12);
        assert_eq!(group_advantages(&[], 1e-8), Err(GrpoError::EmptyGroup));
    }

    #[test]
    fn importance_ratio_examples() {
        assert!((importance_ratio(-2.0, -2.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((importance_ratio(-1.0, -2.0).unwrap() - std::f64::consts::E).abs() < 1e-9);
        assert!((importance_ratio(-3.0, -2.0).unwrap() - (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(importance_ratio(f64::NAN, 0.0), Err(GrpoError::NonFinite));
    }

    #[test]
    fn clipped_surrogate_examples() {
        assert!((clipped_surrogate(1.0, 2.0, 0.2) - 2.0).abs() < 1e-12);
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn kl_penalty_examples() {
        assert!(kl_penalty(-2.0, -2.0).unwrap().abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((kl_penalty(0.0, -1.0).unwrap() - (1.0 / e)).abs() < 1e-9);
        assert!((kl_penalty(-1.0, 0.0).unwrap() - (e - 2.0)).abs() < 1e-9);
    }

    #[test]
    fn grpo_objective_examples() {
        let cfg = GrpoConfig::default();
        let mut g = CandidateGroup::new(vec![cand(1.0, -2.0, -2.0, -2.0), cand(0.0, -2.0, -2.0, -2.0)]);
        g.advantages = Some(vec![1.0, -1.0]);
        assert!(grpo_objective(&g, &cfg).unwrap().abs() < 1e-12);

        // ratios [1.5, 1.0], advantages [1, -1], eps 0.2 -> (1.2 - 1.0) / 2
        let mut g = CandidateGroup::new(vec![
            cand(1.0, -1.5946, -2.0, -2.0),
            cand(0.0, -2.0, -2.0, -2.0),
        ]);
        g.candidates[0].logp_new = Some(-2.0 + 1.5f64.ln());
        g.advantages = Some(vec![1.0, -1.0]);
        assert!((grpo_objective(&g, &cfg).unwrap() - 0.1).abs() < 1e-12);

        // zero KL at identity: beta does not change the value
        let mut g = CandidateGroup::new(vec![cand(1.0, -2.0, -2.0, -2.0), cand(0.0, -3.0, -3.0, -3.0)]);
        g.advantages = Some(vec![1.0, -1.0]);
        let base = grpo_objective(&g, &cfg).unwrap();
        let with_kl = grpo_objective(&g, &GrpoConfig { kl_beta: 0.1, ..cfg }).unwrap();
        assert!((base - with_kl).abs() < 1e-12);

        let mut g = CandidateGroup::new(vec![Candidate {
            payload: String::new(),
            reward: 1.0,
            logp_new: None,
            logp_old: None,
            logp_ref: None,
        }]);
        g.advantages = Some(vec![0.0]);
        assert_eq!(grpo_objective(&g, &cfg), Err(GrpoError::MissingLogProb(0)));
    }

    proptest! {
        #[test]
        fn advantages_zero_mean_unit_std(
            rewards in proptest::collection::vec(0.0f64..1.0, 2..16)
        ) {
            let adv = group_advantages(&rewards, 1e-8).unwrap();
            let n = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            if adv.iter().any(|a| *a != 0.0) {
                let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn advantages_shift_invariant(
            rewards in proptest::collection::vec(0.0f64..1.0, 2..12),
            shift in -10.0f64..10.0,
        ) {
            let base = group_advantages(&rewards, 1e-8).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let moved = group_advantages(&shifted, 1e-8).unwrap();
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn surrogate_is_pessimistic(
            rho in 0.01f64..4.0,
            adv in -3.0f64..3.0,
            eps in 0.05f64..0.5,
        ) {
            let s = clipped_surrogate(rho, adv, eps);
            prop_assert!(s <= rho * adv + 1e-12);
            if (1.0 - eps..=1.0 + eps).contains(&rho) {
                prop_assert!((s - rho * adv).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_is_non_negative(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            prop_assert!(kl_penalty(a, b).unwrap() >= -1e-12);
        }
    }
}
