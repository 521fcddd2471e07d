//! Toy softmax policies: a fixed candidate list per decision context with
//! trainable logits. Log-probabilities are exact, which makes the policy a
//! usable stand-in for a generative model in the staged pipelines and lets
//! the analytic gradient be checked against finite differences.

use super::world::SimError;
use crate::agent_io::Role;
use crate::grpo::{grpo_objective, CandidateGroup, GrpoError};
use crate::model::GrpoConfig;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Candidate payloads and their logits for one decision context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyArms {
    pub payloads: Vec<String>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub role: Role,
    pub temperature: f64,
    pub contexts: BTreeMap<String, ToyArms>,
}

/// A scored candidate group tied back to its context and arm indices, the
/// unit the toy update consumes.
#[derive(Debug, Clone)]
pub struct ToyGroup {
    pub context: String,
    pub arm_indices: Vec<usize>,
    pub group: CandidateGroup,
}

impl ToyPolicy {
    pub fn new(role: Role, temperature: f64) -> ToyPolicy {
        ToyPolicy { role, temperature, contexts: BTreeMap::new() }
    }

    pub fn add_context(&mut self, key: impl Into<String>, payloads: Vec<String>) {
        let logits = vec![0.0; payloads.len()];
        self.contexts.insert(key.into(), ToyArms { payloads, logits });
    }

    fn arms(&self, context: &str) -> Result<&ToyArms, SimError> {
        self.contexts
            .get(context)
            .ok_or_else(|| SimError::UnknownContext(context.to_string()))
    }

    pub fn probabilities(&self, context: &str) -> Result<Vec<f64>, SimError> {
        Ok(softmax(&self.arms(context)?.logits, self.temperature))
    }

    /// Exact log-probability of arm `index` under the current parameters.
    pub fn logp(&self, context: &str, index: usize) -> Result<f64, SimError> {
        let probs = self.probabilities(context)?;
        Ok(probs[index].ln())
    }

    /// Samples one payload; returns (payload, arm index, exact logp).
    pub fn sample(
        &self,
        context: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<(String, usize, f64), SimError> {
        let arms = self.arms(context)?;
        let probs = softmax(&arms.logits, self.temperature);
        let mut u: f64 = rng.gen();
        let mut index = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            if u < *p {
                index = i;
                break;
            }
            u -= p;
        }
        Ok((arms.payloads[index].clone(), index, probs[index].ln()))
    }

    /// The objective as a function of the current parameters: recomputes
    /// each candidate's new-policy log-probability, then evaluates the
    /// clipped-surrogate objective averaged over groups.
    pub fn objective(&self, groups: &[ToyGroup], cfg: &GrpoConfig) -> Result<f64, GrpoError> {
        if groups.is_empty() {
            return Err(GrpoError::EmptyGroup);
        }
        let mut total = 0.0;
        for tg in groups {
            let mut group = tg.group.clone();
            for (cand, &arm) in group.candidates.iter_mut().zip(&tg.arm_indices) {
                let logp = self
                    .logp(&tg.context, arm)
                    .map_err(|_| GrpoError::MissingLogProb(arm))?;
                cand.logp_new = Some(logp);
            }
            total += grpo_objective(&group, cfg)?;
        }
        Ok(total / groups.len() as f64)
    }

    /// Analytic gradient of [`objective`](Self::objective) with respect to
    /// each context's logits.
    pub fn gradient(
        &self,
        groups: &[ToyGroup],
        cfg: &GrpoConfig,
    ) -> Result<BTreeMap<String, Vec<f64>>, GrpoError> {
        if groups.is_empty() {
            return Err(GrpoError::EmptyGroup);
        }
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let n_groups = groups.len() as f64;
        for tg in groups {
            let arms = self
                .contexts
                .get(&tg.context)
                .ok_or(GrpoError::MissingLogProb(0))?;
            let probs = softmax(&arms.logits, self.temperature);
            let advantages = tg.group.advantages.as_ref().ok_or(GrpoError::EmptyGroup)?;
            let grad = grads
                .entry(tg.context.clone())
                .or_insert_with(|| vec![0.0; arms.logits.len()]);
            let n = tg.group.candidates.len() as f64;
            for ((cand, &arm), adv) in
                tg.group.candidates.iter().zip(&tg.arm_indices).zip(advantages)
            {
                let logp_new = probs[arm].ln();
                let logp_old = cand.logp_old.ok_or(GrpoError::MissingLogProb(arm))?;
                let rho = (logp_new - logp_old).exp();
                let unclipped = rho * adv;
                let clipped = rho.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv;
                // d logp / d z_j = (delta(j, arm) - p_j) / T
                let surrogate_coeff = if unclipped <= clipped { rho * adv } else { 0.0 };
                let kl_coeff = if cfg.kl_beta > 0.0 {
                    let logp_ref = cand.logp_ref.ok_or(GrpoError::MissingLogProb(arm))?;
                    let r = (logp_ref - logp_new).exp();
                    -cfg.kl_beta * (1.0 - r)
                } else {
                    0.0
                };
                let coeff = (surrogate_coeff + kl_coeff) / (n * n_groups * self.temperature);
                for (j, g) in grad.iter_mut().enumerate() {
                    let indicator = if j == arm { 1.0 } else { 0.0 };
                    *g += coeff * (indicator - probs[j]);
                }
            }
        }
        Ok(grads)
    }

    /// One gradient-ascent step; only contexts present in `groups` change.
    /// A zero learning rate is the identity.
    pub fn update(
        &mut self,
        groups: &[ToyGroup],
        cfg: &GrpoConfig,
        learning_rate: f64,
    ) -> Result<(), GrpoError> {
        let grads = self.gradient(groups, cfg)?;
        for (context, grad) in grads {
            let arms = self.contexts.get_mut(&context).unwrap();
            for (z, g) in arms.logits.iter_mut().zip(grad) {
                *z += learning_rate * g;
            }
        }
        Ok(())
    }
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::Candidate;
    use rand::SeedableRng;

    fn policy_with(logits: Vec<f64>) -> ToyPolicy {
        let payloads = (0..logits.len()).map(|i| format!("p{i}")).collect();
        let mut p = ToyPolicy::new(Role::Coordinator, 1.0);
        p.add_context("ctx", payloads);
        p.contexts.get_mut("ctx").unwrap().logits = logits;
        p
    }

    fn group_for(policy: &ToyPolicy, arms: Vec<usize>, rewards: Vec<f64>) -> ToyGroup {
        let candidates = arms
            .iter()
            .zip(&rewards)
            .map(|(&arm, &reward)| {
                let logp = policy.logp("ctx", arm).unwrap();
                Candidate {
                    payload: format!("p{arm}"),
                    reward,
                    logp_new: Some(logp),
                    logp_old: Some(logp),
                    logp_ref: Some(logp),
                }
            })
            .collect();
        let mut group = CandidateGroup::new(candidates);
        group.standardize(1e-8).unwrap();
        ToyGroup { context: "ctx".to_string(), arm_indices: arms, group }
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let policy = policy_with(vec![0.0; 8]);
        let probs = policy.probabilities("ctx").unwrap();
        for p in probs {
            assert!((p - 0.125).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, _, logp) = policy.sample("ctx", &mut rng).unwrap();
        assert!(logp <= 0.0);
        assert!((logp - 0.125f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_dominates() {
        let mut logits = vec![0.0; 8];
        logits[3] = 20.0;
        let policy = policy_with(logits);
        let probs = policy.probabilities("ctx").unwrap();
        assert!(probs[3] > 0.999);
    }

    #[test]
    fn unknown_context_errors() {
        let policy = policy_with(vec![0.0; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(policy.sample("nope", &mut rng), Err(SimError::UnknownContext(_))));
    }

    #[test]
    fn zero_advantages_leave_parameters_unchanged() {
        let mut policy = policy_with(vec![0.1, 0.2, 0.3, 0.4]);
        let group = group_for(&policy, vec![0, 1, 2, 3], vec![0.5; 4]);
        let before = policy.contexts["ctx"].logits.clone();
        policy.update(&[group], &GrpoConfig::default(), 0.5).unwrap();
        assert_eq!(policy.contexts["ctx"].logits, before);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut policy = policy_with(vec![0.0; 4]);
        let group = group_for(&policy, vec![0, 1, 2, 3], vec![1.0, 0.0, 0.0, 1.0]);
        let before = policy.clone();
        policy.update(&[group], &GrpoConfig::default(), 0.0).unwrap();
        assert_eq!(policy, before);
    }

    #[test]
    fn rewarded_arm_logit_increases() {
        let mut policy = policy_with(vec![0.0; 4]);
        let group = group_for(&policy, vec![0, 1, 2, 3], vec![1.0, 0.0, 0.0, 0.0]);
        policy.update(&[group], &GrpoConfig::default(), 0.5).unwrap();
        let logits = &policy.contexts["ctx"].logits;
        assert!(logits[0] > 0.0, "{logits:?}");
        assert!(logits[1] < 0.0, "{logits:?}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for beta in [0.0, 0.1] {
            let cfg = GrpoConfig { kl_beta: beta, ..GrpoConfig::default() };
            let policy = policy_with(vec![0.3, -0.2, 0.5, 0.0]);
            // logp_old/logp_ref deliberately off-policy so rho != 1
            let mut group = group_for(&policy, vec![0, 1, 2, 3], vec![1.0, 0.28, 0.28, 0.0]);
            for cand in &mut group.group.candidates {
                *cand.logp_old.as_mut().unwrap() += 0.05;
                *cand.logp_ref.as_mut().unwrap() -= 0.03;
            }
            let analytic = policy.gradient(&[group.clone()], &cfg).unwrap();
            let h = 1e-5;
            for j in 0..4 {
                let mut plus = policy.clone();
                plus.contexts.get_mut("ctx").unwrap().logits[j] += h;
                let mut minus = policy.clone();
                minus.contexts.get_mut("ctx").unwrap().logits[j] -= h;
                let fd = (plus.objective(&[group.clone()], &cfg).unwrap()
                    - minus.objective(&[group.clone()], &cfg).unwrap())
                    / (2.0 * h);
                let a = analytic["ctx"][j];
                let scale = a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    ((a - fd) / scale).abs() < 1e-4,
                    "beta {beta} logit {j}: analytic {a} vs fd {fd}"
                );
            }
        }
    }
}
