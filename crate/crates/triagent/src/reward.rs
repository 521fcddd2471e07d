//! Rule-based execution-feedback reward: format, type and parameter
//! components and their weighted composition.
//!
//! All functions are pure and total; missing data degrades to a zero
//! component instead of erroring so candidate groups always receive a full
//! set of finite rewards.

use crate::agent_io::check_format;
use crate::model::{bbox_contains, Action, ActionType, GroundTruthStep, RewardConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Per-step reward components and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: u8,
    pub r_type: u8,
    pub r_param: u8,
    pub r_executor: f64,
    pub total: f64,
}

fn token_counts(s: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for tok in s.to_lowercase().split_whitespace() {
        *counts.entry(tok.to_string()).or_insert(0) += 1;
    }
    counts
}

/// Token-level F1 over lowercased whitespace tokens, with multiset overlap.
///
/// Both empty -> 1.0; exactly one empty -> 0.0.
pub fn token_f1(pred: &str, gt: &str) -> f64 {
    let pred_counts = token_counts(pred);
    let gt_counts = token_counts(gt);
    let n_pred: usize = pred_counts.values().sum();
    let n_gt: usize = gt_counts.values().sum();
    match (n_pred, n_gt) {
        (0, 0) => return 1.0,
        (0, _) | (_, 0) => return 0.0,
        _ => {}
    }
    let overlap: usize = pred_counts
        .iter()
        .map(|(tok, c)| c.min(gt_counts.get(tok).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / n_pred as f64;
    let recall = overlap as f64 / n_gt as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1 iff the predicted action type matches the ground truth.
pub fn reward_type(a: &Action, gt: &GroundTruthStep) -> u8 {
    u8::from(a.kind == gt.gt_type)
}

/// Parameter correctness, case-split on the predicted action kind; this is
/// the same rule the success-rate metric uses.
pub fn reward_param(a: &Action, gt: &GroundTruthStep, cfg: &RewardConfig) -> u8 {
    let ok = match a.kind {
        ActionType::Click | ActionType::LongPress | ActionType::Select => {
            match (a.point, gt.gt_bbox) {
                (Some(p), Some(b)) => bbox_contains(&b, p),
                _ => {
                    log::debug!("reward_param: point/bbox missing, scoring 0");
                    false
                }
            }
        }
        ActionType::TypeText => match (&a.input_text, &gt.gt_text) {
            (Some(pred), Some(gt_text)) => token_f1(pred, gt_text) > cfg.f1_threshold,
            _ => {
                log::debug!("reward_param: input_text/gt_text missing, scoring 0");
                false
            }
        },
        ActionType::Scroll => match (a.direction, gt.gt_direction) {
            (Some(d), Some(g)) => d == g,
            _ => {
                log::debug!("reward_param: direction missing, scoring 0");
                false
            }
        },
        _ => a.kind == gt.gt_type,
    };
    u8::from(ok)
}

/// Weighted type/parameter reward in [0, 1].
pub fn reward_executor(a: &Action, gt: &GroundTruthStep, cfg: &RewardConfig) -> f64 {
    cfg.gamma1 * f64::from(reward_type(a, gt)) + cfg.gamma2 * f64::from(reward_param(a, gt, cfg))
}

/// Full breakdown for one candidate output. `action` is `None` when the
/// output failed to parse, which zeroes the type and parameter components.
pub fn total_reward(
    raw: &str,
    action: Option<&Action>,
    gt: &GroundTruthStep,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let r_format = check_format(raw);
    let (r_type, r_param) = match action {
        Some(a) => (reward_type(a, gt), reward_param(a, gt, cfg)),
        None => (0, 0),
    };
    let r_executor = cfg.gamma1 * f64::from(r_type) + cfg.gamma2 * f64::from(r_param);
    let total = cfg.alpha1 * f64::from(r_format) + cfg.alpha2 * r_executor;
    RewardBreakdown { r_format, r_type, r_param, r_executor, total }
}
