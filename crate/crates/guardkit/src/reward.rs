//! Verifiable rewards and group-relative advantages for policy-conditioned
//! completions, served to an external RL trainer.
//!
//! The reward for one completion is
//! `correctness_weight * [parsed decision == ground truth] +
//!  format_weight * [parse status == Parsed]`.
//! Advantages normalize each reward against its sampling group:
//! `(r_i - mean(r)) / (std(r) + epsilon)` with population standard deviation;
//! zero-variance groups (including singletons) get all-zero advantages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::SafetyLabel;
use crate::verdict::{parse_verdict, ParseRules, ParseStatus};

/// Reward shaping configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub correctness_weight: f64,
    pub format_weight: f64,
    #[serde(default)]
    pub parse_rules: ParseRules,
    pub advantage_epsilon: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            correctness_weight: 1.0,
            format_weight: 0.1,
            parse_rules: ParseRules::default(),
            advantage_epsilon: 1e-6,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.correctness_weight <= 0.0 {
            return Err(Error::Input("correctness_weight must be > 0".into()));
        }
        if self.format_weight < 0.0 {
            return Err(Error::Input("format_weight must be >= 0".into()));
        }
        if self.advantage_epsilon < 0.0 {
            return Err(Error::Input("advantage_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// One GRPO group: a prompt's completions with rewards and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBatch {
    pub group_id: String,
    pub policy_id: String,
    pub ground_truth: SafetyLabel,
    pub completions: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Score one completion against the ground-truth label.
pub fn score_completion(raw: &str, ground_truth: SafetyLabel, spec: &RewardSpec) -> f64 {
    let verdict = parse_verdict(raw, &spec.parse_rules);
    let correct = verdict.decision == Some(ground_truth);
    let parsed = verdict.parse_status == ParseStatus::Parsed;
    spec.correctness_weight * f64::from(correct as u8)
        + spec.format_weight * f64::from(parsed as u8)
}

/// Group-relative advantage normalization.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect())
}

/// Input to [`score_batch`]: one prompt's sampled completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionGroup {
    pub group_id: String,
    pub policy_id: String,
    pub ground_truth: SafetyLabel,
    pub completions: Vec<String>,
}

/// Score a whole group and compute its advantages.
pub fn score_batch(group: &CompletionGroup, spec: &RewardSpec) -> Result<RewardBatch> {
    spec.validate()?;
    if group.completions.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let rewards: Vec<f64> = group
        .completions
        .iter()
        .map(|c| score_completion(c, group.ground_truth, spec))
        .collect();
    let advantages = group_advantages(&rewards, spec.advantage_epsilon)?;
    Ok(RewardBatch {
        group_id: group.group_id.clone(),
        policy_id: group.policy_id.clone(),
        ground_truth: group.ground_truth,
        completions: group.completions.clone(),
        rewards,
        advantages,
    })
}
