//! JSONL record shapes of the artifacts the subcommands exchange.

use serde::{Deserialize, Serialize};
use sqlpref_core::executor::{CellValue, ExecStatus, ExecutionOutcome, Verdict};

/// One line of `prompts.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct PromptRecord {
    pub item_id: String,
    pub prompt: String,
}

/// One line of `verdicts.jsonl`. `verdict` is null when the gold query
/// itself failed; `error_msg` then carries the harness error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub item_id: String,
    pub checkpoint_tag: String,
    pub sample_index: u32,
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
    pub elapsed_ms: u64,
}

/// One line of `outcomes.jsonl`: either the gold result of an item
/// (`kind = "gold"`, carrying the order-sensitivity flag) or one sample's
/// result (`kind = "sample"`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub item_id: String,
    pub kind: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    pub status: ExecStatus,
    #[serde(default)]
    pub rows: Vec<Vec<CellValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_sensitive: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    #[serde(rename = "gold")]
    Gold,
    #[serde(rename = "sample")]
    Sample,
}

impl OutcomeRecord {
    pub fn gold(item_id: &str, outcome: &ExecutionOutcome, order_sensitive: bool) -> Self {
        Self {
            item_id: item_id.to_string(),
            kind: OutcomeKind::Gold,
            checkpoint_tag: None,
            sample_index: None,
            status: outcome.status,
            rows: outcome.rows.clone(),
            error_msg: outcome.error_msg.clone(),
            elapsed_ms: outcome.elapsed_ms,
            order_sensitive: Some(order_sensitive),
        }
    }

    pub fn sample(
        item_id: &str,
        checkpoint_tag: &str,
        sample_index: u32,
        outcome: &ExecutionOutcome,
    ) -> Self {
        Self {
            item_id: item_id.to_string(),
            kind: OutcomeKind::Sample,
            checkpoint_tag: Some(checkpoint_tag.to_string()),
            sample_index: Some(sample_index),
            status: outcome.status,
            rows: outcome.rows.clone(),
            error_msg: outcome.error_msg.clone(),
            elapsed_ms: outcome.elapsed_ms,
            order_sensitive: None,
        }
    }

    pub fn to_outcome(&self) -> ExecutionOutcome {
        ExecutionOutcome {
            status: self.status,
            rows: self.rows.clone(),
            error_msg: self.error_msg.clone(),
            elapsed_ms: self.elapsed_ms,
        }
    }
}

/// One line of the synthesis output; loadable as a rollout downstream.
#[derive(Debug, Serialize, Deserialize)]
pub struct SynthRecord {
    pub item_id: String,
    pub checkpoint_tag: String,
    pub sample_index: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_sql: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unextractable: bool,
}

/// Input line of `dpo-metrics --pairs`: beta falls back to the flag value
/// when a record does not pin its own.
#[derive(Debug, Deserialize)]
pub struct PairDumpRecord {
    pub pair_id: String,
    pub chosen: sqlpref_core::dpomath::TokenSequenceLogprobs,
    pub rejected: sqlpref_core::dpomath::TokenSequenceLogprobs,
    #[serde(default)]
    pub beta: Option<f64>,
}

/// Aggregates of one `dpo-metrics --pairs` run.
#[derive(Debug, Serialize, Deserialize)]
pub struct DpoSummary {
    pub n_pairs: usize,
    pub beta: f64,
    pub lambda_sft: f64,
    pub classification_accuracy: f64,
    pub mean_loss: f64,
    pub mean_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_loss_with_sft: Option<f64>,
}

/// Mean self-assessed reward of one checkpoint; joined with eval reports
/// into the reward-hacking series.
#[derive(Debug, Serialize, Deserialize)]
pub struct SelfRewardRecord {
    pub checkpoint_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub n_rollouts: usize,
    pub mean_implicit_reward: f64,
}

/// One point of the (epoch, self_reward, pass@1) series.
#[derive(Debug, Serialize, Deserialize)]
pub struct SelfRewardPoint {
    pub checkpoint_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub self_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_1: Option<f64>,
}
