//! Model-sample ingestion, SQL extraction from CoT text, and verdict joins.
//!
//! Sampling itself happens in an external inference server; this module only
//! consumes its dumps. Extraction follows the "last block wins" rule: CoT
//! responses restate the SQL once near the end, and later self-corrections
//! supersede earlier drafts.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::executor::Verdict;

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error("duplicate rollout key ({item_id}, {checkpoint_tag}, {sample_index})")]
    DuplicateKey {
        item_id: String,
        checkpoint_tag: String,
        sample_index: u32,
    },
    #[error("no verdict for rollout ({item_id}, {checkpoint_tag}, {sample_index})")]
    MissingVerdict {
        item_id: String,
        checkpoint_tag: String,
        sample_index: u32,
    },
}

/// One sampled model output for one dataset item.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Rollout {
    pub item_id: String,
    /// Which checkpoint produced the sample, e.g. `sft` or `dpo-epoch3`.
    pub checkpoint_tag: String,
    pub sample_index: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_sql: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

impl Rollout {
    pub fn key(&self) -> (String, String, u32) {
        (
            self.item_id.clone(),
            self.checkpoint_tag.clone(),
            self.sample_index,
        )
    }
}

#[derive(Debug, PartialEq)]
struct FencedBlock {
    info: String,
    content: String,
}

fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match open.take() {
                Some((info, lines)) => {
                    // A fence line closes the open block; anything after the
                    // backticks on a closing line is ignored.
                    blocks.push(FencedBlock {
                        info,
                        content: lines.join("\n"),
                    });
                    // ``` immediately reopening (info string present) starts
                    // a new block only when the line is not a bare close.
                    if !rest.trim().is_empty() {
                        open = Some((rest.trim().to_string(), Vec::new()));
                    }
                }
                None => {
                    open = Some((rest.trim().to_string(), Vec::new()));
                }
            }
        } else if let Some((_, lines)) = open.as_mut() {
            lines.push(line);
        }
    }
    blocks
}

fn is_sql_info(info: &str) -> bool {
    let tag = info.split_whitespace().next().unwrap_or("");
    tag.eq_ignore_ascii_case("sql") || tag.eq_ignore_ascii_case("sqlite")
}

/// Pulls the predicted SQL out of a CoT response.
///
/// Returns the contents of the last fenced code block tagged `sql` (or
/// `sqlite`), falling back to the last fenced block of any kind. Blocks that
/// trim to nothing are ignored, so extraction never yields an empty string.
/// Text with no fence at all is treated as bare SQL when it parses as a
/// single statement, which covers samplers trained on SQL-only labels.
pub fn extract_sql(text: &str) -> Option<String> {
    let blocks = fenced_blocks(text);
    let non_empty = |b: &&FencedBlock| !b.content.trim().is_empty();
    if let Some(block) = blocks.iter().filter(|b| is_sql_info(&b.info)).rfind(non_empty) {
        return Some(block.content.trim().to_string());
    }
    if let Some(block) = blocks.iter().rfind(non_empty) {
        return Some(block.content.trim().to_string());
    }
    if !blocks.is_empty() || text.contains("```") {
        return None;
    }
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return None;
    }
    crate::analysis::parse_sql(trimmed)
        .ok()
        .map(|_| trimmed.to_string())
}

/// Runs extraction on every rollout that does not carry SQL yet.
pub fn extract_all(rollouts: &mut [Rollout]) {
    for rollout in rollouts {
        if rollout.extracted_sql.is_none() {
            rollout.extracted_sql = extract_sql(&rollout.text);
        }
    }
}

/// Reads a rollout JSONL file, rejecting duplicate
/// (item, checkpoint, sample) keys.
pub fn load_rollouts(path: &Path) -> Result<Vec<Rollout>, RolloutError> {
    let rollouts: Vec<Rollout> = crate::jsonl::read_jsonl(path)?;
    let mut seen = HashSet::new();
    for rollout in &rollouts {
        if !seen.insert(rollout.key()) {
            return Err(RolloutError::DuplicateKey {
                item_id: rollout.item_id.clone(),
                checkpoint_tag: rollout.checkpoint_tag.clone(),
                sample_index: rollout.sample_index,
            });
        }
    }
    Ok(rollouts)
}

/// Joins verdicts onto rollouts by (item, checkpoint, sample). Rollouts
/// without extracted SQL are NONEXECUTABLE by definition; every other
/// rollout must be covered by the verdict map.
pub fn attach_verdicts(
    rollouts: &[Rollout],
    verdicts: &BTreeMap<(String, String, u32), Verdict>,
) -> Result<Vec<Rollout>, RolloutError> {
    let mut out = Vec::with_capacity(rollouts.len());
    for rollout in rollouts {
        let verdict = if rollout.extracted_sql.is_none() {
            Verdict::Nonexecutable
        } else {
            *verdicts
                .get(&rollout.key())
                .ok_or_else(|| RolloutError::MissingVerdict {
                    item_id: rollout.item_id.clone(),
                    checkpoint_tag: rollout.checkpoint_tag.clone(),
                    sample_index: rollout.sample_index,
                })?
        };
        out.push(Rollout {
            verdict: Some(verdict),
            ..rollout.clone()
        });
    }
    Ok(out)
}
