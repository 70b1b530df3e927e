//! Preference-pair construction from judged rollouts.
//!
//! An item contributes a pair only when its samples are mixed: at least one
//! CORRECT and at least one non-CORRECT rollout. All-correct and
//! all-incorrect items are excluded. NONEXECUTABLE counts as incorrect for
//! pairing, matching the binary labeling that drives training. Selection is
//! uniform over the CORRECT x non-CORRECT product under a per-item seeded
//! generator, so output files are byte-identical for a fixed seed and
//! independent of grouping order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::executor::Verdict;
use crate::rng::SplitMix64;
use crate::rollouts::Rollout;

#[derive(Debug, thiserror::Error)]
pub enum PreferenceError {
    #[error("rollout ({item_id}, {checkpoint_tag}, {sample_index}) has no verdict")]
    UnjudgedRollout {
        item_id: String,
        checkpoint_tag: String,
        sample_index: u32,
    },
}

/// One DPO training record: a correct and an incorrect CoT for the same item.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreferencePair {
    pub item_id: String,
    pub chosen_index: u32,
    pub rejected_index: u32,
    pub chosen_text: String,
    pub rejected_text: String,
    pub seed: u64,
}

/// SQL-only projection of a pair, for evaluating models trained on bare SQL
/// labels. Missing extractions project to the empty string.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SqlPreferencePair {
    pub item_id: String,
    pub chosen_index: u32,
    pub rejected_index: u32,
    pub chosen_sql: String,
    pub rejected_sql: String,
    pub seed: u64,
}

fn group_by_item(rollouts: &[Rollout]) -> Result<BTreeMap<&str, Vec<&Rollout>>, PreferenceError> {
    let mut groups: BTreeMap<&str, Vec<&Rollout>> = BTreeMap::new();
    for rollout in rollouts {
        if rollout.verdict.is_none() {
            return Err(PreferenceError::UnjudgedRollout {
                item_id: rollout.item_id.clone(),
                checkpoint_tag: rollout.checkpoint_tag.clone(),
                sample_index: rollout.sample_index,
            });
        }
        groups.entry(&rollout.item_id).or_default().push(rollout);
    }
    for group in groups.values_mut() {
        group.sort_by_key(|r| r.sample_index);
    }
    Ok(groups)
}

fn split_by_verdict<'a>(group: &[&'a Rollout]) -> (Vec<&'a Rollout>, Vec<&'a Rollout>) {
    let correct: Vec<&Rollout> = group
        .iter()
        .filter(|r| r.verdict == Some(Verdict::Correct))
        .copied()
        .collect();
    let incorrect: Vec<&Rollout> = group
        .iter()
        .filter(|r| r.verdict != Some(Verdict::Correct))
        .copied()
        .collect();
    (correct, incorrect)
}

/// Draws up to `pairs_per_item` distinct (correct, incorrect) combinations,
/// uniformly via a partial Fisher-Yates shuffle of the product set.
fn draw_pairs<'a>(
    correct: &[&'a Rollout],
    incorrect: &[&'a Rollout],
    rng: &mut SplitMix64,
    pairs_per_item: usize,
) -> Vec<(&'a Rollout, &'a Rollout)> {
    let mut product: Vec<(usize, usize)> = (0..correct.len())
        .flat_map(|c| (0..incorrect.len()).map(move |i| (c, i)))
        .collect();
    let take = pairs_per_item.min(product.len());
    for slot in 0..take {
        let pick = slot + rng.next_below((product.len() - slot) as u64) as usize;
        product.swap(slot, pick);
    }
    product
        .into_iter()
        .take(take)
        .map(|(c, i)| (correct[c], incorrect[i]))
        .collect()
}

/// Builds the preference dataset. Items with at least one CORRECT and one
/// non-CORRECT rollout yield `pairs_per_item` pairs (one by default); output
/// is ordered by item id.
pub fn build_pairs(
    rollouts: &[Rollout],
    seed: u64,
    pairs_per_item: usize,
) -> Result<Vec<PreferencePair>, PreferenceError> {
    let groups = group_by_item(rollouts)?;
    let mut pairs = Vec::new();
    for (item_id, group) in groups {
        let (correct, incorrect) = split_by_verdict(&group);
        if correct.is_empty() || incorrect.is_empty() {
            continue;
        }
        let mut rng = SplitMix64::for_label(seed, item_id);
        for (chosen, rejected) in draw_pairs(&correct, &incorrect, &mut rng, pairs_per_item) {
            pairs.push(PreferencePair {
                item_id: item_id.to_string(),
                chosen_index: chosen.sample_index,
                rejected_index: rejected.sample_index,
                chosen_text: chosen.text.clone(),
                rejected_text: rejected.text.clone(),
                seed,
            });
        }
    }
    Ok(pairs)
}

/// Builds the discriminative-evaluation pair set over two models.
///
/// A pair is emitted only for items where BOTH models sampled at least one
/// correct and one incorrect rollout; pair content comes from model A. The
/// returned projection carries only the extracted SQL strings of the same
/// pairs, for the model whose labels were bare SQL.
pub fn build_eval_pairs(
    rollouts_a: &[Rollout],
    rollouts_b: &[Rollout],
    seed: u64,
) -> Result<(Vec<PreferencePair>, Vec<SqlPreferencePair>), PreferenceError> {
    let groups_a = group_by_item(rollouts_a)?;
    let groups_b = group_by_item(rollouts_b)?;

    let mut pairs = Vec::new();
    let mut sql_pairs = Vec::new();
    for (item_id, group_a) in groups_a {
        let Some(group_b) = groups_b.get(item_id) else {
            continue;
        };
        let (correct_a, incorrect_a) = split_by_verdict(&group_a);
        let (correct_b, incorrect_b) = split_by_verdict(group_b);
        let both_mixed = !correct_a.is_empty()
            && !incorrect_a.is_empty()
            && !correct_b.is_empty()
            && !incorrect_b.is_empty();
        if !both_mixed {
            continue;
        }
        let mut rng = SplitMix64::for_label(seed, item_id);
        for (chosen, rejected) in draw_pairs(&correct_a, &incorrect_a, &mut rng, 1) {
            pairs.push(PreferencePair {
                item_id: item_id.to_string(),
                chosen_index: chosen.sample_index,
                rejected_index: rejected.sample_index,
                chosen_text: chosen.text.clone(),
                rejected_text: rejected.text.clone(),
                seed,
            });
            let sql_of = |r: &Rollout| {
                r.extracted_sql
                    .clone()
                    .or_else(|| crate::rollouts::extract_sql(&r.text))
                    .unwrap_or_default()
            };
            sql_pairs.push(SqlPreferencePair {
                item_id: item_id.to_string(),
                chosen_index: chosen.sample_index,
                rejected_index: rejected.sample_index,
                chosen_sql: sql_of(chosen),
                rejected_sql: sql_of(rejected),
                seed,
            });
        }
    }
    Ok((pairs, sql_pairs))
}
