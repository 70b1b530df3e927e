//! Inference-strategy metrics over judged rollouts: greedy execution
//! accuracy, mean Pass@1 over repeated sampling, and execution-result
//! majority voting (Maj@K).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::executor::{canonical_result_key, ExecConfig, ExecutionOutcome, Verdict};
use crate::rollouts::Rollout;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no items to evaluate")]
    EmptyEval,
    #[error("item {item_id} has no rollout")]
    MissingItem { item_id: String },
    #[error("item {item_id} has {count} greedy rollouts; expected exactly one")]
    ExtraSample { item_id: String, count: usize },
    #[error("item {item_id} has {count} samples; expected {expected}")]
    RaggedSamples {
        item_id: String,
        count: usize,
        expected: usize,
    },
    #[error("item {item_id} has {count} samples with outcomes; majority voting needs {k}")]
    InsufficientSamples {
        item_id: String,
        count: usize,
        k: usize,
    },
    #[error("rollout ({item_id}, sample {sample_index}) has no verdict")]
    Unjudged { item_id: String, sample_index: u32 },
}

/// Metrics of one checkpoint under the three inference strategies. Fields
/// are filled per strategy run; a report may carry any subset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub checkpoint_tag: String,
    pub n_items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ex_greedy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_1_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maj_at_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

fn group_judged(rollouts: &[Rollout]) -> Result<BTreeMap<&str, Vec<&Rollout>>, EvalError> {
    let mut groups: BTreeMap<&str, Vec<&Rollout>> = BTreeMap::new();
    for rollout in rollouts {
        if rollout.verdict.is_none() {
            return Err(EvalError::Unjudged {
                item_id: rollout.item_id.clone(),
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

/// Fraction of items whose single greedy rollout is CORRECT.
pub fn greedy_ex(
    rollouts: &[Rollout],
    expected_items: Option<&[String]>,
) -> Result<f64, EvalError> {
    let groups = group_judged(rollouts)?;
    if let Some(expected) = expected_items {
        for item_id in expected {
            if !groups.contains_key(item_id.as_str()) {
                return Err(EvalError::MissingItem {
                    item_id: item_id.clone(),
                });
            }
        }
    }
    if groups.is_empty() {
        return Err(EvalError::EmptyEval);
    }
    let mut correct = 0usize;
    for (item_id, group) in &groups {
        if group.len() != 1 {
            return Err(EvalError::ExtraSample {
                item_id: item_id.to_string(),
                count: group.len(),
            });
        }
        if group[0].verdict == Some(Verdict::Correct) {
            correct += 1;
        }
    }
    Ok(correct as f64 / groups.len() as f64)
}

/// Mean per-repeat execution accuracy over `n_repeats` samples per item,
/// which equals mean per-sample correctness.
pub fn pass_at_1(rollouts: &[Rollout], n_repeats: usize) -> Result<f64, EvalError> {
    let groups = group_judged(rollouts)?;
    if groups.is_empty() || n_repeats == 0 {
        return Err(EvalError::EmptyEval);
    }
    let mut correct = 0usize;
    for (item_id, group) in &groups {
        if group.len() != n_repeats {
            return Err(EvalError::RaggedSamples {
                item_id: item_id.to_string(),
                count: group.len(),
                expected: n_repeats,
            });
        }
        correct += group
            .iter()
            .filter(|r| r.verdict == Some(Verdict::Correct))
            .count();
    }
    Ok(correct as f64 / (groups.len() * n_repeats) as f64)
}

/// One voting sample: its verdict plus the stored execution outcome.
#[derive(Debug, Clone)]
pub struct MajoritySample {
    pub sample_index: u32,
    pub verdict: Verdict,
    pub outcome: ExecutionOutcome,
}

/// All voting inputs of one item. `order_sensitive` mirrors the gold
/// statement's top-level ORDER BY, so grouping uses the same equivalence as
/// the EX verdicts.
#[derive(Debug, Clone)]
pub struct MajorityItem {
    pub item_id: String,
    pub order_sensitive: bool,
    pub samples: Vec<MajoritySample>,
}

/// The prediction majority voting picked for one item.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChosenSample {
    pub item_id: String,
    pub sample_index: u32,
    pub correct: bool,
}

/// Majority voting over execution results.
///
/// Per item: take the first `k` samples; group the executable ones by
/// canonicalized result equality; the largest group wins, ties broken by the
/// smallest minimum sample index among tied groups; the chosen prediction is
/// the lowest-index member of the winning group. Non-executable samples do
/// not vote; when nothing is executable the choice falls back to the first
/// sample. The item scores 1 iff the chosen prediction's verdict is CORRECT.
pub fn maj_at_k(
    items: &[MajorityItem],
    k: usize,
    cfg: &ExecConfig,
) -> Result<(f64, Vec<ChosenSample>), EvalError> {
    if items.is_empty() || k == 0 {
        return Err(EvalError::EmptyEval);
    }
    let mut chosen_samples = Vec::with_capacity(items.len());
    let mut correct = 0usize;
    for item in items {
        if item.samples.len() < k {
            return Err(EvalError::InsufficientSamples {
                item_id: item.item_id.clone(),
                count: item.samples.len(),
                k,
            });
        }
        let mut samples: Vec<&MajoritySample> = item.samples.iter().collect();
        samples.sort_by_key(|s| s.sample_index);
        let voters = &samples[..k];
        let chosen = choose_by_majority(voters, item.order_sensitive, cfg);
        let is_correct = chosen.verdict == Verdict::Correct;
        if is_correct {
            correct += 1;
        }
        chosen_samples.push(ChosenSample {
            item_id: item.item_id.clone(),
            sample_index: chosen.sample_index,
            correct: is_correct,
        });
    }
    Ok((correct as f64 / items.len() as f64, chosen_samples))
}

fn choose_by_majority<'a>(
    voters: &[&'a MajoritySample],
    order_sensitive: bool,
    cfg: &ExecConfig,
) -> &'a MajoritySample {
    // Group keys are canonical result renderings, so group membership is an
    // equivalence relation even with a real-valued tolerance in play.
    let mut groups: BTreeMap<String, Vec<&MajoritySample>> = BTreeMap::new();
    for sample in voters {
        if let Some(key) = canonical_result_key(&sample.outcome, order_sensitive, cfg) {
            groups.entry(key).or_default().push(sample);
        }
    }
    let winner = groups.values().max_by(|a, b| {
        a.len().cmp(&b.len()).then_with(|| {
            let min_a = a.iter().map(|s| s.sample_index).min().unwrap_or(u32::MAX);
            let min_b = b.iter().map(|s| s.sample_index).min().unwrap_or(u32::MAX);
            // Lower minimum index wins the tie, so it must compare greater.
            min_b.cmp(&min_a)
        })
    });
    match winner {
        Some(group) => group
            .iter()
            .min_by_key(|s| s.sample_index)
            .expect("winning group is non-empty"),
        None => voters
            .iter()
            .min_by_key(|s| s.sample_index)
            .expect("voters are non-empty"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::CellValue;
    use std::time::Duration;

    fn judged(item: &str, index: u32, verdict: Verdict) -> Rollout {
        Rollout {
            item_id: item.to_string(),
            checkpoint_tag: "ck".to_string(),
            sample_index: index,
            text: String::new(),
            extracted_sql: Some("SELECT 1".to_string()),
            verdict: Some(verdict),
        }
    }

    #[test]
    fn greedy_counts_correct_items() {
        use Verdict::*;
        let rollouts = vec![
            judged("a", 0, Correct),
            judged("b", 0, Incorrect),
            judged("c", 0, Correct),
        ];
        let ex = greedy_ex(&rollouts, None).unwrap();
        assert!((ex - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_rejects_extra_and_missing() {
        use Verdict::*;
        let rollouts = vec![judged("a", 0, Correct), judged("a", 1, Correct)];
        assert!(matches!(
            greedy_ex(&rollouts, None),
            Err(EvalError::ExtraSample { .. })
        ));
        let rollouts = vec![judged("a", 0, Correct)];
        assert!(matches!(
            greedy_ex(&rollouts, Some(&["a".into(), "b".into()])),
            Err(EvalError::MissingItem { .. })
        ));
        assert!(matches!(greedy_ex(&[], None), Err(EvalError::EmptyEval)));
    }

    #[test]
    fn pass_at_1_is_mean_sample_correctness() {
        use Verdict::*;
        let rollouts = vec![judged("a", 0, Correct), judged("a", 1, Incorrect)];
        assert!((pass_at_1(&rollouts, 2).unwrap() - 0.5).abs() < 1e-12);

        // 2 items x 16 samples: 16 and 8 correct -> 24/32.
        let mut many = Vec::new();
        for i in 0..16 {
            many.push(judged("x", i, Correct));
            many.push(judged("y", i, if i < 8 { Correct } else { Incorrect }));
        }
        assert!((pass_at_1(&many, 16).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pass_at_1_with_one_repeat_equals_greedy() {
        use Verdict::*;
        let rollouts = vec![
            judged("a", 0, Correct),
            judged("b", 0, Incorrect),
            judged("c", 0, Correct),
        ];
        assert_eq!(
            pass_at_1(&rollouts, 1).unwrap(),
            greedy_ex(&rollouts, None).unwrap()
        );
    }

    #[test]
    fn ragged_samples_are_rejected() {
        use Verdict::*;
        let rollouts = vec![
            judged("a", 0, Correct),
            judged("a", 1, Correct),
            judged("b", 0, Correct),
        ];
        assert!(matches!(
            pass_at_1(&rollouts, 2),
            Err(EvalError::RaggedSamples { .. })
        ));
    }

    fn outcome(rows: Vec<Vec<CellValue>>) -> ExecutionOutcome {
        ExecutionOutcome::rows(rows, Duration::ZERO)
    }

    fn err_outcome() -> ExecutionOutcome {
        ExecutionOutcome::error("no such column", Duration::ZERO)
    }

    fn sample(index: u32, verdict: Verdict, outcome: ExecutionOutcome) -> MajoritySample {
        MajoritySample {
            sample_index: index,
            verdict,
            outcome,
        }
    }

    fn int_rows(v: i64) -> ExecutionOutcome {
        outcome(vec![vec![CellValue::Integer(v)]])
    }

    #[test]
    fn majority_group_wins_and_chooses_first_member() {
        use Verdict::*;
        // Groups {A, A, B, err, A}; A matches gold.
        let item = MajorityItem {
            item_id: "i".into(),
            order_sensitive: false,
            samples: vec![
                sample(0, Correct, int_rows(3)),
                sample(1, Correct, int_rows(3)),
                sample(2, Incorrect, int_rows(9)),
                sample(3, Nonexecutable, err_outcome()),
                sample(4, Correct, int_rows(3)),
            ],
        };
        let (score, chosen) = maj_at_k(&[item], 5, &ExecConfig::default()).unwrap();
        assert_eq!(score, 1.0);
        assert_eq!(chosen[0].sample_index, 0);
    }

    #[test]
    fn k_equals_one_is_first_sample_ex() {
        use Verdict::*;
        let items = vec![
            MajorityItem {
                item_id: "a".into(),
                order_sensitive: false,
                samples: vec![
                    sample(0, Incorrect, int_rows(1)),
                    sample(1, Correct, int_rows(2)),
                ],
            },
            MajorityItem {
                item_id: "b".into(),
                order_sensitive: false,
                samples: vec![
                    sample(0, Correct, int_rows(2)),
                    sample(1, Incorrect, int_rows(1)),
                ],
            },
        ];
        let (score, chosen) = maj_at_k(&items, 1, &ExecConfig::default()).unwrap();
        assert_eq!(score, 0.5);
        assert!(chosen.iter().all(|c| c.sample_index == 0));
    }

    #[test]
    fn tie_goes_to_group_containing_the_earliest_sample() {
        use Verdict::*;
        let item = MajorityItem {
            item_id: "i".into(),
            order_sensitive: false,
            samples: vec![
                sample(0, Incorrect, int_rows(1)),
                sample(1, Correct, int_rows(2)),
                sample(2, Incorrect, int_rows(1)),
                sample(3, Correct, int_rows(2)),
            ],
        };
        let (_, chosen) = maj_at_k(&[item], 4, &ExecConfig::default()).unwrap();
        assert_eq!(chosen[0].sample_index, 0);
    }

    #[test]
    fn all_failed_items_fall_back_to_sample_zero() {
        use Verdict::*;
        let item = MajorityItem {
            item_id: "i".into(),
            order_sensitive: false,
            samples: vec![
                sample(0, Nonexecutable, err_outcome()),
                sample(1, Nonexecutable, err_outcome()),
            ],
        };
        let (score, chosen) = maj_at_k(&[item], 2, &ExecConfig::default()).unwrap();
        assert_eq!(score, 0.0);
        assert_eq!(chosen[0].sample_index, 0);
    }

    #[test]
    fn duplicating_winning_member_keeps_the_group() {
        use Verdict::*;
        let mut samples = vec![
            sample(0, Correct, int_rows(3)),
            sample(1, Correct, int_rows(3)),
            sample(2, Incorrect, int_rows(9)),
        ];
        let item = MajorityItem {
            item_id: "i".into(),
            order_sensitive: false,
            samples: samples.clone(),
        };
        let (_, before) = maj_at_k(&[item], 3, &ExecConfig::default()).unwrap();
        samples.push(sample(3, Correct, int_rows(3)));
        let item = MajorityItem {
            item_id: "i".into(),
            order_sensitive: false,
            samples,
        };
        let (_, after) = maj_at_k(&[item], 4, &ExecConfig::default()).unwrap();
        assert_eq!(before[0].sample_index, after[0].sample_index);
    }

    #[test]
    fn insufficient_samples_is_an_error() {
        use Verdict::*;
        let item = MajorityItem {
            item_id: "i".into(),
            order_sensitive: false,
            samples: vec![sample(0, Correct, int_rows(1))],
        };
        assert!(matches!(
            maj_at_k(&[item], 2, &ExecConfig::default()),
            Err(EvalError::InsufficientSamples { .. })
        ));
    }
}
