use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use sqlpref_core::evalstrat::{
    greedy_ex, maj_at_k, pass_at_1, EvalReport, MajorityItem, MajoritySample,
};
use sqlpref_core::executor::{ExecConfig, ExecStatus, ExecutionOutcome};
use sqlpref_core::rollouts::Rollout;

use super::{
    attach, load_items, load_rollouts_extracted, load_verdict_map, resolve_checkpoint_tag,
    write_json_runtime, write_jsonl_runtime,
};
use crate::config::PipelineConfig;
use crate::records::{OutcomeKind, OutcomeRecord};
use crate::{CliError, CmdResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Greedy,
    Pass1,
    Majk,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    strategy: Strategy,
    #[arg(long, value_name = "FILE")]
    rollouts: PathBuf,
    #[arg(long, value_name = "FILE")]
    verdicts: PathBuf,
    /// Execution outcomes from `judge --outcomes-out`; required for majk.
    #[arg(long, value_name = "FILE")]
    outcomes: Option<PathBuf>,
    /// Votes per item for majk; repeats per item for pass1.
    #[arg(long, value_name = "N")]
    k: Option<usize>,
    /// Expected item set; enables missing-item detection for greedy.
    #[arg(long, value_name = "FILE")]
    items: Option<PathBuf>,
    /// Required when the rollout file mixes checkpoint tags.
    #[arg(long, value_name = "TAG")]
    checkpoint_tag: Option<String>,
    #[arg(long, value_name = "TOL")]
    real_abs_tol: Option<f64>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Per-item chosen samples (majk only).
    #[arg(long, value_name = "FILE")]
    chosen_out: Option<PathBuf>,
}

pub fn run(args: EvalArgs, config: &PipelineConfig) -> CmdResult {
    let rollouts = load_rollouts_extracted(&args.rollouts).map_err(CliError::validation)?;
    let verdicts = load_verdict_map(&args.verdicts).map_err(CliError::validation)?;
    let tag = resolve_checkpoint_tag(&rollouts, args.checkpoint_tag.as_deref())
        .map_err(CliError::validation)?;
    let rollouts: Vec<Rollout> = rollouts
        .into_iter()
        .filter(|r| r.checkpoint_tag == tag)
        .collect();
    let judged = attach(&rollouts, &verdicts)?;
    let k = args.k.or(config.k_majority).unwrap_or(16);

    let n_items = {
        let mut ids: Vec<&str> = judged.iter().map(|r| r.item_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    };
    let mut report = EvalReport {
        checkpoint_tag: tag.clone(),
        n_items,
        ex_greedy: None,
        pass_at_1_mean: None,
        maj_at_k: None,
        k: None,
    };

    match args.strategy {
        Strategy::Greedy => {
            let expected = match &args.items {
                Some(path) => Some(
                    load_items(path, None)
                        .map_err(CliError::validation)?
                        .into_iter()
                        .map(|i| i.item_id)
                        .collect::<Vec<_>>(),
                ),
                None => None,
            };
            let ex = greedy_ex(&judged, expected.as_deref()).map_err(CliError::validation)?;
            report.ex_greedy = Some(ex);
        }
        Strategy::Pass1 => {
            let mean = pass_at_1(&judged, k).map_err(CliError::validation)?;
            report.pass_at_1_mean = Some(mean);
            report.k = Some(k);
        }
        Strategy::Majk => {
            let outcomes_path = args.outcomes.as_ref().ok_or_else(|| {
                CliError::validation(anyhow!("--outcomes is required for --strategy majk"))
            })?;
            let cfg = ExecConfig {
                real_abs_tol: args
                    .real_abs_tol
                    .or(config.real_abs_tol)
                    .unwrap_or(1e-6),
                ..ExecConfig::default()
            };
            let items = majority_items(&judged, outcomes_path, &tag)?;
            let (score, chosen) = maj_at_k(&items, k, &cfg).map_err(CliError::validation)?;
            report.maj_at_k = Some(score);
            report.k = Some(k);
            if let Some(chosen_out) = &args.chosen_out {
                write_jsonl_runtime(chosen_out, &chosen)?;
            }
        }
    }

    write_json_runtime(&args.out, &report)?;
    eprintln!("wrote report to {}", args.out.display());
    Ok(())
}

/// Assembles per-item voting inputs from judged rollouts plus the outcomes
/// dump. Samples that never executed (no extracted SQL) vote with an ERROR
/// outcome, which keeps them out of every group.
fn majority_items(
    judged: &[Rollout],
    outcomes_path: &std::path::Path,
    tag: &str,
) -> Result<Vec<MajorityItem>, CliError> {
    let records: Vec<OutcomeRecord> = sqlpref_core::jsonl::read_jsonl(outcomes_path)
        .with_context(|| format!("loading {}", outcomes_path.display()))
        .map_err(CliError::validation)?;
    let mut order_sensitive: BTreeMap<&str, bool> = BTreeMap::new();
    let mut sample_outcomes: BTreeMap<(&str, u32), ExecutionOutcome> = BTreeMap::new();
    for record in &records {
        match record.kind {
            OutcomeKind::Gold => {
                order_sensitive.insert(&record.item_id, record.order_sensitive.unwrap_or(false));
            }
            OutcomeKind::Sample => {
                if record.checkpoint_tag.as_deref() == Some(tag) {
                    if let Some(index) = record.sample_index {
                        sample_outcomes.insert((&record.item_id, index), record.to_outcome());
                    }
                }
            }
        }
    }

    let mut grouped: BTreeMap<&str, Vec<&Rollout>> = BTreeMap::new();
    for rollout in judged {
        grouped.entry(&rollout.item_id).or_default().push(rollout);
    }

    let mut items = Vec::with_capacity(grouped.len());
    for (item_id, group) in grouped {
        let samples = group
            .iter()
            .map(|rollout| {
                let outcome = sample_outcomes
                    .get(&(item_id, rollout.sample_index))
                    .cloned()
                    .unwrap_or_else(|| ExecutionOutcome {
                        status: ExecStatus::Error,
                        rows: Vec::new(),
                        error_msg: Some("not executed".to_string()),
                        elapsed_ms: 0,
                    });
                MajoritySample {
                    sample_index: rollout.sample_index,
                    verdict: rollout.verdict.expect("rollouts are judged here"),
                    outcome,
                }
            })
            .collect();
        items.push(MajorityItem {
            item_id: item_id.to_string(),
            order_sensitive: order_sensitive.get(item_id).copied().unwrap_or(false),
            samples,
        });
    }
    Ok(items)
}
