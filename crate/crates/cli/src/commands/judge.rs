use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use sqlpref_core::corpus::{CorpusFormat, DbRoot};
use sqlpref_core::executor::{
    ex_verdict_on_file, parallel_map_indexed, ExecConfig, ExecError, Executor, JudgeJob, Judgment,
    Verdict,
};
use super::{items_by_id, load_items, load_rollouts_extracted, write_jsonl_runtime};
use crate::config::PipelineConfig;
use crate::records::{OutcomeRecord, VerdictRecord};
use crate::{CliError, CmdResult};

#[derive(Args)]
pub struct JudgeArgs {
    #[arg(long, value_name = "FILE")]
    items: PathBuf,
    #[arg(long, value_name = "FORMAT")]
    format: Option<CorpusFormat>,
    #[arg(long, value_name = "FILE")]
    rollouts: PathBuf,
    #[arg(long, value_name = "DIR")]
    db_root: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    timeout_ms: Option<u64>,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Absolute tolerance for real-valued cells.
    #[arg(long, value_name = "TOL")]
    real_abs_tol: Option<f64>,
    /// Judge against every `*.sqlite` instance under `<DIR>/<db_id>/`
    /// instead of the single base database (test-suite verdicts).
    #[arg(long, value_name = "DIR")]
    suite_root: Option<PathBuf>,
    /// Skip the exclusive re-run of timed-out jobs.
    #[arg(long)]
    no_timeout_retry: bool,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also dump gold and sample execution results (needed by `eval
    /// --strategy majk` and `analyze`).
    #[arg(long, value_name = "FILE")]
    outcomes_out: Option<PathBuf>,
}

pub fn run(args: JudgeArgs, config: &PipelineConfig) -> CmdResult {
    let items = items_by_id(load_items(&args.items, args.format).map_err(CliError::validation)?);
    let rollouts = load_rollouts_extracted(&args.rollouts).map_err(CliError::validation)?;
    let db_root = args
        .db_root
        .or_else(|| config.db_root.clone())
        .ok_or_else(|| CliError::validation(anyhow!("--db-root is required")))?;
    let suite_root = args.suite_root.or_else(|| config.suite_root.clone());

    let cfg = ExecConfig {
        timeout_ms: args.timeout_ms.or(config.timeout_ms).unwrap_or(30_000),
        workers: args
            .workers
            .or(config.workers)
            .unwrap_or_else(|| ExecConfig::default().workers),
        retry_serial_on_timeout: !args.no_timeout_retry,
        real_abs_tol: args
            .real_abs_tol
            .or(config.real_abs_tol)
            .unwrap_or(1e-6),
    };
    let executor = Executor::new(DbRoot::new(db_root));

    // Split rollouts into judgeable jobs and definitional NONEXECUTABLEs.
    let mut jobs: Vec<(usize, JudgeJob)> = Vec::new();
    for (index, rollout) in rollouts.iter().enumerate() {
        if let Some(sql) = &rollout.extracted_sql {
            let item = items.get(&rollout.item_id).ok_or_else(|| {
                CliError::validation(anyhow!(
                    "rollout references unknown item `{}`; is --items the right corpus?",
                    rollout.item_id
                ))
            })?;
            jobs.push((
                index,
                JudgeJob {
                    item: item.clone(),
                    pred_sql: sql.clone(),
                },
            ));
        }
    }

    let results: Vec<Result<Judgment, ExecError>> = match &suite_root {
        None => {
            let bare: Vec<JudgeJob> = jobs.iter().map(|(_, job)| job.clone()).collect();
            executor.judge_batch(&bare, &cfg)
        }
        Some(suite_root) => {
            let suite = DbRoot::new(suite_root.clone());
            parallel_map_indexed(&jobs, cfg.workers, |_, (_, job)| {
                judge_on_suite(&suite, job, &cfg)
            })
        }
    };

    let mut verdict_records: Vec<VerdictRecord> = Vec::with_capacity(rollouts.len());
    let mut gold_records: BTreeMap<String, OutcomeRecord> = BTreeMap::new();
    let mut sample_records: Vec<OutcomeRecord> = Vec::new();
    let mut gold_failures = 0usize;

    let mut by_index: BTreeMap<usize, &Result<Judgment, ExecError>> = BTreeMap::new();
    for ((index, _), result) in jobs.iter().zip(results.iter()) {
        by_index.insert(*index, result);
    }

    for (index, rollout) in rollouts.iter().enumerate() {
        let record = match by_index.get(&index) {
            None => VerdictRecord {
                item_id: rollout.item_id.clone(),
                checkpoint_tag: rollout.checkpoint_tag.clone(),
                sample_index: rollout.sample_index,
                verdict: Some(Verdict::Nonexecutable),
                error_msg: Some("no SQL extracted".to_string()),
                elapsed_ms: 0,
            },
            Some(Ok(judgment)) => {
                gold_records
                    .entry(rollout.item_id.clone())
                    .or_insert_with(|| {
                        OutcomeRecord::gold(
                            &rollout.item_id,
                            &judgment.gold_outcome,
                            judgment.order_sensitive,
                        )
                    });
                sample_records.push(OutcomeRecord::sample(
                    &rollout.item_id,
                    &rollout.checkpoint_tag,
                    rollout.sample_index,
                    &judgment.pred_outcome,
                ));
                VerdictRecord {
                    item_id: rollout.item_id.clone(),
                    checkpoint_tag: rollout.checkpoint_tag.clone(),
                    sample_index: rollout.sample_index,
                    verdict: Some(judgment.verdict),
                    error_msg: judgment.pred_outcome.error_msg.clone(),
                    elapsed_ms: judgment.pred_outcome.elapsed_ms,
                }
            }
            Some(Err(e)) => {
                gold_failures += 1;
                eprintln!("warning: item {}: {e}", rollout.item_id);
                VerdictRecord {
                    item_id: rollout.item_id.clone(),
                    checkpoint_tag: rollout.checkpoint_tag.clone(),
                    sample_index: rollout.sample_index,
                    verdict: None,
                    error_msg: Some(e.to_string()),
                    elapsed_ms: 0,
                }
            }
        };
        verdict_records.push(record);
    }

    write_jsonl_runtime(&args.out, &verdict_records)?;
    if let Some(outcomes_out) = &args.outcomes_out {
        let mut records: Vec<OutcomeRecord> = gold_records.into_values().collect();
        records.extend(sample_records);
        write_jsonl_runtime(outcomes_out, &records)?;
    }

    let judged = verdict_records.iter().filter(|r| r.verdict.is_some()).count();
    eprintln!(
        "judged {judged}/{} rollouts ({gold_failures} gold failures) -> {}",
        rollouts.len(),
        args.out.display()
    );
    Ok(())
}

/// Test-suite judgment: CORRECT only when every instance agrees; otherwise
/// the first failing instance's verdict and outcome are reported. Gold and
/// sample outcomes come from the first instance.
fn judge_on_suite(suite: &DbRoot, job: &JudgeJob, cfg: &ExecConfig) -> Result<Judgment, ExecError> {
    let files = suite.suite_files(&job.item.db_id)?;
    let mut first: Option<Judgment> = None;
    for file in &files {
        let judgment = ex_verdict_on_file(file, &job.item, &job.pred_sql, cfg)?;
        let failing = judgment.verdict != Verdict::Correct;
        if first.is_none() {
            first = Some(judgment.clone());
        }
        if failing {
            let base = first.expect("set above");
            return Ok(Judgment {
                verdict: judgment.verdict,
                gold_outcome: base.gold_outcome,
                pred_outcome: judgment.pred_outcome,
                order_sensitive: base.order_sensitive,
            });
        }
    }
    Ok(first.expect("suite_files never returns an empty list"))
}
