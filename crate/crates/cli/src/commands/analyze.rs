use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use sqlpref_core::analysis::{
    apply_manual_overrides, auto_label, fix_rates, ingest_manual_labels, output_stats,
    transition_matrix, transition_matrix_csv, ErrorCategory, ErrorLabel, FixRate,
};
use sqlpref_core::corpus::{introspect_schema, CorpusFormat, DatasetItem, DbRoot, SchemaCatalog};
use sqlpref_core::executor::{ExecConfig, ExecutionOutcome};
use sqlpref_core::rollouts::Rollout;

use super::{attach, items_by_id, load_items, load_rollouts_extracted, load_verdict_map};
use crate::config::PipelineConfig;
use crate::records::{OutcomeKind, OutcomeRecord};
use crate::{CliError, CmdResult};

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_name = "FILE")]
    items: PathBuf,
    #[arg(long, value_name = "FORMAT")]
    format: Option<CorpusFormat>,
    #[arg(long, value_name = "DIR")]
    db_root: Option<PathBuf>,
    /// Earlier checkpoint: rollouts, verdicts, outcomes.
    #[arg(long, value_name = "FILE")]
    before: PathBuf,
    #[arg(long, value_name = "FILE")]
    before_verdicts: PathBuf,
    #[arg(long, value_name = "FILE")]
    before_outcomes: PathBuf,
    /// Later checkpoint: rollouts, verdicts, outcomes.
    #[arg(long, value_name = "FILE")]
    after: PathBuf,
    #[arg(long, value_name = "FILE")]
    after_verdicts: PathBuf,
    #[arg(long, value_name = "FILE")]
    after_outcomes: PathBuf,
    /// Manual labels that override automatic ones per (item, checkpoint).
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    #[arg(long, value_name = "TOL")]
    real_abs_tol: Option<f64>,
    /// Output directory for labels, fix rates, transitions, and stats.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

struct Side {
    rollouts: Vec<Rollout>,
    gold_outcomes: BTreeMap<String, ExecutionOutcome>,
    sample_outcomes: BTreeMap<(String, u32), ExecutionOutcome>,
}

fn load_side(
    rollouts_path: &Path,
    verdicts_path: &Path,
    outcomes_path: &Path,
) -> std::result::Result<Side, CliError> {
    let rollouts = load_rollouts_extracted(rollouts_path).map_err(CliError::validation)?;
    let verdicts = load_verdict_map(verdicts_path).map_err(CliError::validation)?;
    let judged = attach(&rollouts, &verdicts)?;

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for rollout in &judged {
        *seen.entry(rollout.item_id.as_str()).or_default() += 1;
    }
    if let Some((item, count)) = seen.iter().find(|(_, &count)| count > 1) {
        return Err(CliError::validation(anyhow!(
            "error analysis expects one greedy rollout per item; item {item} has {count}"
        )));
    }

    let records: Vec<OutcomeRecord> = sqlpref_core::jsonl::read_jsonl(outcomes_path)
        .with_context(|| format!("loading {}", outcomes_path.display()))
        .map_err(CliError::validation)?;
    let mut gold_outcomes = BTreeMap::new();
    let mut sample_outcomes = BTreeMap::new();
    for record in records {
        match record.kind {
            OutcomeKind::Gold => {
                gold_outcomes.insert(record.item_id.clone(), record.to_outcome());
            }
            OutcomeKind::Sample => {
                if let Some(index) = record.sample_index {
                    sample_outcomes.insert((record.item_id.clone(), index), record.to_outcome());
                }
            }
        }
    }
    Ok(Side {
        rollouts: judged,
        gold_outcomes,
        sample_outcomes,
    })
}

fn label_side(
    side: &Side,
    items: &BTreeMap<String, DatasetItem>,
    catalogs: &mut BTreeMap<String, SchemaCatalog>,
    db_root: &DbRoot,
    cfg: &ExecConfig,
) -> std::result::Result<Vec<ErrorLabel>, CliError> {
    let mut labels = Vec::with_capacity(side.rollouts.len());
    for rollout in &side.rollouts {
        let item = items.get(&rollout.item_id).ok_or_else(|| {
            CliError::validation(anyhow!("rollout references unknown item `{}`", rollout.item_id))
        })?;
        if !catalogs.contains_key(&item.db_id) {
            let file = db_root.db_file(&item.db_id).map_err(CliError::validation)?;
            let catalog = introspect_schema(&file, 0)
                .with_context(|| format!("introspecting {}", item.db_id))
                .map_err(CliError::runtime)?;
            catalogs.insert(item.db_id.clone(), catalog);
        }
        let gold = side.gold_outcomes.get(&rollout.item_id).ok_or_else(|| {
            CliError::validation(anyhow!(
                "no gold outcome for item `{}`; re-run judge with --outcomes-out",
                rollout.item_id
            ))
        })?;
        let pred = side
            .sample_outcomes
            .get(&(rollout.item_id.clone(), rollout.sample_index));
        let label = auto_label(rollout, gold, pred, &catalogs[&item.db_id], cfg)
            .map_err(CliError::runtime)?;
        labels.push(label);
    }
    Ok(labels)
}

fn render_fix_rate_table(rates: &[FixRate]) -> String {
    let mut out = String::from("Type                           Fix (%)\n");
    for rate in rates {
        let _ = writeln!(out, "{:<30} {}", rate.category.display_name(), rate.render());
    }
    out
}

pub fn run(args: AnalyzeArgs, config: &PipelineConfig) -> CmdResult {
    let items = items_by_id(load_items(&args.items, args.format).map_err(CliError::validation)?);
    let db_root = args
        .db_root
        .or_else(|| config.db_root.clone())
        .ok_or_else(|| CliError::validation(anyhow!("--db-root is required")))?;
    let db_root = DbRoot::new(db_root);
    let cfg = ExecConfig {
        real_abs_tol: args.real_abs_tol.or(config.real_abs_tol).unwrap_or(1e-6),
        ..ExecConfig::default()
    };

    let before = load_side(&args.before, &args.before_verdicts, &args.before_outcomes)?;
    let after = load_side(&args.after, &args.after_verdicts, &args.after_outcomes)?;

    let mut catalogs = BTreeMap::new();
    let mut labels_before = label_side(&before, &items, &mut catalogs, &db_root, &cfg)?;
    let mut labels_after = label_side(&after, &items, &mut catalogs, &db_root, &cfg)?;

    if let Some(labels_path) = &args.labels {
        let manual = ingest_manual_labels(labels_path).map_err(CliError::validation)?;
        let split = |labels: Vec<ErrorLabel>, tag: &str| -> Vec<ErrorLabel> {
            labels.into_iter().filter(|l| l.checkpoint_tag == tag).collect()
        };
        let tag_before = labels_before
            .first()
            .map(|l| l.checkpoint_tag.clone())
            .unwrap_or_default();
        let tag_after = labels_after
            .first()
            .map(|l| l.checkpoint_tag.clone())
            .unwrap_or_default();
        labels_before = apply_manual_overrides(&labels_before, &split(manual.clone(), &tag_before))
            .map_err(CliError::validation)?;
        labels_after = apply_manual_overrides(&labels_after, &split(manual, &tag_after))
            .map_err(CliError::validation)?;
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(CliError::runtime)?;
    let write = |name: &str, contents: &str| -> CmdResult {
        let path = args.out.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::runtime)
    };

    super::write_jsonl_runtime(&args.out.join("labels_before.jsonl"), &labels_before)?;
    super::write_jsonl_runtime(&args.out.join("labels_after.jsonl"), &labels_after)?;

    let rates = fix_rates(&labels_before, &labels_after).map_err(CliError::validation)?;
    write("fix_rates.txt", &render_fix_rate_table(&rates))?;
    super::write_json_runtime(&args.out.join("fix_rates.json"), &rates)?;

    let matrix = transition_matrix(&labels_before, &labels_after).map_err(CliError::validation)?;
    write("transition_matrix.csv", &transition_matrix_csv(&matrix))?;

    let stats = vec![
        output_stats(&before.rollouts).map_err(CliError::validation)?,
        output_stats(&after.rollouts).map_err(CliError::validation)?,
    ];
    super::write_json_runtime(&args.out.join("output_stats.json"), &stats)?;

    let fixed_total: usize = rates.iter().map(|r| r.fixed).sum();
    let still_broken: usize = labels_after
        .iter()
        .filter(|l| l.category != ErrorCategory::G)
        .count();
    eprintln!(
        "labeled {} items ({} fixed between checkpoints, {} still failing) -> {}",
        labels_before.len(),
        fixed_total,
        still_broken,
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout_includes_reference_rendering() {
        let rates = vec![FixRate {
            category: ErrorCategory::B6,
            fixed: 12,
            total: 30,
        }];
        let table = render_fix_rate_table(&rates);
        assert!(table.contains("[B6] NULL/DISTINCT"));
        assert!(table.contains("40.0 (12/30)"));
    }

}
