use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use sqlpref_core::preference::{build_eval_pairs, build_pairs};

use super::{attach, load_rollouts_extracted, load_verdict_map, write_jsonl_runtime};
use crate::config::PipelineConfig;
use crate::{CliError, CmdResult};

#[derive(Args)]
pub struct PairsArgs {
    #[arg(long, value_name = "FILE")]
    rollouts: PathBuf,
    #[arg(long, value_name = "FILE")]
    verdicts: PathBuf,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Pairs drawn per eligible item (distinct combinations, capped by the
    /// correct x incorrect product).
    #[arg(long, default_value_t = 1)]
    pairs_per_item: usize,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Second model's rollouts: switches to evaluation-pair construction,
    /// keeping only items where both models sampled mixed verdicts.
    #[arg(long, value_name = "FILE", requires = "eval_verdicts_b")]
    eval_rollouts_b: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "eval_rollouts_b")]
    eval_verdicts_b: Option<PathBuf>,
    /// Where the SQL-only projection goes in evaluation-pair mode.
    #[arg(long, value_name = "FILE")]
    sql_out: Option<PathBuf>,
}

pub fn run(args: PairsArgs, config: &PipelineConfig) -> CmdResult {
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let rollouts = load_rollouts_extracted(&args.rollouts).map_err(CliError::validation)?;
    let verdicts = load_verdict_map(&args.verdicts).map_err(CliError::validation)?;
    let judged = attach(&rollouts, &verdicts)?;

    match (&args.eval_rollouts_b, &args.eval_verdicts_b) {
        (Some(rollouts_b_path), Some(verdicts_b_path)) => {
            let sql_out = args.sql_out.as_ref().ok_or_else(|| {
                CliError::validation(anyhow!("--sql-out is required with --eval-rollouts-b"))
            })?;
            let rollouts_b =
                load_rollouts_extracted(rollouts_b_path).map_err(CliError::validation)?;
            let verdicts_b = load_verdict_map(verdicts_b_path).map_err(CliError::validation)?;
            let judged_b = attach(&rollouts_b, &verdicts_b)?;
            let (pairs, sql_pairs) =
                build_eval_pairs(&judged, &judged_b, seed).map_err(CliError::runtime)?;
            write_jsonl_runtime(&args.out, &pairs)?;
            write_jsonl_runtime(sql_out, &sql_pairs)?;
            eprintln!(
                "wrote {} evaluation pairs to {} (SQL projection: {})",
                pairs.len(),
                args.out.display(),
                sql_out.display()
            );
        }
        _ => {
            let pairs =
                build_pairs(&judged, seed, args.pairs_per_item).map_err(CliError::runtime)?;
            write_jsonl_runtime(&args.out, &pairs)?;
            eprintln!("wrote {} pairs to {}", pairs.len(), args.out.display());
        }
    }
    Ok(())
}
