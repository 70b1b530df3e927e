use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use sqlpref_core::dpomath::{
    dpo_loss, dpo_loss_with_sft, pairwise_sum, self_reward, token_credits, DpoPairRecord,
    DpoPairResult, TokenCredit, TokenSequenceLogprobs,
};

use super::{write_json_runtime, write_jsonl_runtime};
use crate::config::PipelineConfig;
use crate::records::{DpoSummary, PairDumpRecord, SelfRewardRecord};
use crate::{CliError, CmdResult};

#[derive(Args)]
pub struct DpoMetricsArgs {
    /// Pair dumps: `{pair_id, chosen, rejected[, beta]}` per line, where the
    /// sequences carry `tokens`, `policy_logprobs`, `ref_logprobs`.
    #[arg(long, value_name = "FILE")]
    pairs: Option<PathBuf>,
    /// Bare sequence dumps for the self-reward mean.
    #[arg(long, value_name = "FILE")]
    dumps: Option<PathBuf>,
    #[arg(long, value_name = "BETA")]
    beta: Option<f64>,
    #[arg(long, value_name = "LAMBDA")]
    lambda_sft: Option<f64>,
    /// Per-pair results JSONL (pairs mode).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Aggregate summary JSON (pairs mode).
    #[arg(long, value_name = "FILE")]
    summary_out: Option<PathBuf>,
    /// Per-token credit dump of every sequence seen.
    #[arg(long, value_name = "FILE")]
    credits_out: Option<PathBuf>,
    /// Self-reward record JSON (dumps mode).
    #[arg(long, value_name = "FILE")]
    self_reward_out: Option<PathBuf>,
    #[arg(long, value_name = "TAG", default_value = "unknown")]
    checkpoint_tag: String,
    #[arg(long, value_name = "N")]
    epoch: Option<u32>,
}

pub fn run(args: DpoMetricsArgs, config: &PipelineConfig) -> CmdResult {
    if args.pairs.is_none() && args.dumps.is_none() {
        return Err(CliError::validation(anyhow!(
            "pass --pairs and/or --dumps; there is nothing to compute otherwise"
        )));
    }
    let beta = args.beta.or(config.beta).unwrap_or(0.1);
    let lambda_sft = args.lambda_sft.or(config.lambda_sft).unwrap_or(0.0);
    let mut credit_records: Vec<TokenCredit> = Vec::new();

    if let Some(pairs_path) = &args.pairs {
        let out = args.out.as_ref().ok_or_else(|| {
            CliError::validation(anyhow!("--out is required with --pairs"))
        })?;
        let raw: Vec<PairDumpRecord> = sqlpref_core::jsonl::read_jsonl(pairs_path)
            .with_context(|| format!("loading {}", pairs_path.display()))
            .map_err(CliError::validation)?;
        if raw.is_empty() {
            return Err(CliError::validation(anyhow!(
                "{} contains no pair records",
                pairs_path.display()
            )));
        }
        let mut results: Vec<DpoPairResult> = Vec::with_capacity(raw.len());
        let mut sft_losses: Vec<f64> = Vec::new();
        for record in &raw {
            let pair = DpoPairRecord {
                pair_id: record.pair_id.clone(),
                chosen: record.chosen.clone(),
                rejected: record.rejected.clone(),
                beta: record.beta.unwrap_or(beta),
            };
            let result = dpo_loss(&pair).map_err(CliError::validation)?;
            if lambda_sft > 0.0 {
                sft_losses.push(dpo_loss_with_sft(&pair, lambda_sft).map_err(CliError::validation)?);
            }
            if args.credits_out.is_some() {
                credit_records.push(
                    token_credits(&pair.chosen, pair.beta).map_err(CliError::validation)?,
                );
                credit_records.push(
                    token_credits(&pair.rejected, pair.beta).map_err(CliError::validation)?,
                );
            }
            results.push(result);
        }

        let losses: Vec<f64> = results.iter().map(|r| r.loss).collect();
        let margins: Vec<f64> = results.iter().map(|r| r.margin).collect();
        let correct = results.iter().filter(|r| r.classified_correct).count();
        let summary = DpoSummary {
            n_pairs: results.len(),
            beta,
            lambda_sft,
            classification_accuracy: correct as f64 / results.len() as f64,
            mean_loss: pairwise_sum(&losses) / losses.len() as f64,
            mean_margin: pairwise_sum(&margins) / margins.len() as f64,
            mean_loss_with_sft: (!sft_losses.is_empty())
                .then(|| pairwise_sum(&sft_losses) / sft_losses.len() as f64),
        };

        write_jsonl_runtime(out, &results)?;
        if let Some(summary_out) = &args.summary_out {
            write_json_runtime(summary_out, &summary)?;
        }
        println!(
            "pairs: {}  accuracy: {:.4}  mean loss: {:.6}  mean margin: {:.6}",
            summary.n_pairs, summary.classification_accuracy, summary.mean_loss, summary.mean_margin
        );
    }

    if let Some(dumps_path) = &args.dumps {
        let dumps: Vec<TokenSequenceLogprobs> = sqlpref_core::jsonl::read_jsonl(dumps_path)
            .with_context(|| format!("loading {}", dumps_path.display()))
            .map_err(CliError::validation)?;
        let mean = self_reward(&dumps, beta).map_err(CliError::validation)?;
        let record = SelfRewardRecord {
            checkpoint_tag: args.checkpoint_tag.clone(),
            epoch: args.epoch,
            n_rollouts: dumps.len(),
            mean_implicit_reward: mean,
        };
        if let Some(self_reward_out) = &args.self_reward_out {
            write_json_runtime(self_reward_out, &record)?;
        }
        if args.credits_out.is_some() {
            for dump in &dumps {
                credit_records.push(token_credits(dump, beta).map_err(CliError::validation)?);
            }
        }
        println!(
            "self-reward over {} rollouts at beta {beta}: {mean:.6}",
            dumps.len()
        );
    }

    if let Some(credits_out) = &args.credits_out {
        write_jsonl_runtime(credits_out, &credit_records)?;
    }
    Ok(())
}
