use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use serde::Serialize;
use sqlpref_core::evalstrat::EvalReport;

use super::write_json_runtime;
use crate::config::PipelineConfig;
use crate::records::{SelfRewardPoint, SelfRewardRecord};
use crate::{CliError, CmdResult};

#[derive(Args)]
pub struct ReportArgs {
    /// Eval report JSONs, in display order (typically SFT first, then DPO).
    #[arg(long = "eval", value_name = "FILE", required = true)]
    evals: Vec<PathBuf>,
    /// Self-reward record JSONs from `dpo-metrics --self-reward-out`.
    #[arg(long = "self-reward", value_name = "FILE")]
    self_rewards: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Serialize)]
struct Comparison {
    checkpoints: Vec<EvalReport>,
    /// Per-metric deltas of each later checkpoint against the first one.
    deltas_vs_first: Vec<DeltaRow>,
}

#[derive(Serialize)]
struct DeltaRow {
    checkpoint_tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    ex_greedy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass_at_1_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    maj_at_k: Option<f64>,
}

fn fmt_pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "-".to_string(),
    }
}

fn fmt_delta(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:+.1}", v * 100.0),
        None => String::new(),
    }
}

fn comparison_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>10}", "Checkpoint", "Greedy", "Pass@1", "Maj@K");
    let first = &reports[0];
    for (index, report) in reports.iter().enumerate() {
        let delta = |a: Option<f64>, b: Option<f64>| -> String {
            if index == 0 {
                String::new()
            } else {
                match (a, b) {
                    (Some(a), Some(b)) => format!(" ({})", fmt_delta(Some(a - b))),
                    _ => String::new(),
                }
            }
        };
        let _ = writeln!(
            out,
            "{:<16} {:>10}{} {:>10}{} {:>10}{}",
            report.checkpoint_tag,
            fmt_pct(report.ex_greedy),
            delta(report.ex_greedy, first.ex_greedy),
            fmt_pct(report.pass_at_1_mean),
            delta(report.pass_at_1_mean, first.pass_at_1_mean),
            fmt_pct(report.maj_at_k),
            delta(report.maj_at_k, first.maj_at_k),
        );
    }
    out
}

pub fn run(args: ReportArgs, _config: &PipelineConfig) -> CmdResult {
    let mut reports: Vec<EvalReport> = Vec::with_capacity(args.evals.len());
    for path in &args.evals {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::validation)?;
        let report: EvalReport = serde_json::from_str(&raw)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(CliError::validation)?;
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(CliError::validation(anyhow!("at least one --eval report is required")));
    }

    let mut self_rewards: Vec<SelfRewardRecord> = Vec::with_capacity(args.self_rewards.len());
    for path in &args.self_rewards {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::validation)?;
        let record: SelfRewardRecord = serde_json::from_str(&raw)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(CliError::validation)?;
        self_rewards.push(record);
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(CliError::runtime)?;

    let first = reports[0].clone();
    let deltas = reports
        .iter()
        .skip(1)
        .map(|r| DeltaRow {
            checkpoint_tag: r.checkpoint_tag.clone(),
            ex_greedy: r.ex_greedy.zip(first.ex_greedy).map(|(a, b)| a - b),
            pass_at_1_mean: r.pass_at_1_mean.zip(first.pass_at_1_mean).map(|(a, b)| a - b),
            maj_at_k: r.maj_at_k.zip(first.maj_at_k).map(|(a, b)| a - b),
        })
        .collect();
    let comparison = Comparison {
        checkpoints: reports.clone(),
        deltas_vs_first: deltas,
    };
    write_json_runtime(&args.out.join("comparison.json"), &comparison)?;
    std::fs::write(args.out.join("comparison.txt"), comparison_table(&reports))
        .context("writing comparison.txt")
        .map_err(CliError::runtime)?;

    // Reward-hacking series: self-assessed reward next to true Pass@1.
    let mut points: Vec<SelfRewardPoint> = self_rewards
        .iter()
        .map(|record| SelfRewardPoint {
            checkpoint_tag: record.checkpoint_tag.clone(),
            epoch: record.epoch,
            self_reward: record.mean_implicit_reward,
            pass_at_1: reports
                .iter()
                .find(|r| r.checkpoint_tag == record.checkpoint_tag)
                .and_then(|r| r.pass_at_1_mean),
        })
        .collect();
    points.sort_by_key(|p| (p.epoch, p.checkpoint_tag.clone()));
    write_json_runtime(&args.out.join("self_reward_series.json"), &points)?;
    let mut csv = String::from("epoch,checkpoint_tag,self_reward,pass_at_1\n");
    for point in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            point.epoch.map(|e| e.to_string()).unwrap_or_default(),
            point.checkpoint_tag,
            point.self_reward,
            point.pass_at_1.map(|v| v.to_string()).unwrap_or_default()
        );
    }
    std::fs::write(args.out.join("self_reward_series.csv"), csv)
        .context("writing self_reward_series.csv")
        .map_err(CliError::runtime)?;

    eprintln!("wrote comparison and series to {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shows_deltas_against_first_column() {
        let reports = vec![
            EvalReport {
                checkpoint_tag: "sft".into(),
                n_items: 10,
                ex_greedy: Some(0.574),
                pass_at_1_mean: Some(0.548),
                maj_at_k: Some(0.63),
                k: Some(16),
            },
            EvalReport {
                checkpoint_tag: "dpo".into(),
                n_items: 10,
                ex_greedy: Some(0.619),
                pass_at_1_mean: Some(0.592),
                maj_at_k: Some(0.649),
                k: Some(16),
            },
        ];
        let table = comparison_table(&reports);
        assert!(table.contains("57.4"), "table was:\n{table}");
        assert!(table.contains("61.9"));
        assert!(table.contains("(+4.5)"));
    }
}
