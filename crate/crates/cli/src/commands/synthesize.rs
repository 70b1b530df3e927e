use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use sqlpref_core::corpus::{introspect_schema, CorpusFormat, DbRoot, SchemaCatalog};
use sqlpref_core::executor::{ExecConfig, Executor};
use sqlpref_core::rollouts::extract_sql;
use sqlpref_core::synth::{
    build_request, synthesize, verify_synth, CompletionsEndpoint, DispatchOptions, HttpEndpoint,
    SamplingParams, StubEndpoint, SynthesisRequest, ENV_COMPLETIONS_URL,
};

use super::{load_items, write_jsonl_runtime};
use crate::config::PipelineConfig;
use crate::records::SynthRecord;
use crate::{CliError, CmdResult};

#[derive(Args)]
pub struct SynthesizeArgs {
    #[arg(long, value_name = "FILE")]
    items: PathBuf,
    #[arg(long, value_name = "FORMAT")]
    format: Option<CorpusFormat>,
    #[arg(long, value_name = "DIR")]
    db_root: Option<PathBuf>,
    /// Completions to request per item.
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 32)]
    top_k: u32,
    /// Keep only completions whose extracted SQL judges CORRECT against the
    /// gold query.
    #[arg(long)]
    verify: bool,
    /// Use the deterministic in-process endpoint instead of HTTP.
    #[arg(long)]
    stub: bool,
    /// Model name forwarded to the endpoint.
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, value_name = "N")]
    value_budget: Option<usize>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn run(args: SynthesizeArgs, config: &PipelineConfig) -> CmdResult {
    let items = load_items(&args.items, args.format).map_err(CliError::validation)?;
    let db_root = args
        .db_root
        .or_else(|| config.db_root.clone())
        .ok_or_else(|| CliError::validation(anyhow!("--db-root is required")))?;
    let db_root = DbRoot::new(db_root);
    let value_budget = args.value_budget.or(config.value_budget).unwrap_or(2);

    let sampling = SamplingParams {
        temperature: args.temperature,
        top_k: args.top_k,
    };
    let mut catalogs: std::collections::BTreeMap<String, SchemaCatalog> = Default::default();
    let mut requests: Vec<SynthesisRequest> = Vec::with_capacity(items.len());
    for item in &items {
        if !catalogs.contains_key(&item.db_id) {
            let file = db_root.db_file(&item.db_id).map_err(CliError::validation)?;
            let catalog = introspect_schema(&file, value_budget)
                .with_context(|| format!("introspecting {}", item.db_id))
                .map_err(CliError::runtime)?;
            catalogs.insert(item.db_id.clone(), catalog);
        }
        let request = build_request(item, &catalogs[&item.db_id], args.k, sampling)
            .map_err(CliError::validation)?;
        requests.push(request);
    }

    let endpoint: Box<dyn CompletionsEndpoint> = if args.stub {
        Box::new(StubEndpoint::new())
    } else {
        match HttpEndpoint::from_env(&args.model) {
            Some(endpoint) => Box::new(endpoint),
            None => {
                return Err(CliError::validation(anyhow!(
                    "{ENV_COMPLETIONS_URL} is not set; export it or pass --stub"
                )))
            }
        }
    };

    let options = DispatchOptions {
        max_in_flight: args.max_in_flight,
        ..DispatchOptions::default()
    };
    let results = synthesize(&requests, endpoint.as_ref(), &options).map_err(CliError::runtime)?;

    let executor = Executor::new(db_root);
    let exec_cfg = ExecConfig {
        timeout_ms: config.timeout_ms.unwrap_or(30_000),
        workers: config.workers.unwrap_or_else(|| ExecConfig::default().workers),
        ..ExecConfig::default()
    };

    let mut records: Vec<SynthRecord> = Vec::new();
    for (item, result) in items.iter().zip(results.iter()) {
        let completions: Vec<String> = if args.verify {
            verify_synth(item, &result.completions, &executor, &exec_cfg)
                .map_err(CliError::runtime)?
        } else {
            result.completions.clone()
        };
        for (index, text) in completions.iter().enumerate() {
            let extracted_sql = extract_sql(text);
            records.push(SynthRecord {
                item_id: item.item_id.clone(),
                checkpoint_tag: "synth".to_string(),
                sample_index: index as u32,
                text: text.clone(),
                unextractable: extracted_sql.is_none(),
                extracted_sql,
            });
        }
    }
    write_jsonl_runtime(&args.out, &records)?;
    eprintln!(
        "wrote {} completions for {} items to {}",
        records.len(),
        items.len(),
        args.out.display()
    );
    Ok(())
}
