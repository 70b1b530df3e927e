use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use sqlpref_core::corpus::{
    build_database_prompt_with, introspect_schema, CorpusFormat, DbRoot, PromptOptions,
    SchemaCatalog,
};

use super::{load_items, write_jsonl_runtime};
use crate::config::PipelineConfig;
use crate::records::PromptRecord;
use crate::{CliError, CmdResult};

#[derive(Args)]
pub struct PromptArgs {
    /// Corpus file: items JSONL, or a raw benchmark JSON array with --format.
    #[arg(long, value_name = "FILE")]
    items: PathBuf,
    /// Treat --items as a raw benchmark file of this flavor (bird|spider).
    #[arg(long, value_name = "FORMAT")]
    format: Option<CorpusFormat>,
    /// Directory with `<db_id>/<db_id>.sqlite` databases.
    #[arg(long, value_name = "DIR")]
    db_root: Option<PathBuf>,
    /// Example values per column.
    #[arg(long, value_name = "N")]
    value_budget: Option<usize>,
    /// Optional prompt character cap; whole table lines are dropped from
    /// the end until the prompt fits.
    #[arg(long, value_name = "N")]
    char_budget: Option<usize>,
    /// Where to write `{item_id, prompt}` records.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write the normalized corpus (`items.jsonl` schema).
    #[arg(long, value_name = "FILE")]
    items_out: Option<PathBuf>,
}

pub fn run(args: PromptArgs, config: &PipelineConfig) -> CmdResult {
    let items = load_items(&args.items, args.format).map_err(CliError::validation)?;
    if let Some(items_out) = &args.items_out {
        write_jsonl_runtime(items_out, &items)?;
    }

    let db_root = args
        .db_root
        .or_else(|| config.db_root.clone())
        .ok_or_else(|| CliError::validation(anyhow::anyhow!("--db-root is required")))?;
    let db_root = DbRoot::new(db_root);
    let value_budget = args.value_budget.or(config.value_budget).unwrap_or(2);
    let options = PromptOptions {
        char_budget: args.char_budget,
    };

    let mut catalogs: std::collections::BTreeMap<String, SchemaCatalog> = Default::default();
    let mut records = Vec::with_capacity(items.len());
    for item in &items {
        if !catalogs.contains_key(&item.db_id) {
            let file = db_root.db_file(&item.db_id).map_err(CliError::validation)?;
            let catalog = introspect_schema(&file, value_budget)
                .with_context(|| format!("introspecting {}", item.db_id))
                .map_err(CliError::runtime)?;
            catalogs.insert(item.db_id.clone(), catalog);
        }
        let catalog = &catalogs[&item.db_id];
        records.push(PromptRecord {
            item_id: item.item_id.clone(),
            prompt: build_database_prompt_with(catalog, &item.question, &item.evidence, &options),
        });
    }
    write_jsonl_runtime(&args.out, &records)?;
    eprintln!("wrote {} prompts to {}", records.len(), args.out.display());
    Ok(())
}
