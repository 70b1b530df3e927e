pub mod analyze;
pub mod dpo_metrics;
pub mod eval;
pub mod judge;
pub mod pairs;
pub mod prompt;
pub mod report;
pub mod synthesize;

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use sqlpref_core::corpus::{load_corpus, CorpusFormat, DatasetItem};
use sqlpref_core::executor::Verdict;
use sqlpref_core::rollouts::{load_rollouts, Rollout};

use crate::records::VerdictRecord;
use crate::CliError;

/// Loads a corpus either from normalized items JSONL or, when `format` is
/// given, from a raw benchmark JSON array.
pub fn load_items(path: &Path, format: Option<CorpusFormat>) -> Result<Vec<DatasetItem>> {
    match format {
        Some(format) => {
            load_corpus(path, format).with_context(|| format!("loading {}", path.display()))
        }
        None => sqlpref_core::jsonl::read_jsonl(path)
            .with_context(|| format!("loading {}", path.display())),
    }
}

pub fn items_by_id(items: Vec<DatasetItem>) -> BTreeMap<String, DatasetItem> {
    items
        .into_iter()
        .map(|item| (item.item_id.clone(), item))
        .collect()
}

/// Loads rollouts and fills in missing SQL extractions.
pub fn load_rollouts_extracted(path: &Path) -> Result<Vec<Rollout>> {
    let mut rollouts =
        load_rollouts(path).with_context(|| format!("loading {}", path.display()))?;
    sqlpref_core::rollouts::extract_all(&mut rollouts);
    Ok(rollouts)
}

/// Reads a verdicts file into the attach join map, skipping records whose
/// gold query failed (null verdict).
pub fn load_verdict_map(path: &Path) -> Result<BTreeMap<(String, String, u32), Verdict>> {
    let records: Vec<VerdictRecord> =
        sqlpref_core::jsonl::read_jsonl(path).with_context(|| format!("loading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for record in records {
        if let Some(verdict) = record.verdict {
            map.insert(
                (record.item_id, record.checkpoint_tag, record.sample_index),
                verdict,
            );
        }
    }
    Ok(map)
}

/// Attaches verdicts to rollouts, reporting unmatched keys as validation
/// errors.
pub fn attach(
    rollouts: &[Rollout],
    verdicts: &BTreeMap<(String, String, u32), Verdict>,
) -> Result<Vec<Rollout>, CliError> {
    sqlpref_core::rollouts::attach_verdicts(rollouts, verdicts).map_err(CliError::validation)
}

/// The unique checkpoint tag of a rollout set, or the explicit filter.
pub fn resolve_checkpoint_tag(rollouts: &[Rollout], flag: Option<&str>) -> Result<String> {
    if let Some(tag) = flag {
        if !rollouts.iter().any(|r| r.checkpoint_tag == tag) {
            bail!("no rollouts carry checkpoint tag `{tag}`");
        }
        return Ok(tag.to_string());
    }
    let mut tags: Vec<&str> = rollouts.iter().map(|r| r.checkpoint_tag.as_str()).collect();
    tags.sort();
    tags.dedup();
    match tags.as_slice() {
        [] => Err(anyhow!("rollout file is empty")),
        [tag] => Ok(tag.to_string()),
        many => Err(anyhow!(
            "rollout file mixes checkpoint tags {many:?}; pass --checkpoint-tag"
        )),
    }
}

pub fn write_jsonl_runtime<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    sqlpref_core::jsonl::write_jsonl(path, records).map_err(CliError::runtime)
}

pub fn write_json_runtime<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let rendered = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    std::fs::write(path, rendered + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::runtime)
}
