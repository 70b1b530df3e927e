//! Optional key-value config file mirrored by flags; flags win.
//!
//! Format: one `key = value` per line, `#` starts a comment. Recognized
//! keys: `db_root`, `suite_root`, `beta`, `seed`, `timeout_ms`, `workers`,
//! `k_majority`, `lambda_sft`, `value_budget`, `real_abs_tol`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct PipelineConfig {
    pub db_root: Option<PathBuf>,
    pub suite_root: Option<PathBuf>,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    pub timeout_ms: Option<u64>,
    pub workers: Option<usize>,
    pub k_majority: Option<usize>,
    pub lambda_sft: Option<f64>,
    pub value_budget: Option<usize>,
    pub real_abs_tol: Option<f64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut config = Self::default();
        for (key, value) in values {
            let parse_err = || format!("config key `{key}` has invalid value `{value}`");
            match key.as_str() {
                "db_root" => config.db_root = Some(PathBuf::from(value)),
                "suite_root" => config.suite_root = Some(PathBuf::from(value)),
                "beta" => config.beta = Some(value.parse().with_context(parse_err)?),
                "seed" => config.seed = Some(value.parse().with_context(parse_err)?),
                "timeout_ms" => config.timeout_ms = Some(value.parse().with_context(parse_err)?),
                "workers" => config.workers = Some(value.parse().with_context(parse_err)?),
                "k_majority" => config.k_majority = Some(value.parse().with_context(parse_err)?),
                "lambda_sft" => config.lambda_sft = Some(value.parse().with_context(parse_err)?),
                "value_budget" => {
                    config.value_budget = Some(value.parse().with_context(parse_err)?)
                }
                "real_abs_tol" => {
                    config.real_abs_tol = Some(value.parse().with_context(parse_err)?)
                }
                other => bail!("unknown config key `{other}`"),
            }
        }
        Ok(config)
    }
}
