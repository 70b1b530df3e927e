//! Harness for studying execution-feedback preference optimization on
//! Text-to-SQL models.
//!
//! The library wraps an external LLM trainer/sampler with everything around
//! it that is deterministic and checkable:
//!
//! - [`corpus`] — benchmark ingestion, schema introspection, database prompts
//! - [`executor`] — sandboxed SQL execution, result equivalence, EX/TS verdicts
//! - [`rollouts`] — model-output ingestion and SQL extraction
//! - [`preference`] — preference-pair construction from judged rollouts
//! - [`evalstrat`] — Greedy / Pass@1 / Maj@K scoring
//! - [`dpomath`] — DPO losses, implicit rewards, token-level credits
//! - [`analysis`] — SQL AST checks, error taxonomy, fix rates, output stats
//! - [`synth`] — CoT synthesis requests and endpoint dispatch
//!
//! All randomness is funneled through explicit seeds ([`rng::SplitMix64`]) so
//! every artifact is reproducible byte-for-byte.

pub mod analysis;
pub mod corpus;
pub mod dpomath;
pub mod evalstrat;
pub mod executor;
pub mod jsonl;
pub mod preference;
pub mod rng;
pub mod rollouts;
pub mod synth;

#[cfg(any(test, feature = "fixtures"))]
pub mod fixtures;

pub use corpus::{ColumnDef, DatasetItem, DbRoot, SchemaCatalog, TableDef};
pub use executor::{CellValue, ExecConfig, ExecutionOutcome, Verdict};
pub use rollouts::Rollout;
