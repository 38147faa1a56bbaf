//! KV-cache compression testbed.
//!
//! A deterministic attention-only transformer (prefill plus autoregressive
//! decode) exercised by five cache compression policies — keep everything,
//! streaming (first + last tokens), heavy-hitter scoring, observation-window
//! scoring, and observation-window scoring on a decreasing per-layer budget
//! pyramid — together with the budget allocators, attention statistics and
//! memory accounting needed to compare them.
//!
//! Per-head and per-layer work is data-parallel via rayon when the
//! `parallel` feature (default) is enabled; disabling it falls back to
//! sequential loops with bit-identical results.

pub mod analysis;
pub mod budget;
pub mod cache;
pub mod error;
pub mod math;
pub mod model;
pub mod policy;
pub mod report;
pub mod rng;

mod exec;
#[cfg(test)]
mod test_util;

pub use analysis::{
    compare_vs_full, layer_stats, memory_account, retained_instruction_mass, row_entropy,
    schedule_for, LayerStats, MemoryAccount, RunReport, ScheduleSummary, StepRecord,
};
pub use budget::{
    allocate_pyramid, allocate_uniform, pyramid_raw_endpoints, pyramid_raw_levels,
    BudgetSchedule, ScheduleMode,
};
pub use cache::{CompressedKv, HeadCache, LayerCache};
pub use error::{Error, Result};
pub use math::{pool_1d, Matrix, PoolMode};
pub use model::{
    argmax, decode_step, generate_weights, prefill, prefill_with, random_tokens, ForwardTrace,
    LayerKv, LayerWeights, ModelConfig, ModelWeights, DEFAULT_MAX_CONTEXT,
};
pub use policy::{
    compress, score_all_queries, score_instruction_window, select_topk, PolicyConfig,
    PolicyKind, TieBreak,
};
pub use rng::SplitMix64;
