//! Attention-pattern statistics and policy quality measurement.
//!
//! `layer_stats` quantifies how attention mass is distributed at each depth
//! (entropy, locality, concentration, sink mass). `compare_vs_full` runs a
//! policy next to an uncompressed cache from the same prefill and records
//! per-step logit divergence, and `memory_account` translates schedules
//! into cache bytes.

use crate::budget::BudgetSchedule;
use crate::cache::CompressedKv;
use crate::error::{Error, Result};
use crate::math::PoolMode;
use crate::model::{
    argmax, decode_step, prefill, ForwardTrace, ModelConfig, ModelWeights,
};
use crate::policy::{compress, score_instruction_window, PolicyConfig, PolicyKind};

/// Attention distribution statistics for one layer, averaged over heads and
/// query rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    /// Mean Shannon entropy in nats over each row's causal support.
    pub entropy: f64,
    /// Mean attention mass within `window` positions of the diagonal.
    pub locality_mass: f64,
    /// Mean of each row's largest attention weight.
    pub top1_mass: f64,
    /// Mean attention paid to position 0.
    pub sink_mass: f64,
}

/// Shannon entropy in nats of a finite non-negative weight row.
pub fn row_entropy(row: &[f32]) -> f64 {
    let mut h = 0.0f64;
    for &p in row {
        let p = f64::from(p);
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Per-layer attention statistics over a prefill trace.
///
/// Entropy is computed on each row's causal support, so early rows are not
/// penalized for their short history; `window` bounds the locality band
/// `[q - window, q]`.
pub fn layer_stats(trace: &ForwardTrace, window: usize) -> Vec<LayerStats> {
    let n = trace.seq_len();
    let heads = trace.num_heads();
    (0..trace.num_layers())
        .map(|l| {
            let mut entropy = 0.0;
            let mut locality = 0.0;
            let mut top1 = 0.0;
            let mut sink = 0.0;
            for h in 0..heads {
                let map = trace.attention(l, h);
                for q in 0..n {
                    let support = &map.row(q)[..=q];
                    entropy += row_entropy(support);
                    let lo = q.saturating_sub(window);
                    locality += support[lo..].iter().map(|&x| f64::from(x)).sum::<f64>();
                    top1 += f64::from(support.iter().fold(0.0f32, |a, &b| a.max(b)));
                    sink += f64::from(support[0]);
                }
            }
            let denom = (heads * n) as f64;
            LayerStats {
                layer: l,
                entropy: entropy / denom,
                locality_mass: locality / denom,
                top1_mass: top1 / denom,
                sink_mass: sink / denom,
            }
        })
        .collect()
}

/// Cache memory for one run: retained bytes, full bytes, and their ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryAccount {
    pub retained_bytes: u64,
    pub full_bytes: u64,
    /// `retained_bytes / full_bytes`.
    pub ratio: f64,
}

/// Cache bytes for a schedule against a context of `n` tokens.
///
/// Keys and values both count, each layer stores `min(budget, n)` rows of
/// `num_heads * head_dim` scalars. Accounting precision defaults to fp16
/// (2 bytes) in the callers even though compute is fp32; the two are
/// independent knobs.
pub fn memory_account(
    config: &ModelConfig,
    n: usize,
    schedule: &BudgetSchedule,
    bytes_per_scalar: usize,
) -> Result<MemoryAccount> {
    if n == 0 {
        return Err(Error::parameter("n", "context length must be at least 1".to_string()));
    }
    let row_bytes = (config.num_heads * config.head_dim * bytes_per_scalar) as u64;
    let full_rows = (config.num_layers * n) as u64;
    let retained_rows: u64 = schedule
        .per_layer()
        .iter()
        .map(|&b| b.min(n) as u64)
        .sum();
    let full_bytes = 2 * full_rows * row_bytes;
    let retained_bytes = 2 * retained_rows * row_bytes;
    Ok(MemoryAccount {
        retained_bytes,
        full_bytes,
        ratio: retained_bytes as f64 / full_bytes as f64,
    })
}

/// One decode step of a policy-vs-full comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// `max_i |logits_policy[i] - logits_full[i]|`.
    pub max_abs_logit_diff: f64,
    /// Whether both runs pick the same greedy token this step.
    pub argmax_agrees: bool,
}

/// Compact description of the schedule a run used.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSummary {
    pub mode: String,
    pub alpha: usize,
    pub beta: f64,
    pub sum: usize,
    pub mean: f64,
}

impl ScheduleSummary {
    fn new(schedule: &BudgetSchedule) -> Self {
        Self {
            mode: schedule.mode().as_str().to_string(),
            alpha: schedule.alpha(),
            beta: schedule.beta(),
            sum: schedule.sum(),
            mean: schedule.mean(),
        }
    }
}

/// Everything measured for one policy run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub policy: String,
    pub seq_len: usize,
    pub decode_steps: usize,
    pub schedule: ScheduleSummary,
    pub steps: Vec<StepRecord>,
    /// Per layer: fraction of instruction-window attention mass covered by
    /// the retained positions, averaged over heads.
    pub retained_mass: Vec<f64>,
    pub memory: MemoryAccount,
}

impl RunReport {
    pub fn max_logit_diff(&self) -> f64 {
        self.steps.iter().fold(0.0, |a, s| a.max(s.max_abs_logit_diff))
    }

    pub fn mean_logit_diff(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.max_abs_logit_diff).sum::<f64>() / self.steps.len() as f64
    }

    pub fn agreement_rate(&self) -> f64 {
        if self.steps.is_empty() {
            return 1.0;
        }
        self.steps.iter().filter(|s| s.argmax_agrees).count() as f64 / self.steps.len() as f64
    }

    pub fn mean_retained_mass(&self) -> f64 {
        if self.retained_mass.is_empty() {
            return 1.0;
        }
        self.retained_mass.iter().sum::<f64>() / self.retained_mass.len() as f64
    }
}

/// Fraction of instruction-window attention mass the cache retains, per
/// layer, averaged over heads. The mass metric is the unpooled window score,
/// whatever signal the policy itself selected on.
pub fn retained_instruction_mass(
    trace: &ForwardTrace,
    cache: &CompressedKv,
    alpha: usize,
) -> Result<Vec<f64>> {
    let n = trace.seq_len();
    let alpha = alpha.min(n);
    let mut out = Vec::with_capacity(trace.num_layers());
    for l in 0..trace.num_layers() {
        let mut layer_mass = 0.0;
        for h in 0..trace.num_heads() {
            let scores =
                score_instruction_window(trace.attention(l, h), alpha, 1, PoolMode::Avg)?;
            let total: f64 = scores.iter().sum();
            let kept: f64 = cache
                .layer(l)
                .head(h)
                .positions()
                .iter()
                .filter(|&&p| p < n)
                .map(|&p| scores[p])
                .sum();
            layer_mass += if total > 0.0 { kept / total } else { 1.0 };
        }
        out.push(layer_mass / trace.num_heads() as f64);
    }
    Ok(out)
}

/// Run a policy and an uncompressed cache from the same prefill and record
/// the per-step logit divergence.
///
/// By default both runs are fed the full run's greedy token each step, so
/// divergence measures cache quality rather than trajectory drift; with
/// `free_running` each run follows its own greedy choice.
pub fn compare_vs_full(
    weights: &ModelWeights,
    tokens: &[u32],
    policy: &PolicyConfig,
    schedule: &BudgetSchedule,
    decode_steps: usize,
    free_running: bool,
) -> Result<RunReport> {
    if decode_steps == 0 {
        return Err(Error::parameter("decode_steps", "must be at least 1".to_string()));
    }
    let config = weights.config();
    let (trace, kv) = prefill(weights, tokens)?;

    let mut full_cache = CompressedKv::from_full(&kv, config.num_heads, config.head_dim)?;
    let mut policy_cache = compress(policy, schedule, &trace, &kv)?;
    let retained_mass = retained_instruction_mass(&trace, &policy_cache, policy.alpha)?;
    let memory = memory_account(config, trace.seq_len(), schedule, 2)?;

    let first = argmax(trace.logits().row(trace.seq_len() - 1)) as u32;
    let (mut token_full, mut token_policy) = (first, first);
    let mut steps = Vec::with_capacity(decode_steps);
    for step in 0..decode_steps {
        let logits_full = decode_step(weights, &mut full_cache, token_full)?;
        let logits_policy = decode_step(weights, &mut policy_cache, token_policy)?;
        let max_abs_logit_diff = logits_full
            .iter()
            .zip(&logits_policy)
            .fold(0.0f64, |a, (x, y)| a.max(f64::from(x - y).abs()));
        let pick_full = argmax(&logits_full);
        let pick_policy = argmax(&logits_policy);
        steps.push(StepRecord {
            step,
            max_abs_logit_diff,
            argmax_agrees: pick_full == pick_policy,
        });
        token_full = pick_full as u32;
        token_policy = if free_running { pick_policy as u32 } else { pick_full as u32 };
    }

    Ok(RunReport {
        policy: policy.kind.as_str().to_string(),
        seq_len: trace.seq_len(),
        decode_steps,
        schedule: ScheduleSummary::new(schedule),
        steps,
        retained_mass,
        memory,
    })
}

/// Schedule a policy kind would use for a given average budget: pyramid for
/// [`PolicyKind::Pyramid`], uniform pinned to the full context for
/// [`PolicyKind::Full`], uniform otherwise.
pub fn schedule_for(
    kind: PolicyKind,
    num_layers: usize,
    average_budget: usize,
    n: usize,
    policy: &PolicyConfig,
    renormalize: bool,
) -> Result<BudgetSchedule> {
    match kind {
        PolicyKind::Pyramid => crate::budget::allocate_pyramid(
            num_layers,
            average_budget,
            policy.alpha,
            policy.beta,
            renormalize,
        ),
        PolicyKind::Full => {
            crate::budget::allocate_uniform(num_layers, n.max(policy.alpha), policy.alpha)
        }
        _ => crate::budget::allocate_uniform(num_layers, average_budget, policy.alpha),
    }
}
