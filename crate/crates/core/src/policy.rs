//! Cache compression policies.
//!
//! Five policies behind one entry point, [`compress`]: given the prefill
//! trace, the full K/V and a per-layer budget schedule, each returns the
//! positions retained per layer and head.
//!
//! * `full` keeps everything.
//! * `streaming` keeps the first `budget - alpha` and last `alpha` positions.
//! * `h2o` ranks tokens by mean attention received from all queries.
//! * `snapkv` ranks by attention received from the last `alpha` query rows
//!   (the observation window), smoothed with a pooling pass.
//! * `pyramid` scores exactly like `snapkv` but expects a decreasing
//!   per-layer schedule instead of a uniform one.
//!
//! Whatever the policy, the last `alpha` positions are always retained and
//! each layer keeps exactly `min(budget, n)` positions per head.

use crate::budget::BudgetSchedule;
use crate::cache::CompressedKv;
use crate::error::{Error, Result};
use crate::exec;
use crate::math::{pool_1d, Matrix, PoolMode};
use crate::model::{ForwardTrace, LayerKv};

/// Which compression rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Full,
    Streaming,
    H2o,
    SnapKv,
    Pyramid,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Streaming => "streaming",
            Self::H2o => "h2o",
            Self::SnapKv => "snapkv",
            Self::Pyramid => "pyramid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Self::Full),
            "streaming" => Some(Self::Streaming),
            "h2o" => Some(Self::H2o),
            "snapkv" => Some(Self::SnapKv),
            "pyramid" => Some(Self::Pyramid),
            _ => None,
        }
    }

    pub const ALL: [Self; 5] = [
        Self::Full,
        Self::Streaming,
        Self::H2o,
        Self::SnapKv,
        Self::Pyramid,
    ];
}

/// How score ties are resolved in top-k selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Prefer the larger (more recent) position.
    PreferRecent,
}

/// Policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    /// Always-retained tail length (observation window).
    pub alpha: usize,
    /// Pyramid shape parameter; ignored by the uniform policies.
    pub beta: f64,
    /// Pooling kernel for snapkv/pyramid scoring; must be odd.
    pub pool_kernel: usize,
    pub pool_mode: PoolMode,
    pub tie_break: TieBreak,
    /// Share scores across all heads of a layer before selecting, so every
    /// head retains the same positions (grouped-query style selection).
    pub group_heads: bool,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            alpha: 8,
            beta: 20.0,
            pool_kernel: 7,
            pool_mode: PoolMode::Avg,
            tie_break: TieBreak::PreferRecent,
            group_heads: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 {
            return Err(Error::parameter("alpha", "must be at least 1".to_string()));
        }
        if self.pool_kernel == 0 || self.pool_kernel.is_multiple_of(2) {
            return Err(Error::parameter(
                "pool_kernel",
                format!("must be odd and nonzero, got {}", self.pool_kernel),
            ));
        }
        if !self.beta.is_finite() || self.beta < 1.0 {
            return Err(Error::parameter("beta", format!("must be >= 1, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Attention mass each token receives from the last `alpha` query rows,
/// smoothed with [`pool_1d`]. This is the snapkv/pyramid selection signal.
///
/// Entry `i` is `sum over q in [n-alpha, n) of attn[q, i]` — maps are
/// indexed `[query, key]`, and summing over the trailing query *rows* is
/// the only direction compatible with a causal mask, since only the last
/// rows can attend everywhere. Worked 4x4 example with `alpha = 2`,
/// kernel 1:
///
/// ```text
/// attn = [1.0  0    0    0  ]      rows 2 and 3 are the window
///        [0.5  0.5  0    0  ]
///        [0.2  0.3  0.5  0  ]      scores = row2 + row3
///        [0.1  0.1  0.4  0.4]             = [0.3, 0.4, 0.9, 0.4]
/// ```
///
/// Sums accumulate in f64. A kernel of 1 disables pooling; kernels longer
/// than the sequence are clipped to the largest odd length that fits.
pub fn score_instruction_window(
    attn: &Matrix,
    alpha: usize,
    pool_kernel: usize,
    pool_mode: PoolMode,
) -> Result<Vec<f64>> {
    let n = attn.rows();
    if alpha > n {
        return Err(Error::parameter(
            "alpha",
            format!("{alpha} exceeds sequence length {n}"),
        ));
    }
    let mut scores = vec![0.0f64; n];
    for q in n - alpha..n {
        let row = attn.row(q);
        for (s, &a) in scores.iter_mut().zip(row) {
            *s += f64::from(a);
        }
    }
    let kernel = effective_kernel(pool_kernel, n);
    pool_1d(&scores, kernel, pool_mode)
}

fn effective_kernel(kernel: usize, n: usize) -> usize {
    if kernel <= n {
        kernel
    } else if n % 2 == 1 {
        n
    } else {
        n.saturating_sub(1).max(1)
    }
}

/// Mean attention mass each token receives across all query rows — the
/// heavy-hitter selection signal. No pooling.
pub fn score_all_queries(attn: &Matrix) -> Vec<f64> {
    let n = attn.rows();
    let mut scores = vec![0.0f64; n];
    for q in 0..n {
        let row = attn.row(q);
        for (s, &a) in scores.iter_mut().zip(row) {
            *s += f64::from(a);
        }
    }
    for s in &mut scores {
        *s /= n as f64;
    }
    scores
}

/// Positions of the `k` highest-scoring tokens, always including `forced`.
///
/// Ties go to the larger position under [`TieBreak::PreferRecent`]. The
/// result is sorted ascending and has exactly `k` entries.
pub fn select_topk(
    scores: &[f64],
    k: usize,
    forced: &[usize],
    tie_break: TieBreak,
) -> Result<Vec<usize>> {
    let n = scores.len();
    if k < forced.len() {
        return Err(Error::parameter(
            "k",
            format!("{k} is below the {} forced positions", forced.len()),
        ));
    }
    if k > n {
        return Err(Error::parameter("k", format!("{k} exceeds {n} candidates")));
    }
    let mut in_forced = vec![false; n];
    for &pos in forced {
        if pos >= n {
            return Err(Error::parameter(
                "forced",
                format!("position {pos} out of range 0..{n}"),
            ));
        }
        if std::mem::replace(&mut in_forced[pos], true) {
            return Err(Error::parameter("forced", format!("duplicate position {pos}")));
        }
    }

    let mut candidates: Vec<usize> = (0..n).filter(|&i| !in_forced[i]).collect();
    let TieBreak::PreferRecent = tie_break;
    candidates.sort_unstable_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| b.cmp(&a))
    });

    let mut selected: Vec<usize> = forced.to_vec();
    selected.extend(candidates.into_iter().take(k - forced.len()));
    selected.sort_unstable();
    Ok(selected)
}

fn streaming_positions(n: usize, budget: usize, alpha: usize) -> Vec<usize> {
    let head = budget - alpha;
    let mut positions: Vec<usize> = (0..head).collect();
    positions.extend(n - alpha..n);
    positions
}

/// Compress the full K/V down to each layer's budget.
///
/// Layers retaining at least `n` positions keep everything. Every other
/// layer keeps exactly `budget` positions per head, always including the
/// last `alpha`.
pub fn compress(
    config: &PolicyConfig,
    schedule: &BudgetSchedule,
    trace: &ForwardTrace,
    kv: &[LayerKv],
) -> Result<CompressedKv> {
    config.validate()?;
    let m = trace.num_layers();
    if schedule.num_layers() != m {
        return Err(Error::State(format!(
            "schedule covers {} layers, trace has {m}",
            schedule.num_layers()
        )));
    }
    if kv.len() != m {
        return Err(Error::State(format!("kv has {} layers, trace has {m}", kv.len())));
    }
    if schedule.alpha() != config.alpha {
        return Err(Error::State(format!(
            "schedule alpha {} does not match policy alpha {}",
            schedule.alpha(),
            config.alpha
        )));
    }
    let n = trace.seq_len();
    let num_heads = trace.num_heads();
    let head_dim = kv[0].keys.cols() / num_heads;

    let per_layer: Result<Vec<(Vec<Vec<usize>>, usize)>> =
        exec::map_indexed_grained(m, num_heads * n * n, |l| {
            let budget = schedule.layer_budget(l);
            let heads = select_layer(config, trace, l, n, num_heads, budget)?;
            Ok((heads, budget.min(n)))
        })
        .into_iter()
        .collect();
    let per_layer = per_layer?;

    let mut positions = Vec::with_capacity(m);
    let mut budgets = Vec::with_capacity(m);
    for (heads, budget) in per_layer {
        positions.push(heads);
        budgets.push(budget);
    }
    CompressedKv::gather(kv, num_heads, head_dim, positions, budgets, n)
}

fn select_layer(
    config: &PolicyConfig,
    trace: &ForwardTrace,
    layer: usize,
    n: usize,
    num_heads: usize,
    budget: usize,
) -> Result<Vec<Vec<usize>>> {
    let everything: Vec<usize> = (0..n).collect();
    if budget >= n || config.kind == PolicyKind::Full {
        return Ok(vec![everything; num_heads]);
    }
    // budget < n and budget >= alpha, so alpha < n from here on.
    let forced: Vec<usize> = (n - config.alpha..n).collect();
    match config.kind {
        PolicyKind::Full => unreachable!(),
        PolicyKind::Streaming => {
            Ok(vec![streaming_positions(n, budget, config.alpha); num_heads])
        }
        PolicyKind::H2o | PolicyKind::SnapKv | PolicyKind::Pyramid => {
            let score_head = |h: usize| -> Result<Vec<f64>> {
                let attn = trace.attention(layer, h);
                match config.kind {
                    PolicyKind::H2o => Ok(score_all_queries(attn)),
                    _ => score_instruction_window(
                        attn,
                        config.alpha,
                        config.pool_kernel,
                        config.pool_mode,
                    ),
                }
            };
            if config.group_heads {
                let mut shared = vec![0.0f64; n];
                for h in 0..num_heads {
                    for (s, v) in shared.iter_mut().zip(score_head(h)?) {
                        *s += v;
                    }
                }
                for s in &mut shared {
                    *s /= num_heads as f64;
                }
                let selected = select_topk(&shared, budget, &forced, config.tie_break)?;
                Ok(vec![selected; num_heads])
            } else {
                (0..num_heads)
                    .map(|h| select_topk(&score_head(h)?, budget, &forced, config.tie_break))
                    .collect()
            }
        }
    }
}
