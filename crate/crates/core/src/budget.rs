//! Per-layer cache budget schedules.
//!
//! Two allocators: `uniform` gives every layer the same retained count
//! (what the fixed-size policies use) and `pyramid` interpolates a
//! decreasing arithmetic sequence between a wide bottom layer and a narrow
//! top layer.
//!
//! Pyramid algebra, with `m` layers, average retained budget `b`, always-kept
//! tail `alpha`, and shape parameter `beta`:
//!
//! * selectable pool `k_total = m * (b - alpha)`
//! * raw endpoints `k[0] = 2 * k_total / m` and `k[m-1] = k_total / (beta * m)`
//! * raw level `l` linearly interpolated between the endpoints over `m - 1` steps
//!
//! The raw sequence sums to `k_total * (1 + 1/(2*beta))`, not `k_total`, so
//! every schedule is rescaled by `2*beta / (2*beta + 1)` before rounding to
//! integers; that keeps the endpoint ratio at `2*beta` while making the
//! total match the uniform baseline. With `renormalize` the rounding
//! residual is then settled one token at a time (added from the bottom
//! layer up, removed from the top layer down) so the schedule sums to
//! `m * b` exactly.

use crate::error::{Error, Result};

/// How a schedule distributes budget across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Uniform,
    Pyramid,
}

impl ScheduleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Pyramid => "pyramid",
        }
    }
}

/// Integer per-layer retained-token counts, tail tokens included.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSchedule {
    per_layer: Vec<usize>,
    alpha: usize,
    beta: f64,
    k_total: usize,
    mode: ScheduleMode,
}

impl BudgetSchedule {
    pub fn num_layers(&self) -> usize {
        self.per_layer.len()
    }

    /// Retained-token count for layer `l` (includes the `alpha` tail).
    pub fn layer_budget(&self, layer: usize) -> usize {
        self.per_layer[layer]
    }

    pub fn per_layer(&self) -> &[usize] {
        &self.per_layer
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Size of the selectable pool, i.e. the grand total minus the tails.
    pub fn k_total(&self) -> usize {
        self.k_total
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn sum(&self) -> usize {
        self.per_layer.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() as f64 / self.num_layers() as f64
    }

    pub fn is_non_increasing(&self) -> bool {
        self.per_layer.windows(2).all(|w| w[0] >= w[1])
    }

    /// Ratio of the bottom and top selectable counts after rounding;
    /// `None` when the top layer keeps only its tail.
    pub fn endpoint_ratio(&self) -> Option<f64> {
        let first = self.per_layer[0] - self.alpha;
        let last = self.per_layer[self.per_layer.len() - 1] - self.alpha;
        (last > 0).then(|| first as f64 / last as f64)
    }
}

fn check_layers(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::parameter("num_layers", format!("need at least 2 layers, got {m}")));
    }
    Ok(())
}

/// Every layer retains exactly `average_budget` tokens.
pub fn allocate_uniform(m: usize, average_budget: usize, alpha: usize) -> Result<BudgetSchedule> {
    check_layers(m)?;
    if average_budget < alpha {
        return Err(Error::parameter(
            "average_budget",
            format!("{average_budget} is below alpha = {alpha}"),
        ));
    }
    Ok(BudgetSchedule {
        per_layer: vec![average_budget; m],
        alpha,
        beta: 1.0,
        k_total: m * (average_budget - alpha),
        mode: ScheduleMode::Uniform,
    })
}

/// Raw (pre-scaling, pre-rounding) selectable counts for the bottom and top
/// layers. For `(m=32, b=128, alpha=8, beta=20)` these are exactly `(240, 6)`
/// and their ratio is `2 * beta`.
pub fn pyramid_raw_endpoints(
    m: usize,
    average_budget: usize,
    alpha: usize,
    beta: f64,
) -> Result<(f64, f64)> {
    check_pyramid_params(m, average_budget, alpha, beta)?;
    let k_total = (m * (average_budget - alpha)) as f64;
    let bottom = 2.0 * k_total / m as f64;
    let top = k_total / (beta * m as f64);
    Ok((bottom, top))
}

/// Raw real-valued selectable counts per layer: a linear ramp from the
/// bottom endpoint down to the top endpoint. Sums to `k_total * (1 + 1/(2*beta))`.
pub fn pyramid_raw_levels(
    m: usize,
    average_budget: usize,
    alpha: usize,
    beta: f64,
) -> Result<Vec<f64>> {
    let (bottom, top) = pyramid_raw_endpoints(m, average_budget, alpha, beta)?;
    let steps = (m - 1) as f64;
    Ok((0..m)
        .map(|l| bottom + (top - bottom) * l as f64 / steps)
        .collect())
}

fn check_pyramid_params(m: usize, average_budget: usize, alpha: usize, beta: f64) -> Result<()> {
    check_layers(m)?;
    if average_budget <= alpha {
        return Err(Error::parameter(
            "average_budget",
            format!("{average_budget} must exceed alpha = {alpha}"),
        ));
    }
    if !beta.is_finite() || beta < 1.0 {
        return Err(Error::parameter("beta", format!("must be >= 1, got {beta}")));
    }
    Ok(())
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Decreasing per-layer schedule averaging `average_budget` retained tokens.
pub fn allocate_pyramid(
    m: usize,
    average_budget: usize,
    alpha: usize,
    beta: f64,
    renormalize: bool,
) -> Result<BudgetSchedule> {
    let raw = pyramid_raw_levels(m, average_budget, alpha, beta)?;
    let k_total = m * (average_budget - alpha);
    let scale = 2.0 * beta / (2.0 * beta + 1.0);
    let mut selectable: Vec<usize> = raw.iter().map(|&x| round_half_up(x * scale)).collect();

    if renormalize {
        let mut residual = k_total as i64 - selectable.iter().map(|&x| x as i64).sum::<i64>();
        // Settle the rounding residual one token at a time: grow the widest
        // layers first, shrink the narrowest first. Both directions keep the
        // sequence non-increasing.
        let mut l = 0usize;
        while residual > 0 {
            selectable[l] += 1;
            residual -= 1;
            l = (l + 1) % m;
        }
        let mut l = m - 1;
        while residual < 0 {
            if selectable[l] > 0 {
                selectable[l] -= 1;
                residual += 1;
            }
            l = if l == 0 { m - 1 } else { l - 1 };
        }
    }

    let per_layer = selectable.iter().map(|&k| alpha + k).collect();
    Ok(BudgetSchedule {
        per_layer,
        alpha,
        beta,
        k_total,
        mode: ScheduleMode::Pyramid,
    })
}
