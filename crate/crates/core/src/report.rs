//! CSV and JSON emission for reports and statistics.
//!
//! Column order is fixed and floats are printed with six significant
//! digits, so equal inputs always produce byte-identical output.

use serde_json::{json, Value};

use crate::analysis::{LayerStats, RunReport};

/// Format with six significant digits, `%g`-style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // Round to six significant digits first so presentation decisions are
    // made on the rounded value.
    let rounded: f64 = format!("{x:.5e}").parse().unwrap();
    let exp = rounded.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        let s = format!("{rounded:.5e}");
        let (mantissa, exponent) = s.split_once('e').unwrap();
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{exponent}")
    } else {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{rounded:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

/// Six-significant-digit JSON number.
fn json_num(x: f64) -> Value {
    let rounded: f64 = if x.is_finite() {
        format!("{x:.5e}").parse().unwrap()
    } else {
        0.0
    };
    json!(rounded)
}

/// `layer,budget` rows for a schedule plus a trailing summary comment.
pub fn schedule_csv(schedule: &crate::budget::BudgetSchedule) -> String {
    let mut out = String::from("layer,budget\n");
    for (l, &b) in schedule.per_layer().iter().enumerate() {
        out.push_str(&format!("{l},{b}\n"));
    }
    let ratio = schedule
        .endpoint_ratio()
        .map_or_else(|| "inf".to_string(), fmt_sig6);
    out.push_str(&format!(
        "# sum={} mean={} endpoint_ratio={}\n",
        schedule.sum(),
        fmt_sig6(schedule.mean()),
        ratio
    ));
    out
}

/// One row per layer: `layer,entropy,locality_mass,top1_mass,sink_mass`.
pub fn layer_stats_csv(stats: &[LayerStats]) -> String {
    let mut out = String::from("layer,entropy,locality_mass,top1_mass,sink_mass\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.layer,
            fmt_sig6(s.entropy),
            fmt_sig6(s.locality_mass),
            fmt_sig6(s.top1_mass),
            fmt_sig6(s.sink_mass)
        ));
    }
    out
}

pub fn layer_stats_json(stats: &[LayerStats], window: usize) -> Value {
    json!({
        "window": window,
        "layers": stats.iter().map(|s| json!({
            "layer": s.layer,
            "entropy": json_num(s.entropy),
            "locality_mass": json_num(s.locality_mass),
            "top1_mass": json_num(s.top1_mass),
            "sink_mass": json_num(s.sink_mass),
        })).collect::<Vec<_>>(),
    })
}

/// One row per decode step: `step,max_logit_diff,argmax_agree`.
pub fn run_report_csv(report: &RunReport) -> String {
    let mut out = String::from("step,max_logit_diff,argmax_agree\n");
    for s in &report.steps {
        out.push_str(&format!(
            "{},{},{}\n",
            s.step,
            fmt_sig6(s.max_abs_logit_diff),
            s.argmax_agrees
        ));
    }
    out
}

pub fn run_report_json(report: &RunReport) -> Value {
    json!({
        "policy": report.policy,
        "seq_len": report.seq_len,
        "decode_steps": report.decode_steps,
        "schedule": {
            "mode": report.schedule.mode,
            "alpha": report.schedule.alpha,
            "beta": json_num(report.schedule.beta),
            "sum": report.schedule.sum,
            "mean": json_num(report.schedule.mean),
        },
        "memory": {
            "retained_bytes": report.memory.retained_bytes,
            "full_bytes": report.memory.full_bytes,
            "compression_ratio": json_num(report.memory.ratio),
        },
        "retained_mass": report.retained_mass.iter().copied().map(json_num).collect::<Vec<_>>(),
        "summary": {
            "max_logit_diff": json_num(report.max_logit_diff()),
            "mean_logit_diff": json_num(report.mean_logit_diff()),
            "agreement_rate": json_num(report.agreement_rate()),
            "mean_retained_mass": json_num(report.mean_retained_mass()),
        },
        "steps": report.steps.iter().map(|s| json!({
            "step": s.step,
            "max_logit_diff": json_num(s.max_abs_logit_diff),
            "argmax_agree": s.argmax_agrees,
        })).collect::<Vec<_>>(),
    })
}
