//! Subcommand implementations.
//!
//! Every command is a pure function of the spec file: seeds live in the
//! spec, rows are emitted in grid-enumeration order regardless of worker
//! count, and floats go through the fixed six-significant-digit formatter.
//! Equal specs therefore produce byte-identical outputs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use kvfunnel_core::report::{fmt_sig6, layer_stats_csv, layer_stats_json, run_report_csv, run_report_json, schedule_csv};
use kvfunnel_core::{
    allocate_pyramid, allocate_uniform, compare_vs_full, layer_stats, prefill, schedule_for,
    PolicyConfig, PolicyKind, RunReport,
};

use crate::dump;
use crate::spec::{RunSpec, SpecError};

/// Command failure, split by exit code: usage/spec errors exit 1, runtime
/// failures exit 2.
#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(msg) | Self::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<SpecError> for CmdError {
    fn from(err: SpecError) -> Self {
        Self::Usage(err.to_string())
    }
}

fn runtime(err: impl fmt::Display) -> CmdError {
    CmdError::Runtime(err.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

pub struct Context {
    pub spec: RunSpec,
    pub out_dir: Option<PathBuf>,
    pub workers: usize,
    pub format: OutputFormat,
}

impl Context {
    fn out_path(&self, stem: &str, ext: &str) -> PathBuf {
        let dir = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        dir.join(format!("{stem}.{ext}"))
    }

    fn write_output(&self, stem: &str, ext: &str, contents: &str) -> Result<PathBuf, CmdError> {
        let path = self.out_path(stem, ext);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
        fs::write(&path, contents).map_err(runtime)?;
        Ok(path)
    }

    /// Run a grid of independent cells on a worker pool, preserving
    /// enumeration order in the output.
    fn run_cells<C, R>(&self, cells: Vec<C>, f: impl Fn(&C) -> Result<R, String> + Sync) -> Vec<(C, Result<R, String>)>
    where
        C: Send + Sync,
        R: Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .expect("worker pool");
        pool.install(|| {
            cells
                .into_par_iter()
                .map(|cell| {
                    let result = f(&cell);
                    (cell, result)
                })
                .collect()
        })
    }
}

/// Schedule inspection: `layer,budget` rows plus a summary line.
pub fn cmd_allocate(ctx: &Context) -> Result<(), CmdError> {
    let spec = &ctx.spec;
    let schedule = match spec.policy.kind {
        PolicyKind::Pyramid => allocate_pyramid(
            spec.model.layers,
            spec.schedule.average_budget,
            spec.schedule.alpha,
            spec.schedule.beta.expect("validated at parse"),
            spec.schedule.renormalize,
        ),
        _ => allocate_uniform(
            spec.model.layers,
            spec.schedule.average_budget,
            spec.schedule.alpha,
        ),
    }
    .map_err(|e| CmdError::Usage(e.to_string()))?;

    let csv = schedule_csv(&schedule);
    print!("{csv}");
    if ctx.out_dir.is_some() {
        ctx.write_output("allocate", "csv", &csv)?;
    }
    Ok(())
}

fn single_report(spec: &RunSpec, kind: PolicyKind, budget: usize, seed: u64) -> Result<RunReport, String> {
    let mut model = spec.model.clone();
    model.seed = seed;
    let spec_for_cell = RunSpec {
        model,
        ..spec.clone()
    };
    let weights = spec_for_cell.weights().map_err(|e| e.to_string())?;
    let tokens = spec_for_cell.resolve_tokens().map_err(|e| e.to_string())?;
    let policy = spec_for_cell.policy_config(kind);
    let schedule = schedule_for(
        kind,
        spec.model.layers,
        budget,
        tokens.len(),
        &policy,
        spec.schedule.renormalize,
    )
    .map_err(|e| e.to_string())?;
    compare_vs_full(
        &weights,
        &tokens,
        &policy,
        &schedule,
        spec.run.decode_steps,
        spec.run.free_running,
    )
    .map_err(|e| e.to_string())
}

/// Single policy run; emits the full per-step report.
pub fn cmd_run(ctx: &Context) -> Result<(), CmdError> {
    let spec = &ctx.spec;
    let report = single_report(
        spec,
        spec.policy.kind,
        spec.schedule.average_budget,
        spec.model.seed,
    )
    .map_err(CmdError::Runtime)?;

    let path = match ctx.format {
        OutputFormat::Csv => ctx.write_output("run", "csv", &run_report_csv(&report))?,
        OutputFormat::Json => {
            let text = format!("{:#}\n", run_report_json(&report));
            ctx.write_output("run", "json", &text)?
        }
    };
    println!(
        "run: policy={} n={} steps={} max_logit_diff={} agreement={} ratio={} -> {}",
        report.policy,
        report.seq_len,
        report.decode_steps,
        fmt_sig6(report.max_logit_diff()),
        fmt_sig6(report.agreement_rate()),
        fmt_sig6(report.memory.ratio),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct BenchCell {
    policy: PolicyKind,
    budget: usize,
    seed: u64,
}

fn bench_row_csv(cell: &BenchCell, report: &RunReport) -> String {
    let beta = if cell.policy == PolicyKind::Pyramid {
        report.schedule.beta.to_string()
    } else {
        String::new()
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        cell.policy.as_str(),
        cell.budget,
        cell.seed,
        report.seq_len,
        report.schedule.alpha,
        beta,
        report.decode_steps,
        fmt_sig6(report.max_logit_diff()),
        fmt_sig6(report.mean_logit_diff()),
        fmt_sig6(report.agreement_rate()),
        fmt_sig6(report.mean_retained_mass()),
        report.memory.retained_bytes,
        report.memory.full_bytes,
        fmt_sig6(report.memory.ratio)
    )
}

fn bench_row_json(cell: &BenchCell, report: &RunReport) -> Value {
    json!({
        "policy": cell.policy.as_str(),
        "budget": cell.budget,
        "seed": cell.seed,
        "report": run_report_json(report),
    })
}

const BENCH_HEADER: &str = "policy,budget,seed,n,alpha,beta,decode_steps,max_logit_diff,\
mean_logit_diff,agreement_rate,mean_retained_mass,retained_bytes,full_bytes,compression_ratio\n";

/// Policy x budget x seed grid; one row per cell.
pub fn cmd_bench(ctx: &Context) -> Result<(), CmdError> {
    let spec = &ctx.spec;
    if spec.sweep.policies.contains(&PolicyKind::Pyramid) && spec.schedule.beta.is_none() {
        return Err(CmdError::Usage(
            "invalid spec field `schedule.beta`: benchmarking the pyramid policy requires schedule.beta".to_string(),
        ));
    }

    let mut cells = Vec::new();
    for &policy in &spec.sweep.policies {
        for &budget in &spec.sweep.budgets {
            for &seed in &spec.sweep.seeds {
                cells.push(BenchCell { policy, budget, seed });
            }
        }
    }
    let total = cells.len();

    let results = ctx.run_cells(cells, |cell| {
        single_report(spec, cell.policy, cell.budget, cell.seed)
    });

    let mut csv = String::from(BENCH_HEADER);
    let mut rows_json = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in &results {
        match result {
            Ok(report) => {
                csv.push_str(&bench_row_csv(cell, report));
                rows_json.push(bench_row_json(cell, report));
            }
            Err(message) => failures.push((cell.clone(), message.clone())),
        }
    }

    let path = match ctx.format {
        OutputFormat::Csv => ctx.write_output("bench", "csv", &csv)?,
        OutputFormat::Json => {
            ctx.write_output("bench", "json", &format!("{:#}\n", Value::Array(rows_json)))?
        }
    };

    if failures.is_empty() {
        println!("bench: {total} cells -> {}", path.display());
        Ok(())
    } else {
        let mut manifest = String::from("policy,budget,seed,error\n");
        for (cell, message) in &failures {
            manifest.push_str(&format!(
                "{},{},{},{}\n",
                cell.policy.as_str(),
                cell.budget,
                cell.seed,
                message.replace(',', ";")
            ));
        }
        let manifest_path = ctx.write_output("bench_failures", "csv", &manifest)?;
        Err(CmdError::Runtime(format!(
            "bench: {} of {total} cells failed; partial results at {}, failures at {}",
            failures.len(),
            path.display(),
            manifest_path.display()
        )))
    }
}

/// Prefill the prompt and emit per-layer attention statistics.
pub fn cmd_analyze(ctx: &Context) -> Result<(), CmdError> {
    let spec = &ctx.spec;
    let weights = spec.weights()?;
    let tokens = spec.resolve_tokens()?;
    let (trace, _) = prefill(&weights, &tokens).map_err(runtime)?;
    let stats = layer_stats(&trace, spec.run.stats_window);

    let path = match ctx.format {
        OutputFormat::Csv => ctx.write_output("layer_stats", "csv", &layer_stats_csv(&stats))?,
        OutputFormat::Json => {
            let text = format!("{:#}\n", layer_stats_json(&stats, spec.run.stats_window));
            ctx.write_output("layer_stats", "json", &text)?
        }
    };

    if spec.run.dump_attention {
        let dump_path = ctx.out_path("attention", "bin");
        let file = fs::File::create(&dump_path).map_err(runtime)?;
        dump::write_attention(std::io::BufWriter::new(file), &trace).map_err(runtime)?;
        println!(
            "analyze: n={} layers={} -> {}, raw maps -> {}",
            trace.seq_len(),
            trace.num_layers(),
            path.display(),
            dump_path.display()
        );
    } else {
        println!(
            "analyze: n={} layers={} -> {}",
            trace.seq_len(),
            trace.num_layers(),
            path.display()
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct SweepCell {
    budget: usize,
    beta: f64,
    alpha: usize,
    seed: u64,
}

const SWEEP_HEADER: &str = "budget,beta,alpha,seed,n,decode_steps,max_logit_diff,\
mean_logit_diff,agreement_rate,mean_retained_mass,retained_bytes,full_bytes,compression_ratio\n";

/// Pyramid shape exploration: budget x beta x alpha x seed grid.
pub fn cmd_sweep(ctx: &Context) -> Result<(), CmdError> {
    let spec = &ctx.spec;
    let mut cells = Vec::new();
    for &budget in &spec.sweep.budgets {
        for &beta in &spec.sweep.betas {
            for &alpha in &spec.sweep.alphas {
                for &seed in &spec.sweep.seeds {
                    cells.push(SweepCell { budget, beta, alpha, seed });
                }
            }
        }
    }
    let total = cells.len();

    let results = ctx.run_cells(cells, |cell| {
        let mut model = spec.model.clone();
        model.seed = cell.seed;
        let cell_spec = RunSpec {
            model,
            ..spec.clone()
        };
        let weights = cell_spec.weights().map_err(|e| e.to_string())?;
        let tokens = cell_spec.resolve_tokens().map_err(|e| e.to_string())?;
        let policy = PolicyConfig {
            alpha: cell.alpha,
            beta: cell.beta,
            ..cell_spec.policy_config(PolicyKind::Pyramid)
        };
        let schedule = allocate_pyramid(
            spec.model.layers,
            cell.budget,
            cell.alpha,
            cell.beta,
            spec.schedule.renormalize,
        )
        .map_err(|e| e.to_string())?;
        compare_vs_full(
            &weights,
            &tokens,
            &policy,
            &schedule,
            spec.run.decode_steps,
            spec.run.free_running,
        )
        .map_err(|e| e.to_string())
    });

    let mut csv = String::from(SWEEP_HEADER);
    let mut rows_json = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in &results {
        match result {
            Ok(report) => {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    cell.budget,
                    cell.beta,
                    cell.alpha,
                    cell.seed,
                    report.seq_len,
                    report.decode_steps,
                    fmt_sig6(report.max_logit_diff()),
                    fmt_sig6(report.mean_logit_diff()),
                    fmt_sig6(report.agreement_rate()),
                    fmt_sig6(report.mean_retained_mass()),
                    report.memory.retained_bytes,
                    report.memory.full_bytes,
                    fmt_sig6(report.memory.ratio)
                ));
                rows_json.push(json!({
                    "budget": cell.budget,
                    "beta": cell.beta,
                    "alpha": cell.alpha,
                    "seed": cell.seed,
                    "report": run_report_json(report),
                }));
            }
            Err(message) => failures.push((cell.clone(), message.clone())),
        }
    }

    let path = match ctx.format {
        OutputFormat::Csv => ctx.write_output("sweep", "csv", &csv)?,
        OutputFormat::Json => {
            ctx.write_output("sweep", "json", &format!("{:#}\n", Value::Array(rows_json)))?
        }
    };

    if failures.is_empty() {
        println!("sweep: {total} cells -> {}", path.display());
        Ok(())
    } else {
        let mut manifest = String::from("budget,beta,alpha,seed,error\n");
        for (cell, message) in &failures {
            manifest.push_str(&format!(
                "{},{},{},{},{}\n",
                cell.budget,
                cell.beta,
                cell.alpha,
                cell.seed,
                message.replace(',', ";")
            ));
        }
        let manifest_path = ctx.write_output("sweep_failures", "csv", &manifest)?;
        Err(CmdError::Runtime(format!(
            "sweep: {} of {total} cells failed; partial results at {}, failures at {}",
            failures.len(),
            path.display(),
            manifest_path.display()
        )))
    }
}

/// Resolve a spec path, apply the `KVFUNNEL_SEED` override, and validate.
pub fn load_spec(path: Option<&Path>) -> Result<RunSpec, CmdError> {
    let path = path.ok_or_else(|| CmdError::Usage("missing required --spec PATH".to_string()))?;
    let mut spec = RunSpec::load(path)?;
    if let Ok(value) = std::env::var("KVFUNNEL_SEED") {
        let seed: u64 = value.parse().map_err(|_| {
            CmdError::Usage(format!("KVFUNNEL_SEED must be a u64, got `{value}`"))
        })?;
        spec.model.seed = seed;
        spec.sweep.seeds = vec![seed];
    }
    Ok(spec)
}
