//! Run specification files.
//!
//! A spec is a line-oriented `key = value` file with `[section]` headers,
//! blank lines and `#` comments. Unknown sections, unknown keys, duplicate
//! keys and malformed values are all hard errors carrying the offending
//! line number; missing required fields and cross-field violations are
//! validation errors naming the field. See docs/FORMATS.md for the full
//! key reference.

use std::fmt;
use std::fs;
use std::path::Path;

use kvfunnel_core::{
    random_tokens, generate_weights, model::io::load_weights, ModelConfig, ModelWeights,
    PolicyConfig, PolicyKind, PoolMode, TieBreak,
};

/// Default sweep grids.
pub const DEFAULT_BUDGETS: [usize; 6] = [64, 128, 256, 512, 1024, 2048];
pub const DEFAULT_BETAS: [f64; 4] = [14.0, 16.0, 18.0, 20.0];

#[derive(Debug)]
pub enum SpecError {
    Io(std::io::Error),
    Parse { line: usize, message: String },
    Validation { field: String, message: String },
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(err) => write!(f, "cannot read spec: {err}"),
            Self::Parse { line, message } => write!(f, "spec line {line}: {message}"),
            Self::Validation { field, message } => {
                write!(f, "invalid spec field `{field}`: {message}")
            }
        }
    }
}

impl std::error::Error for SpecError {}

impl From<std::io::Error> for SpecError {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err)
    }
}

fn validation(field: &str, message: impl Into<String>) -> SpecError {
    SpecError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub vocab: usize,
    pub seed: u64,
    pub max_context: usize,
    pub weights_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenSource {
    Random { seed: u64, length: usize },
    File { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySection {
    pub kind: PolicyKind,
    pub pool_kernel: usize,
    pub pool_mode: PoolMode,
    pub group_heads: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    pub average_budget: usize,
    pub alpha: usize,
    pub beta: Option<f64>,
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub decode_steps: usize,
    pub free_running: bool,
    pub stats_window: usize,
    pub dump_attention: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub budgets: Vec<usize>,
    pub betas: Vec<f64>,
    pub alphas: Vec<usize>,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyKind>,
}

/// A fully validated run specification.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: ModelSection,
    pub tokens: TokenSource,
    pub policy: PolicySection,
    pub schedule: ScheduleSection,
    pub run: RunSection,
    pub sweep: SweepSection,
}

#[derive(Default)]
struct Builder {
    layers: Option<usize>,
    heads: Option<usize>,
    head_dim: Option<usize>,
    vocab: Option<usize>,
    model_seed: Option<u64>,
    max_context: Option<usize>,
    weights_file: Option<String>,

    source: Option<String>,
    token_length: Option<usize>,
    token_seed: Option<u64>,
    token_path: Option<String>,

    kind: Option<PolicyKind>,
    pool_kernel: Option<usize>,
    pool_mode: Option<PoolMode>,
    group_heads: Option<bool>,

    average_budget: Option<usize>,
    alpha: Option<usize>,
    beta: Option<f64>,
    renormalize: Option<bool>,

    decode_steps: Option<usize>,
    free_running: Option<bool>,
    stats_window: Option<usize>,
    dump_attention: Option<bool>,

    budgets: Option<Vec<usize>>,
    betas: Option<Vec<f64>>,
    alphas: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    policies: Option<Vec<PolicyKind>>,
}

fn parse_scalar<T: std::str::FromStr>(value: &str, line: usize, what: &str) -> Result<T, SpecError> {
    value.parse().map_err(|_| SpecError::Parse {
        line,
        message: format!("cannot parse `{value}` as {what}"),
    })
}

fn parse_bool(value: &str, line: usize) -> Result<bool, SpecError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(SpecError::Parse {
            line,
            message: format!("cannot parse `{value}` as bool (use true/false)"),
        }),
    }
}

fn parse_list<T: std::str::FromStr>(
    value: &str,
    line: usize,
    what: &str,
) -> Result<Vec<T>, SpecError> {
    let items: Result<Vec<T>, _> = value
        .split(',')
        .map(|s| s.trim().parse::<T>())
        .collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(SpecError::Parse {
            line,
            message: format!("cannot parse `{value}` as a comma-separated list of {what}"),
        }),
    }
}

fn parse_kind(value: &str, line: usize) -> Result<PolicyKind, SpecError> {
    PolicyKind::parse(value).ok_or_else(|| SpecError::Parse {
        line,
        message: format!("unknown policy kind `{value}` (full|streaming|h2o|snapkv|pyramid)"),
    })
}

fn parse_pool_mode(value: &str, line: usize) -> Result<PoolMode, SpecError> {
    match value {
        "avg" => Ok(PoolMode::Avg),
        "max" => Ok(PoolMode::Max),
        _ => Err(SpecError::Parse {
            line,
            message: format!("unknown pool mode `{value}` (avg|max)"),
        }),
    }
}

/// Reject a second assignment of the same key.
fn put<T>(slot: &mut Option<T>, value: T, line: usize, key: &str) -> Result<(), SpecError> {
    if slot.is_some() {
        return Err(SpecError::Parse {
            line,
            message: format!("duplicate key `{key}`"),
        });
    }
    *slot = Some(value);
    Ok(())
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<Self, SpecError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut b = Builder::default();
        let mut section: Option<String> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| SpecError::Parse {
                    line,
                    message: "unterminated section header".to_string(),
                })?;
                if !matches!(name, "model" | "tokens" | "policy" | "schedule" | "run" | "sweep") {
                    return Err(SpecError::Parse {
                        line,
                        message: format!("unknown section `[{name}]`"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| SpecError::Parse {
                line,
                message: "expected `key = value`".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let section = section.as_deref().ok_or_else(|| SpecError::Parse {
                line,
                message: format!("key `{key}` appears before any [section]"),
            })?;

            match (section, key) {
                ("model", "layers") => put(&mut b.layers, parse_scalar(value, line, "count")?, line, key)?,
                ("model", "heads") => put(&mut b.heads, parse_scalar(value, line, "count")?, line, key)?,
                ("model", "head_dim") => put(&mut b.head_dim, parse_scalar(value, line, "count")?, line, key)?,
                ("model", "vocab") => put(&mut b.vocab, parse_scalar(value, line, "count")?, line, key)?,
                ("model", "seed") => put(&mut b.model_seed, parse_scalar(value, line, "u64")?, line, key)?,
                ("model", "max_context") => put(&mut b.max_context, parse_scalar(value, line, "count")?, line, key)?,
                ("model", "weights_file") => put(&mut b.weights_file, value.to_string(), line, key)?,

                ("tokens", "source") => put(&mut b.source, value.to_string(), line, key)?,
                ("tokens", "length") => put(&mut b.token_length, parse_scalar(value, line, "count")?, line, key)?,
                ("tokens", "seed") => put(&mut b.token_seed, parse_scalar(value, line, "u64")?, line, key)?,
                ("tokens", "path") => put(&mut b.token_path, value.to_string(), line, key)?,

                ("policy", "kind") => put(&mut b.kind, parse_kind(value, line)?, line, key)?,
                ("policy", "pool_kernel") => put(&mut b.pool_kernel, parse_scalar(value, line, "count")?, line, key)?,
                ("policy", "pool_mode") => put(&mut b.pool_mode, parse_pool_mode(value, line)?, line, key)?,
                ("policy", "group_heads") => put(&mut b.group_heads, parse_bool(value, line)?, line, key)?,

                ("schedule", "average_budget") => put(&mut b.average_budget, parse_scalar(value, line, "count")?, line, key)?,
                ("schedule", "alpha") => put(&mut b.alpha, parse_scalar(value, line, "count")?, line, key)?,
                ("schedule", "beta") => put(&mut b.beta, parse_scalar(value, line, "real")?, line, key)?,
                ("schedule", "renormalize") => put(&mut b.renormalize, parse_bool(value, line)?, line, key)?,

                ("run", "decode_steps") => put(&mut b.decode_steps, parse_scalar(value, line, "count")?, line, key)?,
                ("run", "free_running") => put(&mut b.free_running, parse_bool(value, line)?, line, key)?,
                ("run", "stats_window") => put(&mut b.stats_window, parse_scalar(value, line, "count")?, line, key)?,
                ("run", "dump_attention") => put(&mut b.dump_attention, parse_bool(value, line)?, line, key)?,

                ("sweep", "budgets") => put(&mut b.budgets, parse_list(value, line, "counts")?, line, key)?,
                ("sweep", "betas") => put(&mut b.betas, parse_list(value, line, "reals")?, line, key)?,
                ("sweep", "alphas") => put(&mut b.alphas, parse_list(value, line, "counts")?, line, key)?,
                ("sweep", "seeds") => put(&mut b.seeds, parse_list(value, line, "u64s")?, line, key)?,
                ("sweep", "policies") => {
                    let kinds: Result<Vec<PolicyKind>, SpecError> = value
                        .split(',')
                        .map(|s| parse_kind(s.trim(), line))
                        .collect();
                    put(&mut b.policies, kinds?, line, key)?
                }

                _ => {
                    return Err(SpecError::Parse {
                        line,
                        message: format!("unknown key `{key}` in section [{section}]"),
                    })
                }
            }
        }

        b.finish()
    }

    /// Canonical serialization; `parse(to_text(spec)) == spec`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[model]\n");
        out.push_str(&format!("layers = {}\n", self.model.layers));
        out.push_str(&format!("heads = {}\n", self.model.heads));
        out.push_str(&format!("head_dim = {}\n", self.model.head_dim));
        out.push_str(&format!("vocab = {}\n", self.model.vocab));
        out.push_str(&format!("seed = {}\n", self.model.seed));
        out.push_str(&format!("max_context = {}\n", self.model.max_context));
        if let Some(path) = &self.model.weights_file {
            out.push_str(&format!("weights_file = {path}\n"));
        }

        out.push_str("\n[tokens]\n");
        match &self.tokens {
            TokenSource::Random { seed, length } => {
                out.push_str("source = random\n");
                out.push_str(&format!("length = {length}\n"));
                out.push_str(&format!("seed = {seed}\n"));
            }
            TokenSource::File { path } => {
                out.push_str("source = file\n");
                out.push_str(&format!("path = {path}\n"));
            }
        }

        out.push_str("\n[policy]\n");
        out.push_str(&format!("kind = {}\n", self.policy.kind.as_str()));
        out.push_str(&format!("pool_kernel = {}\n", self.policy.pool_kernel));
        out.push_str(&format!("pool_mode = {}\n", self.policy.pool_mode.as_str()));
        out.push_str(&format!("group_heads = {}\n", self.policy.group_heads));

        out.push_str("\n[schedule]\n");
        out.push_str(&format!("average_budget = {}\n", self.schedule.average_budget));
        out.push_str(&format!("alpha = {}\n", self.schedule.alpha));
        if let Some(beta) = self.schedule.beta {
            out.push_str(&format!("beta = {beta}\n"));
        }
        out.push_str(&format!("renormalize = {}\n", self.schedule.renormalize));

        out.push_str("\n[run]\n");
        out.push_str(&format!("decode_steps = {}\n", self.run.decode_steps));
        out.push_str(&format!("free_running = {}\n", self.run.free_running));
        out.push_str(&format!("stats_window = {}\n", self.run.stats_window));
        out.push_str(&format!("dump_attention = {}\n", self.run.dump_attention));

        out.push_str("\n[sweep]\n");
        let join = |items: Vec<String>| items.join(",");
        out.push_str(&format!(
            "budgets = {}\n",
            join(self.sweep.budgets.iter().map(ToString::to_string).collect())
        ));
        out.push_str(&format!(
            "betas = {}\n",
            join(self.sweep.betas.iter().map(ToString::to_string).collect())
        ));
        out.push_str(&format!(
            "alphas = {}\n",
            join(self.sweep.alphas.iter().map(ToString::to_string).collect())
        ));
        out.push_str(&format!(
            "seeds = {}\n",
            join(self.sweep.seeds.iter().map(ToString::to_string).collect())
        ));
        out.push_str(&format!(
            "policies = {}\n",
            join(self.sweep.policies.iter().map(|p| p.as_str().to_string()).collect())
        ));
        out
    }

    /// Validated model configuration.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(
            self.model.layers,
            self.model.heads,
            self.model.head_dim,
            self.model.vocab,
            self.model.seed,
        )
        .expect("validated at parse")
        .with_max_context(self.model.max_context)
    }

    /// Policy configuration as spec'd, with `kind` overridable for grids.
    pub fn policy_config(&self, kind: PolicyKind) -> PolicyConfig {
        PolicyConfig {
            kind,
            alpha: self.schedule.alpha,
            beta: self.schedule.beta.unwrap_or(20.0),
            pool_kernel: self.policy.pool_kernel,
            pool_mode: self.policy.pool_mode,
            tie_break: TieBreak::PreferRecent,
            group_heads: self.policy.group_heads,
        }
    }

    /// Model weights: generated from the seed, or loaded from
    /// `model.weights_file` (which must agree with the spec'd dimensions).
    pub fn weights(&self) -> Result<ModelWeights, SpecError> {
        let config = self.model_config();
        match &self.model.weights_file {
            None => generate_weights(&config)
                .map_err(|e| validation("model", e.to_string())),
            Some(path) => {
                let weights = load_weights(path)
                    .map_err(|e| validation("model.weights_file", e.to_string()))?;
                let mut stored = *weights.config();
                stored.seed = config.seed;
                if stored != config {
                    return Err(validation(
                        "model.weights_file",
                        format!("stored dimensions {stored:?} do not match the [model] section"),
                    ));
                }
                Ok(weights)
            }
        }
    }

    /// The token stream this spec runs on.
    pub fn resolve_tokens(&self) -> Result<Vec<u32>, SpecError> {
        match &self.tokens {
            TokenSource::Random { seed, length } => {
                Ok(random_tokens(*seed, *length, self.model.vocab))
            }
            TokenSource::File { path } => {
                let text = fs::read_to_string(path)?;
                let ids: Result<Vec<u32>, _> =
                    text.split_whitespace().map(str::parse::<u32>).collect();
                let ids = ids.map_err(|e| validation("tokens.path", format!("bad token id: {e}")))?;
                if ids.is_empty() {
                    return Err(validation("tokens.path", "token file is empty"));
                }
                if ids.len() > self.model.max_context {
                    return Err(validation(
                        "tokens.path",
                        format!(
                            "{} tokens exceed max_context {}",
                            ids.len(),
                            self.model.max_context
                        ),
                    ));
                }
                if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.model.vocab) {
                    return Err(validation(
                        "tokens.path",
                        format!("token id {bad} exceeds vocab {}", self.model.vocab),
                    ));
                }
                Ok(ids)
            }
        }
    }
}

impl Builder {
    fn finish(self) -> Result<RunSpec, SpecError> {
        fn require<T>(slot: Option<T>, field: &str) -> Result<T, SpecError> {
            slot.ok_or_else(|| validation(field, "required field is missing"))
        }

        let model = ModelSection {
            layers: require(self.layers, "model.layers")?,
            heads: require(self.heads, "model.heads")?,
            head_dim: require(self.head_dim, "model.head_dim")?,
            vocab: require(self.vocab, "model.vocab")?,
            seed: require(self.model_seed, "model.seed")?,
            max_context: self.max_context.unwrap_or(kvfunnel_core::DEFAULT_MAX_CONTEXT),
            weights_file: self.weights_file,
        };
        ModelConfig::new(model.layers, model.heads, model.head_dim, model.vocab, model.seed)
            .map_err(|e| validation("model", e.to_string()))?;
        if model.max_context == 0 {
            return Err(validation("model.max_context", "must be at least 1"));
        }

        let tokens = match require(self.source, "tokens.source")?.as_str() {
            "random" => {
                let length = require(self.token_length, "tokens.length")?;
                if self.token_path.is_some() {
                    return Err(validation("tokens.path", "not allowed with source = random"));
                }
                if length == 0 {
                    return Err(validation("tokens.length", "must be at least 1"));
                }
                if length > model.max_context {
                    return Err(validation(
                        "tokens.length",
                        format!("{length} exceeds max_context {}", model.max_context),
                    ));
                }
                TokenSource::Random {
                    seed: require(self.token_seed, "tokens.seed")?,
                    length,
                }
            }
            "file" => {
                if self.token_length.is_some() || self.token_seed.is_some() {
                    return Err(validation(
                        "tokens.source",
                        "length/seed are not allowed with source = file",
                    ));
                }
                TokenSource::File {
                    path: require(self.token_path, "tokens.path")?,
                }
            }
            other => {
                return Err(validation(
                    "tokens.source",
                    format!("unknown source `{other}` (random|file)"),
                ))
            }
        };

        let policy = PolicySection {
            kind: require(self.kind, "policy.kind")?,
            pool_kernel: self.pool_kernel.unwrap_or(7),
            pool_mode: self.pool_mode.unwrap_or(PoolMode::Avg),
            group_heads: self.group_heads.unwrap_or(false),
        };
        if policy.pool_kernel == 0 || policy.pool_kernel.is_multiple_of(2) {
            return Err(validation(
                "policy.pool_kernel",
                format!("must be odd and nonzero, got {}", policy.pool_kernel),
            ));
        }

        let schedule = ScheduleSection {
            average_budget: require(self.average_budget, "schedule.average_budget")?,
            alpha: self.alpha.unwrap_or(8),
            beta: self.beta,
            renormalize: self.renormalize.unwrap_or(true),
        };
        if schedule.alpha == 0 {
            return Err(validation("schedule.alpha", "must be at least 1"));
        }
        if schedule.alpha >= schedule.average_budget {
            return Err(validation(
                "schedule.alpha",
                format!(
                    "alpha {} must be below average_budget {}",
                    schedule.alpha, schedule.average_budget
                ),
            ));
        }
        if schedule.average_budget > model.max_context {
            return Err(validation(
                "schedule.average_budget",
                format!(
                    "{} exceeds max_context {}",
                    schedule.average_budget, model.max_context
                ),
            ));
        }
        if policy.kind == PolicyKind::Pyramid && schedule.beta.is_none() {
            return Err(validation(
                "schedule.beta",
                "policy.kind = pyramid requires schedule.beta",
            ));
        }
        if let Some(beta) = schedule.beta {
            if !beta.is_finite() || beta < 1.0 {
                return Err(validation("schedule.beta", format!("must be >= 1, got {beta}")));
            }
        }

        let run = RunSection {
            decode_steps: self.decode_steps.unwrap_or(20),
            free_running: self.free_running.unwrap_or(false),
            stats_window: self.stats_window.unwrap_or(4),
            dump_attention: self.dump_attention.unwrap_or(false),
        };
        if run.decode_steps == 0 {
            return Err(validation("run.decode_steps", "must be at least 1"));
        }

        let sweep = SweepSection {
            budgets: self.budgets.unwrap_or_else(|| DEFAULT_BUDGETS.to_vec()),
            betas: self.betas.unwrap_or_else(|| DEFAULT_BETAS.to_vec()),
            alphas: self.alphas.unwrap_or_else(|| vec![schedule.alpha]),
            seeds: self.seeds.unwrap_or_else(|| vec![model.seed]),
            policies: self.policies.unwrap_or_else(|| PolicyKind::ALL.to_vec()),
        };
        let max_alpha = *sweep.alphas.iter().max().expect("nonempty");
        let min_budget = *sweep.budgets.iter().min().expect("nonempty");
        if sweep.alphas.contains(&0) {
            return Err(validation("sweep.alphas", "alphas must be at least 1"));
        }
        if max_alpha >= min_budget {
            return Err(validation(
                "sweep.budgets",
                format!("smallest budget {min_budget} must exceed largest alpha {max_alpha}"),
            ));
        }
        if let Some(&too_big) = sweep.budgets.iter().find(|&&b| b > model.max_context) {
            return Err(validation(
                "sweep.budgets",
                format!("budget {too_big} exceeds max_context {}", model.max_context),
            ));
        }
        if let Some(&bad) = sweep
            .betas
            .iter()
            .find(|b| !b.is_finite() || **b < 1.0)
        {
            return Err(validation("sweep.betas", format!("must be >= 1, got {bad}")));
        }

        Ok(RunSpec {
            model,
            tokens,
            policy,
            schedule,
            run,
            sweep,
        })
    }
}
