//! Deterministic attention-only transformer used as the policy substrate.
//!
//! The model is multi-head causal attention with residual connections and
//! rotary position encoding, no MLP or normalization layers: cache policies
//! only ever read attention maps and K/V rows, so the attention path is the
//! whole surface that matters. Weights are a pure function of
//! `(ModelConfig, seed)` via the SplitMix64 stream in [`crate::rng`].
//!
//! Prefill and decode share the same scoring, softmax and accumulation
//! kernels and iterate keys in ascending position order, so decoding with an
//! uncompressed cache reproduces the prefill logits bit for bit.

pub mod io;

use crate::cache::CompressedKv;
use crate::error::{Error, Result};
use crate::exec;
use crate::math::{dot, softmax_in_place, Matrix};
use crate::rng::SplitMix64;

/// Rotary position encoding base.
const ROPE_BASE: f64 = 10_000.0;

/// Default prefill context limit.
pub const DEFAULT_MAX_CONTEXT: usize = 4096;

/// Transformer dimensions plus the weight seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub max_context: usize,
}

impl ModelConfig {
    /// `model_dim` is derived as `num_heads * head_dim`.
    pub fn new(
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
        vocab_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let config = Self {
            num_layers,
            num_heads,
            head_dim,
            model_dim: num_heads * head_dim,
            vocab_size,
            seed,
            max_context: DEFAULT_MAX_CONTEXT,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_max_context(mut self, max_context: usize) -> Self {
        self.max_context = max_context;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::parameter(
                "num_layers",
                format!("need at least 2 layers, got {}", self.num_layers),
            ));
        }
        for (name, value) in [
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
        ] {
            if value == 0 {
                return Err(Error::parameter(name, "must be at least 1".to_string()));
            }
        }
        if self.model_dim != self.num_heads * self.head_dim {
            return Err(Error::parameter(
                "model_dim",
                format!(
                    "{} does not equal num_heads * head_dim = {}",
                    self.model_dim,
                    self.num_heads * self.head_dim
                ),
            ));
        }
        Ok(())
    }
}

/// Projection matrices for one attention layer, each `model_dim x model_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

/// Full parameter set, generated or loaded from a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    embedding: Matrix,
    layers: Vec<LayerWeights>,
    unembedding: Matrix,
}

impl ModelWeights {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn unembedding(&self) -> &Matrix {
        &self.unembedding
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        embedding: Matrix,
        layers: Vec<LayerWeights>,
        unembedding: Matrix,
    ) -> Self {
        Self {
            config,
            embedding,
            layers,
            unembedding,
        }
    }
}

/// Generate weights from the config's seed.
///
/// One SplitMix64 stream seeded with `config.seed` fills, in order: the
/// embedding (vocab x d), then per layer Wq, Wk, Wv, Wo (d x d each), then
/// the unembedding (d x vocab). Each value is uniform in [-1, 1) divided by
/// sqrt(d). Identical config and seed give identical bytes.
pub fn generate_weights(config: &ModelConfig) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let d = config.model_dim;
    let inv_sqrt_d = 1.0 / (d as f32).sqrt();
    let mut fill = |rows: usize, cols: usize| {
        let data = (0..rows * cols)
            .map(|_| rng.next_symmetric_f32() * inv_sqrt_d)
            .collect();
        Matrix::from_vec(rows, cols, data).expect("sized by construction")
    };

    let embedding = fill(config.vocab_size, d);
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            wq: fill(d, d),
            wk: fill(d, d),
            wv: fill(d, d),
            wo: fill(d, d),
        })
        .collect();
    let unembedding = fill(d, config.vocab_size);

    Ok(ModelWeights {
        config: *config,
        embedding,
        layers,
        unembedding,
    })
}

/// Deterministic token stream for synthetic prompts.
pub fn random_tokens(seed: u64, len: usize, vocab_size: usize) -> Vec<u32> {
    let mut rng = SplitMix64::new(seed);
    (0..len).map(|_| rng.next_below(vocab_size) as u32).collect()
}

/// Index of the largest value, first occurrence on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Full key/value projections for one layer, `n x model_dim` each, with
/// rotary encoding already applied to the keys.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub keys: Matrix,
    pub values: Matrix,
}

/// Everything recorded during a prefill pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    num_heads: usize,
    seq_len: usize,
    attention: Vec<Vec<Matrix>>,
    logits: Matrix,
    hidden: Option<Vec<Matrix>>,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.attention.len()
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Post-softmax attention map for one layer and head (`n x n`,
    /// zero above the diagonal).
    pub fn attention(&self, layer: usize, head: usize) -> &Matrix {
        &self.attention[layer][head]
    }

    /// Per-position logits, `n x vocab`.
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    /// Per-layer post-block hidden states, when requested at prefill.
    pub fn hidden(&self) -> Option<&[Matrix]> {
        self.hidden.as_deref()
    }

    /// Build a trace from externally supplied attention maps, for analysis
    /// of synthetic patterns. Maps must be square, causal, and agree on
    /// dimensions across layers and heads; logits are zeroed.
    pub fn from_attention_maps(attention: Vec<Vec<Matrix>>) -> Result<Self> {
        let num_layers = attention.len();
        if num_layers == 0 {
            return Err(Error::parameter("attention", "no layers".to_string()));
        }
        let num_heads = attention[0].len();
        if num_heads == 0 {
            return Err(Error::parameter("attention", "no heads".to_string()));
        }
        let n = attention[0][0].rows();
        for (l, heads) in attention.iter().enumerate() {
            if heads.len() != num_heads {
                return Err(Error::parameter(
                    "attention",
                    format!("layer {l} has {} heads, expected {num_heads}", heads.len()),
                ));
            }
            for (h, map) in heads.iter().enumerate() {
                if map.rows() != n || map.cols() != n {
                    return Err(Error::parameter(
                        "attention",
                        format!(
                            "layer {l} head {h} is {}x{}, expected {n}x{n}",
                            map.rows(),
                            map.cols()
                        ),
                    ));
                }
                for q in 0..n {
                    for k in q + 1..n {
                        if map.get(q, k) != 0.0 {
                            return Err(Error::parameter(
                                "attention",
                                format!("layer {l} head {h} not causal at ({q}, {k})"),
                            ));
                        }
                    }
                }
            }
        }
        Ok(Self {
            num_heads,
            seq_len: n,
            attention,
            logits: Matrix::zeros(n, 1),
            hidden: None,
        })
    }
}

/// Rotate query/key pairs in place for absolute position `pos`.
///
/// Within each head's `head_dim` slice, pair `(2i, 2i+1)` is rotated by
/// `pos / ROPE_BASE^(2i / head_dim)`; an odd trailing element is left as is.
/// Retained keys keep their original rotation, so compressed caches never
/// need re-indexing.
fn apply_rope(row: &mut [f32], pos: usize, num_heads: usize, head_dim: usize) {
    let pos = pos as f64;
    for h in 0..num_heads {
        let base = h * head_dim;
        for i in 0..head_dim / 2 {
            let angle = pos * ROPE_BASE.powf(-((2 * i) as f64) / head_dim as f64);
            let (sin, cos) = (angle.sin() as f32, angle.cos() as f32);
            let x0 = row[base + 2 * i];
            let x1 = row[base + 2 * i + 1];
            row[base + 2 * i] = x0 * cos - x1 * sin;
            row[base + 2 * i + 1] = x0 * sin + x1 * cos;
        }
    }
}

/// Scaled dot-product scores of `q` against `count` key rows stored at
/// `stride`/`offset` in a flat buffer. Shared by prefill and decode.
fn head_scores(
    q: &[f32],
    keys: &[f32],
    stride: usize,
    offset: usize,
    count: usize,
    scale: f32,
) -> Vec<f32> {
    let dk = q.len();
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let start = j * stride + offset;
        out.push(dot(q, &keys[start..start + dk]) * scale);
    }
    out
}

/// Accumulate `sum_j weights[j] * values_row_j` into `out`, iterating rows
/// in ascending order. Shared by prefill and decode.
fn weighted_value_sum(
    out: &mut [f32],
    weights: &[f32],
    values: &[f32],
    stride: usize,
    offset: usize,
) {
    let dk = out.len();
    for (j, &w) in weights.iter().enumerate() {
        let start = j * stride + offset;
        for (o, &v) in out.iter_mut().zip(&values[start..start + dk]) {
            *o += w * v;
        }
    }
}

fn embed_tokens(weights: &ModelWeights, tokens: &[u32]) -> Result<Matrix> {
    let config = weights.config();
    let mut x = Matrix::zeros(tokens.len(), config.model_dim);
    for (i, &t) in tokens.iter().enumerate() {
        if t as usize >= config.vocab_size {
            return Err(Error::Input(format!(
                "token id {t} at position {i} exceeds vocab size {}",
                config.vocab_size
            )));
        }
        x.row_mut(i).copy_from_slice(weights.embedding.row(t as usize));
    }
    Ok(x)
}

fn add_in_place(x: &mut Matrix, delta: &Matrix) {
    debug_assert_eq!((x.rows(), x.cols()), (delta.rows(), delta.cols()));
    for r in 0..x.rows() {
        let d = delta.row(r);
        for (o, &v) in x.row_mut(r).iter_mut().zip(d) {
            *o += v;
        }
    }
}

/// Run the full prompt through the model.
///
/// Returns the trace (attention maps and per-position logits) plus the
/// complete per-layer K/V matrices.
pub fn prefill(weights: &ModelWeights, tokens: &[u32]) -> Result<(ForwardTrace, Vec<LayerKv>)> {
    prefill_with(weights, tokens, false)
}

/// [`prefill`] with optional retention of per-layer hidden states.
pub fn prefill_with(
    weights: &ModelWeights,
    tokens: &[u32],
    keep_hidden: bool,
) -> Result<(ForwardTrace, Vec<LayerKv>)> {
    let config = weights.config();
    let n = tokens.len();
    if n == 0 {
        return Err(Error::Input("empty token sequence".to_string()));
    }
    if n > config.max_context {
        return Err(Error::Input(format!(
            "sequence length {n} exceeds max context {}",
            config.max_context
        )));
    }

    let (num_heads, dk, d) = (config.num_heads, config.head_dim, config.model_dim);
    let scale = 1.0 / (dk as f32).sqrt();

    let mut x = embed_tokens(weights, tokens)?;
    let mut attention = Vec::with_capacity(config.num_layers);
    let mut kv = Vec::with_capacity(config.num_layers);
    let mut hidden = keep_hidden.then(Vec::new);

    for layer in &weights.layers {
        let mut q = x.matmul(&layer.wq)?;
        let mut k = x.matmul(&layer.wk)?;
        let v = x.matmul(&layer.wv)?;
        for pos in 0..n {
            apply_rope(q.row_mut(pos), pos, num_heads, dk);
            apply_rope(k.row_mut(pos), pos, num_heads, dk);
        }

        // Heads are independent; each returns its attention map and its
        // slice of the context in index order.
        let per_head = exec::map_indexed_grained(num_heads, n * n * dk, |h| {
            let offset = h * dk;
            let mut attn = Matrix::zeros(n, n);
            let mut ctx = vec![0.0f32; n * dk];
            for qi in 0..n {
                let q_head = &q.row(qi)[offset..offset + dk];
                let mut scores = head_scores(q_head, k.data(), d, offset, qi + 1, scale);
                softmax_in_place(&mut scores);
                weighted_value_sum(&mut ctx[qi * dk..(qi + 1) * dk], &scores, v.data(), d, offset);
                attn.row_mut(qi)[..=qi].copy_from_slice(&scores);
            }
            (attn, ctx)
        });

        let mut ctx = Matrix::zeros(n, d);
        let mut maps = Vec::with_capacity(num_heads);
        for (h, (attn, head_ctx)) in per_head.into_iter().enumerate() {
            let offset = h * dk;
            for qi in 0..n {
                ctx.row_mut(qi)[offset..offset + dk]
                    .copy_from_slice(&head_ctx[qi * dk..(qi + 1) * dk]);
            }
            maps.push(attn);
        }

        let out = ctx.matmul(&layer.wo)?;
        add_in_place(&mut x, &out);

        attention.push(maps);
        kv.push(LayerKv { keys: k, values: v });
        if let Some(states) = hidden.as_mut() {
            states.push(x.clone());
        }
    }

    let logits = x.matmul(&weights.unembedding)?;
    Ok((
        ForwardTrace {
            num_heads,
            seq_len: n,
            attention,
            logits,
            hidden,
        },
        kv,
    ))
}

/// Advance generation by one token against a (possibly compressed) cache.
///
/// The token attends over every retained position plus everything decoded
/// since compression; its own K/V rows are appended to each layer and are
/// never evicted. Returns the logits for the next-token distribution.
pub fn decode_step(
    weights: &ModelWeights,
    cache: &mut CompressedKv,
    token: u32,
) -> Result<Vec<f32>> {
    let config = weights.config();
    if token as usize >= config.vocab_size {
        return Err(Error::Input(format!(
            "token id {token} exceeds vocab size {}",
            config.vocab_size
        )));
    }
    cache.check_compatible(config.num_layers, config.num_heads, config.head_dim)?;

    let (num_heads, dk, d) = (config.num_heads, config.head_dim, config.model_dim);
    let scale = 1.0 / (dk as f32).sqrt();
    let pos = cache.next_position();

    let mut x = Matrix::zeros(1, d);
    x.row_mut(0).copy_from_slice(weights.embedding.row(token as usize));

    for (l, layer) in weights.layers.iter().enumerate() {
        let mut q = x.matmul(&layer.wq)?;
        let mut k = x.matmul(&layer.wk)?;
        let v = x.matmul(&layer.wv)?;
        apply_rope(q.row_mut(0), pos, num_heads, dk);
        apply_rope(k.row_mut(0), pos, num_heads, dk);

        // Append this token's K/V first so it attends to itself, exactly as
        // the last row of a prefill does.
        for h in 0..num_heads {
            let offset = h * dk;
            cache.layer_mut(l).head_mut(h).append(
                pos,
                &k.row(0)[offset..offset + dk],
                &v.row(0)[offset..offset + dk],
            )?;
        }

        let layer_cache = cache.layer(l);
        let grain = layer_cache.head(0).len() * dk;
        let per_head = exec::map_indexed_grained(num_heads, grain, |h| {
            let head = layer_cache.head(h);
            let offset = h * dk;
            let q_head = &q.row(0)[offset..offset + dk];
            let mut scores =
                head_scores(q_head, head.keys().data(), dk, 0, head.len(), scale);
            softmax_in_place(&mut scores);
            let mut ctx = vec![0.0f32; dk];
            weighted_value_sum(&mut ctx, &scores, head.values().data(), dk, 0);
            ctx
        });

        let mut ctx = Matrix::zeros(1, d);
        for (h, head_ctx) in per_head.into_iter().enumerate() {
            ctx.row_mut(0)[h * dk..(h + 1) * dk].copy_from_slice(&head_ctx);
        }
        let out = ctx.matmul(&layer.wo)?;
        add_in_place(&mut x, &out);
    }

    cache.advance_position();
    let logits = x.matmul(&weights.unembedding)?;
    Ok(logits.row(0).to_vec())
}
