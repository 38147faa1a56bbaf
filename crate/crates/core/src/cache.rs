//! Compressed key/value cache.
//!
//! Per layer and head the cache holds the retained positions (sorted,
//! unique, original indices) with their K/V rows. Positions selected at
//! compression time are fixed; decode appends new rows and never evicts.

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::model::LayerKv;

/// Retained rows for a single attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCache {
    positions: Vec<usize>,
    keys: Matrix,
    values: Matrix,
}

impl HeadCache {
    pub(crate) fn new(head_dim: usize) -> Self {
        Self {
            positions: Vec::new(),
            keys: Matrix::zeros(0, head_dim),
            values: Matrix::zeros(0, head_dim),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Original sequence positions, ascending.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Retained key rows, one per position, `len x head_dim`.
    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub(crate) fn append(&mut self, pos: usize, key: &[f32], value: &[f32]) -> Result<()> {
        if let Some(&last) = self.positions.last() {
            if pos <= last {
                return Err(Error::State(format!(
                    "appended position {pos} not beyond last retained position {last}"
                )));
            }
        }
        self.keys.push_row(key)?;
        self.values.push_row(value)?;
        self.positions.push(pos);
        Ok(())
    }
}

/// All heads of one layer plus the budget the layer was compressed to.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    heads: Vec<HeadCache>,
    budget_used: usize,
}

impl LayerCache {
    pub fn head(&self, h: usize) -> &HeadCache {
        &self.heads[h]
    }

    pub(crate) fn head_mut(&mut self, h: usize) -> &mut HeadCache {
        &mut self.heads[h]
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Retained-token count the compressing policy charged this layer with.
    pub fn budget_used(&self) -> usize {
        self.budget_used
    }
}

/// Per-layer, per-head retained K/V with original positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedKv {
    head_dim: usize,
    layers: Vec<LayerCache>,
    next_position: usize,
}

impl CompressedKv {
    /// Assemble a cache from per-head selections. `positions[l][h]` must be
    /// sorted ascending; rows are gathered from the full `n x model_dim`
    /// K/V matrices of each layer.
    pub(crate) fn gather(
        kv: &[LayerKv],
        num_heads: usize,
        head_dim: usize,
        positions: Vec<Vec<Vec<usize>>>,
        budgets: Vec<usize>,
        seq_len: usize,
    ) -> Result<Self> {
        if positions.len() != kv.len() || budgets.len() != kv.len() {
            return Err(Error::State(format!(
                "positions/budgets for {} layers, kv has {}",
                positions.len(),
                kv.len()
            )));
        }
        let mut layers = Vec::with_capacity(kv.len());
        for (l, (layer_kv, layer_positions)) in kv.iter().zip(positions).enumerate() {
            if layer_positions.len() != num_heads {
                return Err(Error::State(format!(
                    "layer {l}: selections for {} heads, expected {num_heads}",
                    layer_positions.len()
                )));
            }
            let mut heads = Vec::with_capacity(num_heads);
            for (h, selected) in layer_positions.into_iter().enumerate() {
                let mut head = HeadCache::new(head_dim);
                let offset = h * head_dim;
                for pos in selected {
                    if pos >= layer_kv.keys.rows() {
                        return Err(Error::State(format!(
                            "layer {l} head {h}: position {pos} outside sequence of length {}",
                            layer_kv.keys.rows()
                        )));
                    }
                    head.append(
                        pos,
                        &layer_kv.keys.row(pos)[offset..offset + head_dim],
                        &layer_kv.values.row(pos)[offset..offset + head_dim],
                    )?;
                }
                heads.push(head);
            }
            layers.push(LayerCache {
                heads,
                budget_used: budgets[l],
            });
        }
        Ok(Self {
            head_dim,
            layers,
            next_position: seq_len,
        })
    }

    /// Cache containing every position of every layer (no compression).
    pub fn from_full(kv: &[LayerKv], num_heads: usize, head_dim: usize) -> Result<Self> {
        let n = kv.first().map_or(0, |layer| layer.keys.rows());
        let all: Vec<usize> = (0..n).collect();
        let positions = vec![vec![all; num_heads]; kv.len()];
        let budgets = vec![n; kv.len()];
        Self::gather(kv, num_heads, head_dim, positions, budgets, n)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn layer(&self, l: usize) -> &LayerCache {
        &self.layers[l]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut LayerCache {
        &mut self.layers[l]
    }

    /// Absolute position the next decoded token will occupy.
    pub fn next_position(&self) -> usize {
        self.next_position
    }

    pub(crate) fn advance_position(&mut self) {
        self.next_position += 1;
    }

    /// Retained-row count per layer (head 0; all heads hold equally many).
    pub fn retained_per_layer(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.heads[0].len()).collect()
    }

    pub(crate) fn check_compatible(
        &self,
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
    ) -> Result<()> {
        if self.layers.len() != num_layers {
            return Err(Error::State(format!(
                "cache has {} layers, model has {num_layers}",
                self.layers.len()
            )));
        }
        if self.head_dim != head_dim {
            return Err(Error::State(format!(
                "cache head_dim {} vs model {head_dim}",
                self.head_dim
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.heads.len() != num_heads {
                return Err(Error::State(format!(
                    "layer {l} has {} heads, model has {num_heads}",
                    layer.heads.len()
                )));
            }
            if layer.heads.iter().any(HeadCache::is_empty) {
                return Err(Error::State(format!("layer {l} has an empty head cache")));
            }
        }
        Ok(())
    }
}
