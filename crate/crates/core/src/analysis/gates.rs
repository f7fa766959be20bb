//! Sparsity of each LSTM gate block.

use serde::{Deserialize, Serialize};

use crate::model::{LanguageModel, WeightSide, BLOCKS_PER_LAYER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSparsity {
    pub layer: usize,
    /// Block index in `0..8`: input-matrix gates, then hidden-matrix gates.
    pub block: usize,
    pub side: WeightSide,
    pub gate: String,
    pub nnz: usize,
    pub size: usize,
    pub sparsity: f64,
}

pub fn gate_sparsity_breakdown(model: &LanguageModel) -> Vec<GateSparsity> {
    let mut out = Vec::with_capacity(model.layers.len() * BLOCKS_PER_LAYER);
    for (l, layer) in model.layers.iter().enumerate() {
        for b in 0..BLOCKS_PER_LAYER {
            let (side, gate, rows) = layer.gates.block(b);
            let size = rows.len() * layer.side(side).cols();
            let nnz = layer.block_nnz(b);
            out.push(GateSparsity {
                layer: l,
                block: b,
                side,
                gate: layer.gates.gate_names[gate].clone(),
                nnz,
                size,
                sparsity: if size == 0 { 0.0 } else { 1.0 - nnz as f64 / size as f64 },
            });
        }
    }
    out
}

/// The sparsest block of `layer`; the lowest block index wins ties.
pub fn sparsest_block(table: &[GateSparsity], layer: usize) -> Option<&GateSparsity> {
    table
        .iter()
        .filter(|g| g.layer == layer)
        .fold(None, |best: Option<&GateSparsity>, g| match best {
            Some(b) if b.sparsity >= g.sparsity => Some(b),
            _ => Some(g),
        })
}
