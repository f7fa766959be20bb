//! Stacked-LSTM language model over sparse weight tensors.
//!
//! Gate rows are laid out in the fixed order (input, forget, cell, output):
//! rows `[g·h, (g+1)·h)` of both the input and the hidden weight matrices
//! belong to gate `g`.

mod lstm;
mod loss;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse_tensor::{fan_in_scale, SparseTensor};

pub use loss::{loss_and_perplexity, softmax_cross_entropy};
pub use lstm::{Backward, ForwardCache, ForwardOutput};

pub const GATE_NAMES: [&str; 4] = ["input", "forget", "cell", "output"];
pub const FORGET_GATE: usize = 1;
/// Gate blocks per layer: four gates in each of the two weight matrices.
pub const BLOCKS_PER_LAYER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSide {
    Input,
    Hidden,
}

impl WeightSide {
    pub fn short_name(self) -> &'static str {
        match self {
            WeightSide::Input => "ih",
            WeightSide::Hidden => "hh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatePartition {
    pub gate_names: Vec<String>,
    pub hidden: usize,
}

impl GatePartition {
    pub fn new(hidden: usize) -> Self {
        GatePartition {
            gate_names: GATE_NAMES.iter().map(|s| s.to_string()).collect(),
            hidden,
        }
    }

    pub fn gate_rows(&self, gate: usize) -> Range<usize> {
        gate * self.hidden..(gate + 1) * self.hidden
    }

    /// Block `b` in `0..8`: input-matrix gates first, then hidden-matrix gates.
    pub fn block(&self, b: usize) -> (WeightSide, usize, Range<usize>) {
        let side = if b < 4 {
            WeightSide::Input
        } else {
            WeightSide::Hidden
        };
        let gate = b % 4;
        (side, gate, self.gate_rows(gate))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_weights: SparseTensor,
    pub hidden_weights: SparseTensor,
    pub bias: Vec<f64>,
    pub gates: GatePartition,
}

impl LstmLayer {
    pub fn hidden(&self) -> usize {
        self.gates.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.cols()
    }

    pub fn side(&self, side: WeightSide) -> &SparseTensor {
        match side {
            WeightSide::Input => &self.input_weights,
            WeightSide::Hidden => &self.hidden_weights,
        }
    }

    pub fn side_mut(&mut self, side: WeightSide) -> &mut SparseTensor {
        match side {
            WeightSide::Input => &mut self.input_weights,
            WeightSide::Hidden => &mut self.hidden_weights,
        }
    }

    pub fn block_nnz(&self, b: usize) -> usize {
        let (side, _, rows) = self.gates.block(b);
        self.side(side).nnz_in_rows(rows)
    }

    pub fn nnz(&self) -> usize {
        self.input_weights.nnz() + self.hidden_weights.nnz()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub emb: usize,
    pub hidden: usize,
    pub layers: usize,
    pub tied: bool,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.emb == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions must all be positive".into(),
            ));
        }
        if self.tied && self.emb != self.hidden {
            return Err(Error::InvalidConfig(format!(
                "tied weights need emb == hidden (got {} and {})",
                self.emb, self.hidden
            )));
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.emb
        } else {
            self.hidden
        }
    }
}

/// Identifies one parameter tensor of a [`LanguageModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Embedding,
    InputWeights(usize),
    HiddenWeights(usize),
    Bias(usize),
    Decoder,
    DecoderBias,
}

impl ParamKind {
    pub fn name(&self) -> String {
        match self {
            ParamKind::Embedding => "embedding".into(),
            ParamKind::InputWeights(l) => format!("layer{l}.w_ih"),
            ParamKind::HiddenWeights(l) => format!("layer{l}.w_hh"),
            ParamKind::Bias(l) => format!("layer{l}.bias"),
            ParamKind::Decoder => "decoder".into(),
            ParamKind::DecoderBias => "decoder.bias".into(),
        }
    }
}

/// A parameter buffer handed to an optimizer together with its mask.
pub struct ParamSlot<'a> {
    pub values: &'a mut [f64],
    pub mask: Option<&'a [bool]>,
}

impl ParamSlot<'_> {
    pub fn apply_mask(&mut self) {
        if let Some(mask) = self.mask {
            for (v, &m) in self.values.iter_mut().zip(mask) {
                if !m {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Per-layer recurrent state, each `batch × hidden`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub batch: usize,
}

impl HiddenState {
    pub fn zeros(dims: &ModelDims, batch: usize) -> Self {
        HiddenState {
            h: vec![vec![0.0; batch * dims.hidden]; dims.layers],
            c: vec![vec![0.0; batch * dims.hidden]; dims.layers],
            batch,
        }
    }
}

/// Token windows for truncated BPTT, stored time-major (`t·batch + b`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpttBatch {
    pub seq_len: usize,
    pub batch: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
}

/// Gradients in [`LanguageModel::param_kinds`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }
}

/// Rescales all gradients by one common factor so the global L2 norm is at
/// most `max_norm`. Returns the factor applied.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.tensors.iter_mut().flatten() {
        *g *= scale;
    }
    scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageModel {
    pub dims: ModelDims,
    pub embedding: SparseTensor,
    pub layers: Vec<LstmLayer>,
    /// `None` when tied: the embedding matrix doubles as the decoder.
    pub decoder: Option<SparseTensor>,
    pub decoder_bias: Vec<f64>,
}

impl LanguageModel {
    /// A dense model. Weights are `U(±1/sqrt(fan_in))`, the forget-gate bias
    /// is 1 and every other bias is 0.
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let dense = |rows: usize, cols: usize, rng: &mut R| {
            SparseTensor::init_with_nnz(rows, cols, rows * cols, fan_in_scale(cols), rng)
        };
        let embedding = dense(dims.vocab, dims.emb, rng);
        let mut layers = Vec::with_capacity(dims.layers);
        for l in 0..dims.layers {
            let h = dims.hidden;
            let input_weights = dense(4 * h, dims.layer_input_dim(l), rng);
            let hidden_weights = dense(4 * h, h, rng);
            let mut bias = vec![0.0; 4 * h];
            bias[FORGET_GATE * h..(FORGET_GATE + 1) * h]
                .iter_mut()
                .for_each(|b| *b = 1.0);
            layers.push(LstmLayer {
                input_weights,
                hidden_weights,
                bias,
                gates: GatePartition::new(h),
            });
        }
        let decoder = if dims.tied {
            None
        } else {
            Some(dense(dims.vocab, dims.hidden, rng))
        };
        Ok(LanguageModel {
            dims,
            embedding,
            layers,
            decoder,
            decoder_bias: vec![0.0; dims.vocab],
        })
    }

    pub fn decoder_weights(&self) -> &SparseTensor {
        self.decoder.as_ref().unwrap_or(&self.embedding)
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut kinds = vec![ParamKind::Embedding];
        for l in 0..self.layers.len() {
            kinds.push(ParamKind::InputWeights(l));
            kinds.push(ParamKind::HiddenWeights(l));
            kinds.push(ParamKind::Bias(l));
        }
        if self.decoder.is_some() {
            kinds.push(ParamKind::Decoder);
        }
        kinds.push(ParamKind::DecoderBias);
        kinds
    }

    pub fn param_index(&self, kind: ParamKind) -> Option<usize> {
        self.param_kinds().iter().position(|k| *k == kind)
    }

    /// The 2-D weight tensors subject to sparsification, in parameter order.
    pub fn sparse_kinds(&self) -> Vec<ParamKind> {
        self.param_kinds()
            .into_iter()
            .filter(|k| !matches!(k, ParamKind::Bias(_) | ParamKind::DecoderBias))
            .collect()
    }

    pub fn sparse(&self, kind: ParamKind) -> Option<&SparseTensor> {
        match kind {
            ParamKind::Embedding => Some(&self.embedding),
            ParamKind::InputWeights(l) => self.layers.get(l).map(|x| &x.input_weights),
            ParamKind::HiddenWeights(l) => self.layers.get(l).map(|x| &x.hidden_weights),
            ParamKind::Decoder => self.decoder.as_ref(),
            ParamKind::Bias(_) | ParamKind::DecoderBias => None,
        }
    }

    pub fn sparse_mut(&mut self, kind: ParamKind) -> Option<&mut SparseTensor> {
        match kind {
            ParamKind::Embedding => Some(&mut self.embedding),
            ParamKind::InputWeights(l) => self.layers.get_mut(l).map(|x| &mut x.input_weights),
            ParamKind::HiddenWeights(l) => self.layers.get_mut(l).map(|x| &mut x.hidden_weights),
            ParamKind::Decoder => self.decoder.as_mut(),
            ParamKind::Bias(_) | ParamKind::DecoderBias => None,
        }
    }

    pub fn param_values(&self, kind: ParamKind) -> &[f64] {
        match kind {
            ParamKind::Bias(l) => &self.layers[l].bias,
            ParamKind::DecoderBias => &self.decoder_bias,
            other => self.sparse(other).expect("unknown parameter").values(),
        }
    }

    pub fn param_values_mut(&mut self, kind: ParamKind) -> &mut [f64] {
        match kind {
            ParamKind::Bias(l) => &mut self.layers[l].bias,
            ParamKind::DecoderBias => &mut self.decoder_bias,
            other => self.sparse_mut(other).expect("unknown parameter").values_mut(),
        }
    }

    pub fn param_mask(&self, kind: ParamKind) -> Option<&[bool]> {
        self.sparse(kind).map(|t| t.mask())
    }

    /// Mutable views of every parameter, in [`LanguageModel::param_kinds`] order.
    pub fn slots_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut slots = Vec::new();
        let (values, mask) = self.embedding.split_mut();
        slots.push(ParamSlot {
            values,
            mask: Some(mask),
        });
        for layer in self.layers.iter_mut() {
            let (values, mask) = layer.input_weights.split_mut();
            slots.push(ParamSlot {
                values,
                mask: Some(mask),
            });
            let (values, mask) = layer.hidden_weights.split_mut();
            slots.push(ParamSlot {
                values,
                mask: Some(mask),
            });
            slots.push(ParamSlot {
                values: &mut layer.bias,
                mask: None,
            });
        }
        if let Some(dec) = self.decoder.as_mut() {
            let (values, mask) = dec.split_mut();
            slots.push(ParamSlot {
                values,
                mask: Some(mask),
            });
        }
        slots.push(ParamSlot {
            values: &mut self.decoder_bias,
            mask: None,
        });
        slots
    }

    pub fn apply_masks(&mut self) {
        for slot in self.slots_mut().iter_mut() {
            slot.apply_mask();
        }
    }

    pub fn total_nnz(&self) -> usize {
        self.sparse_kinds()
            .iter()
            .map(|k| self.sparse(*k).map_or(0, |t| t.nnz()))
            .sum()
    }

    pub fn total_sparse_params(&self) -> usize {
        self.sparse_kinds()
            .iter()
            .map(|k| self.sparse(*k).map_or(0, |t| t.len()))
            .sum()
    }

    pub fn num_params(&self) -> usize {
        self.param_kinds()
            .iter()
            .map(|k| self.param_values(*k).len())
            .sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .param_kinds()
                .iter()
                .map(|k| vec![0.0; self.param_values(*k).len()])
                .collect(),
        }
    }

    /// Replaces every parameter with the given buffers (same order and sizes),
    /// then re-applies the masks.
    pub fn load_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut slots = self.slots_mut();
        if slots.len() != values.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.values.len() != v.len() {
                return Err(Error::Format("parameter size mismatch".into()));
            }
            slot.values.copy_from_slice(v);
            slot.apply_mask();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(tied: bool) -> ModelDims {
        ModelDims {
            vocab: 11,
            emb: 6,
            hidden: 6,
            layers: 2,
            tied,
        }
    }

    #[test]
    fn gate_partition_tiles_rows() {
        let g = GatePartition::new(5);
        let mut covered = [0; 20];
        for gate in 0..4 {
            for r in g.gate_rows(gate) {
                covered[r] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert_eq!(g.block(5), (WeightSide::Hidden, 1, 5..10));
    }

    #[test]
    fn forget_bias_is_one() {
        let m = LanguageModel::new(dims(false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let b = &m.layers[0].bias;
        assert!(b[6..12].iter().all(|&x| x == 1.0));
        assert!(b[..6].iter().chain(&b[12..]).all(|&x| x == 0.0));
    }

    #[test]
    fn tied_model_shares_storage() {
        let mut m = LanguageModel::new(dims(true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(m.decoder.is_none());
        assert!(!m.param_kinds().contains(&ParamKind::Decoder));
        m.embedding.deactivate(&[3]);
        assert!(!m.decoder_weights().mask()[3]);
    }

    #[test]
    fn tied_requires_matching_dims() {
        let d = ModelDims {
            emb: 4,
            ..dims(true)
        };
        assert!(LanguageModel::new(d, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn clip_cases() {
        let mut g = Gradients {
            tensors: vec![vec![0.6], vec![0.8]],
        };
        let s = clip_gradients(&mut g, 0.25);
        assert!((s - 0.25).abs() < 1e-15);
        assert!((g.tensors[0][0] - 0.15).abs() < 1e-15);

        let mut g = Gradients {
            tensors: vec![vec![0.1]],
        };
        assert_eq!(clip_gradients(&mut g, 0.25), 1.0);
        assert_eq!(g.tensors[0][0], 0.1);

        let mut g = Gradients {
            tensors: vec![vec![3.0], vec![4.0]],
        };
        let s = clip_gradients(&mut g, 0.25);
        assert!((s - 0.05).abs() < 1e-15);
        assert!((g.global_norm() - 0.25).abs() < 1e-12);
    }
}
