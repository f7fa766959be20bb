//! Per-epoch connectivity updates under a fixed parameter budget.
//!
//! Non-recurrent tensors (embedding, decoder) lose their `floor(p·nnz)`
//! smallest weights and regrow the same number at free positions. LSTM
//! layers use cell-gate redistribution: removal ranks all gate blocks of a
//! layer jointly, while growth hands every block the same quota, so blocks
//! holding larger weights keep more of them over time.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Gradients, LanguageModel, LstmLayer, ParamKind, WeightSide, BLOCKS_PER_LAYER,
};
use crate::sparse_tensor::{
    check_sparsity, fan_in_scale, nnz_for_sparsity, select_set_style, select_smallest_magnitude,
    Coordinate, SparseTensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthPolicy {
    Random,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RemovalPolicy {
    Magnitude,
    /// Smallest positive and largest negative weights, half each.
    SetStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitDistribution {
    Uniform,
    ErdosRenyi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Redistribution {
    CellGate,
    None,
}

/// Which gate blocks share one removal ranking under cell-gate redistribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GatePool {
    /// All eight blocks of a layer (input and hidden matrices together).
    Joint,
    /// The four blocks of each weight matrix separately.
    PerMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DstConfig {
    pub sparsity: f64,
    /// `0` disables connectivity updates (static sparse training).
    pub initial_prune_rate: f64,
    pub growth: GrowthPolicy,
    pub removal: RemovalPolicy,
    pub init: InitDistribution,
    pub redistribution: Redistribution,
    pub gate_pool: GatePool,
    pub total_epochs: usize,
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.name())
            }
        }

        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::InvalidConfig(format!(
                        concat!("unknown ", stringify!($ty), " {:?}; expected one of: ", $($name, " "),+),
                        s
                    ))),
                }
            }
        }
    };
}

named_enum!(GrowthPolicy { Random => "random", Gradient => "gradient" });
named_enum!(RemovalPolicy { Magnitude => "magnitude", SetStyle => "set" });
named_enum!(InitDistribution { Uniform => "uniform", ErdosRenyi => "er" });
named_enum!(Redistribution { CellGate => "cell-gate", None => "none" });
named_enum!(GatePool { Joint => "joint", PerMatrix => "per-matrix" });

impl Default for DstConfig {
    fn default() -> Self {
        DstConfig {
            sparsity: 0.67,
            initial_prune_rate: 0.7,
            growth: GrowthPolicy::Random,
            removal: RemovalPolicy::Magnitude,
            init: InitDistribution::Uniform,
            redistribution: Redistribution::CellGate,
            gate_pool: GatePool::Joint,
            total_epochs: 100,
        }
    }
}

impl DstConfig {
    pub fn validate(&self) -> Result<()> {
        check_sparsity(self.sparsity)?;
        if !(0.0..1.0).contains(&self.initial_prune_rate) {
            return Err(Error::InvalidConfig(format!(
                "initial prune rate {} outside [0, 1)",
                self.initial_prune_rate
            )));
        }
        Ok(())
    }
}

/// `p0 · (1 + cos(π·epoch/total)) / 2`
pub fn cosine_prune_rate(p0: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return 0.0;
    }
    let e = epoch.min(total_epochs) as f64;
    let rate = p0 * (1.0 + (PI * e / total_epochs as f64).cos()) / 2.0;
    rate.max(0.0)
}

/// Nonzero counts per tensor under the Erdős–Rényi rule: density
/// proportional to `(rows+cols)/(rows·cols)`, scaled so the total equals
/// `round((1-S)·Σ size)`. Tensors that would exceed density 1 are made
/// dense and the scale is recomputed for the rest until nothing overflows.
/// Fractional counts are apportioned by largest remainder.
pub fn er_allocation(shapes: &[(usize, usize)], sparsity: f64) -> Result<Vec<usize>> {
    check_sparsity(sparsity)?;
    let sizes: Vec<usize> = shapes.iter().map(|(r, c)| r * c).collect();
    let total: usize = sizes.iter().sum();
    let target = nnz_for_sparsity(total, sparsity);
    if target < shapes.len() {
        return Err(Error::InvalidConfig(format!(
            "sparsity {sparsity} leaves {target} weights for {} tensors",
            shapes.len()
        )));
    }
    let mut dense = vec![false; shapes.len()];
    let mut scale;
    loop {
        let fixed: usize = (0..shapes.len()).filter(|&i| dense[i]).map(|i| sizes[i]).sum();
        let weight: f64 = (0..shapes.len())
            .filter(|&i| !dense[i])
            .map(|i| (shapes[i].0 + shapes[i].1) as f64)
            .sum();
        scale = if weight > 0.0 {
            (target - fixed) as f64 / weight
        } else {
            0.0
        };
        let mut changed = false;
        for i in 0..shapes.len() {
            if !dense[i] && scale * (shapes[i].0 + shapes[i].1) as f64 > sizes[i] as f64 {
                dense[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let exact: Vec<f64> = (0..shapes.len())
        .map(|i| {
            if dense[i] {
                sizes[i] as f64
            } else {
                scale * (shapes[i].0 + shapes[i].1) as f64
            }
        })
        .collect();
    let mut counts: Vec<usize> = exact
        .iter()
        .zip(&sizes)
        .map(|(e, &s)| (e.floor() as usize).min(s))
        .collect();
    let mut left = target - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shapes.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    while left > 0 {
        let before = left;
        for &i in &order {
            if left == 0 {
                break;
            }
            if counts[i] < sizes[i] {
                counts[i] += 1;
                left -= 1;
            }
        }
        if left == before {
            return Err(Error::InvalidConfig("ER allocation could not place all weights".into()));
        }
    }
    Ok(counts)
}

/// Re-initializes every 2-D weight tensor of `model` with the sparse mask
/// chosen by `config.init`. Biases stay dense.
pub fn init_model_sparsity<R: Rng + ?Sized>(
    model: &mut LanguageModel,
    config: &DstConfig,
    rng: &mut R,
) -> Result<()> {
    config.validate()?;
    let kinds = model.sparse_kinds();
    let shapes: Vec<(usize, usize)> = kinds
        .iter()
        .map(|k| model.sparse(*k).expect("sparse kind").shape())
        .collect();
    let counts = match config.init {
        InitDistribution::Uniform => {
            let counts: Vec<usize> = shapes
                .iter()
                .map(|(r, c)| nnz_for_sparsity(r * c, config.sparsity))
                .collect();
            if counts.iter().sum::<usize>() < shapes.len() {
                return Err(Error::InvalidConfig(format!(
                    "sparsity {} leaves fewer weights than tensors",
                    config.sparsity
                )));
            }
            counts
        }
        InitDistribution::ErdosRenyi => er_allocation(&shapes, config.sparsity)?,
    };
    for ((kind, (rows, cols)), nnz) in kinds.iter().zip(shapes).zip(counts) {
        *model.sparse_mut(*kind).expect("sparse kind") =
            SparseTensor::init_with_nnz(rows, cols, nnz, fan_in_scale(cols), rng);
    }
    Ok(())
}

/// Removed and grown coordinates of one tensor in one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorUpdate {
    pub kind: ParamKind,
    pub removed: Vec<Coordinate>,
    pub grown: Vec<Coordinate>,
}

fn select_for_removal(values: &[f64], k: usize, policy: RemovalPolicy) -> Result<Vec<usize>> {
    match policy {
        RemovalPolicy::Magnitude => select_smallest_magnitude(values, k),
        RemovalPolicy::SetStyle => select_set_style(values, k),
    }
}

/// SET-style removal on a whole tensor.
pub fn set_style_removal(tensor: &mut SparseTensor, k: usize) -> Result<Vec<Coordinate>> {
    let active: Vec<usize> = (0..tensor.len()).filter(|&i| tensor.mask()[i]).collect();
    let values: Vec<f64> = active.iter().map(|&i| tensor.values()[i]).collect();
    let mut flat: Vec<usize> = select_set_style(&values, k)?
        .into_iter()
        .map(|p| active[p])
        .collect();
    flat.sort_unstable();
    tensor.deactivate(&flat);
    Ok(flat.into_iter().map(|i| tensor.coord(i)).collect())
}

fn missing_gradients() -> Error {
    Error::InvalidConfig("gradient growth needs the dense gradient of the tensor".into())
}

/// Magnitude (or SET-style) removal of `floor(rate·nnz)` weights followed
/// by growth of the same number.
#[allow(clippy::too_many_arguments)]
pub fn update_non_rnn_layer<R: Rng + ?Sized>(
    tensor: &mut SparseTensor,
    kind: ParamKind,
    prune_rate: f64,
    removal: RemovalPolicy,
    growth: GrowthPolicy,
    dense_grad: Option<&[f64]>,
    rng: &mut R,
) -> Result<TensorUpdate> {
    if !(0.0..1.0).contains(&prune_rate) {
        return Err(Error::InvalidConfig(format!("prune rate {prune_rate} outside [0, 1)")));
    }
    if growth == GrowthPolicy::Gradient && dense_grad.is_none() {
        return Err(missing_gradients());
    }
    let k = (prune_rate * tensor.nnz() as f64).floor() as usize;
    let removed = match removal {
        RemovalPolicy::Magnitude => tensor.remove_smallest(k)?,
        RemovalPolicy::SetStyle => set_style_removal(tensor, k)?,
    };
    let grown = match growth {
        GrowthPolicy::Random => tensor.grow_random(k, rng)?,
        GrowthPolicy::Gradient => tensor.grow_gradient(dense_grad.expect("checked"), k)?,
    };
    Ok(TensorUpdate {
        kind,
        removed,
        grown,
    })
}

/// Result of a cell-gate update of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnUpdate {
    pub input: TensorUpdate,
    pub hidden: TensorUpdate,
    pub block_removed: [usize; BLOCKS_PER_LAYER],
    pub block_grown: [usize; BLOCKS_PER_LAYER],
}

/// Cell-gate redistribution for one LSTM layer.
///
/// `k = floor(rate · nnz)` over the pooled blocks. The `k` smallest weights
/// across the pool are removed (so per-block removal varies); growth gives
/// each block `floor(k/n)` weights plus one extra to the first `k mod n`
/// blocks in gate order. A block without enough free positions passes the
/// rest of its quota on to the next block.
#[allow(clippy::too_many_arguments)]
pub fn update_rnn_layer<R: Rng + ?Sized>(
    layer: &mut LstmLayer,
    layer_index: usize,
    prune_rate: f64,
    removal: RemovalPolicy,
    growth: GrowthPolicy,
    dense_grads: Option<(&[f64], &[f64])>,
    pool: GatePool,
    rng: &mut R,
) -> Result<RnnUpdate> {
    if !(0.0..1.0).contains(&prune_rate) {
        return Err(Error::InvalidConfig(format!("prune rate {prune_rate} outside [0, 1)")));
    }
    if growth == GrowthPolicy::Gradient && dense_grads.is_none() {
        return Err(missing_gradients());
    }
    let pools: Vec<Vec<usize>> = match pool {
        GatePool::Joint => vec![(0..8).collect()],
        GatePool::PerMatrix => vec![(0..4).collect(), (4..8).collect()],
    };
    let mut removed_flat: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut grown_flat: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut block_removed = [0usize; BLOCKS_PER_LAYER];
    let mut block_grown = [0usize; BLOCKS_PER_LAYER];
    let side_index = |s: WeightSide| match s {
        WeightSide::Input => 0,
        WeightSide::Hidden => 1,
    };

    for blocks in pools {
        // Candidate order doubles as the tie rule: (row within the gate
        // block, col, block), so equal magnitudes are taken evenly across blocks.
        let mut keyed = Vec::new();
        for &b in &blocks {
            let (side, _, rows) = layer.gates.block(b);
            let t = layer.side(side);
            for i in rows.start * t.cols()..rows.end * t.cols() {
                if t.mask()[i] {
                    let (r, c) = (i / t.cols() - rows.start, i % t.cols());
                    keyed.push(((r, c, b), i, t.values()[i]));
                }
            }
        }
        keyed.sort_unstable_by_key(|e| e.0);
        let cand_block: Vec<usize> = keyed.iter().map(|e| e.0 .2).collect();
        let cand_flat: Vec<usize> = keyed.iter().map(|e| e.1).collect();
        let cand_vals: Vec<f64> = keyed.iter().map(|e| e.2).collect();
        let k = (prune_rate * cand_vals.len() as f64).floor() as usize;
        let picked = select_for_removal(&cand_vals, k, removal)?;
        for p in picked {
            let b = cand_block[p];
            let (side, _, _) = layer.gates.block(b);
            layer.side_mut(side).deactivate(&[cand_flat[p]]);
            removed_flat[side_index(side)].push(cand_flat[p]);
            block_removed[b] += 1;
        }

        let n = blocks.len();
        let mut quota: Vec<usize> = (0..n).map(|j| k / n + usize::from(j < k % n)).collect();
        let mut outstanding = k;
        while outstanding > 0 {
            let mut carry = 0;
            let mut progressed = false;
            for (j, &b) in blocks.iter().enumerate() {
                let want = quota[j] + carry;
                quota[j] = 0;
                if want == 0 {
                    continue;
                }
                let (side, _, rows) = layer.gates.block(b);
                let free = layer.side(side).free_in_rows(rows.clone()).len();
                let take = want.min(free);
                carry = want - take;
                if take == 0 {
                    continue;
                }
                let t = layer.side_mut(side);
                let flat = match growth {
                    GrowthPolicy::Random => t.grow_random_in_rows(rows, take, rng)?,
                    GrowthPolicy::Gradient => {
                        let (gi, gh) = dense_grads.expect("checked");
                        let g = match side {
                            WeightSide::Input => gi,
                            WeightSide::Hidden => gh,
                        };
                        t.grow_gradient_in_rows(rows, g, take)?
                    }
                };
                grown_flat[side_index(side)].extend(flat);
                block_grown[b] += take;
                outstanding -= take;
                progressed = true;
            }
            if carry > 0 {
                if !progressed {
                    return Err(Error::CountExceeded {
                        requested: outstanding,
                        available: 0,
                        what: "free gate positions",
                    });
                }
                quota[0] += carry;
            }
        }
    }

    let to_coords = |t: &SparseTensor, flat: &mut Vec<usize>| {
        flat.sort_unstable();
        flat.iter().map(|&i| t.coord(i)).collect::<Vec<_>>()
    };
    let [mut ri, mut rh] = removed_flat;
    let [mut gi, mut gh] = grown_flat;
    Ok(RnnUpdate {
        input: TensorUpdate {
            kind: ParamKind::InputWeights(layer_index),
            removed: to_coords(&layer.input_weights, &mut ri),
            grown: to_coords(&layer.input_weights, &mut gi),
        },
        hidden: TensorUpdate {
            kind: ParamKind::HiddenWeights(layer_index),
            removed: to_coords(&layer.hidden_weights, &mut rh),
            grown: to_coords(&layer.hidden_weights, &mut gh),
        },
        block_removed,
        block_grown,
    })
}

/// Receives removal and growth events so optimizer state can follow the
/// connectivity. Tensor ids are indices into [`LanguageModel::param_kinds`].
pub trait GrowthObserver {
    fn on_removed(&mut self, tensor: usize, flat: &[usize]);
    fn on_grown(&mut self, tensor: usize, flat: &[usize]);
}

impl GrowthObserver for () {
    fn on_removed(&mut self, _: usize, _: &[usize]) {}
    fn on_grown(&mut self, _: usize, _: &[usize]) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCounts {
    pub name: String,
    pub removed: usize,
    pub grown: usize,
    pub nnz: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityUpdateReport {
    pub epoch: usize,
    pub prune_rate: f64,
    pub tensors: Vec<TensorCounts>,
    /// Per LSTM layer, nnz of the eight gate blocks before the update.
    pub gate_nnz_before: Vec<[usize; BLOCKS_PER_LAYER]>,
    pub gate_nnz_after: Vec<[usize; BLOCKS_PER_LAYER]>,
}

fn gate_nnz(model: &LanguageModel) -> Vec<[usize; BLOCKS_PER_LAYER]> {
    model
        .layers
        .iter()
        .map(|l| std::array::from_fn(|b| l.block_nnz(b)))
        .collect()
}

/// One connectivity update after training epoch `epoch` (1-based). The
/// rate is `cosine_prune_rate(p0, epoch, total_epochs)`.
pub fn epoch_update<R: Rng + ?Sized>(
    model: &mut LanguageModel,
    epoch: usize,
    config: &DstConfig,
    dense_grads: Option<&Gradients>,
    rng: &mut R,
    observer: &mut dyn GrowthObserver,
) -> Result<(ConnectivityUpdateReport, Vec<TensorUpdate>)> {
    config.validate()?;
    let rate = cosine_prune_rate(config.initial_prune_rate, epoch, config.total_epochs);
    let kinds = model.param_kinds();
    let grad_of = |kind: ParamKind| -> Option<&[f64]> {
        let i = kinds.iter().position(|k| *k == kind)?;
        dense_grads.map(|g| g.tensors[i].as_slice())
    };
    let before = gate_nnz(model);
    let mut updates = Vec::new();

    let non_rnn = |model: &mut LanguageModel, kind: ParamKind, rng: &mut R| -> Result<TensorUpdate> {
        let t = model.sparse_mut(kind).expect("sparse kind");
        update_non_rnn_layer(t, kind, rate, config.removal, config.growth, grad_of(kind), rng)
    };
    updates.push(non_rnn(model, ParamKind::Embedding, rng)?);
    for l in 0..model.layers.len() {
        match config.redistribution {
            Redistribution::CellGate => {
                let grads = match (
                    grad_of(ParamKind::InputWeights(l)),
                    grad_of(ParamKind::HiddenWeights(l)),
                ) {
                    (Some(a), Some(b)) => Some((a, b)),
                    _ => None,
                };
                let u = update_rnn_layer(
                    &mut model.layers[l],
                    l,
                    rate,
                    config.removal,
                    config.growth,
                    grads,
                    config.gate_pool,
                    rng,
                )?;
                updates.push(u.input);
                updates.push(u.hidden);
            }
            Redistribution::None => {
                updates.push(non_rnn(model, ParamKind::InputWeights(l), rng)?);
                updates.push(non_rnn(model, ParamKind::HiddenWeights(l), rng)?);
            }
        }
    }
    if model.decoder.is_some() {
        updates.push(non_rnn(model, ParamKind::Decoder, rng)?);
    }
    model.apply_masks();

    for u in &updates {
        let idx = model
            .param_index(u.kind)
            .ok_or(Error::UnknownTensor(usize::MAX))?;
        let t = model.sparse(u.kind).expect("sparse kind");
        let removed: Vec<usize> = u.removed.iter().map(|c| t.flat(*c)).collect();
        let grown: Vec<usize> = u.grown.iter().map(|c| t.flat(*c)).collect();
        observer.on_removed(idx, &removed);
        observer.on_grown(idx, &grown);
    }

    let report = ConnectivityUpdateReport {
        epoch,
        prune_rate: rate,
        tensors: updates
            .iter()
            .map(|u| TensorCounts {
                name: u.kind.name(),
                removed: u.removed.len(),
                grown: u.grown.len(),
                nnz: model.sparse(u.kind).map_or(0, |t| t.nnz()),
            })
            .collect(),
        gate_nnz_before: before,
        gate_nnz_after: gate_nnz(model),
    };
    Ok((report, updates))
}
