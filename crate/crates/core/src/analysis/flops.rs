//! Training FLOPs per step for dense and sparse training methods.
//!
//! `f_D` is the forward cost of the dense model and `f_S = (1 - S) f_D`
//! that of the sparse one. A backward pass costs twice its forward pass.
//! Connectivity-update and embedding-lookup costs are left out.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainingMethod {
    Dense,
    /// Structured or iterative pruning from a dense start.
    IssOrPruning,
    Set,
    Dsr,
    Snfs,
    Rigl,
    Selfish,
}

impl TrainingMethod {
    pub const ALL: [TrainingMethod; 7] = [
        TrainingMethod::Dense,
        TrainingMethod::IssOrPruning,
        TrainingMethod::Set,
        TrainingMethod::Dsr,
        TrainingMethod::Snfs,
        TrainingMethod::Rigl,
        TrainingMethod::Selfish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingMethod::Dense => "dense",
            TrainingMethod::IssOrPruning => "pruning",
            TrainingMethod::Set => "set",
            TrainingMethod::Dsr => "dsr",
            TrainingMethod::Snfs => "snfs",
            TrainingMethod::Rigl => "rigl",
            TrainingMethod::Selfish => "selfish",
        }
    }
}

impl fmt::Display for TrainingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TrainingMethod::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "iss" && *m == TrainingMethod::IssOrPruning))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown training method {s:?}")))
    }
}

/// FLOPs of one training step.
///
/// `density_t` is the average fraction of weights kept by a pruning
/// schedule and is required for [`TrainingMethod::IssOrPruning`];
/// `update_interval` is the number of sparse steps between dense-gradient
/// steps and is required for [`TrainingMethod::Rigl`].
pub fn flops_per_step(
    method: TrainingMethod,
    f_dense: f64,
    sparsity: f64,
    density_t: Option<f64>,
    update_interval: Option<f64>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidSparsity(sparsity));
    }
    let f_d = f_dense;
    let f_s = (1.0 - sparsity) * f_d;
    Ok(match method {
        TrainingMethod::Dense => 3.0 * f_d,
        TrainingMethod::IssOrPruning => {
            let s_t = density_t
                .ok_or_else(|| Error::InvalidConfig("pruning FLOPs need the schedule density".into()))?;
            3.0 * f_d * s_t
        }
        TrainingMethod::Set | TrainingMethod::Dsr | TrainingMethod::Selfish => 3.0 * f_s,
        TrainingMethod::Snfs => 2.0 * f_s + f_d,
        TrainingMethod::Rigl => {
            let dt = update_interval
                .ok_or_else(|| Error::InvalidConfig("RigL FLOPs need the update interval".into()))?;
            if !(dt >= 0.0) {
                return Err(Error::InvalidConfig(format!("update interval {dt} must be non-negative")));
            }
            if dt.is_infinite() {
                3.0 * f_s
            } else {
                (3.0 * f_s * dt + 2.0 * f_s + f_d) / (dt + 1.0)
            }
        }
    })
}

/// Training cost relative to dense training.
pub fn training_ratio(
    method: TrainingMethod,
    sparsity: f64,
    density_t: Option<f64>,
    update_interval: Option<f64>,
) -> Result<f64> {
    Ok(flops_per_step(method, 1.0, sparsity, density_t, update_interval)? / 3.0)
}

/// Dense forward FLOPs per token: two per multiply-add over every LSTM
/// weight matrix and the decoder. Bias additions and gate nonlinearities
/// are not counted.
pub fn model_forward_flops(dims: &ModelDims) -> f64 {
    let mut macs = 0usize;
    for l in 0..dims.layers {
        macs += 4 * dims.hidden * (dims.layer_input_dim(l) + dims.hidden);
    }
    macs += dims.vocab * dims.hidden;
    2.0 * macs as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub method: TrainingMethod,
    pub sparsity: f64,
    pub train_flops: f64,
    pub train_ratio: f64,
    pub inference_flops: f64,
}

/// One row per method and sparsity. Methods whose parameters are missing
/// are skipped.
pub fn flops_table(
    f_dense: f64,
    sparsities: &[f64],
    density_t: Option<f64>,
    update_interval: Option<f64>,
) -> Result<Vec<FlopsRow>> {
    let mut rows = Vec::new();
    for &s in sparsities {
        for m in TrainingMethod::ALL {
            let train = match flops_per_step(m, f_dense, s, density_t, update_interval) {
                Ok(v) => v,
                Err(Error::InvalidConfig(_)) => continue,
                Err(e) => return Err(e),
            };
            let inference = if m == TrainingMethod::Dense { f_dense } else { (1.0 - s) * f_dense };
            rows.push(FlopsRow {
                method: m,
                sparsity: s,
                train_flops: train,
                train_ratio: train / (3.0 * f_dense),
                inference_flops: inference,
            });
        }
    }
    Ok(rows)
}
