//! Post-hoc analytics over trained or in-training models.

pub mod distance;
pub mod flops;
pub mod gates;
pub mod semi_match;
pub mod snapshot;

pub use distance::{edit_counts, topology_distance, Alignment, EditCounts, Relabel};
pub use flops::{flops_per_step, flops_table, model_forward_flops, training_ratio, FlopsRow, TrainingMethod};
pub use gates::{gate_sparsity_breakdown, sparsest_block, GateSparsity};
pub use semi_match::{pearson, record_activations, semi_match, ActivationRecord, UnitAlignment};
pub use snapshot::{TensorTopology, TopologySnapshot, MASK_FORMAT};
