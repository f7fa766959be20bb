//! Corpus handling, the training loop, checkpoints and experiment presets.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod experiment;
pub mod metrics;
pub mod synthetic;
pub mod trainer;

pub use batch::batchify;
pub use checkpoint::Checkpoint;
pub use config::{parse_config_text, CorpusSource, TrainingConfig};
pub use corpus::{load_corpus, Corpus, Split, Vocabulary};
pub use experiment::{run_experiment, Preset};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use synthetic::SyntheticSpec;
pub use trainer::{evaluate, evaluate_tokens, train, train_with, RunOutputs};
