//! The training loop and evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::gates::gate_sparsity_breakdown;
use crate::analysis::snapshot::TopologySnapshot;
use crate::dst::{epoch_update, init_model_sparsity, ConnectivityUpdateReport, GrowthPolicy};
use crate::error::{Error, Result};
use crate::kernels::Exec;
use crate::model::{clip_gradients, softmax_cross_entropy, HiddenState, LanguageModel, BLOCKS_PER_LAYER};
use crate::optim::Optimizer;

use super::batch::batchify;
use super::checkpoint::Checkpoint;
use super::config::TrainingConfig;
use super::corpus::{Corpus, Split};
use super::metrics::{MetricsRecord, MetricsWriter, LARGE_WEIGHT_THRESHOLD, METRICS_SCHEMA};

/// Everything a run produces besides the files it writes.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub records: Vec<MetricsRecord>,
    /// Snapshot of the initial masks followed by one per epoch.
    pub snapshots: Vec<TopologySnapshot>,
    pub updates: Vec<ConnectivityUpdateReport>,
    pub checkpoint: Checkpoint,
}

impl RunOutputs {
    pub fn final_valid_ppl(&self) -> Option<f64> {
        self.records.last().map(|r| r.valid_ppl)
    }
}

/// Mean cross-entropy and perplexity of `model` over `tokens`, carrying
/// the hidden state across windows. No dropout, no rng.
pub fn evaluate_tokens(
    exec: Exec,
    model: &LanguageModel,
    tokens: &[u32],
    batch: usize,
    bptt: usize,
) -> Result<(f64, f64)> {
    let windows = batchify(tokens, batch, bptt)?;
    let mut state = HiddenState::zeros(&model.dims, batch);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut total, mut count) = (0.0, 0usize);
    for w in &windows {
        let out = model.forward_with(exec, w, &state, 0.0, &mut rng)?;
        let n = w.targets.len();
        total += softmax_cross_entropy(&out.logits, &w.targets, model.dims.vocab) * n as f64;
        count += n;
        state = out.state;
    }
    let loss = total / count as f64;
    Ok((loss, loss.exp()))
}

/// Evaluates a checkpoint's evaluation model on one corpus split.
pub fn evaluate(exec: Exec, checkpoint: &Checkpoint, corpus: &Corpus, split: Split) -> Result<(f64, f64)> {
    if checkpoint.vocab != corpus.vocab.tokens() {
        return Err(Error::VocabMismatch(format!(
            "checkpoint vocabulary has {} tokens, corpus has {}",
            checkpoint.vocab.len(),
            corpus.vocab.len()
        )));
    }
    let model = checkpoint.eval_model()?;
    let cfg = &checkpoint.config;
    evaluate_tokens(exec, &model, corpus.split(split), cfg.eval_batch, cfg.bptt)
}

fn large_weight_counts(model: &LanguageModel) -> BTreeMap<String, usize> {
    model
        .sparse_kinds()
        .into_iter()
        .map(|k| {
            let t = model.sparse(k).expect("sparse kind");
            let n = t.values().iter().filter(|v| v.abs() > LARGE_WEIGHT_THRESHOLD).count();
            (k.name(), n)
        })
        .collect()
}

/// Builds the initial sparse model for `config`.
pub fn initial_model(config: &TrainingConfig, vocab: usize) -> Result<LanguageModel> {
    let dims = config.dims(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(config.model_seed()?);
    let mut model = LanguageModel::new(dims, &mut rng)?;
    init_model_sparsity(&mut model, &config.dst, &mut rng)?;
    Ok(model)
}

pub fn train(config: &TrainingConfig, corpus: &Corpus) -> Result<RunOutputs> {
    train_with(Exec::default(), config, corpus)
}

/// Runs the full schedule: per epoch, masked SGD-style steps over all
/// training windows, validation with the evaluation view, the averaging
/// trigger, then one connectivity update (skipped after the last epoch).
pub fn train_with(exec: Exec, config: &TrainingConfig, corpus: &Corpus) -> Result<RunOutputs> {
    config.validate()?;
    let seed = config.require_seed()?;
    let vocab = corpus.vocab.len();
    let mut model = initial_model(config, vocab)?;
    let mut dst = config.dst.clone();
    dst.total_epochs = config.prune_epochs.unwrap_or(config.epochs).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut opt = Optimizer::for_model(config.optimizer.clone(), &model)?;
    let train_windows = batchify(&corpus.train, config.batch, config.bptt)?;
    if config.epochs > 0 {
        batchify(&corpus.valid, config.eval_batch, config.bptt)?;
    }

    let digest = config.digest();
    let mut snapshots = vec![TopologySnapshot::from_model(&model, 0, digest.clone())];
    if let Some(dir) = &config.snapshots {
        std::fs::create_dir_all(dir)?;
        snapshots[0].save(&dir.join(TopologySnapshot::file_name(0)))?;
    }
    let mut writer = config.metrics.as_deref().map(MetricsWriter::create).transpose()?;
    let want_dense = dst.growth == GrowthPolicy::Gradient && dst.initial_prune_rate > 0.0;
    let started = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);
    let mut updates = Vec::new();
    let mut trigger_epoch = None;

    for epoch in 1..=config.epochs {
        let mut state = HiddenState::zeros(&model.dims, config.batch);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        let mut dense_grads = None;
        for (step, w) in train_windows.iter().enumerate() {
            let out = model.forward_with(exec, w, &state, config.dropout, &mut rng)?;
            let loss = softmax_cross_entropy(&out.logits, &w.targets, vocab);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, step {step}")));
            }
            let last = step + 1 == train_windows.len();
            let bw = model.backward_with(exec, &out.cache, &out.logits, &w.targets, want_dense && last)?;
            let mut grads = bw.grads;
            clip_gradients(&mut grads, config.clip);
            opt.step(&mut model.slots_mut(), &grads).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            })?;
            if last {
                dense_grads = bw.dense;
            }
            loss_sum += loss * w.targets.len() as f64;
            count += w.targets.len();
            state = out.state;
        }
        let train_loss = loss_sum / count as f64;

        let eval_model = opt.eval_model(&model)?;
        let (valid_loss, valid_ppl) =
            evaluate_tokens(exec, &eval_model, &corpus.valid, config.eval_batch, config.bptt)?;
        if !valid_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let large_weights = large_weight_counts(&eval_model);
        let outcome = opt.on_validation(valid_loss);
        if outcome.triggered_now {
            trigger_epoch = Some(epoch);
        }

        let (prune_rate, rewired) = if epoch < config.epochs {
            let (report, _) = epoch_update(&mut model, epoch, &dst, dense_grads.as_ref(), &mut rng, &mut opt)?;
            let rewired = report.tensors.iter().map(|t| t.removed).sum();
            let rate = report.prune_rate;
            updates.push(report);
            (rate, rewired)
        } else {
            (0.0, 0)
        };

        let gates = gate_sparsity_breakdown(&model);
        let record = MetricsRecord {
            schema: METRICS_SCHEMA.into(),
            epoch,
            train_loss,
            train_ppl: train_loss.exp(),
            valid_loss,
            valid_ppl,
            lr: outcome.lr,
            averaging_active: outcome.averaging_active,
            trigger_epoch,
            prune_rate,
            rewired,
            total_nnz: model.total_nnz(),
            layer_nnz: model.layers.iter().map(|l| l.nnz()).collect(),
            gate_sparsity: gates
                .chunks(BLOCKS_PER_LAYER)
                .map(|c| c.iter().map(|g| g.sparsity).collect())
                .collect(),
            large_weights,
            wall_time_s: config.wall_time.then(|| started.elapsed().as_secs_f64()),
        };
        if let Some(w) = writer.as_mut() {
            w.write(&record)?;
        }
        records.push(record);

        let snap = TopologySnapshot::from_model(&model, epoch, digest.clone());
        if let Some(dir) = &config.snapshots {
            snap.save(&dir.join(TopologySnapshot::file_name(epoch)))?;
        }
        snapshots.push(snap);
    }

    let checkpoint = Checkpoint::new(
        config,
        corpus.vocab.tokens().to_vec(),
        config.epochs,
        &model,
        &opt,
        &rng,
    )?;
    if let Some(path) = &config.checkpoint {
        checkpoint.save(path)?;
    }
    Ok(RunOutputs {
        records,
        snapshots,
        updates,
        checkpoint,
    })
}
