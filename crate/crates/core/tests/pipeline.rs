use selfish_rnn::analysis::{topology_distance, Alignment, TopologySnapshot};
use selfish_rnn::kernels::Exec;
use selfish_rnn::model::{BpttBatch, HiddenState, LanguageModel};
use selfish_rnn::train::experiment::run_experiment;
use selfish_rnn::train::{evaluate_tokens, read_metrics, train, Checkpoint, Corpus, Preset, TrainingConfig};
use rand::SeedableRng;

fn tiny(extra: &[(&str, &str)]) -> TrainingConfig {
    let mut pairs = vec![
        ("seed", "5"),
        ("emb", "12"),
        ("hidden", "12"),
        ("layers", "2"),
        ("vocab_cap", "0"),
        ("synthetic_words", "30"),
        ("synthetic_train_tokens", "2000"),
        ("synthetic_eval_tokens", "400"),
        ("sparsity", "0.5"),
        ("batch", "8"),
        ("bptt", "10"),
        ("epochs", "3"),
    ];
    pairs.extend_from_slice(extra);
    TrainingConfig::from_pairs(pairs).unwrap()
}

fn corpus(cfg: &TrainingConfig) -> Corpus {
    cfg.corpus.load(cfg.vocab_cap).unwrap()
}

#[test]
fn artifacts_on_disk_match_in_memory_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(&[("optimizer", "snt-asgd"), ("nonmono", "0")]);
    cfg.metrics = Some(dir.path().join("run/metrics.jsonl"));
    cfg.snapshots = Some(dir.path().join("run/snapshots"));
    cfg.checkpoint = Some(dir.path().join("run/final.ckpt"));
    let out = train(&cfg, &corpus(&cfg)).unwrap();

    assert_eq!(read_metrics(cfg.metrics.as_ref().unwrap()).unwrap(), out.records);
    for snap in &out.snapshots {
        let path = cfg.snapshots.as_ref().unwrap().join(TopologySnapshot::file_name(snap.epoch));
        assert_eq!(&TopologySnapshot::load(&path).unwrap(), snap);
    }
    assert_eq!(out.snapshots.len(), cfg.epochs + 1);
    assert_eq!(Checkpoint::load(cfg.checkpoint.as_ref().unwrap()).unwrap(), out.checkpoint);
}

/// Mean next-token NLL over the whole split in one forward pass per stream,
/// with the log-softmax written out directly.
fn single_pass_nll(model: &LanguageModel, tokens: &[u32], batch: usize) -> f64 {
    let len = tokens.len() / batch;
    let steps = len - 1;
    let mut inputs = vec![0; steps * batch];
    let mut targets = vec![0; steps * batch];
    for b in 0..batch {
        let stream = &tokens[b * len..(b + 1) * len];
        for t in 0..steps {
            inputs[t * batch + b] = stream[t];
            targets[t * batch + b] = stream[t + 1];
        }
    }
    let window = BpttBatch {
        seq_len: steps,
        batch,
        inputs,
        targets: targets.clone(),
    };
    let state = HiddenState::zeros(&model.dims, batch);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let out = model.forward_with(Exec::Sequential, &window, &state, 0.0, &mut rng).unwrap();
    let v = model.dims.vocab;
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let row = &out.logits[i * v..(i + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - row[y as usize];
    }
    total / targets.len() as f64
}

#[test]
fn windowed_evaluation_matches_single_pass_oracle() {
    let cfg = tiny(&[("epochs", "2")]);
    let c = corpus(&cfg);
    let out = train(&cfg, &c).unwrap();
    let model = out.checkpoint.eval_model().unwrap();
    for bptt in [7, 35] {
        let (loss, ppl) = evaluate_tokens(Exec::default(), &model, &c.valid, cfg.eval_batch, bptt).unwrap();
        let oracle = single_pass_nll(&model, &c.valid, cfg.eval_batch);
        assert!((loss - oracle).abs() <= 1e-10, "bptt {bptt}: {loss} vs {oracle}");
        assert!((ppl - oracle.exp()).abs() <= 1e-8 * ppl);
    }
}

#[test]
fn distance_from_an_early_epoch_grows_under_dynamic_training() {
    let cfg = tiny(&[("prune_rate", "0.1"), ("epochs", "16"), ("optimizer", "sgd"), ("lr", "10")]);
    let out = train(&cfg, &corpus(&cfg)).unwrap();
    let id = Alignment::identity();
    let reference = &out.snapshots[5];
    let d: Vec<f64> = out.snapshots[5..]
        .iter()
        .map(|s| topology_distance(reference, s, &id).unwrap())
        .collect();
    assert_eq!(d[0], 0.0);
    let smooth: Vec<f64> = d.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] >= w[0], "smoothed distances {smooth:?}");
    }
    assert!(d.last().unwrap() > &0.0);
}

#[test]
fn static_runs_keep_every_snapshot_identical() {
    let cfg = tiny(&[("prune_rate", "0"), ("epochs", "4")]);
    let out = train(&cfg, &corpus(&cfg)).unwrap();
    let id = Alignment::identity();
    for a in &out.snapshots {
        for b in &out.snapshots {
            assert_eq!(topology_distance(a, b, &id).unwrap(), 0.0);
        }
    }
}

#[test]
fn experiment_writes_a_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("epochs", "2"), ("nonmono", "0")]);
    let (report, outputs) = run_experiment(Preset::SntAsgdMechanism, &cfg, 1, Some(dir.path()), 2).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert_eq!(outputs.len(), 2);
    for f in ["summary.csv", "summary.jsonl", "groups.csv", "distance.csv", "flops.csv", "report.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    for r in &report.runs {
        let run_dir = dir.path().join(&r.label);
        assert!(run_dir.join("metrics.jsonl").is_file());
        assert!(run_dir.join("checkpoint.ckpt").is_file());
        assert!(run_dir.join("snapshots").join(TopologySnapshot::file_name(2)).is_file());
    }
}

#[test]
fn growth_comparison_reports_pairwise_curves() {
    let cfg = tiny(&[("epochs", "2"), ("prune_rate", "0.3")]);
    let (report, _) = run_experiment(Preset::GrowthComparison, &cfg, 3, None, 1).unwrap();
    assert_eq!(report.runs.len(), 6);
    for g in &report.groups {
        let d = g.mean_final_distance.expect("distance per growth group");
        assert!((0.0..=1.0).contains(&d));
    }
    // Three pairs per group, one point per epoch including the initial masks.
    assert_eq!(report.distances.len(), 2 * 3 * 3);
}

#[test]
fn parallel_and_sequential_training_agree() {
    let cfg = tiny(&[("growth", "gradient")]);
    let c = corpus(&cfg);
    let a = selfish_rnn::train::train_with(Exec::Sequential, &cfg, &c).unwrap();
    let b = selfish_rnn::train::train_with(Exec::Parallel, &cfg, &c).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.checkpoint, b.checkpoint);
}
