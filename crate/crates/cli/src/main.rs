use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use selfish_rnn::analysis::distance::{edit_counts, Alignment};
use selfish_rnn::analysis::flops::{flops_table, model_forward_flops, training_ratio, TrainingMethod};
use selfish_rnn::analysis::gates::{gate_sparsity_breakdown, sparsest_block};
use selfish_rnn::analysis::snapshot::TopologySnapshot;
use selfish_rnn::kernels::Exec;
use selfish_rnn::train::experiment::{experiment_threads, run_experiment, Preset};
use selfish_rnn::train::synthetic::{generate, SyntheticSpec};
use selfish_rnn::train::{evaluate, train, Checkpoint, Split, TrainingConfig};

#[derive(Parser)]
#[command(name = "selfish-rnn", version, about = "Dynamic sparse training for LSTM language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, snapshots and a checkpoint.
    Train {
        #[command(flatten)]
        opts: TrainOpts,
        /// Where to write the final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a corpus split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Corpus directory overriding the one recorded in the checkpoint.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Topological distance between mask snapshots.
    Distance {
        /// Two snapshot files to compare.
        #[arg(num_args = 0..=2)]
        files: Vec<PathBuf>,
        /// Snapshot directory: prints distance of every epoch to `--reference`.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        reference: usize,
    },
    /// Training FLOPs per step and ratios versus dense training.
    Flops {
        /// Comma-separated sparsities.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.67, 0.62, 0.53, 0.68])]
        sparsity: Vec<f64>,
        /// Dense forward FLOPs; derived from `--config` model dims when omitted.
        #[arg(long)]
        f_dense: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Vocabulary size used with `--config`.
        #[arg(long, default_value_t = 10_000)]
        vocab: usize,
        /// Sparse steps between dense-gradient steps (RigL).
        #[arg(long, default_value_t = 100.0)]
        delta_t: f64,
        /// Average density of a pruning schedule.
        #[arg(long)]
        density: Option<f64>,
    },
    /// Per-gate sparsity of a checkpoint.
    Gates {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an experiment preset and write its report bundle.
    Experiment {
        #[arg(long, value_parser = parse_preset)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        /// Seeds (or seed groups) per configuration.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Write a synthetic corpus (train.txt, valid.txt, test.txt) to a directory.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        words: usize,
        #[arg(long, default_value_t = 60_000)]
        tokens: usize,
        #[arg(long, default_value_t = 1234)]
        corpus_seed: u64,
    },
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: selfish_rnn::Error| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum Growth {
    Random,
    Gradient,
}

#[derive(Clone, Copy, ValueEnum)]
enum Removal {
    Magnitude,
    Set,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Uniform,
    Er,
}

#[derive(Clone, Copy, ValueEnum)]
enum Redistribution {
    CellGate,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Sgd,
    Momentum,
    Adam,
    NtAsgd,
    SntAsgd,
}

/// Flags shared by `train` and `experiment`; each overrides the matching
/// config-file key.
#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    prune_rate: Option<f64>,
    #[arg(long, value_enum)]
    growth: Option<Growth>,
    #[arg(long, value_enum)]
    removal: Option<Removal>,
    #[arg(long, value_enum)]
    init: Option<Init>,
    #[arg(long, value_enum)]
    redistribution: Option<Redistribution>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    nonmono: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    bptt: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("named variant").get_name().to_string()
}

impl TrainOpts {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("optimizer", self.optimizer.map(value_name));
        put("sparsity", self.sparsity.map(|x| x.to_string()));
        put("prune_rate", self.prune_rate.map(|x| x.to_string()));
        put("growth", self.growth.map(value_name));
        put("removal", self.removal.map(value_name));
        put("init", self.init.map(value_name));
        put("redistribution", self.redistribution.map(value_name));
        put("lr", self.lr.map(|x| x.to_string()));
        put("nonmono", self.nonmono.map(|x| x.to_string()));
        put("epochs", self.epochs.map(|x| x.to_string()));
        put("batch", self.batch.map(|x| x.to_string()));
        put("bptt", self.bptt.map(|x| x.to_string()));
        put("clip", self.clip.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("snapshots", self.snapshots.as_ref().map(|p| p.display().to_string()));
        put("metrics", self.metrics.as_ref().map(|p| p.display().to_string()));
        o
    }

    fn load(&self) -> Result<TrainingConfig> {
        TrainingConfig::from_file_with_overrides(self.config.as_deref(), &self.overrides())
            .context("building the training configuration")
    }
}

fn cmd_train(opts: &TrainOpts, checkpoint: Option<PathBuf>) -> Result<()> {
    let mut cfg = opts.load()?;
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    if cfg.seed.is_none() {
        bail!("--seed (or a `seed` config key) is required");
    }
    let corpus = cfg.corpus.load(cfg.vocab_cap).context("loading the corpus")?;
    let out = train(&cfg, &corpus)?;
    let mut stdout = std::io::stdout().lock();
    for r in &out.records {
        writeln!(
            stdout,
            "epoch {:>4}  train ppl {:>10.3}  valid ppl {:>10.3}  lr {:<8}  avg {:<5}  prune {:.4}  nnz {}",
            r.epoch, r.train_ppl, r.valid_ppl, r.lr, r.averaging_active, r.prune_rate, r.total_nnz
        )?;
    }
    if let Some(p) = &cfg.checkpoint {
        writeln!(stdout, "checkpoint written to {}", p.display())?;
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, split: &str, corpus_dir: Option<PathBuf>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let split: Split = split.parse()?;
    let mut source = ck.config.corpus.clone();
    if let Some(dir) = corpus_dir {
        source = selfish_rnn::train::CorpusSource::Directory(dir);
    }
    let corpus = source.load(ck.config.vocab_cap)?;
    let (loss, ppl) = evaluate(Exec::default(), &ck, &corpus, split)?;
    println!("{}", serde_json::json!({ "loss": loss, "ppl": ppl, "averaged": ck.averaged.is_some() }));
    Ok(())
}

fn snapshot_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mask"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_distance(files: &[PathBuf], dir: Option<PathBuf>, reference: usize) -> Result<()> {
    let id = Alignment::identity();
    match (files, dir) {
        ([a, b], None) => {
            let (sa, sb) = (TopologySnapshot::load(a)?, TopologySnapshot::load(b)?);
            let e = edit_counts(&sa, &sb, &id)?;
            println!(
                "{}",
                serde_json::json!({
                    "distance": e.distance(),
                    "symmetric_difference": e.symmetric_difference,
                    "total": e.total,
                })
            );
        }
        ([], Some(dir)) => {
            let snaps: Vec<TopologySnapshot> = snapshot_files(&dir)?
                .iter()
                .map(|p| TopologySnapshot::load(p))
                .collect::<selfish_rnn::Result<_>>()?;
            let Some(r) = snaps.iter().find(|s| s.epoch == reference) else {
                bail!("no snapshot for epoch {reference} in {}", dir.display());
            };
            println!("epoch,distance");
            for s in &snaps {
                let e = edit_counts(r, s, &id)?;
                println!("{},{}", s.epoch, e.distance());
            }
        }
        _ => bail!("pass either two snapshot files or --snapshots <dir>"),
    }
    Ok(())
}

fn cmd_flops(
    sparsity: &[f64],
    f_dense: Option<f64>,
    config: Option<PathBuf>,
    vocab: usize,
    delta_t: f64,
    density: Option<f64>,
) -> Result<()> {
    let f_d = match (f_dense, config) {
        (Some(f), _) => f,
        (None, Some(path)) => {
            let cfg = TrainingConfig::from_file_with_overrides(Some(&path), &[])?;
            model_forward_flops(&cfg.dims(vocab))
        }
        (None, None) => model_forward_flops(&TrainingConfig::default().dims(vocab)),
    };
    println!("method,sparsity,train_flops,train_ratio,inference_flops");
    for r in flops_table(f_d, sparsity, density, Some(delta_t))? {
        println!(
            "{},{},{:.6e},{:.4},{:.6e}",
            r.method, r.sparsity, r.train_flops, r.train_ratio, r.inference_flops
        );
    }
    for &s in sparsity {
        let ratio = training_ratio(TrainingMethod::Selfish, s, None, None)?;
        eprintln!("selfish at S={s}: {ratio:.2}x dense training FLOPs");
    }
    Ok(())
}

fn cmd_gates(checkpoint: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let table = gate_sparsity_breakdown(&ck.model);
    println!("layer,matrix,gate,nnz,size,sparsity");
    for g in &table {
        println!("{},{},{},{},{},{:.6}", g.layer, g.side.short_name(), g.gate, g.nnz, g.size, g.sparsity);
    }
    for l in 0..ck.model.layers.len() {
        if let Some(g) = sparsest_block(&table, l) {
            eprintln!("layer {l}: sparsest block is {} {} ({:.4})", g.side.short_name(), g.gate, g.sparsity);
        }
    }
    Ok(())
}

fn cmd_experiment(preset: Preset, out: &Path, seeds: usize, opts: &TrainOpts) -> Result<()> {
    if opts.seed.is_none() {
        bail!("--seed is required for experiment presets");
    }
    let base = opts.load()?;
    let threads = experiment_threads();
    let (report, _) = run_experiment(preset, &base, seeds, Some(out), threads)?;
    println!("group,runs,mean_final_valid_ppl,mean_final_distance");
    for g in &report.groups {
        println!(
            "{},{},{:.4},{}",
            g.group,
            g.runs,
            g.mean_final_valid_ppl,
            g.mean_final_distance.map_or(String::new(), |d| format!("{d:.6}"))
        );
    }
    eprintln!("bundle written to {}", out.display());
    Ok(())
}

fn cmd_corpus(out: &Path, words: usize, tokens: usize, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        words,
        train_tokens: tokens,
        valid_tokens: tokens / 10,
        test_tokens: tokens / 10,
        seed,
        ..SyntheticSpec::default()
    };
    let (tr, va, te) = generate(&spec)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("train.txt"), tr)?;
    std::fs::write(out.join("valid.txt"), va)?;
    std::fs::write(out.join("test.txt"), te)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { opts, checkpoint } => cmd_train(&opts, checkpoint),
        Command::Eval {
            checkpoint,
            split,
            corpus,
        } => cmd_eval(&checkpoint, &split, corpus),
        Command::Distance {
            files,
            snapshots,
            reference,
        } => cmd_distance(&files, snapshots, reference),
        Command::Flops {
            sparsity,
            f_dense,
            config,
            vocab,
            delta_t,
            density,
        } => cmd_flops(&sparsity, f_dense, config, vocab, delta_t, density),
        Command::Gates { checkpoint } => cmd_gates(&checkpoint),
        Command::Experiment {
            preset,
            out,
            seeds,
            opts,
        } => cmd_experiment(preset, &out, seeds, &opts),
        Command::Corpus {
            out,
            words,
            tokens,
            corpus_seed,
        } => cmd_corpus(&out, words, tokens, corpus_seed),
    }
}
