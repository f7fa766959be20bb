//! Experiment presets: matched run matrices with shared seeds plus the
//! analyses that compare them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::distance::{topology_distance, Alignment};
use crate::analysis::flops::{flops_table, model_forward_flops, FlopsRow};
use crate::analysis::semi_match::{record_activations, semi_match, UnitAlignment};
use crate::dst::{GrowthPolicy, InitDistribution, Redistribution, RemovalPolicy};
use crate::error::{Error, Result};
use crate::kernels::Exec;
use crate::model::BpttBatch;
use crate::optim::{OptimizerConfig, OptimizerKind};

use super::batch::batchify;
use super::config::TrainingConfig;
use super::corpus::{Corpus, Split};
use super::trainer::{evaluate, train_with, RunOutputs};

/// Environment variable bounding how many runs execute concurrently.
pub const THREADS_ENV: &str = "SELFISH_DST_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    OptimizerGrid,
    GrowthComparison,
    InitComparison,
    StaticVsDynamic,
    SntAsgdMechanism,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::OptimizerGrid,
        Preset::GrowthComparison,
        Preset::InitComparison,
        Preset::StaticVsDynamic,
        Preset::SntAsgdMechanism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::OptimizerGrid => "optimizer_grid",
            Preset::GrowthComparison => "growth_comparison",
            Preset::InitComparison => "init_comparison",
            Preset::StaticVsDynamic => "static_vs_dynamic",
            Preset::SntAsgdMechanism => "snt_asgd_mechanism",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

/// One planned run: a label, its group within the preset and its config.
#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub label: String,
    pub group: String,
    pub config: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub group: String,
    pub optimizer: String,
    pub growth: String,
    pub removal: String,
    pub init: String,
    pub redistribution: String,
    pub sparsity: f64,
    pub prune_rate: f64,
    pub seed: u64,
    pub init_seed: u64,
    pub epochs: usize,
    pub total_nnz: usize,
    pub trigger_epoch: Option<usize>,
    pub final_valid_ppl: f64,
    pub test_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub group: String,
    pub run_a: String,
    pub run_b: String,
    pub epoch: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub group: String,
    pub runs: usize,
    pub mean_final_valid_ppl: f64,
    /// Mean final distance over the group's run pairs, when computed.
    pub mean_final_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub preset: Preset,
    pub runs: Vec<RunSummary>,
    pub groups: Vec<GroupMean>,
    pub distances: Vec<DistancePoint>,
    pub flops: Vec<FlopsRow>,
}

fn with(base: &TrainingConfig, f: impl FnOnce(&mut TrainingConfig)) -> TrainingConfig {
    let mut c = base.clone();
    f(&mut c);
    c
}

fn optimizer_with_base_nonmono(base: &TrainingConfig, kind: OptimizerKind) -> OptimizerConfig {
    OptimizerConfig {
        nonmono: base.optimizer.nonmono,
        ..OptimizerConfig::preset(kind)
    }
}

/// The run matrix of `preset`. `seeds` controls how many seeds (or seed
/// triples for the growth comparison) are used; the base seed offsets
/// them all.
pub fn plan(preset: Preset, base: &TrainingConfig, seeds: usize) -> Result<Vec<PlannedRun>> {
    let s0 = base.require_seed()?;
    let seeds = seeds.max(1);
    let mut runs = Vec::new();
    let mut push = |label: String, group: &str, config: TrainingConfig| {
        runs.push(PlannedRun {
            label,
            group: group.to_string(),
            config,
        })
    };
    match preset {
        Preset::OptimizerGrid => {
            let methods: [(&str, RemovalPolicy, Redistribution, GrowthPolicy); 3] = [
                ("selfish", RemovalPolicy::Magnitude, Redistribution::CellGate, GrowthPolicy::Random),
                ("set", RemovalPolicy::SetStyle, Redistribution::None, GrowthPolicy::Random),
                ("rigl", RemovalPolicy::Magnitude, Redistribution::None, GrowthPolicy::Gradient),
            ];
            for (name, removal, redistribution, growth) in methods {
                for kind in [OptimizerKind::Adam, OptimizerKind::MomentumSgd, OptimizerKind::SntAsgd] {
                    for i in 0..seeds {
                        let group = format!("{name}/{kind}");
                        push(
                            format!("{name}-{kind}-s{i}"),
                            &group,
                            with(base, |c| {
                                c.dst.removal = removal;
                                c.dst.redistribution = redistribution;
                                c.dst.growth = growth;
                                c.optimizer = optimizer_with_base_nonmono(base, kind);
                                c.seed = Some(s0 + i as u64);
                            }),
                        );
                    }
                }
            }
        }
        Preset::GrowthComparison => {
            for growth in [GrowthPolicy::Random, GrowthPolicy::Gradient] {
                for i in 0..3 {
                    push(
                        format!("{growth}-s{i}"),
                        growth.name(),
                        with(base, |c| {
                            c.dst.growth = growth;
                            c.init_seed = Some(base.init_seed.unwrap_or(s0));
                            c.seed = Some(s0 + 1 + i);
                        }),
                    );
                }
            }
        }
        Preset::InitComparison => {
            for init in [InitDistribution::Uniform, InitDistribution::ErdosRenyi] {
                for i in 0..seeds {
                    push(
                        format!("{init}-s{i}"),
                        init.name(),
                        with(base, |c| {
                            c.dst.init = init;
                            c.seed = Some(s0 + i as u64);
                        }),
                    );
                }
            }
        }
        Preset::StaticVsDynamic => {
            for (group, p0) in [("selfish", base.dst.initial_prune_rate), ("static", 0.0)] {
                for i in 0..seeds.max(3) {
                    push(
                        format!("{group}-s{i}"),
                        group,
                        with(base, |c| {
                            c.dst.initial_prune_rate = p0;
                            c.dst.init = InitDistribution::Uniform;
                            c.optimizer = optimizer_with_base_nonmono(base, OptimizerKind::SntAsgd);
                            c.optimizer.lr = base.optimizer.lr;
                            c.seed = Some(s0 + i as u64);
                        }),
                    );
                }
            }
        }
        Preset::SntAsgdMechanism => {
            for kind in [OptimizerKind::NtAsgd, OptimizerKind::SntAsgd] {
                push(
                    kind.name().to_string(),
                    kind.name(),
                    with(base, |c| {
                        c.optimizer.kind = kind;
                    }),
                );
            }
        }
    }
    Ok(runs)
}

/// Number of concurrent runs: `SELFISH_DST_THREADS` when set to a positive
/// integer, otherwise the available parallelism.
pub fn experiment_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Executes planned runs, at most `threads` at a time, returning outputs
/// in plan order.
pub fn execute(runs: &[PlannedRun], corpus: &Corpus, threads: usize) -> Result<Vec<RunOutputs>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            runs.par_iter()
                .map(|r| train_with(Exec::Sequential, &r.config, corpus))
                .collect()
        })
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        runs.iter().map(|r| train_with(Exec::Sequential, &r.config, corpus)).collect()
    }
}

fn probe_windows(corpus: &Corpus, cfg: &TrainingConfig) -> Result<Vec<BpttBatch>> {
    let mut w = batchify(&corpus.valid, cfg.eval_batch, cfg.bptt)?;
    w.truncate(8);
    Ok(w)
}

/// Per-layer semi-matching of run `b`'s final units onto run `a`'s.
fn final_alignment(a: &RunOutputs, b: &RunOutputs, probe: &[BpttBatch]) -> Result<Alignment> {
    let ma = a.checkpoint.eval_model()?;
    let mb = b.checkpoint.eval_model()?;
    let ra = record_activations(Exec::Sequential, &ma, probe)?;
    let rb = record_activations(Exec::Sequential, &mb, probe)?;
    let maps: Vec<UnitAlignment> = rb
        .iter()
        .zip(&ra)
        .map(|(x, y)| semi_match(Exec::Sequential, x, y))
        .collect::<Result<_>>()?;
    Alignment::for_stacked_lstm(&ma.dims, &maps)
}

/// Distance curve between two runs, with units aligned by semi-matching
/// on the final models.
pub fn pair_distance_curve(a: &RunOutputs, b: &RunOutputs, probe: &[BpttBatch]) -> Result<Vec<(usize, f64)>> {
    let al = final_alignment(a, b, probe)?;
    a.snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| Ok((x.epoch, topology_distance(x, y, &al)?)))
        .collect()
}

fn summarize(run: &PlannedRun, out: &RunOutputs, corpus: &Corpus) -> Result<RunSummary> {
    let c = &run.config;
    let (_, test_ppl) = evaluate(Exec::Sequential, &out.checkpoint, corpus, Split::Test)?;
    Ok(RunSummary {
        label: run.label.clone(),
        group: run.group.clone(),
        optimizer: c.optimizer.kind.name().into(),
        growth: c.dst.growth.name().into(),
        removal: c.dst.removal.name().into(),
        init: c.dst.init.name().into(),
        redistribution: c.dst.redistribution.name().into(),
        sparsity: c.dst.sparsity,
        prune_rate: c.dst.initial_prune_rate,
        seed: c.require_seed()?,
        init_seed: c.model_seed()?,
        epochs: c.epochs,
        total_nnz: out.checkpoint.model.total_nnz(),
        trigger_epoch: out.records.last().and_then(|r| r.trigger_epoch),
        final_valid_ppl: out.final_valid_ppl().unwrap_or(f64::NAN),
        test_ppl,
    })
}

/// Plans, runs and analyzes `preset`. When `out_dir` is given, every run
/// writes its metrics, snapshots and checkpoint below it and the bundle
/// (`summary.csv`, `summary.jsonl`, `groups.csv`, `distance.csv`,
/// `flops.csv`, `report.json`) lands in it.
pub fn run_experiment(
    preset: Preset,
    base: &TrainingConfig,
    seeds: usize,
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<(ExperimentReport, Vec<RunOutputs>)> {
    let corpus = base.corpus.load(base.vocab_cap)?;
    let mut runs = plan(preset, base, seeds)?;
    if let Some(dir) = out_dir {
        for r in &mut runs {
            let d: PathBuf = dir.join(&r.label);
            r.config.metrics = Some(d.join("metrics.jsonl"));
            r.config.snapshots = Some(d.join("snapshots"));
            r.config.checkpoint = Some(d.join("checkpoint.ckpt"));
        }
    }
    let outputs = execute(&runs, &corpus, threads)?;
    let summaries: Vec<RunSummary> = runs
        .iter()
        .zip(&outputs)
        .map(|(r, o)| summarize(r, o, &corpus))
        .collect::<Result<_>>()?;

    let mut distances = Vec::new();
    let mut group_names: Vec<String> = Vec::new();
    for r in &runs {
        if !group_names.contains(&r.group) {
            group_names.push(r.group.clone());
        }
    }
    let mut final_distance: Vec<Option<f64>> = vec![None; group_names.len()];
    if preset == Preset::GrowthComparison {
        let probe = probe_windows(&corpus, base)?;
        for (gi, g) in group_names.iter().enumerate() {
            let idx: Vec<usize> = (0..runs.len()).filter(|&i| &runs[i].group == g).collect();
            let mut finals = Vec::new();
            for (x, &i) in idx.iter().enumerate() {
                for &j in &idx[x + 1..] {
                    let curve = pair_distance_curve(&outputs[i], &outputs[j], &probe)?;
                    if let Some(&(_, d)) = curve.last() {
                        finals.push(d);
                    }
                    distances.extend(curve.into_iter().map(|(epoch, distance)| DistancePoint {
                        group: g.clone(),
                        run_a: runs[i].label.clone(),
                        run_b: runs[j].label.clone(),
                        epoch,
                        distance,
                    }));
                }
            }
            if !finals.is_empty() {
                final_distance[gi] = Some(finals.iter().sum::<f64>() / finals.len() as f64);
            }
        }
    }
    let groups = group_names
        .iter()
        .zip(final_distance)
        .map(|(g, d)| {
            let ppl: Vec<f64> = summaries.iter().filter(|s| &s.group == g).map(|s| s.final_valid_ppl).collect();
            GroupMean {
                group: g.clone(),
                runs: ppl.len(),
                mean_final_valid_ppl: ppl.iter().sum::<f64>() / ppl.len() as f64,
                mean_final_distance: d,
            }
        })
        .collect();

    let mut sparsities: Vec<f64> = runs.iter().map(|r| r.config.dst.sparsity).collect();
    sparsities.sort_by(f64::total_cmp);
    sparsities.dedup();
    let f_d = model_forward_flops(&base.dims(corpus.vocab.len()));
    let flops = flops_table(f_d, &sparsities, None, Some(100.0))?;

    let report = ExperimentReport {
        preset,
        runs: summaries,
        groups,
        distances,
        flops,
    };
    if let Some(dir) = out_dir {
        write_bundle(dir, &report)?;
    }
    Ok((report, outputs))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes the CSV/JSONL bundle for `report` into `dir`.
pub fn write_bundle(dir: &Path, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from(
        "label,group,optimizer,growth,removal,init,redistribution,sparsity,prune_rate,seed,init_seed,epochs,total_nnz,trigger_epoch,final_valid_ppl,test_ppl\n",
    );
    let mut jsonl = String::new();
    for r in &report.runs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.group,
            r.optimizer,
            r.growth,
            r.removal,
            r.init,
            r.redistribution,
            r.sparsity,
            r.prune_rate,
            r.seed,
            r.init_seed,
            r.epochs,
            r.total_nnz,
            r.trigger_epoch.map_or(String::new(), |e| e.to_string()),
            r.final_valid_ppl,
            r.test_ppl
        );
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    std::fs::write(dir.join("summary.csv"), csv)?;
    std::fs::write(dir.join("summary.jsonl"), jsonl)?;

    let mut groups = String::from("group,runs,mean_final_valid_ppl,mean_final_distance\n");
    for g in &report.groups {
        let _ = writeln!(
            groups,
            "{},{},{},{}",
            g.group,
            g.runs,
            g.mean_final_valid_ppl,
            opt_f64(g.mean_final_distance)
        );
    }
    std::fs::write(dir.join("groups.csv"), groups)?;

    let mut dist = String::from("group,run_a,run_b,epoch,distance\n");
    for d in &report.distances {
        let _ = writeln!(dist, "{},{},{},{},{}", d.group, d.run_a, d.run_b, d.epoch, d.distance);
    }
    std::fs::write(dir.join("distance.csv"), dist)?;

    let mut flops = String::from("method,sparsity,train_flops,train_ratio,inference_flops\n");
    for f in &report.flops {
        let _ = writeln!(
            flops,
            "{},{},{},{},{}",
            f.method, f.sparsity, f.train_flops, f.train_ratio, f.inference_flops
        );
    }
    std::fs::write(dir.join("flops.csv"), flops)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}
