//! Training configuration and its flat `key = value` text form.
//!
//! Lines are `key = value`; `#` starts a comment. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `vocab_cap` | vocabulary size bound including `<unk>`; `0` for none |
//! | `emb`, `hidden`, `layers`, `tied` | model dimensions |
//! | `sparsity`, `prune_rate` | target sparsity and initial pruning rate |
//! | `growth`, `removal`, `init`, `redistribution`, `gate_pool` | connectivity policies |
//! | `optimizer` | `sgd`, `momentum`, `adam`, `nt-asgd`, `snt-asgd`; resets the keys below to that optimizer's defaults |
//! | `lr`, `momentum`, `beta1`, `beta2`, `eps`, `nonmono` | optimizer settings |
//! | `lr_drop_factor`, `lr_drop_patience` | learning-rate drop; factor `0` disables |
//! | `batch`, `eval_batch`, `bptt`, `epochs`, `clip`, `dropout` | schedule |
//! | `prune_epochs` | horizon of the cosine prune-rate decay, at least `epochs`; `0` means `epochs` |
//! | `seed`, `init_seed` | training seed and optional separate model-init seed |
//! | `corpus` | `synthetic` or a directory holding `train.txt`, `valid.txt`, `test.txt` |
//! | `synthetic_words`, `synthetic_branching`, `synthetic_train_tokens`, `synthetic_eval_tokens`, `synthetic_seed` | generator settings |
//! | `snapshots`, `metrics`, `checkpoint` | output paths |
//! | `wall_time` | record wall-clock time in metrics (`true`/`false`) |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dst::DstConfig;
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::optim::{LrDrop, OptimizerConfig, OptimizerKind};

use super::corpus::{hex, load_corpus, Corpus};
use super::synthetic::{generate, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CorpusSource {
    Synthetic(SyntheticSpec),
    Directory(PathBuf),
}

impl CorpusSource {
    pub fn load(&self, vocab_cap: Option<usize>) -> Result<Corpus> {
        match self {
            CorpusSource::Synthetic(spec) => {
                let (tr, va, te) = generate(spec)?;
                Corpus::from_texts(&tr, &va, &te, vocab_cap)
            }
            CorpusSource::Directory(dir) => load_corpus(
                &dir.join("train.txt"),
                &dir.join("valid.txt"),
                &dir.join("test.txt"),
                vocab_cap,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub vocab_cap: Option<usize>,
    pub emb: usize,
    pub hidden: usize,
    pub layers: usize,
    pub tied: bool,
    pub dst: DstConfig,
    pub optimizer: OptimizerConfig,
    pub batch: usize,
    pub eval_batch: usize,
    pub bptt: usize,
    pub epochs: usize,
    #[serde(default)]
    pub prune_epochs: Option<usize>,
    pub clip: f64,
    pub dropout: f64,
    pub seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub corpus: CorpusSource,
    pub snapshots: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub wall_time: bool,
}

impl Default for TrainingConfig {
    /// Desk-scale reference: two untied 128-unit LSTM layers, 67% sparse,
    /// SNT-ASGD with the stacked-LSTM schedule.
    fn default() -> Self {
        TrainingConfig {
            vocab_cap: Some(10_000),
            emb: 128,
            hidden: 128,
            layers: 2,
            tied: false,
            dst: DstConfig::default(),
            optimizer: OptimizerConfig::preset(OptimizerKind::SntAsgd),
            batch: 20,
            eval_batch: 10,
            bptt: 35,
            epochs: 100,
            prune_epochs: None,
            clip: 0.25,
            dropout: 0.65,
            seed: None,
            init_seed: None,
            corpus: CorpusSource::Synthetic(SyntheticSpec::default()),
            snapshots: None,
            metrics: None,
            checkpoint: None,
            wall_time: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean {value:?} for {key}"))),
    }
}

/// Parses `key = value` lines into ordered pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!("line {}: expected key = value", n + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainingConfig {
    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            emb: self.emb,
            hidden: self.hidden,
            layers: self.layers,
            tied: self.tied,
        }
    }

    /// Seed of the training rng; errors when unset.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidConfig("a seed is required (`seed` key or --seed)".into()))
    }

    pub fn model_seed(&self) -> Result<u64> {
        Ok(self.init_seed.unwrap_or(self.require_seed()?))
    }

    fn synthetic_mut(&mut self) -> Result<&mut SyntheticSpec> {
        match &mut self.corpus {
            CorpusSource::Synthetic(s) => Ok(s),
            CorpusSource::Directory(_) => Err(Error::InvalidConfig(
                "synthetic_* keys need corpus = synthetic".into(),
            )),
        }
    }

    /// Applies one key. `optimizer` replaces all optimizer settings with
    /// that optimizer's defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt = &mut self.optimizer;
        match key {
            "vocab_cap" => {
                let c: usize = parse(key, value)?;
                self.vocab_cap = (c > 0).then_some(c);
            }
            "emb" => self.emb = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "tied" => self.tied = parse_bool(key, value)?,
            "sparsity" => self.dst.sparsity = parse(key, value)?,
            "prune_rate" => self.dst.initial_prune_rate = parse(key, value)?,
            "growth" => self.dst.growth = value.parse()?,
            "removal" => self.dst.removal = value.parse()?,
            "init" => self.dst.init = value.parse()?,
            "redistribution" => self.dst.redistribution = value.parse()?,
            "gate_pool" => self.dst.gate_pool = value.parse()?,
            "optimizer" => *opt = OptimizerConfig::preset(value.parse()?),
            "lr" => opt.lr = parse(key, value)?,
            "momentum" => opt.momentum = parse(key, value)?,
            "beta1" => opt.beta1 = parse(key, value)?,
            "beta2" => opt.beta2 = parse(key, value)?,
            "eps" => opt.eps = parse(key, value)?,
            "nonmono" => opt.nonmono = parse(key, value)?,
            "lr_drop_factor" => {
                let f: f64 = parse(key, value)?;
                opt.lr_drop = if f == 0.0 {
                    None
                } else {
                    Some(LrDrop {
                        factor: f,
                        patience: opt.lr_drop.map_or(1, |d| d.patience),
                    })
                };
            }
            "lr_drop_patience" => {
                let p: usize = parse(key, value)?;
                match &mut opt.lr_drop {
                    Some(d) => d.patience = p,
                    None => {
                        return Err(Error::InvalidConfig(
                            "lr_drop_patience needs a non-zero lr_drop_factor".into(),
                        ))
                    }
                }
            }
            "batch" => self.batch = parse(key, value)?,
            "eval_batch" => self.eval_batch = parse(key, value)?,
            "bptt" => self.bptt = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "prune_epochs" => {
                let n: usize = parse(key, value)?;
                self.prune_epochs = (n > 0).then_some(n);
            }
            "clip" => self.clip = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "init_seed" => self.init_seed = Some(parse(key, value)?),
            "corpus" => {
                self.corpus = if value == "synthetic" {
                    CorpusSource::Synthetic(SyntheticSpec::default())
                } else {
                    CorpusSource::Directory(PathBuf::from(value))
                }
            }
            "synthetic_words" => self.synthetic_mut()?.words = parse(key, value)?,
            "synthetic_branching" => self.synthetic_mut()?.branching = parse(key, value)?,
            "synthetic_train_tokens" => self.synthetic_mut()?.train_tokens = parse(key, value)?,
            "synthetic_eval_tokens" => {
                let n: usize = parse(key, value)?;
                let s = self.synthetic_mut()?;
                s.valid_tokens = n;
                s.test_tokens = n;
            }
            "synthetic_seed" => self.synthetic_mut()?.seed = parse(key, value)?,
            "snapshots" => self.snapshots = Some(PathBuf::from(value)),
            "metrics" => self.metrics = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "wall_time" => self.wall_time = parse_bool(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Builds a config from pairs. Later pairs override earlier ones for
    /// the same key; `optimizer`, then `corpus`, are applied first so their
    /// defaults never clobber explicit settings.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut merged: BTreeMap<&str, &str> = BTreeMap::new();
        let mut order: Vec<&str> = Vec::new();
        for (k, v) in pairs {
            if merged.insert(k, v).is_none() {
                order.push(k);
            }
        }
        let mut cfg = TrainingConfig::default();
        for first in ["optimizer", "corpus"] {
            if let Some(v) = merged.get(first) {
                cfg.set(first, v)?;
            }
        }
        for k in order {
            if k != "optimizer" && k != "corpus" {
                cfg.set(k, merged[k])?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `overrides` on top of it.
    pub fn from_file_with_overrides(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => parse_config_text(&std::fs::read_to_string(p)?)?,
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    /// `key = value` text that reproduces this config.
    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        let d = &self.dst;
        let mut lines = vec![
            format!("vocab_cap = {}", self.vocab_cap.unwrap_or(0)),
            format!("emb = {}", self.emb),
            format!("hidden = {}", self.hidden),
            format!("layers = {}", self.layers),
            format!("tied = {}", self.tied),
            format!("sparsity = {}", d.sparsity),
            format!("prune_rate = {}", d.initial_prune_rate),
            format!("growth = {}", d.growth),
            format!("removal = {}", d.removal),
            format!("init = {}", d.init),
            format!("redistribution = {}", d.redistribution),
            format!("gate_pool = {}", d.gate_pool),
            format!("optimizer = {}", o.kind),
            format!("lr = {}", o.lr),
            format!("momentum = {}", o.momentum),
            format!("beta1 = {}", o.beta1),
            format!("beta2 = {}", o.beta2),
            format!("eps = {}", o.eps),
            format!("nonmono = {}", o.nonmono),
            format!("lr_drop_factor = {}", o.lr_drop.map_or(0.0, |x| x.factor)),
        ];
        if let Some(x) = o.lr_drop {
            lines.push(format!("lr_drop_patience = {}", x.patience));
        }
        lines.extend([
            format!("batch = {}", self.batch),
            format!("eval_batch = {}", self.eval_batch),
            format!("bptt = {}", self.bptt),
            format!("epochs = {}", self.epochs),
            format!("prune_epochs = {}", self.prune_epochs.unwrap_or(0)),
            format!("clip = {}", self.clip),
            format!("dropout = {}", self.dropout),
        ]);
        if let Some(s) = self.seed {
            lines.push(format!("seed = {s}"));
        }
        if let Some(s) = self.init_seed {
            lines.push(format!("init_seed = {s}"));
        }
        match &self.corpus {
            CorpusSource::Synthetic(s) => lines.extend([
                "corpus = synthetic".to_string(),
                format!("synthetic_words = {}", s.words),
                format!("synthetic_branching = {}", s.branching),
                format!("synthetic_train_tokens = {}", s.train_tokens),
                format!("synthetic_eval_tokens = {}", s.valid_tokens),
                format!("synthetic_seed = {}", s.seed),
            ]),
            CorpusSource::Directory(p) => lines.push(format!("corpus = {}", p.display())),
        }
        for (k, p) in [("snapshots", &self.snapshots), ("metrics", &self.metrics), ("checkpoint", &self.checkpoint)] {
            if let Some(p) = p {
                lines.push(format!("{k} = {}", p.display()));
            }
        }
        lines.push(format!("wall_time = {}", self.wall_time));
        lines.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.dst.validate()?;
        self.optimizer.validate()?;
        for (name, v) in [
            ("emb", self.emb),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("batch", self.batch),
            ("eval_batch", self.eval_batch),
            ("bptt", self.bptt),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if let Some(h) = self.prune_epochs {
            if h < self.epochs {
                return Err(Error::InvalidConfig(format!(
                    "prune_epochs {h} shorter than epochs {}",
                    self.epochs
                )));
            }
        }
        if self.tied && self.emb != self.hidden {
            return Err(Error::InvalidConfig("tied weights need emb == hidden".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidConfig(format!("clip {} must be positive", self.clip)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Hex SHA-256 of everything that affects training results (output
    /// paths and the wall-time switch excluded).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.snapshots = None;
        c.metrics = None;
        c.checkpoint = None;
        c.wall_time = false;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dst::GrowthPolicy;

    #[test]
    fn parses_text_with_comments() {
        let text = "# comment\nsparsity = 0.5 # trailing\n\n growth=gradient\n";
        let pairs = parse_config_text(text).unwrap();
        assert_eq!(pairs, vec![("sparsity".into(), "0.5".into()), ("growth".into(), "gradient".into())]);
        assert!(parse_config_text("nonsense").is_err());
    }

    #[test]
    fn optimizer_defaults_do_not_clobber() {
        let cfg = TrainingConfig::from_pairs([("lr", "3"), ("optimizer", "adam")]).unwrap();
        assert_eq!(cfg.optimizer.kind, OptimizerKind::Adam);
        assert_eq!(cfg.optimizer.lr, 3.0);
        assert_eq!(cfg.optimizer.lr_drop.unwrap().patience, 2);
    }

    #[test]
    fn later_pairs_override() {
        let cfg = TrainingConfig::from_pairs([("epochs", "3"), ("growth", "random"), ("epochs", "7"), ("growth", "gradient")]).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.dst.growth, GrowthPolicy::Gradient);
    }

    #[test]
    fn unknown_and_invalid() {
        assert!(TrainingConfig::from_pairs([("bogus", "1")]).is_err());
        assert!(TrainingConfig::from_pairs([("sparsity", "1.0")]).is_err());
        assert!(TrainingConfig::from_pairs([("growth", "magic")]).is_err());
        assert!(TrainingConfig::from_pairs([("tied", "true")]).is_ok());
        assert!(TrainingConfig::from_pairs([("tied", "true"), ("emb", "64")]).is_err());
        assert!(TrainingConfig::from_pairs([("corpus", "/tmp/x"), ("synthetic_words", "5")]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = TrainingConfig::from_pairs([
            ("seed", "4"),
            ("init_seed", "9"),
            ("optimizer", "momentum"),
            ("synthetic_words", "77"),
            ("prune_epochs", "250"),
            ("metrics", "/tmp/m.jsonl"),
        ])
        .unwrap();
        let pairs = parse_config_text(&cfg.to_text()).unwrap();
        let back = TrainingConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn digest_ignores_output_paths() {
        let a = TrainingConfig::from_pairs([("seed", "1")]).unwrap();
        let b = TrainingConfig::from_pairs([("seed", "1"), ("metrics", "x.jsonl")]).unwrap();
        let c = TrainingConfig::from_pairs([("seed", "2")]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn prune_horizon_defaults_to_run_length() {
        let cfg = TrainingConfig::from_pairs([("epochs", "10"), ("prune_epochs", "0")]).unwrap();
        assert_eq!(cfg.prune_epochs, None);
        let cfg = TrainingConfig::from_pairs([("epochs", "10"), ("prune_epochs", "40")]).unwrap();
        assert_eq!(cfg.prune_epochs, Some(40));
        assert!(TrainingConfig::from_pairs([("epochs", "10"), ("prune_epochs", "5")]).is_err());
    }

    #[test]
    fn seed_required() {
        let cfg = TrainingConfig::default();
        assert!(cfg.require_seed().is_err());
        let cfg = TrainingConfig::from_pairs([("seed", "5")]).unwrap();
        assert_eq!(cfg.model_seed().unwrap(), 5);
    }
}
