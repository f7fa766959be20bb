//! Optimizers behind one stepping contract.
//!
//! All optimizers receive gradients that are already masked and clipped and
//! re-apply the parameter masks after updating. The two averaged variants
//! run plain constant-rate SGD until a non-monotone trigger fires and then
//! additionally maintain a running average of the iterates:
//!
//! - NT-ASGD averages every coordinate over all iterations since the trigger.
//! - SNT-ASGD restarts a weight's average at the first iteration after it
//!   was last grown, and reports exactly zero for masked weights.
//!
//! Averages are kept as one running sum per weight plus window starts, so
//! memory stays linear in the parameter count.

use serde::{Deserialize, Serialize};

use crate::dst::GrowthObserver;
use crate::error::{Error, Result};
use crate::model::{Gradients, LanguageModel, ParamSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    MomentumSgd,
    Adam,
    NtAsgd,
    SntAsgd,
}

impl OptimizerKind {
    pub fn is_averaged(self) -> bool {
        matches!(self, OptimizerKind::NtAsgd | OptimizerKind::SntAsgd)
    }
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Sgd,
        OptimizerKind::MomentumSgd,
        OptimizerKind::Adam,
        OptimizerKind::NtAsgd,
        OptimizerKind::SntAsgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::MomentumSgd => "momentum",
            OptimizerKind::Adam => "adam",
            OptimizerKind::NtAsgd => "nt-asgd",
            OptimizerKind::SntAsgd => "snt-asgd",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown optimizer {s:?}")))
    }
}

/// Divide the learning rate by `factor` after `patience` validation rounds
/// without improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDrop {
    pub factor: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Non-monotone window for the averaging trigger.
    pub nonmono: usize,
    pub lr_drop: Option<LrDrop>,
}

impl OptimizerConfig {
    /// Stacked-LSTM defaults for each optimizer kind.
    pub fn preset(kind: OptimizerKind) -> Self {
        let base = OptimizerConfig {
            kind,
            lr: 40.0,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            nonmono: 5,
            lr_drop: None,
        };
        match kind {
            OptimizerKind::Adam => OptimizerConfig {
                lr: 0.001,
                lr_drop: Some(LrDrop {
                    factor: 2.0,
                    patience: 2,
                }),
                ..base
            },
            OptimizerKind::MomentumSgd => OptimizerConfig {
                lr: 2.0,
                lr_drop: Some(LrDrop {
                    factor: 1.33,
                    patience: 1,
                }),
                ..base
            },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if let Some(d) = self.lr_drop {
            if !(d.factor > 1.0) || d.patience == 0 {
                return Err(Error::InvalidConfig(
                    "lr drop needs factor > 1 and patience >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Fires the first time `nonmono` consecutive validation rounds fail to
/// improve on the best metric seen so far (at least one round when
/// `nonmono` is 0). Never deactivates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonMonotoneTrigger {
    pub nonmono: usize,
    best: Option<f64>,
    bad_rounds: usize,
    checks: usize,
    triggered_at: Option<usize>,
}

impl NonMonotoneTrigger {
    pub fn new(nonmono: usize) -> Self {
        NonMonotoneTrigger {
            nonmono,
            best: None,
            bad_rounds: 0,
            checks: 0,
            triggered_at: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.triggered_at.is_some()
    }

    /// 1-based index of the check that fired the trigger.
    pub fn triggered_at(&self) -> Option<usize> {
        self.triggered_at
    }

    /// Returns `true` only on the call that activates the trigger.
    pub fn check(&mut self, metric: f64) -> bool {
        self.checks += 1;
        if self.is_active() {
            return false;
        }
        if self.best.is_none_or(|b| metric < b) {
            self.best = Some(metric);
            self.bad_rounds = 0;
            return false;
        }
        self.bad_rounds += 1;
        if self.bad_rounds >= self.nonmono.max(1) {
            self.triggered_at = Some(self.checks);
            return true;
        }
        false
    }
}

/// Running iterate averages for NT-ASGD and SNT-ASGD.
///
/// Iterations are counted from 1; `iteration()` is the number recorded so
/// far. Window starts refer to the first iteration whose iterate is included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingState {
    sparse_aware: bool,
    iteration: u64,
    start: Option<u64>,
    sums: Vec<Vec<f64>>,
    grown_at: Vec<Vec<u64>>,
}

impl AveragingState {
    pub fn new(sizes: &[usize], sparse_aware: bool) -> Self {
        AveragingState {
            sparse_aware,
            iteration: 0,
            start: None,
            sums: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            grown_at: sizes.iter().map(|&n| vec![0; n]).collect(),
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_active(&self) -> bool {
        self.start.is_some()
    }

    /// Iteration of the first averaged iterate, once active.
    pub fn start(&self) -> Option<u64> {
        self.start
    }

    /// Starts averaging with the next recorded iterate.
    pub fn activate(&mut self) {
        if self.start.is_none() {
            self.start = Some(self.iteration + 1);
            self.sums.iter_mut().flatten().for_each(|s| *s = 0.0);
        }
    }

    fn check_tensor(&self, tensor: usize) -> Result<()> {
        if tensor >= self.sums.len() {
            return Err(Error::UnknownTensor(tensor));
        }
        Ok(())
    }

    /// Records one post-update, post-mask iterate for every tensor.
    pub fn record(&mut self, params: &[(&[f64], Option<&[bool]>)]) {
        self.iteration += 1;
        if self.start.is_none() {
            return;
        }
        for ((values, mask), sums) in params.iter().zip(self.sums.iter_mut()) {
            match (mask, self.sparse_aware) {
                (Some(mask), true) => {
                    for ((s, v), &m) in sums.iter_mut().zip(values.iter()).zip(mask.iter()) {
                        if m {
                            *s += v;
                        }
                    }
                }
                _ => {
                    for (s, v) in sums.iter_mut().zip(values.iter()) {
                        *s += v;
                    }
                }
            }
        }
    }

    /// Restarts the window of freshly grown weights at the next iteration.
    pub fn on_growth(&mut self, tensor: usize, flat: &[usize]) -> Result<()> {
        self.check_tensor(tensor)?;
        if !self.sparse_aware {
            return Ok(());
        }
        for &i in flat {
            self.grown_at[tensor][i] = self.iteration + 1;
            self.sums[tensor][i] = 0.0;
        }
        Ok(())
    }

    pub fn on_removal(&mut self, tensor: usize, flat: &[usize]) -> Result<()> {
        self.check_tensor(tensor)?;
        if !self.sparse_aware {
            return Ok(());
        }
        for &i in flat {
            self.sums[tensor][i] = 0.0;
        }
        Ok(())
    }

    /// Averaged values of one tensor: zero where masked, otherwise the mean
    /// of the iterates in the weight's window. Weights whose window has not
    /// started yet report their current value; inactive averaging reports
    /// the raw values.
    pub fn view(&self, tensor: usize, values: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
        self.check_tensor(tensor)?;
        let Some(t0) = self.start else {
            return Ok(values.to_vec());
        };
        let k = self.iteration;
        let sums = &self.sums[tensor];
        let grown = &self.grown_at[tensor];
        Ok((0..values.len())
            .map(|i| {
                if mask.is_some_and(|m| !m[i]) {
                    return 0.0;
                }
                let from = if self.sparse_aware { grown[i].max(t0) } else { t0 };
                if k + 1 > from {
                    sums[i] / (k + 1 - from) as f64
                } else {
                    values[i]
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub triggered_now: bool,
    pub averaging_active: bool,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    lr: f64,
    steps: u64,
    velocity: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    averaging: AveragingState,
    trigger: NonMonotoneTrigger,
    lr_best: Option<f64>,
    lr_bad_rounds: usize,
}

impl Optimizer {
    /// `sizes` are the parameter lengths in model parameter order.
    pub fn new(config: OptimizerConfig, sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        let needs_velocity = matches!(config.kind, OptimizerKind::MomentumSgd | OptimizerKind::Adam);
        let needs_second = config.kind == OptimizerKind::Adam;
        let buffers = |on: bool| {
            if on {
                sizes.iter().map(|&n| vec![0.0; n]).collect()
            } else {
                Vec::new()
            }
        };
        Ok(Optimizer {
            lr: config.lr,
            steps: 0,
            velocity: buffers(needs_velocity),
            second_moment: buffers(needs_second),
            averaging: AveragingState::new(
                if config.kind.is_averaged() { sizes } else { &[] },
                config.kind == OptimizerKind::SntAsgd,
            ),
            trigger: NonMonotoneTrigger::new(config.nonmono),
            lr_best: None,
            lr_bad_rounds: 0,
            config,
        })
    }

    pub fn for_model(config: OptimizerConfig, model: &LanguageModel) -> Result<Self> {
        let sizes: Vec<usize> = model
            .param_kinds()
            .iter()
            .map(|k| model.param_values(*k).len())
            .collect();
        Self::new(config, &sizes)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn averaging(&self) -> &AveragingState {
        &self.averaging
    }

    pub fn trigger(&self) -> &NonMonotoneTrigger {
        &self.trigger
    }

    pub fn averaging_active(&self) -> bool {
        self.config.kind.is_averaged() && self.averaging.is_active()
    }

    pub fn step(&mut self, params: &mut [ParamSlot<'_>], grads: &Gradients) -> Result<()> {
        if params.len() != grads.tensors.len() {
            return Err(Error::Format(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.tensors.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads.tensors).enumerate() {
            if p.values.len() != g.len() {
                return Err(Error::ShapeMismatch {
                    what: format!("gradient {i}"),
                    expected: (p.values.len(), 1),
                    found: (g.len(), 1),
                });
            }
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of tensor {i} at position {j} after {} steps",
                    self.steps
                )));
            }
        }
        self.steps += 1;
        let lr = self.lr;
        let c = &self.config;
        match c.kind {
            OptimizerKind::Sgd | OptimizerKind::NtAsgd | OptimizerKind::SntAsgd => {
                for (p, g) in params.iter_mut().zip(&grads.tensors) {
                    for (w, gi) in p.values.iter_mut().zip(g) {
                        *w -= lr * gi;
                    }
                }
            }
            OptimizerKind::MomentumSgd => {
                for ((p, g), vel) in params.iter_mut().zip(&grads.tensors).zip(&mut self.velocity) {
                    for ((w, gi), v) in p.values.iter_mut().zip(g).zip(vel.iter_mut()) {
                        *v = c.momentum * *v + gi;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads.tensors)
                    .zip(&mut self.velocity)
                    .zip(&mut self.second_moment)
                {
                    for (((w, gi), mi), vi) in p.values.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                        *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                        let mhat = *mi / bc1;
                        let vhat = *vi / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + c.eps);
                    }
                }
            }
        }
        for p in params.iter_mut() {
            p.apply_mask();
        }
        if self.config.kind.is_averaged() {
            let views: Vec<(&[f64], Option<&[bool]>)> =
                params.iter().map(|p| (&*p.values, p.mask)).collect();
            self.averaging.record(&views);
        }
        Ok(())
    }

    /// Feeds one validation metric (lower is better) to the averaging
    /// trigger or the learning-rate drop schedule.
    pub fn on_validation(&mut self, metric: f64) -> ValidationOutcome {
        let mut triggered_now = false;
        if self.config.kind.is_averaged() {
            if self.trigger.check(metric) {
                self.averaging.activate();
                triggered_now = true;
            }
        } else if let Some(drop) = self.config.lr_drop {
            if self.lr_best.is_none_or(|b| metric < b) {
                self.lr_best = Some(metric);
                self.lr_bad_rounds = 0;
            } else {
                self.lr_bad_rounds += 1;
                if self.lr_bad_rounds >= drop.patience {
                    self.lr /= drop.factor;
                    self.lr_bad_rounds = 0;
                }
            }
        }
        ValidationOutcome {
            triggered_now,
            averaging_active: self.averaging_active(),
            lr: self.lr,
        }
    }

    /// Parameter values used for evaluation: the averaged view when
    /// averaging is active, the raw iterates otherwise.
    pub fn eval_values(&self, model: &LanguageModel) -> Result<Vec<Vec<f64>>> {
        model
            .param_kinds()
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let values = model.param_values(*k);
                if self.averaging_active() {
                    self.averaging.view(i, values, model.param_mask(*k))
                } else {
                    Ok(values.to_vec())
                }
            })
            .collect()
    }

    /// A copy of `model` carrying [`Optimizer::eval_values`].
    pub fn eval_model(&self, model: &LanguageModel) -> Result<LanguageModel> {
        let mut out = model.clone();
        if self.averaging_active() {
            out.load_values(&self.eval_values(model)?)?;
        }
        Ok(out)
    }

    fn reset_buffers(&mut self, tensor: usize, flat: &[usize]) {
        for buf in [&mut self.velocity, &mut self.second_moment] {
            if let Some(b) = buf.get_mut(tensor) {
                for &i in flat {
                    b[i] = 0.0;
                }
            }
        }
    }
}

impl GrowthObserver for Optimizer {
    fn on_removed(&mut self, tensor: usize, flat: &[usize]) {
        self.reset_buffers(tensor, flat);
        if self.config.kind.is_averaged() {
            let _ = self.averaging.on_removal(tensor, flat);
        }
    }

    fn on_grown(&mut self, tensor: usize, flat: &[usize]) {
        self.reset_buffers(tensor, flat);
        if self.config.kind.is_averaged() {
            let _ = self.averaging.on_growth(tensor, flat);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_weight_step(opt: &mut Optimizer, w: &mut Vec<f64>, g: f64) {
        let mut slots = vec![ParamSlot {
            values: w.as_mut_slice(),
            mask: None,
        }];
        opt.step(&mut slots, &Gradients { tensors: vec![vec![g]] }).unwrap();
    }

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(
            OptimizerConfig {
                lr: 0.1,
                ..OptimizerConfig::preset(OptimizerKind::Sgd)
            },
            &[1],
        )
        .unwrap();
        let mut w = vec![1.0];
        one_weight_step(&mut opt, &mut w, 0.5);
        assert!((w[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step() {
        let cfg = OptimizerConfig::preset(OptimizerKind::Adam);
        let mut opt = Optimizer::new(cfg.clone(), &[1]).unwrap();
        let mut w = vec![0.0];
        one_weight_step(&mut opt, &mut w, 1.0);
        // m = 0.1, v = 0.001; bias-corrected both give 1.
        let m = (1.0 - cfg.beta1) * 1.0;
        let v = (1.0 - cfg.beta2) * 1.0;
        let expect = -cfg.lr * (m / (1.0 - cfg.beta1)) / ((v / (1.0 - cfg.beta2)).sqrt() + cfg.eps);
        assert!((w[0] - expect).abs() < 1e-18);
        assert!((w[0].abs() - cfg.lr).abs() < 1e-10);
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = Optimizer::new(
            OptimizerConfig {
                lr: 1.0,
                lr_drop: None,
                ..OptimizerConfig::preset(OptimizerKind::MomentumSgd)
            },
            &[1],
        )
        .unwrap();
        let mut w = vec![0.0];
        one_weight_step(&mut opt, &mut w, 1.0);
        one_weight_step(&mut opt, &mut w, 1.0);
        assert!((w[0] + 1.0 + 1.9).abs() < 1e-15);
    }

    #[test]
    fn snt_asgd_before_trigger_is_sgd() {
        let mut a = Optimizer::new(
            OptimizerConfig {
                lr: 0.3,
                ..OptimizerConfig::preset(OptimizerKind::SntAsgd)
            },
            &[1],
        )
        .unwrap();
        let mut b = Optimizer::new(
            OptimizerConfig {
                lr: 0.3,
                ..OptimizerConfig::preset(OptimizerKind::Sgd)
            },
            &[1],
        )
        .unwrap();
        let (mut wa, mut wb) = (vec![0.5], vec![0.5]);
        for g in [0.1, -0.4, 0.25] {
            one_weight_step(&mut a, &mut wa, g);
            one_weight_step(&mut b, &mut wb, g);
        }
        assert_eq!(wa, wb);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut opt = Optimizer::new(OptimizerConfig::preset(OptimizerKind::Sgd), &[2]).unwrap();
        let mut w = vec![1.0, 2.0];
        let mut slots = vec![ParamSlot {
            values: w.as_mut_slice(),
            mask: None,
        }];
        let err = opt
            .step(&mut slots, &Gradients { tensors: vec![vec![0.0, f64::NAN]] })
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(w, vec![1.0, 2.0]);
    }

    #[test]
    fn trigger_examples() {
        let mut t = NonMonotoneTrigger::new(5);
        let history = [100.0, 99.0, 98.0, 98.5, 98.6, 98.7, 98.8, 98.9];
        // Step-by-step simulation of the rule.
        let mut best = f64::INFINITY;
        let mut bad = 0;
        let mut expect = None;
        for (i, &m) in history.iter().enumerate() {
            if m < best {
                best = m;
                bad = 0;
            } else {
                bad += 1;
                if bad >= 5 && expect.is_none() {
                    expect = Some(i + 1);
                }
            }
        }
        assert_eq!(expect, Some(8));
        for m in history {
            t.check(m);
        }
        assert_eq!(t.triggered_at(), expect);

        let mut t = NonMonotoneTrigger::new(5);
        for i in 0..50 {
            t.check(100.0 - i as f64);
        }
        assert!(!t.is_active());

        let mut t = NonMonotoneTrigger::new(0);
        assert!(!t.check(5.0));
        assert!(!t.check(4.0));
        assert!(t.check(4.5));
        assert_eq!(t.triggered_at(), Some(3));
        assert!(!t.check(1.0));
        assert!(t.is_active());
    }

    #[test]
    fn growth_window_mean() {
        let mut s = AveragingState::new(&[1], true);
        s.record(&[(&[0.0], Some(&[true]))]);
        s.activate();
        s.record(&[(&[7.0], Some(&[true]))]);
        // Grown after iteration 2: iterates 3..=5 are (1, 2, 3).
        s.on_growth(0, &[0]).unwrap();
        for v in [1.0, 2.0, 3.0] {
            s.record(&[(&[v], Some(&[true]))]);
        }
        assert_eq!(s.iteration(), 5);
        assert_eq!(s.view(0, &[3.0], Some(&[true])).unwrap(), vec![2.0]);
        assert_eq!(s.view(0, &[3.0], Some(&[false])).unwrap(), vec![0.0]);
    }

    #[test]
    fn never_regrown_is_standard_asgd() {
        let mut snt = AveragingState::new(&[2], true);
        let mut nt = AveragingState::new(&[2], false);
        let traj = [[1.0, -1.0], [2.0, 0.5], [4.0, 0.25], [3.0, 1.0]];
        for (i, w) in traj.iter().enumerate() {
            if i == 1 {
                snt.activate();
                nt.activate();
            }
            snt.record(&[(w, Some(&[true, true]))]);
            nt.record(&[(w, Some(&[true, true]))]);
        }
        let a = snt.view(0, &traj[3], Some(&[true, true])).unwrap();
        let b = nt.view(0, &traj[3], Some(&[true, true])).unwrap();
        assert_eq!(a, b);
        assert!((a[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn inactive_view_is_identity() {
        let s = AveragingState::new(&[3], true);
        assert_eq!(s.view(0, &[1.0, 2.0, 3.0], None).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(s.view(1, &[], None).is_err());
    }

    #[test]
    fn lr_drop_schedule() {
        let mut opt = Optimizer::new(OptimizerConfig::preset(OptimizerKind::Adam), &[1]).unwrap();
        for m in [5.0, 4.0, 4.5, 4.6] {
            opt.on_validation(m);
        }
        assert!((opt.lr() - 0.0005).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn constant_iterate_averages_to_itself(c in -5.0f64..5.0, n in 1usize..30) {
            let mut s = AveragingState::new(&[1], true);
            s.activate();
            for _ in 0..n {
                s.record(&[(&[c], Some(&[true]))]);
            }
            let v = s.view(0, &[c], Some(&[true])).unwrap()[0];
            prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
        }

        #[test]
        fn static_mask_snt_equals_nt(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask: Vec<bool> = (0..6).map(|_| rng.gen_bool(0.6)).collect();
            let mut snt = AveragingState::new(&[6], true);
            let mut nt = AveragingState::new(&[6], false);
            let trigger = rng.gen_range(0..20);
            let mut w = vec![0.0; 6];
            for it in 0..30 {
                if it == trigger { snt.activate(); nt.activate(); }
                for (x, m) in w.iter_mut().zip(&mask) {
                    *x = if *m { rng.gen_range(-1.0..1.0) } else { 0.0 };
                }
                snt.record(&[(&w, Some(&mask))]);
                nt.record(&[(&w, Some(&mask))]);
            }
            let a = snt.view(0, &w, Some(&mask)).unwrap();
            let b = nt.view(0, &w, Some(&mask)).unwrap();
            for i in 0..6 {
                if mask[i] {
                    prop_assert!((a[i] - b[i]).abs() <= 1e-12);
                } else {
                    prop_assert_eq!(a[i], 0.0);
                }
            }
        }
    }
}
