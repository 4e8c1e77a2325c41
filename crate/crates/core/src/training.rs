//! The alternating RL / symmetric self-distillation loop and its baselines.
//!
//! Every method shares [`rl_step`]; `symrd` and `nonsym_distill` follow every
//! `distill_period` RL steps with one distillation step that evaluates no rewards.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetLedger;
use crate::envs::Trajectory;
use crate::error::{Error, Result};
use crate::eval::{l1_symmetry_gap, validate_cost};
use crate::instances::{
    sample_instance, Dataset, GenOptions, ProblemInstance, Task, FFSP_DEFAULT_MACHINES,
    FFSP_DEFAULT_STAGES,
};
use crate::policy::{
    critic_value, grad_critic, grad_reinforce, grad_ssd, greedy_trajectory, log_prob,
    sample_trajectory, GradientBundle, PolicyParams, DEFAULT_EMBED_DIM,
};
use crate::rng::{stream_rng, Stream};
use crate::symmetry::{sample_with, TransformPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Symrd,
    RlOnly,
    Maxent,
    Multistart,
    NonsymDistill,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Symrd,
        Method::RlOnly,
        Method::Maxent,
        Method::Multistart,
        Method::NonsymDistill,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Symrd => "symrd",
            Method::RlOnly => "rl_only",
            Method::Maxent => "maxent",
            Method::Multistart => "multistart",
            Method::NonsymDistill => "nonsym_distill",
        }
    }

    pub fn distills(self) -> bool {
        matches!(self, Method::Symrd | Method::NonsymDistill)
    }

    /// Rollouts (and reward calls) per instance in one RL step.
    pub fn rollouts_per_instance(self, multistart: usize) -> usize {
        if self == Method::Multistart {
            multistart
        } else {
            1
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where distillation targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillTarget {
    Greedy,
    /// Best sampled trajectory per instance from the preceding RL step.
    BestSample,
}

impl FromStr for DistillTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "best_sample" => Ok(Self::BestSample),
            other => Err(Error::Config(format!("unknown distill_target `{other}`"))),
        }
    }
}

impl DistillTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::BestSample => "best_sample",
        }
    }
}

/// Splits `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Every knob of a training run. Keys of the text form match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub n: usize,
    pub method: Method,
    pub seed: u64,
    pub batch_size: usize,
    pub budget: u64,
    pub distill_scaler: f64,
    pub width: usize,
    pub distill_period: usize,
    pub transform: TransformPolicy,
    pub distill_target: DistillTarget,
    pub lr: f64,
    pub milestones: Vec<f64>,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub max_grad_norm: f64,
    pub alpha: f64,
    pub multistart: usize,
    pub embed_dim: usize,
    pub ffsp_stages: usize,
    pub ffsp_machines: usize,
    pub val_path: Option<String>,
    pub val_count: usize,
    pub val_seed: u64,
    pub l1_samples: usize,
}

pub const CONFIG_KEYS: [&str; 25] = [
    "task",
    "n",
    "method",
    "seed",
    "batch_size",
    "budget",
    "distill_scaler",
    "width",
    "distill_period",
    "transform",
    "distill_target",
    "lr",
    "milestones",
    "lr_gamma",
    "momentum",
    "max_grad_norm",
    "alpha",
    "multistart",
    "embed_dim",
    "ffsp_stages",
    "ffsp_machines",
    "val_path",
    "val_count",
    "val_seed",
    "l1_samples",
];

impl TrainConfig {
    pub fn new(task: Task, n: usize, method: Method) -> Self {
        Self {
            task,
            n,
            method,
            seed: 0,
            batch_size: 100,
            budget: 10_000,
            distill_scaler: if task == Task::Ffsp { 0.01 } else { 0.001 },
            width: 1,
            distill_period: 1,
            transform: if method == Method::NonsymDistill {
                TransformPolicy::Identity
            } else {
                TransformPolicy::Uniform
            },
            distill_target: DistillTarget::Greedy,
            lr: 0.1,
            milestones: vec![0.5, 0.75],
            lr_gamma: 0.1,
            momentum: 0.0,
            max_grad_norm: 1.0,
            alpha: if method == Method::Maxent { 0.01 } else { 0.0 },
            multistart: 4,
            embed_dim: DEFAULT_EMBED_DIM,
            ffsp_stages: FFSP_DEFAULT_STAGES,
            ffsp_machines: FFSP_DEFAULT_MACHINES,
            val_path: None,
            val_count: 100,
            val_seed: 1_000_003,
            l1_samples: 10,
        }
    }

    /// Parses `key = value` lines. `#` starts a comment. `task` and `method` are
    /// required and fix the defaults of the remaining keys.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let find = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v);
        let task: Task = find("task")
            .ok_or_else(|| Error::Config("missing key `task`".into()))?
            .parse()
            .map_err(|e| Error::Config(format!("task: {e}")))?;
        let method: Method = find("method")
            .ok_or_else(|| Error::Config("missing key `method`".into()))?
            .parse()?;
        let n = find("n")
            .ok_or_else(|| Error::Config("missing key `n`".into()))?
            .parse()
            .map_err(|e| Error::Config(format!("n: {e}")))?;
        let mut cfg = Self::new(task, n, method);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.parse()
                .map_err(|e| Error::Config(format!("{key}: cannot parse `{v}`: {e}")))
        }
        match key {
            "task" => {
                self.task = value
                    .parse()
                    .map_err(|e| Error::Config(format!("task: {e}")))?
            }
            "n" => self.n = num(key, value)?,
            "method" => self.method = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "budget" => self.budget = num(key, value)?,
            "distill_scaler" => self.distill_scaler = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "distill_period" => self.distill_period = num(key, value)?,
            "transform" => self.transform = value.parse()?,
            "distill_target" => self.distill_target = value.parse()?,
            "lr" => self.lr = num(key, value)?,
            "milestones" => {
                self.milestones = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|s| num(key, s.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "lr_gamma" => self.lr_gamma = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "max_grad_norm" => self.max_grad_norm = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "multistart" => self.multistart = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "ffsp_stages" => self.ffsp_stages = num(key, value)?,
            "ffsp_machines" => self.ffsp_machines = num(key, value)?,
            "val_path" => {
                self.val_path = if value.is_empty() {
                    None
                } else {
                    Some(value.to_string())
                }
            }
            "val_count" => self.val_count = num(key, value)?,
            "val_seed" => self.val_seed = num(key, value)?,
            "l1_samples" => self.l1_samples = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Serializes every key, one `key = value` per line, in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let milestones: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let values = [
            self.task.to_string(),
            self.n.to_string(),
            self.method.to_string(),
            self.seed.to_string(),
            self.batch_size.to_string(),
            self.budget.to_string(),
            self.distill_scaler.to_string(),
            self.width.to_string(),
            self.distill_period.to_string(),
            self.transform.as_str().to_string(),
            self.distill_target.as_str().to_string(),
            self.lr.to_string(),
            milestones.join(","),
            self.lr_gamma.to_string(),
            self.momentum.to_string(),
            self.max_grad_norm.to_string(),
            self.alpha.to_string(),
            self.multistart.to_string(),
            self.embed_dim.to_string(),
            self.ffsp_stages.to_string(),
            self.ffsp_machines.to_string(),
            self.val_path.clone().unwrap_or_default(),
            self.val_count.to_string(),
            self.val_seed.to_string(),
            self.l1_samples.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let min_n = if self.task == Task::Ffsp { 2 } else { 3 };
        if self.n < min_n {
            return bad(format!("n must be at least {min_n} for {}", self.task));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.budget < self.batch_size as u64 {
            return bad("budget must be at least batch_size".into());
        }
        if !(self.distill_scaler >= 0.0 && self.distill_scaler.is_finite()) {
            return bad("distill_scaler must be finite and >= 0".into());
        }
        if self.width == 0 {
            return bad("width must be >= 1".into());
        }
        if self.distill_period == 0 {
            return bad("distill_period must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0".into());
        }
        if self.milestones.windows(2).any(|w| w[1] <= w[0])
            || self.milestones.iter().any(|&m| !(m > 0.0 && m <= 1.0))
        {
            return bad("milestones must be increasing fractions in (0, 1]".into());
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma.is_finite()) {
            return bad("lr_gamma must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)".into());
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm must be >= 0 (0 disables clipping)".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and >= 0".into());
        }
        if self.method == Method::Multistart && self.multistart < 2 {
            return bad("multistart needs at least 2 rollouts per instance".into());
        }
        if self.embed_dim < 2 {
            return bad("embed_dim must be >= 2".into());
        }
        if self.val_count == 0 {
            return bad("val_count must be positive".into());
        }
        Ok(())
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            ffsp_stages: self.ffsp_stages,
            ffsp_machines: self.ffsp_machines,
            cvrp_capacity: None,
        }
    }

    pub fn rollouts_per_step(&self) -> u64 {
        (self.batch_size * self.method.rollouts_per_instance(self.multistart)) as u64
    }

    /// Validation spacing in reward calls: `max(budget / 50, batch_size)`.
    pub fn record_interval(&self) -> u64 {
        (self.budget / 50).max(self.batch_size as u64)
    }

    /// Learning rate after `k` reward calls.
    pub fn lr_at(&self, k: u64) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| k as f64 >= m * self.budget as f64)
            .count();
        self.lr * self.lr_gamma.powi(passed as i32)
    }
}

/// Plain SGD with optional heavy-ball momentum, shared by both steps.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(momentum: f64, len: usize) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn apply(&mut self, params: &mut PolicyParams, grad: &GradientBundle, lr: f64) {
        if self.momentum == 0.0 {
            params.apply_gradient(grad, lr);
            return;
        }
        for (v, g) in self.velocity.iter_mut().zip(&grad.grad) {
            *v = self.momentum * *v + g;
        }
        let step = GradientBundle {
            loss: grad.loss,
            grad: self.velocity.clone(),
        };
        params.apply_gradient(&step, lr);
    }
}

fn clip(bundle: &mut GradientBundle, max_norm: f64) {
    if max_norm > 0.0 {
        let norm = bundle.norm();
        if norm > max_norm {
            let s = max_norm / norm;
            bundle.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn sum_ordered(parts: Vec<GradientBundle>, len: usize) -> GradientBundle {
    let mut total = GradientBundle::zeros(len);
    for p in &parts {
        total.add_assign(p);
    }
    total
}

/// How the RL step forms its baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlSettings {
    /// Rollouts per instance; more than one switches to the shared-mean baseline.
    pub rollouts: usize,
    pub alpha: f64,
    pub max_grad_norm: f64,
}

impl RlSettings {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            rollouts: cfg.method.rollouts_per_instance(cfg.multistart),
            alpha: if cfg.method == Method::Maxent { cfg.alpha } else { 0.0 },
            max_grad_norm: cfg.max_grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlStats {
    pub reward_calls: u64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
    /// Highest-reward sampled trajectory per instance.
    pub best: Vec<Trajectory>,
}

struct InstanceRl {
    policy: GradientBundle,
    critic: GradientBundle,
    reward_sum: f64,
    best: Trajectory,
}

/// One REINFORCE update on `batch`. Charges exactly `batch.len() * rollouts` calls.
///
/// With one rollout per instance the critic is the baseline and is fitted jointly by
/// squared error. With several, their mean reward is the shared baseline and the
/// critic is left alone.
pub fn rl_step(
    params: &mut PolicyParams,
    opt: &mut Sgd,
    lr: f64,
    batch: &[ProblemInstance],
    settings: &RlSettings,
    seed: u64,
    step: u64,
    ledger: &BudgetLedger,
) -> Result<RlStats> {
    if batch.is_empty() {
        return Err(Error::Empty("RL batch".into()));
    }
    let p: &PolicyParams = params;
    let parts: Vec<InstanceRl> = batch
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = stream_rng(seed, Stream::Rollout, &[step, i as u64]);
            let samples = (0..settings.rollouts)
                .map(|_| sample_trajectory(p, inst, &mut rng, ledger))
                .collect::<Result<Vec<_>>>()?;
            let shaped: Vec<f64> = samples
                .iter()
                .map(|s| s.reward - settings.alpha * s.log_prob)
                .collect();
            let mut policy = GradientBundle::zeros(p.len());
            let mut critic = GradientBundle::zeros(p.len());
            let baseline = if settings.rollouts > 1 {
                shaped.iter().sum::<f64>() / shaped.len() as f64
            } else {
                critic = grad_critic(p, inst, shaped[0])?;
                critic_value(p, inst)?
            };
            for (s, r) in samples.iter().zip(&shaped) {
                policy.add_assign(&grad_reinforce(p, inst, &s.trajectory, r - baseline)?);
            }
            let best = samples
                .iter()
                .fold(&samples[0], |b, s| if s.reward > b.reward { s } else { b })
                .trajectory
                .clone();
            Ok(InstanceRl {
                policy,
                critic,
                reward_sum: samples.iter().map(|s| s.reward).sum(),
                best,
            })
        })
        .collect::<Result<_>>()?;
    let rollouts = (batch.len() * settings.rollouts) as f64;
    let reward_sum: f64 = parts.iter().map(|x| x.reward_sum).sum();
    let mut best = Vec::with_capacity(parts.len());
    let mut policy_parts = Vec::with_capacity(parts.len());
    let mut critic_parts = Vec::with_capacity(parts.len());
    for x in parts {
        best.push(x.best);
        policy_parts.push(x.policy);
        critic_parts.push(x.critic);
    }
    let mut policy = sum_ordered(policy_parts, params.len());
    policy.scale(1.0 / rollouts);
    let mut critic = sum_ordered(critic_parts, params.len());
    critic.scale(1.0 / batch.len() as f64);
    let stats = RlStats {
        reward_calls: rollouts as u64,
        mean_reward: reward_sum / rollouts,
        policy_loss: policy.loss,
        critic_loss: critic.loss,
        best,
    };
    clip(&mut policy, settings.max_grad_norm);
    clip(&mut critic, settings.max_grad_norm);
    policy.add_assign(&critic);
    opt.apply(params, &policy, lr);
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsdStats {
    /// `λ`-scaled distillation loss, averaged over the batch, before the update.
    pub loss: f64,
    /// Unscaled `L_SSD` averaged over the batch.
    pub raw_loss: f64,
}

/// Distillation targets: `width` draws from `transform` around each instance's greedy
/// rollout (or around `sources[i]` when given). Evaluates no rewards.
pub fn ssd_targets(
    params: &PolicyParams,
    batch: &[ProblemInstance],
    sources: Option<&[Trajectory]>,
    transform: TransformPolicy,
    width: usize,
    seed: u64,
    step: u64,
) -> Result<Vec<Vec<Trajectory>>> {
    if width == 0 {
        return Err(Error::Config("width must be >= 1".into()));
    }
    batch
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let tau = match sources {
                Some(s) => s[i].clone(),
                None => greedy_trajectory(params, inst)?,
            };
            let mut rng = stream_rng(seed, Stream::Transform, &[step, i as u64]);
            (0..width)
                .map(|_| sample_with(transform, inst, &tau, &mut rng))
                .collect()
        })
        .collect()
}

/// Mean `λ·L_SSD` over the batch and its gradient, without clipping.
pub fn ssd_gradient(
    params: &PolicyParams,
    batch: &[ProblemInstance],
    targets: &[Vec<Trajectory>],
    scaler: f64,
) -> Result<GradientBundle> {
    if batch.is_empty() {
        return Err(Error::Empty("distillation batch".into()));
    }
    if batch.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: batch.len(),
            right: targets.len(),
        });
    }
    let parts: Vec<GradientBundle> = batch
        .par_iter()
        .zip(targets)
        .map(|(inst, t)| grad_ssd(params, inst, t))
        .collect::<Result<_>>()?;
    let mut total = sum_ordered(parts, params.len());
    total.scale(scaler / batch.len() as f64);
    Ok(total)
}

/// Mean unscaled `L_SSD` of fixed targets.
pub fn ssd_loss(
    params: &PolicyParams,
    batch: &[ProblemInstance],
    targets: &[Vec<Trajectory>],
) -> Result<f64> {
    let per: Vec<f64> = batch
        .par_iter()
        .zip(targets)
        .map(|(inst, ts)| {
            ts.iter()
                .map(|t| log_prob(params, inst, t).map(|lp| -lp))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / batch.len() as f64)
}

/// One distillation update toward fixed targets. Touches no ledger.
pub fn ssd_update(
    params: &mut PolicyParams,
    opt: &mut Sgd,
    lr: f64,
    batch: &[ProblemInstance],
    targets: &[Vec<Trajectory>],
    scaler: f64,
    max_grad_norm: f64,
) -> Result<SsdStats> {
    let mut g = ssd_gradient(params, batch, targets, scaler)?;
    let stats = SsdStats {
        loss: g.loss,
        raw_loss: if scaler > 0.0 { g.loss / scaler } else { ssd_loss(params, batch, targets)? },
    };
    if scaler == 0.0 {
        return Ok(stats);
    }
    clip(&mut g, max_grad_norm);
    opt.apply(params, &g, lr);
    Ok(stats)
}

/// Settings of a distillation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsdSettings {
    pub scaler: f64,
    pub width: usize,
    pub transform: TransformPolicy,
    pub max_grad_norm: f64,
}

impl SsdSettings {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            scaler: cfg.distill_scaler,
            width: cfg.width,
            transform: if cfg.method == Method::NonsymDistill {
                TransformPolicy::Identity
            } else {
                cfg.transform
            },
            max_grad_norm: cfg.max_grad_norm,
        }
    }
}

/// Symmetric self-distillation: greedy rollout, `width` symmetric transforms, one
/// gradient step on `λ·L_SSD`. The ledger must not move.
pub fn ssd_step(
    params: &mut PolicyParams,
    opt: &mut Sgd,
    lr: f64,
    batch: &[ProblemInstance],
    sources: Option<&[Trajectory]>,
    settings: &SsdSettings,
    seed: u64,
    step: u64,
    ledger: &BudgetLedger,
) -> Result<SsdStats> {
    let before = ledger.calls();
    let targets = ssd_targets(
        params,
        batch,
        sources,
        settings.transform,
        settings.width,
        seed,
        step,
    )?;
    let stats = ssd_update(
        params,
        opt,
        lr,
        batch,
        &targets,
        settings.scaler,
        settings.max_grad_norm,
    )?;
    debug_assert_eq!(ledger.calls(), before, "distillation evaluated a reward");
    Ok(stats)
}

/// The ablation: imitate the untransformed greedy rollout.
pub fn nonsym_distill_step(
    params: &mut PolicyParams,
    opt: &mut Sgd,
    lr: f64,
    batch: &[ProblemInstance],
    settings: &SsdSettings,
    seed: u64,
    step: u64,
    ledger: &BudgetLedger,
) -> Result<SsdStats> {
    let identity = SsdSettings {
        transform: TransformPolicy::Identity,
        ..*settings
    };
    ssd_step(params, opt, lr, batch, None, &identity, seed, step, ledger)
}

/// One validation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub k: u64,
    pub val_cost: f64,
    pub train_mean_reward: f64,
    pub ssd_loss: Option<f64>,
    pub l1_gap: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn ks(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.k).collect()
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_cost)
    }

    /// Equality ignoring wall-clock times.
    pub fn same_results(&self, other: &TrainHistory) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.k == b.k
                    && a.val_cost.to_bits() == b.val_cost.to_bits()
                    && a.train_mean_reward.to_bits() == b.train_mean_reward.to_bits()
                    && a.ssd_loss.map(f64::to_bits) == b.ssd_loss.map(f64::to_bits)
                    && a.l1_gap.map(f64::to_bits) == b.l1_gap.map(f64::to_bits)
            })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub params: PolicyParams,
    pub reward_calls: u64,
    pub rl_steps: u64,
    pub ssd_steps: u64,
}

/// Runs `config` to its budget, validating on `val` at every grid point.
pub fn train(config: &TrainConfig, val: &Dataset) -> Result<TrainOutcome> {
    train_with(config, val, |_, _| Ok(()))
}

/// [`train`] with a callback after each validation record (used for checkpoints).
pub fn train_with(
    config: &TrainConfig,
    val: &Dataset,
    mut on_record: impl FnMut(&HistoryRecord, &PolicyParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if val.task != config.task {
        return Err(Error::TaskMismatch {
            expected: config.task,
            found: val.task,
        });
    }
    if val.is_empty() {
        return Err(Error::Empty("validation dataset".into()));
    }
    let start = Instant::now();
    let ledger = BudgetLedger::new();
    let mut params = PolicyParams::init(config.task, config.embed_dim, config.seed)?;
    let mut opt = Sgd::new(config.momentum, params.len());
    let rl = RlSettings::from_config(config);
    let ssd = SsdSettings::from_config(config);
    let interval = config.record_interval();
    let opts = config.gen_options();
    let mut next_record = interval.min(config.budget);
    let mut history = TrainHistory::default();
    let (mut rl_steps, mut ssd_steps) = (0u64, 0u64);
    let mut last_ssd = None;
    while ledger.calls() < config.budget {
        let lr = config.lr_at(ledger.calls());
        let mut data_rng = stream_rng(config.seed, Stream::Data, &[rl_steps]);
        let batch = (0..config.batch_size)
            .map(|_| sample_instance(config.task, config.n, opts, &mut data_rng))
            .collect::<Result<Vec<_>>>()?;
        let stats = rl_step(
            &mut params,
            &mut opt,
            lr,
            &batch,
            &rl,
            config.seed,
            rl_steps,
            &ledger,
        )?;
        rl_steps += 1;
        ledger.mark(rl_steps);
        if config.method.distills() && rl_steps % config.distill_period as u64 == 0 {
            let sources = match config.distill_target {
                DistillTarget::Greedy => None,
                DistillTarget::BestSample => Some(&stats.best[..]),
            };
            let s = ssd_step(
                &mut params,
                &mut opt,
                lr,
                &batch,
                sources,
                &ssd,
                config.seed,
                ssd_steps,
                &ledger,
            )?;
            ssd_steps += 1;
            last_ssd = Some(s.raw_loss);
        }
        let k = ledger.calls();
        if k >= next_record || k >= config.budget {
            let l1_gap = if config.l1_samples > 0 {
                let mut rng = stream_rng(config.seed, Stream::Eval, &[k]);
                Some(l1_symmetry_gap(&params, &val.instances, config.l1_samples, &mut rng)?)
            } else {
                None
            };
            let rec = HistoryRecord {
                k,
                val_cost: validate_cost(&params, val)?,
                train_mean_reward: stats.mean_reward,
                ssd_loss: last_ssd,
                l1_gap,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_record(&rec, &params)?;
            history.records.push(rec);
            while next_record <= k {
                next_record += interval;
            }
        }
    }
    Ok(TrainOutcome {
        history,
        params,
        reward_calls: ledger.calls(),
        rl_steps,
        ssd_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::generate;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::new(Task::Cvrp, 10, Method::Symrd);
        cfg.milestones = vec![0.25, 0.9];
        cfg.val_path = Some("val.jsonl".into());
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_rejects_unknown_and_bad_values() {
        let base = "task = tsp\nn = 5\nmethod = rl_only\n";
        assert!(TrainConfig::parse(base).is_ok());
        assert!(TrainConfig::parse(&format!("{base}batch = 3\n")).is_err());
        assert!(TrainConfig::parse(&format!("{base}width = 0\n")).is_err());
        assert!(TrainConfig::parse(&format!("{base}budget = 10\n")).is_err());
        assert!(TrainConfig::parse("n = 5\nmethod = rl_only\n").is_err());
        assert!(TrainConfig::parse(&format!("{base}method = sac\n")).is_err());
    }

    #[test]
    fn lr_decays_at_milestones() {
        let mut cfg = TrainConfig::new(Task::Tsp, 5, Method::RlOnly);
        cfg.budget = 1000;
        cfg.lr = 1.0;
        assert_eq!(cfg.lr_at(0), 1.0);
        assert_eq!(cfg.lr_at(499), 1.0);
        assert!((cfg.lr_at(500) - 0.1).abs() < 1e-15);
        assert!((cfg.lr_at(750) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn tiny_runs_count_steps() {
        let val = generate(Task::Tsp, 5, 4, 77).unwrap();
        for method in [Method::RlOnly, Method::Symrd] {
            let mut cfg = TrainConfig::new(Task::Tsp, 5, method);
            cfg.budget = 1000;
            cfg.l1_samples = 1;
            let out = train(&cfg, &val).unwrap();
            assert_eq!(out.rl_steps, 10);
            assert_eq!(out.reward_calls, 1000);
            assert_eq!(out.ssd_steps, if method == Method::Symrd { 10 } else { 0 });
            assert_eq!(out.history.ks(), (1..=10).map(|i| i * 100).collect::<Vec<_>>());
        }
    }
}
