//! Lightweight autoregressive policy `π_θ(a_t | s_t)` with a linear critic head.
//!
//! All gradients are hand-derived (see [`model`]) and checked against central finite
//! differences by [`fd_check`].

mod model;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetLedger;
use crate::envs::{episodic_reward, State, Trajectory};
use crate::error::{Error, Result};
use crate::instances::{ProblemInstance, Task};
use crate::rng::{stream_rng, Stream};

use model::{ActionSource, Encoding, Layout};

pub const DEFAULT_EMBED_DIM: usize = 16;
pub const CHECKPOINT_FORMAT: &str = "symrd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Learnable parameters θ of the policy and its critic, stored flat.
///
/// Layout: `[W_e (F×d), W_q (C×d), w_pair, W_c (F×d), w_v (d), b_v]` where `F` is the
/// task's feature width and `C` its context width.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    task: Task,
    d: usize,
    seed: u64,
    values: Vec<f64>,
}

/// Number of scalars in a [`PolicyParams`] for `(task, d)`: `2Fd + Cd + d + 2`.
pub fn param_count(task: Task, d: usize) -> usize {
    Layout::new(task, d).total
}

impl PolicyParams {
    /// Weight entries uniform on `[-1/√d, 1/√d]`, deterministic in `seed`. The pairwise
    /// coefficient starts at zero.
    pub fn init(task: Task, d: usize, seed: u64) -> Result<Self> {
        check_dim(d)?;
        let mut rng = stream_rng(seed, Stream::Init, &[]);
        let bound = 1.0 / (d as f64).sqrt();
        let lay = Layout::new(task, d);
        let mut values: Vec<f64> = (0..lay.total)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        values[lay.w_pair] = 0.0;
        Ok(Self {
            task,
            d,
            seed,
            values,
        })
    }

    /// All-zero weights: every feasible action gets the same logit.
    pub fn zeros(task: Task, d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self {
            task,
            d,
            seed: 0,
            values: vec![0.0; param_count(task, d)],
        })
    }

    pub fn from_values(task: Task, d: usize, seed: u64, values: Vec<f64>) -> Result<Self> {
        check_dim(d)?;
        let expected = param_count(task, d);
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: expected,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite parameter".into()));
        }
        Ok(Self {
            task,
            d,
            seed,
            values,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with a different flat vector; used by finite-difference probes.
    pub fn with_values(&self, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter length");
        Self {
            values: values.to_vec(),
            ..self.clone()
        }
    }

    /// `θ ← θ − lr · g`.
    pub fn apply_gradient(&mut self, grad: &GradientBundle, lr: f64) {
        assert_eq!(grad.grad.len(), self.values.len(), "gradient length");
        for (p, g) in self.values.iter_mut().zip(&grad.grad) {
            *p -= lr * g;
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.task, self.d)
    }

    fn encode<'a>(&self, inst: &'a ProblemInstance) -> Result<Encoding<'a>> {
        if inst.task() != self.task {
            return Err(Error::TaskMismatch {
                expected: self.task,
                found: inst.task(),
            });
        }
        Ok(Encoding::new(&self.layout(), &self.values, inst))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(r)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            task: self.task,
            d: self.d,
            seed: self.seed,
            params: self.values.clone(),
        };
        serde_json::to_writer(&mut w, &ck)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let ck: Checkpoint = serde_json::from_str(text.trim_end())
            .map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint: {}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Self::from_values(ck.task, ck.d, ck.seed, ck.params)
            .map_err(|e| Error::Format(format!("checkpoint: {e}")))
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Config(format!("embedding width must be at least 2, got {d}")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    task: Task,
    d: usize,
    seed: u64,
    params: Vec<f64>,
}

/// Scalar loss and its gradient with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(len: usize) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; len],
        }
    }

    pub fn add_assign(&mut self, other: &GradientBundle) {
        assert_eq!(self.grad.len(), other.grad.len(), "gradient length");
        self.loss += other.loss;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.loss *= s;
        self.grad.iter_mut().for_each(|g| *g *= s);
    }

    pub fn norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// Output of [`sample_trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub trajectory: Trajectory,
    pub log_prob: f64,
    pub reward: f64,
}

/// `Σ_t log π(a_t | s_t)` over the feasible actions at each step.
pub fn log_prob(params: &PolicyParams, inst: &ProblemInstance, traj: &Trajectory) -> Result<f64> {
    let enc = params.encode(inst)?;
    let trace = model::rollout::<rand::rngs::mock::StepRng>(
        &params.layout(),
        &params.values,
        &enc,
        ActionSource::Given(traj),
        false,
    )?;
    Ok(trace.log_prob)
}

/// `log π(a_t | s_t)` for every step of `traj`; forced steps contribute 0.
pub fn step_log_probs(
    params: &PolicyParams,
    inst: &ProblemInstance,
    traj: &Trajectory,
) -> Result<Vec<f64>> {
    let enc = params.encode(inst)?;
    let trace = model::rollout::<rand::rngs::mock::StepRng>(
        &params.layout(),
        &params.values,
        &enc,
        ActionSource::Given(traj),
        true,
    )?;
    let mut out = vec![0.0; traj.len()];
    for st in &trace.steps {
        out[st.t] = st.probs[st.chosen].ln();
    }
    Ok(out)
}

/// Samples a trajectory from the policy and evaluates its reward, charging one call.
pub fn sample_trajectory(
    params: &PolicyParams,
    inst: &ProblemInstance,
    rng: &mut impl rand::Rng,
    ledger: &BudgetLedger,
) -> Result<Sampled> {
    let enc = params.encode(inst)?;
    let trace = model::rollout(
        &params.layout(),
        &params.values,
        &enc,
        ActionSource::Sample(rng),
        false,
    )?;
    let reward = episodic_reward(inst, &trace.trajectory, ledger)?;
    Ok(Sampled {
        trajectory: trace.trajectory,
        log_prob: trace.log_prob,
        reward,
    })
}

/// Samples a trajectory without evaluating its reward.
pub fn sample_unscored(
    params: &PolicyParams,
    inst: &ProblemInstance,
    rng: &mut impl rand::Rng,
) -> Result<(Trajectory, f64)> {
    let enc = params.encode(inst)?;
    let trace = model::rollout(
        &params.layout(),
        &params.values,
        &enc,
        ActionSource::Sample(rng),
        false,
    )?;
    Ok((trace.trajectory, trace.log_prob))
}

/// Argmax rollout; ties go to the lowest action id. Never touches a ledger.
pub fn greedy_trajectory(params: &PolicyParams, inst: &ProblemInstance) -> Result<Trajectory> {
    let enc = params.encode(inst)?;
    let trace = model::rollout::<rand::rngs::mock::StepRng>(
        &params.layout(),
        &params.values,
        &enc,
        ActionSource::Greedy,
        false,
    )?;
    Ok(trace.trajectory)
}

pub fn critic_value(params: &PolicyParams, inst: &ProblemInstance) -> Result<f64> {
    let enc = params.encode(inst)?;
    Ok(model::critic_forward(&params.layout(), &params.values, &enc).0)
}

fn log_prob_gradient(
    params: &PolicyParams,
    enc: &Encoding<'_>,
    traj: &Trajectory,
    coeff: f64,
    out: &mut GradientBundle,
) -> Result<f64> {
    let lay = params.layout();
    let trace = model::rollout::<rand::rngs::mock::StepRng>(
        &lay,
        &params.values,
        enc,
        ActionSource::Given(traj),
        coeff != 0.0,
    )?;
    model::backward(&lay, &params.values, enc, &trace, coeff, &mut out.grad);
    Ok(trace.log_prob)
}

/// Gradient of `−advantage · log π(τ)`.
pub fn grad_reinforce(
    params: &PolicyParams,
    inst: &ProblemInstance,
    traj: &Trajectory,
    advantage: f64,
) -> Result<GradientBundle> {
    let enc = params.encode(inst)?;
    let mut out = GradientBundle::zeros(params.len());
    let lp = log_prob_gradient(params, &enc, traj, -advantage, &mut out)?;
    out.loss = -advantage * lp;
    Ok(out)
}

/// Gradient of `L_SSD = −Σ_i log π(a^i)`.
pub fn grad_ssd(
    params: &PolicyParams,
    inst: &ProblemInstance,
    trajs: &[Trajectory],
) -> Result<GradientBundle> {
    if trajs.is_empty() {
        return Err(Error::Empty("distillation targets".into()));
    }
    let enc = params.encode(inst)?;
    let mut out = GradientBundle::zeros(params.len());
    for t in trajs {
        let lp = log_prob_gradient(params, &enc, t, -1.0, &mut out)?;
        out.loss -= lp;
    }
    Ok(out)
}

/// The entropy-bonus term `−log π(τ)` and its gradient.
pub fn entropy_bonus_term(
    params: &PolicyParams,
    inst: &ProblemInstance,
    traj: &Trajectory,
) -> Result<GradientBundle> {
    let enc = params.encode(inst)?;
    let mut out = GradientBundle::zeros(params.len());
    let lp = log_prob_gradient(params, &enc, traj, -1.0, &mut out)?;
    out.loss = -lp;
    Ok(out)
}

/// Gradient of the MaxEnt-REINFORCE surrogate for one trajectory.
///
/// The advantage `R − b + α·(−log π(τ))` is treated as a constant, so this is
/// `grad_reinforce` at that shifted advantage.
pub fn grad_maxent(
    params: &PolicyParams,
    inst: &ProblemInstance,
    traj: &Trajectory,
    advantage: f64,
    alpha: f64,
) -> Result<GradientBundle> {
    if alpha == 0.0 {
        return grad_reinforce(params, inst, traj, advantage);
    }
    let bonus = -log_prob(params, inst, traj)?;
    grad_reinforce(params, inst, traj, advantage + alpha * bonus)
}

/// Gradient of the critic loss `(V(s_1) − target)²`.
pub fn grad_critic(
    params: &PolicyParams,
    inst: &ProblemInstance,
    target: f64,
) -> Result<GradientBundle> {
    let enc = params.encode(inst)?;
    let mut out = GradientBundle::zeros(params.len());
    out.loss = model::critic_backward(&params.layout(), &params.values, &enc, target, &mut out.grad);
    Ok(out)
}

/// Every complete trajectory with its log-probability, by depth-first enumeration.
///
/// Fails with [`Error::TooLarge`] once more than `limit` trajectories are found.
pub fn enumerate_trajectories(
    params: &PolicyParams,
    inst: &ProblemInstance,
    limit: usize,
) -> Result<Vec<(Trajectory, f64)>> {
    let enc = params.encode(inst)?;
    let lay = params.layout();
    let mut out = Vec::new();
    let mut stack = vec![(State::initial(inst)?, 0.0)];
    while let Some((state, lp)) = stack.pop() {
        if state.is_terminal() {
            if out.len() == limit {
                return Err(Error::TooLarge(format!(
                    "more than {limit} trajectories"
                )));
            }
            out.push((state.trajectory(), lp));
            continue;
        }
        let (actions, lps) = model::action_log_probs(&lay, &params.values, &enc, &state);
        for (&a, &l) in actions.iter().zip(&lps).rev() {
            stack.push((state.step(a)?, lp + l));
        }
    }
    Ok(out)
}

/// The worst coordinate of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdWorst {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub rel_error: f64,
    /// Rounding bound of the central difference at this coordinate, `ε·max|f(θ ± h e_i)| / h`.
    pub resolution: f64,
}

impl FdWorst {
    /// True when the disagreement is no larger than the rounding bound, so the
    /// central difference cannot distinguish the two values.
    pub fn below_resolution(&self) -> bool {
        (self.analytic - self.numeric).abs() <= self.resolution
    }
}

/// Compares `analytic` with central differences `(f(θ + h e_i) − f(θ − h e_i)) / 2h`
/// and returns the coordinate with the largest relative error.
pub fn fd_compare(
    theta: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    h: f64,
) -> Option<FdWorst> {
    assert!(h > 0.0, "step must be positive");
    assert_eq!(theta.len(), analytic.len(), "gradient length");
    let mut probe = theta.to_vec();
    let mut worst: Option<FdWorst> = None;
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = loss(&probe);
        probe[i] = theta[i] - h;
        let down = loss(&probe);
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel_error = (analytic[i] - numeric).abs() / denom;
        if worst.map_or(true, |w| rel_error > w.rel_error) {
            worst = Some(FdWorst {
                index: i,
                analytic: analytic[i],
                numeric,
                rel_error,
                resolution: f64::EPSILON * up.abs().max(down.abs()) / h,
            });
        }
    }
    worst
}

/// Worst relative error of [`fd_compare`], 0 for an empty parameter vector.
pub fn fd_check(theta: &[f64], loss: impl Fn(&[f64]) -> f64, analytic: &[f64], h: f64) -> f64 {
    fd_compare(theta, loss, analytic, h).map_or(0.0, |w| w.rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_trajectory;
    use crate::instances::{generate, generate_with, GenOptions};
    use crate::rng::seeded;

    fn tsp(n: usize, seed: u64) -> ProblemInstance {
        generate(Task::Tsp, n, 1, seed).unwrap().instances.remove(0)
    }

    #[test]
    fn uniform_logits_factorize() {
        let p = PolicyParams::zeros(Task::Tsp, 4).unwrap();
        let inst = tsp(4, 1);
        let lp = log_prob(&p, &inst, &Trajectory::routing(vec![2, 0, 3, 1])).unwrap();
        assert!((lp + 24f64.ln()).abs() < 1e-12);
        let all = enumerate_trajectories(&p, &inst, 100).unwrap();
        assert_eq!(all.len(), 24);
        let total: f64 = all.iter().map(|(_, l)| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert_eq!(greedy_trajectory(&p, &inst).unwrap().actions, vec![0, 1, 2, 3]);
    }

    #[test]
    fn param_count_formula() {
        for task in Task::ALL {
            for d in [2, 8, 16] {
                let p = PolicyParams::init(task, d, 3).unwrap();
                let lay = Layout::new(task, d);
                assert_eq!(p.len(), 2 * lay.f * d + lay.c * d + d + 2);
            }
        }
        assert!(PolicyParams::init(Task::Tsp, 1, 0).is_err());
    }

    #[test]
    fn sampled_log_prob_matches_and_charges() {
        let mut rng = seeded(5);
        let ledger = BudgetLedger::new();
        for task in Task::ALL {
            let inst = generate_with(task, 5, 1, 9, GenOptions::default())
                .unwrap()
                .instances
                .remove(0);
            let p = PolicyParams::init(task, 8, 2).unwrap();
            let before = ledger.calls();
            let s = sample_trajectory(&p, &inst, &mut rng, &ledger).unwrap();
            assert_eq!(ledger.calls(), before + 1);
            let lp = log_prob(&p, &inst, &s.trajectory).unwrap();
            assert!((lp - s.log_prob).abs() < 1e-12);
            let cost = crate::envs::trajectory_cost(&inst, &s.trajectory).unwrap();
            assert_eq!(s.reward, -cost);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(11);
        for task in Task::ALL {
            let inst = generate_with(task, 5, 1, 4, GenOptions::default())
                .unwrap()
                .instances
                .remove(0);
            let p = PolicyParams::init(task, 4, 7).unwrap();
            let t = random_trajectory(&inst, &mut rng).unwrap();
            let g = grad_reinforce(&p, &inst, &t, 1.7).unwrap();
            let err = fd_check(
                p.values(),
                |v| -1.7 * log_prob(&p.with_values(v), &inst, &t).unwrap(),
                &g.grad,
                1e-5,
            );
            assert!(err < 1e-4, "{task}: reinforce rel err {err}");
            let c = grad_critic(&p, &inst, -3.0).unwrap();
            let err = fd_check(
                p.values(),
                |v| (critic_value(&p.with_values(v), &inst).unwrap() + 3.0).powi(2),
                &c.grad,
                1e-5,
            );
            assert!(err < 1e-4, "{task}: critic rel err {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = PolicyParams::init(Task::Cvrp, 6, 99).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = PolicyParams::read_from(&buf[..]).unwrap();
        assert_eq!(p, q);
        let bad = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":7");
        assert!(matches!(
            PolicyParams::read_from(bad.as_bytes()),
            Err(Error::FormatVersion { .. })
        ));
    }

    #[test]
    fn quadratic_fd_is_exact() {
        let theta = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
        let err = fd_check(&theta, |v| v.iter().map(|x| x * x).sum(), &grad, 1e-5);
        assert!(err < 1e-9);
    }

    #[test]
    fn rounding_bound_flags_tiny_components() {
        // a large constant swamps a 1e-7 slope at h = 1e-5
        let loss = |v: &[f64]| 13.0 + 1e-7 * v[0] + v[1] * v[1];
        let w = fd_compare(&[0.2, 0.5], loss, &[1e-7, 1.0], 1e-5).unwrap();
        assert!(w.resolution > 1e-10 && w.resolution < 1e-9);
        if w.rel_error > 1e-4 {
            assert_eq!(w.index, 0);
            assert!(w.below_resolution());
        }
        let wrong = fd_compare(&[0.2, 0.5], loss, &[1e-7, 1.1], 1e-5).unwrap();
        assert_eq!(wrong.index, 1);
        assert!(!wrong.below_resolution());
    }
}
