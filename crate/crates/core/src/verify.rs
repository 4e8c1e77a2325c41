//! Property suites run by `symrd verify` and the acceptance tests.
//!
//! Each suite draws its own instances from the run seed and reports how many trials
//! passed. A suite that cannot apply to a task reports zero trials and passes.

use std::collections::HashSet;

use rand::Rng as _;

use crate::budget::BudgetLedger;
use crate::envs::{random_trajectory, solution_of, trajectory_cost, Trajectory};
use crate::error::{Error, Result};
use crate::eval::{entropy_decomposition_exact, l1_symmetry_gap, validate_cost};
use crate::instances::{generate_with, Dataset, GenOptions, ProblemInstance, Task};
use crate::policy::{
    critic_value, entropy_bonus_term, fd_compare, grad_critic, grad_reinforce, grad_ssd,
    greedy_trajectory, log_prob, PolicyParams,
};
use crate::rng::{stream_rng, Rng, Stream};
use crate::symmetry::{
    enumerate_orbit, member_key, orbit_size, sample_symmetric, verify_preserving,
    ORBIT_MAX_FFSP_JOBS, ORBIT_MAX_ROUTES, ORBIT_MAX_TOUR,
};
use crate::training::{ssd_step, Sgd, SsdSettings};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const ENTROPY_TOL: f64 = 1e-8;
pub const UNIFORMITY_SIGMAS: f64 = 5.0;

/// Outcome of one property suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Failures whose disagreement is within the rounding bound of the reference.
    pub below_resolution: usize,
    /// First failure, or a note on what was checked.
    pub detail: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<14} {} {}/{} {}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.trials - self.failures,
            self.trials,
            self.detail
        )?;
        if self.below_resolution > 0 {
            write!(
                f,
                " ({} of {} failures below finite-difference resolution)",
                self.below_resolution, self.failures
            )?;
        }
        Ok(())
    }
}

struct Tally {
    name: &'static str,
    trials: usize,
    failures: usize,
    below_resolution: usize,
    first: Option<String>,
    note: String,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            below_resolution: 0,
            first: None,
            note: String::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.trials += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(what());
            }
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            trials: self.trials,
            failures: self.failures,
            below_resolution: self.below_resolution,
            detail: self.first.unwrap_or(self.note),
        }
    }
}

/// Transformation under test: the real uniform sampler, or a deliberately broken one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformUnderTest {
    #[default]
    Uniform,
    /// Swaps two decisions; a negative control for the preservation suite.
    Corrupted,
}

impl TransformUnderTest {
    pub fn apply(self, inst: &ProblemInstance, t: &Trajectory, rng: &mut Rng) -> Result<Trajectory> {
        match self {
            Self::Uniform => sample_symmetric(inst, t, rng),
            Self::Corrupted => {
                let mut out = t.clone();
                let len = out.actions.len();
                // positions 1 and len - 2 are never the forced CVRP depot visits
                out.actions.swap(1, len - 2);
                Ok(out)
            }
        }
    }
}

/// Instance sizes used by suites that need exhaustive enumeration.
pub fn enumerable_options(task: Task, n: usize) -> (usize, GenOptions) {
    match task {
        Task::Tsp | Task::Atsp => (n.min(ORBIT_MAX_TOUR), GenOptions::default()),
        // small capacity, several routes
        Task::Cvrp => (
            n.min(6),
            GenOptions {
                cvrp_capacity: Some(12),
                ..GenOptions::default()
            },
        ),
        Task::Ffsp => (
            n.min(ORBIT_MAX_FFSP_JOBS),
            GenOptions {
                ffsp_stages: 2,
                ffsp_machines: 2,
                cvrp_capacity: None,
            },
        ),
    }
}

fn instances(task: Task, n: usize, count: usize, seed: u64, opts: GenOptions) -> Result<Dataset> {
    generate_with(task, n, count, seed, opts)
}

/// Symmetric transforms keep the solution and the cost, and evaluate no rewards.
pub fn suite_preservation(
    task: Task,
    n: usize,
    trials: usize,
    seed: u64,
    transform: TransformUnderTest,
) -> Result<SuiteReport> {
    let mut tally = Tally::new("preservation");
    let data = instances(task, n, trials, seed, GenOptions::default())?;
    let mut rng = stream_rng(seed, Stream::Transform, &[0]);
    let ledger = BudgetLedger::new();
    for inst in &data.instances {
        let t = random_trajectory(inst, &mut rng)?;
        let s = transform.apply(inst, &t, &mut rng)?;
        let ok = verify_preserving(inst, &t, &s) && ledger.calls() == 0;
        tally.check(ok, || format!("{} -> {}", t, s));
    }
    tally.note = format!("{task} N={n}");
    Ok(tally.finish())
}

/// Orbit enumeration matches the closed form (routing) or is a duplicate-free set of
/// preserving trajectories (FFSP).
pub fn suite_orbit(task: Task, n: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut tally = Tally::new("orbit");
    let (n, opts) = enumerable_options(task, n);
    let data = instances(task, n, trials, seed, opts)?;
    let mut rng = stream_rng(seed, Stream::Transform, &[1]);
    for inst in &data.instances {
        let t = random_trajectory(inst, &mut rng)?;
        let sol = solution_of(inst, &t)?;
        if let crate::Solution::Routes(r) = &sol {
            if r.len() > ORBIT_MAX_ROUTES {
                continue;
            }
        }
        let orbit = enumerate_orbit(inst, &sol)?;
        let keys: HashSet<_> = orbit
            .members
            .iter()
            .map(|m| member_key(inst, m))
            .collect::<Result<_>>()?;
        let distinct = keys.len() == orbit.len();
        let preserving = orbit.members.iter().all(|m| verify_preserving(inst, &t, m));
        let contains_input = keys.contains(&member_key(inst, &t)?);
        let size_ok = match task {
            Task::Ffsp => !orbit.is_empty(),
            _ => orbit_size(task, &sol)? == orbit.len() as u128,
        };
        tally.check(distinct && preserving && contains_input && size_ok, || {
            format!("orbit of {t}: {} members", orbit.len())
        });
    }
    tally.note = format!("{task} N={n}");
    Ok(tally.finish())
}

/// Empirical orbit frequencies of the sampler stay within 5σ binomial bands.
pub fn suite_uniformity(task: Task, n: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut tally = Tally::new("uniformity");
    let (n, opts) = enumerable_options(task, n);
    let data = instances(task, n, trials, seed, opts)?;
    let mut rng = stream_rng(seed, Stream::Transform, &[2]);
    for inst in &data.instances {
        let t = random_trajectory(inst, &mut rng)?;
        let sol = solution_of(inst, &t)?;
        let orbit = match enumerate_orbit(inst, &sol) {
            Ok(o) => o,
            Err(Error::TooLarge(_)) => continue,
            Err(e) => return Err(e),
        };
        let keys: Vec<_> = orbit
            .members
            .iter()
            .map(|m| member_key(inst, m))
            .collect::<Result<_>>()?;
        let draws = 20 * orbit.total_specs().max(orbit.len());
        let mut counts = vec![0usize; orbit.len()];
        let mut outside = 0;
        for _ in 0..draws {
            let s = sample_symmetric(inst, &t, &mut rng)?;
            match keys.iter().position(|k| *k == member_key(inst, &s).unwrap_or_default()) {
                Some(i) => counts[i] += 1,
                None => outside += 1,
            }
        }
        let total = orbit.total_specs() as f64;
        let worst = counts
            .iter()
            .zip(&orbit.multiplicity)
            .map(|(&c, &m)| {
                let p = m as f64 / total;
                let sigma = (draws as f64 * p * (1.0 - p)).sqrt().max(f64::MIN_POSITIVE);
                (c as f64 - draws as f64 * p).abs() / sigma
            })
            .fold(0.0f64, f64::max);
        tally.check(outside == 0 && worst <= UNIFORMITY_SIGMAS, || {
            format!("max deviation {worst:.2} sigma, {outside} draws outside the orbit")
        });
    }
    tally.note = format!("{task} N={n}");
    Ok(tally.finish())
}

/// Analytic gradients of every loss agree with central differences.
pub fn suite_gradients(task: Task, n: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut tally = Tally::new("gradients");
    let n = n.min(6);
    let data = instances(task, n, trials, seed, GenOptions::default())?;
    let mut rng = stream_rng(seed, Stream::Rollout, &[3]);
    let mut worst = 0.0f64;
    for (i, inst) in data.instances.iter().enumerate() {
        let params = PolicyParams::init(task, 4, seed.wrapping_add(i as u64))?;
        let t = random_trajectory(inst, &mut rng)?;
        let u = crate::symmetry::sample_symmetric(inst, &t, &mut rng)?;
        let adv: f64 = rng.gen_range(-2.0..2.0);
        let target: f64 = rng.gen_range(-5.0..0.0);
        let lp = |v: &[f64], tr: &Trajectory| log_prob(&params.with_values(v), inst, tr).unwrap();
        let checks = [
            (
                "reinforce",
                grad_reinforce(&params, inst, &t, adv)?.grad,
                Box::new(|v: &[f64]| -adv * lp(v, &t)) as Box<dyn Fn(&[f64]) -> f64>,
            ),
            (
                "ssd",
                grad_ssd(&params, inst, &[t.clone(), u.clone()])?.grad,
                Box::new(|v: &[f64]| -lp(v, &t) - lp(v, &u)),
            ),
            (
                "entropy",
                entropy_bonus_term(&params, inst, &t)?.grad,
                Box::new(|v: &[f64]| -lp(v, &t)),
            ),
            (
                "critic",
                grad_critic(&params, inst, target)?.grad,
                Box::new(|v: &[f64]| {
                    (critic_value(&params.with_values(v), inst).unwrap() - target).powi(2)
                }),
            ),
        ];
        for (name, analytic, loss) in checks {
            let Some(w) = fd_compare(params.values(), loss, &analytic, FD_STEP) else {
                continue;
            };
            worst = worst.max(w.rel_error);
            let ok = w.rel_error < FD_TOL;
            if !ok && w.below_resolution() {
                tally.below_resolution += 1;
            }
            tally.check(ok, || {
                format!(
                    "{name}: relative error {:.3e} at parameter {} (analytic {:.6e}, numeric {:.6e}, rounding bound {:.1e})",
                    w.rel_error, w.index, w.analytic, w.numeric, w.resolution
                )
            });
        }
    }
    tally.note = format!("worst relative error {worst:.2e}");
    Ok(tally.finish())
}

/// Exact entropy chain rule and the uniform-conditional bound (TSP/ATSP only).
pub fn suite_entropy(task: Task, n: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut tally = Tally::new("entropy");
    if !matches!(task, Task::Tsp | Task::Atsp) {
        tally.note = format!("not applicable to {task}");
        return Ok(tally.finish());
    }
    let n = n.clamp(3, 6);
    let data = instances(task, n, trials, seed, GenOptions::default())?;
    for (i, inst) in data.instances.iter().enumerate() {
        let mut params = PolicyParams::init(task, 4, seed.wrapping_add(i as u64))?;
        // sharpened
        params.values_mut().iter_mut().for_each(|v| *v *= 4.0);
        let e = entropy_decomposition_exact(&params, inst)?;
        let identity = (e.h_traj - e.h_sol - e.e_cond).abs();
        let bound = e.h_traj - e.h_uniform_bound;
        tally.check(identity <= ENTROPY_TOL && bound <= ENTROPY_TOL, || {
            format!("chain-rule residual {identity:.2e}, bound excess {bound:.2e}")
        });
    }
    tally.note = format!("{task} N={n}");
    Ok(tally.finish())
}

/// Distillation, greedy rollouts and evaluation leave the ledger untouched.
pub fn suite_budget(task: Task, n: usize, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut tally = Tally::new("budget");
    let data = instances(task, n, trials.max(1), seed, GenOptions::default())?;
    let ledger = BudgetLedger::new();
    let mut params = PolicyParams::init(task, 8, seed)?;
    let mut opt = Sgd::new(0.0, params.len());
    let settings = SsdSettings {
        scaler: 1.0,
        width: 2,
        transform: Default::default(),
        max_grad_norm: 1.0,
    };
    ssd_step(
        &mut params,
        &mut opt,
        0.01,
        &data.instances,
        None,
        &settings,
        seed,
        0,
        &ledger,
    )?;
    tally.check(ledger.calls() == 0, || "distillation step charged".into());
    for inst in &data.instances {
        greedy_trajectory(&params, inst)?;
    }
    validate_cost(&params, &data)?;
    let mut rng = stream_rng(seed, Stream::Eval, &[]);
    l1_symmetry_gap(&params, &data.instances, 2, &mut rng)?;
    tally.check(ledger.calls() == 0, || "greedy or evaluation charged".into());
    let t = greedy_trajectory(&params, &data.instances[0])?;
    let cost = trajectory_cost(&data.instances[0], &t)?;
    let r = crate::envs::episodic_reward(&data.instances[0], &t, &ledger)?;
    tally.check(ledger.calls() == 1 && r == -cost, || "reward call not charged once".into());
    Ok(tally.finish())
}

pub const SUITES: [&str; 6] = [
    "preservation",
    "orbit",
    "uniformity",
    "gradients",
    "entropy",
    "budget",
];

/// Runs every suite for `task`.
pub fn run_all(
    task: Task,
    n: usize,
    trials: usize,
    seed: u64,
    transform: TransformUnderTest,
) -> Result<Vec<SuiteReport>> {
    if trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    Ok(vec![
        suite_preservation(task, n, trials, seed, transform)?,
        suite_orbit(task, n, trials, seed)?,
        suite_uniformity(task, n, trials.min(20), seed)?,
        suite_gradients(task, n, trials.min(10), seed)?,
        suite_entropy(task, n, trials.min(10), seed)?,
        suite_budget(task, n, trials.min(4), seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_small_inputs() {
        for task in Task::ALL {
            let reports = run_all(task, 5, 6, 3, TransformUnderTest::Uniform).unwrap();
            for r in reports {
                assert!(r.passed(), "{task}: {r}");
            }
        }
    }

    #[test]
    fn corrupted_transform_is_caught() {
        for task in Task::ALL {
            let r = suite_preservation(task, 6, 20, 1, TransformUnderTest::Corrupted).unwrap();
            assert!(!r.passed(), "{task}: {r}");
        }
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_all(Task::Tsp, 5, 0, 0, TransformUnderTest::Uniform).is_err());
    }
}
