//! Metrics: validation cost, symmetry gap, exact entropy decomposition, AUC over the
//! budget axis and optimality gap. Nothing here touches a [`crate::BudgetLedger`].

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{brute_force_best, solution_of, trajectory_cost, Solution};
use crate::error::{Error, Result};
use crate::instances::{Dataset, ProblemInstance, Task};
use crate::policy::{enumerate_trajectories, greedy_trajectory, log_prob, PolicyParams};
use crate::rng::{seeded, Rng};
use crate::symmetry::{orbit_size, sample_with, TransformPolicy};

/// Largest TSP/ATSP size accepted by [`entropy_decomposition_exact`].
pub const ENTROPY_MAX_N: usize = 7;

pub const DEFAULT_L1_SAMPLES: usize = 10;

/// One named measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub k: u64,
    pub value: f64,
    pub instances: usize,
    pub seed: u64,
}

fn ordered_mean(values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

/// Greedy cost of every instance, in order.
pub fn greedy_costs(params: &PolicyParams, instances: &[ProblemInstance]) -> Result<Vec<f64>> {
    instances
        .par_iter()
        .map(|inst| trajectory_cost(inst, &greedy_trajectory(params, inst)?))
        .collect()
}

/// Mean greedy-rollout cost over the dataset.
pub fn validate_cost(params: &PolicyParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("validation dataset".into()));
    }
    Ok(ordered_mean(greedy_costs(params, &dataset.instances)?))
}

/// Mean of `|log π(τ) − log π(τ_sym)|` with `τ` the greedy rollout and `τ_sym` drawn
/// from the uniform transformation policy.
pub fn l1_symmetry_gap(
    params: &PolicyParams,
    instances: &[ProblemInstance],
    samples_per_instance: usize,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    l1_symmetry_gap_with(params, instances, samples_per_instance, TransformPolicy::Uniform, rng)
}

pub fn l1_symmetry_gap_with(
    params: &PolicyParams,
    instances: &[ProblemInstance],
    samples_per_instance: usize,
    transform: TransformPolicy,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    if samples_per_instance == 0 {
        return Err(Error::Config("symmetry gap needs at least one draw".into()));
    }
    if instances.is_empty() {
        return Err(Error::Empty("symmetry-gap instances".into()));
    }
    let seeds: Vec<u64> = instances.iter().map(|_| rng.gen()).collect();
    let per_instance: Vec<f64> = instances
        .par_iter()
        .zip(seeds)
        .map(|(inst, seed)| {
            let mut local: Rng = seeded(seed);
            let tau = greedy_trajectory(params, inst)?;
            let base = log_prob(params, inst, &tau)?;
            let mut sum = 0.0;
            for _ in 0..samples_per_instance {
                let sym = sample_with(transform, inst, &tau, &mut local)?;
                sum += (base - log_prob(params, inst, &sym)?).abs();
            }
            Ok(sum / samples_per_instance as f64)
        })
        .collect::<Result<_>>()?;
    Ok(ordered_mean(per_instance))
}

/// Terms of the trajectory-entropy decomposition, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyDecomposition {
    /// `H(π(τ | s_1))`
    pub h_traj: f64,
    /// `H(π(x | s_1))` over solutions
    pub h_sol: f64,
    /// `E_x H(π(τ | x, s_1))`
    pub e_cond: f64,
    /// `H(π(x | s_1)) + E_x log |orbit(x)|`
    pub h_uniform_bound: f64,
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

/// Exact decomposition by enumerating every trajectory (TSP/ATSP, `N ≤ 7`).
pub fn entropy_decomposition_exact(
    params: &PolicyParams,
    inst: &ProblemInstance,
) -> Result<EntropyDecomposition> {
    if !matches!(inst.task(), Task::Tsp | Task::Atsp) || inst.size() > ENTROPY_MAX_N {
        return Err(Error::TooLarge(format!(
            "exact entropy needs TSP/ATSP with N <= {ENTROPY_MAX_N}, got {} N={}",
            inst.task(),
            inst.size()
        )));
    }
    let all = enumerate_trajectories(params, inst, usize::MAX)?;
    let mut groups: HashMap<Solution, Vec<f64>> = HashMap::new();
    let mut h_traj = 0.0;
    for (traj, lp) in &all {
        let p = lp.exp();
        h_traj += plogp(p);
        groups.entry(solution_of(inst, traj)?).or_default().push(p);
    }
    // deterministic summation order
    let mut groups: Vec<(Solution, Vec<f64>)> = groups.into_iter().collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let (mut h_sol, mut e_cond, mut e_log_orbit) = (0.0, 0.0, 0.0);
    for (sol, probs) in &groups {
        let px: f64 = probs.iter().sum();
        if px <= 0.0 {
            continue;
        }
        h_sol += plogp(px);
        e_cond += px * probs.iter().map(|&p| plogp(p / px)).sum::<f64>();
        e_log_orbit += px * (orbit_size(inst.task(), sol)? as f64).ln();
    }
    Ok(EntropyDecomposition {
        h_traj,
        h_sol,
        e_cond,
        h_uniform_bound: h_sol + e_log_orbit,
    })
}

/// Normalized area under a step-sampled curve over `[0, k_max]`.
///
/// The first value is held back to `K = 0` and the last forward to `k_max`; the
/// segments in between are trapezoids. Points must have nondecreasing `K`.
pub fn auc_topk(curve: &[(u64, f64)], k_max: u64) -> Result<f64> {
    let (first, last) = match (curve.first(), curve.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::Empty("AUC history".into())),
    };
    if k_max == 0 {
        return Err(Error::Config("AUC needs a positive budget".into()));
    }
    if curve.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Config("AUC history must be sorted by K".into()));
    }
    let mut area = first.0.min(k_max) as f64 * first.1;
    for w in curve.windows(2) {
        let (k0, v0) = w[0];
        let (k1, v1) = w[1];
        let k0 = k0.min(k_max);
        let k1 = k1.min(k_max);
        area += (k1 - k0) as f64 * 0.5 * (v0 + v1);
    }
    area += k_max.saturating_sub(last.0) as f64 * last.1;
    Ok(area / k_max as f64)
}

/// Maps a reward into `[0, 1]` given the observed extremes of a run.
pub fn normalize_reward(r: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((r - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Running mean of the `k` best rewards over distinct solutions.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    best: HashMap<Solution, f64>,
}

impl TopK {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("top-k needs k >= 1".into()));
        }
        Ok(Self {
            k,
            best: HashMap::new(),
        })
    }

    pub fn observe(&mut self, sol: Solution, reward: f64) {
        let e = self.best.entry(sol).or_insert(reward);
        if reward > *e {
            *e = reward;
        }
    }

    pub fn distinct(&self) -> usize {
        self.best.len()
    }

    /// Mean of the best `min(k, distinct)` rewards; `None` before any observation.
    pub fn mean(&self) -> Option<f64> {
        if self.best.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = self.best.values().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v.truncate(self.k);
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Mean relative excess of greedy cost over the exact optimum.
pub fn optimality_gap(params: &PolicyParams, instances: &[ProblemInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("optimality-gap instances".into()));
    }
    let gaps: Vec<f64> = instances
        .par_iter()
        .map(|inst| {
            let (_, opt) = brute_force_best(inst)?;
            let cost = trajectory_cost(inst, &greedy_trajectory(params, inst)?)?;
            Ok(((cost - opt) / opt).max(0.0))
        })
        .collect::<Result<_>>()?;
    Ok(ordered_mean(gaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::generate;

    #[test]
    fn uniform_policy_entropy_on_tsp4() {
        let inst = generate(Task::Tsp, 4, 1, 8).unwrap().instances.remove(0);
        let p = PolicyParams::zeros(Task::Tsp, 4).unwrap();
        let e = entropy_decomposition_exact(&p, &inst).unwrap();
        assert!((e.h_traj - 24f64.ln()).abs() < 1e-10);
        assert!((e.h_sol - 3f64.ln()).abs() < 1e-10);
        assert!((e.e_cond - 8f64.ln()).abs() < 1e-10);
        assert!((e.h_uniform_bound - e.h_traj).abs() < 1e-10);
    }

    #[test]
    fn auc_shapes() {
        assert_eq!(auc_topk(&[(0, 0.3), (100, 0.3)], 100).unwrap(), 0.3);
        assert_eq!(auc_topk(&[(40, 0.7)], 100).unwrap(), 0.7);
        let curve = [(10, 0.1), (50, 0.4), (90, 0.8)];
        let a = auc_topk(&curve, 100).unwrap();
        assert!(a <= 0.8 && a > 0.1);
        assert!(auc_topk(&[], 100).is_err());
    }

    #[test]
    fn topk_counts_distinct_solutions() {
        let mut t = TopK::new(2).unwrap();
        assert_eq!(t.mean(), None);
        t.observe(Solution::Tour(vec![0, 1, 2]), -3.0);
        t.observe(Solution::Tour(vec![0, 1, 2]), -1.0);
        assert_eq!(t.mean(), Some(-1.0));
        t.observe(Solution::Tour(vec![0, 2, 1]), -5.0);
        t.observe(Solution::Tour(vec![0, 2, 3]), -2.0);
        assert_eq!(t.distinct(), 3);
        assert_eq!(t.mean(), Some(-1.5));
    }

    #[test]
    fn uniform_policy_has_zero_gap() {
        let d = generate(Task::Tsp, 6, 5, 2).unwrap();
        let p = PolicyParams::zeros(Task::Tsp, 4).unwrap();
        let gap = l1_symmetry_gap(&p, &d.instances, 10, &mut seeded(1)).unwrap();
        assert_eq!(gap, 0.0);
    }
}
