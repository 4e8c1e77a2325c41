//! Solution-preserving transformations.
//!
//! For each task a [`TransformSpec`] maps a trajectory to another trajectory with the
//! same canonical solution:
//!
//! - TSP: cyclic shift by `k` and optional reversal, `2N` specs.
//! - ATSP: cyclic shift only, `N` specs.
//! - CVRP: permutation of the routes and a flip bit per route of length ≥ 2, `k!·2^m` specs.
//! - FFSP: a new machine tie-break order. The schedule is replayed under that order to
//!   regenerate the job/skip sequence.
//!
//! Uniform sampling is over specs. For the routing tasks specs and orbit members are
//! in bijection, so sampling is uniform over the orbit. Distinct FFSP machine orders
//! can decode to the same decision sequence; [`Orbit::multiplicity`] records how many
//! orders land on each member.
//!
//! Nothing here evaluates a reward or touches a [`crate::BudgetLedger`].

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{
    self, costs_match, decision_key, replay, solution_cost, solution_of, Action, MachineLayout,
    Solution, State, Trajectory,
};
use crate::error::{Error, Result};
use crate::instances::{ProblemInstance, Task};

pub const ORBIT_MAX_TOUR: usize = 8;
pub const ORBIT_MAX_ROUTES: usize = 4;
pub const ORBIT_MAX_FFSP_JOBS: usize = 5;
pub const ORBIT_MAX_FFSP_MACHINES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformSpec {
    Tsp { shift: usize, flip: bool },
    Atsp { shift: usize },
    /// `order[i]` is the input route placed at output position `i`; `flips` is indexed
    /// by input route.
    Cvrp { order: Vec<usize>, flips: Vec<bool> },
    Ffsp { machine_order: Vec<usize> },
}

/// Which distribution `p_sym` the distillation step draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransformPolicy {
    #[default]
    Uniform,
    Identity,
}

impl std::str::FromStr for TransformPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown transform policy `{other}`"))),
        }
    }
}

impl TransformPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Identity => "identity",
        }
    }
}

fn routes_in_order(actions: &[Action]) -> Vec<Vec<usize>> {
    actions
        .split(|&a| a == 0)
        .filter(|r| !r.is_empty())
        .map(<[usize]>::to_vec)
        .collect()
}

/// The spec that leaves `traj` unchanged.
pub fn identity_spec(inst: &ProblemInstance, traj: &Trajectory) -> TransformSpec {
    match inst.task() {
        Task::Tsp => TransformSpec::Tsp {
            shift: 0,
            flip: false,
        },
        Task::Atsp => TransformSpec::Atsp { shift: 0 },
        Task::Cvrp => {
            let k = routes_in_order(&traj.actions).len();
            TransformSpec::Cvrp {
                order: (0..k).collect(),
                flips: vec![false; k],
            }
        }
        Task::Ffsp => TransformSpec::Ffsp {
            machine_order: traj
                .machine_order
                .clone()
                .unwrap_or_else(|| (0..MachineLayout::new(inst).total()).collect()),
        },
    }
}

/// Draws a spec uniformly for `traj`. Flip bits of single-customer routes stay off.
pub fn sample_spec(
    inst: &ProblemInstance,
    traj: &Trajectory,
    rng: &mut impl Rng,
) -> TransformSpec {
    match inst.task() {
        Task::Tsp => TransformSpec::Tsp {
            shift: rng.gen_range(0..inst.size()),
            flip: rng.gen(),
        },
        Task::Atsp => TransformSpec::Atsp {
            shift: rng.gen_range(0..inst.size()),
        },
        Task::Cvrp => {
            let routes = routes_in_order(&traj.actions);
            let mut order: Vec<usize> = (0..routes.len()).collect();
            order.shuffle(rng);
            let flips = routes.iter().map(|r| r.len() > 1 && rng.gen()).collect();
            TransformSpec::Cvrp { order, flips }
        }
        Task::Ffsp => {
            let mut machine_order: Vec<usize> = (0..MachineLayout::new(inst).total()).collect();
            machine_order.shuffle(rng);
            TransformSpec::Ffsp { machine_order }
        }
    }
}

/// Applies `spec` to a valid terminal trajectory.
pub fn apply_transform(
    inst: &ProblemInstance,
    traj: &Trajectory,
    spec: &TransformSpec,
) -> Result<Trajectory> {
    let sol = solution_of(inst, traj)?;
    let n = traj.len();
    let bad = |msg: &str| Err(Error::InvalidTrajectory(format!("transform spec: {msg}")));
    match (inst.task(), spec) {
        (Task::Tsp, TransformSpec::Tsp { shift, flip }) => {
            if *shift >= n {
                return bad("shift out of range");
            }
            let mut out: Vec<Action> = (0..n).map(|i| traj.actions[(i + shift) % n]).collect();
            if *flip {
                out.reverse();
            }
            Ok(Trajectory::routing(out))
        }
        (Task::Atsp, TransformSpec::Atsp { shift }) => {
            if *shift >= n {
                return bad("shift out of range");
            }
            Ok(Trajectory::routing(
                (0..n).map(|i| traj.actions[(i + shift) % n]).collect(),
            ))
        }
        (Task::Cvrp, TransformSpec::Cvrp { order, flips }) => {
            let routes = routes_in_order(&traj.actions);
            let k = routes.len();
            let mut seen = vec![false; k];
            if order.len() != k
                || flips.len() != k
                || order
                    .iter()
                    .any(|&i| i >= k || std::mem::replace(&mut seen[i], true))
            {
                return bad("route permutation does not match the trajectory");
            }
            let mut out = Vec::with_capacity(traj.len());
            out.push(0);
            for &i in order {
                if flips[i] {
                    out.extend(routes[i].iter().rev());
                } else {
                    out.extend_from_slice(&routes[i]);
                }
                out.push(0);
            }
            Ok(Trajectory::routing(out))
        }
        (Task::Ffsp, TransformSpec::Ffsp { machine_order }) => {
            envs::ffsp_replay(inst, &sol, machine_order)
        }
        (task, _) => bad(&format!("spec kind does not match task {task}")),
    }
}

/// A uniformly random member of the orbit of `traj`'s solution.
pub fn sample_symmetric(
    inst: &ProblemInstance,
    traj: &Trajectory,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let spec = sample_spec(inst, traj, rng);
    apply_transform(inst, traj, &spec)
}

/// Draws from the chosen transformation policy.
pub fn sample_with(
    policy: TransformPolicy,
    inst: &ProblemInstance,
    traj: &Trajectory,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    match policy {
        TransformPolicy::Uniform => sample_symmetric(inst, traj, rng),
        TransformPolicy::Identity => {
            solution_of(inst, traj)?;
            Ok(traj.clone())
        }
    }
}

/// The full set of trajectories inducing one solution.
#[derive(Debug, Clone)]
pub struct Orbit {
    pub solution: Solution,
    pub members: Vec<Trajectory>,
    /// Number of specs mapping onto each member. All ones for routing tasks.
    pub multiplicity: Vec<usize>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total_specs(&self) -> usize {
        self.multiplicity.iter().sum()
    }
}

/// Identity used to decide whether two trajectories are the same orbit member.
/// Routing: the action sequence. FFSP: the `(machine, action)` decision sequence.
pub fn member_key(inst: &ProblemInstance, traj: &Trajectory) -> Result<Vec<(usize, Action)>> {
    match replay(inst, traj)? {
        State::Ffsp(f) => Ok(decision_key(&f)),
        State::Routing(r) => Ok(r.prefix().iter().map(|&a| (0, a)).collect()),
    }
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..k).collect();
    loop {
        out.push(p.clone());
        if !envs::next_permutation(&mut p) {
            break;
        }
    }
    out
}

fn all_specs(inst: &ProblemInstance, traj: &Trajectory) -> Vec<TransformSpec> {
    let n = inst.size();
    match inst.task() {
        Task::Tsp => (0..n)
            .flat_map(|shift| [false, true].map(|flip| TransformSpec::Tsp { shift, flip }))
            .collect(),
        Task::Atsp => (0..n).map(|shift| TransformSpec::Atsp { shift }).collect(),
        Task::Cvrp => {
            let routes = routes_in_order(&traj.actions);
            let flippable: Vec<usize> = (0..routes.len()).filter(|&i| routes[i].len() > 1).collect();
            let mut specs = Vec::new();
            for order in all_permutations(routes.len()) {
                for mask in 0..(1usize << flippable.len()) {
                    let mut flips = vec![false; routes.len()];
                    for (bit, &i) in flippable.iter().enumerate() {
                        flips[i] = mask >> bit & 1 == 1;
                    }
                    specs.push(TransformSpec::Cvrp {
                        order: order.clone(),
                        flips,
                    });
                }
            }
            specs
        }
        Task::Ffsp => all_permutations(MachineLayout::new(inst).total())
            .into_iter()
            .map(|machine_order| TransformSpec::Ffsp { machine_order })
            .collect(),
    }
}

/// Enumerates every trajectory whose canonical solution is `sol`.
pub fn enumerate_orbit(inst: &ProblemInstance, sol: &Solution) -> Result<Orbit> {
    let task = inst.task();
    match (task, sol) {
        (Task::Tsp | Task::Atsp, Solution::Tour(c)) if c.len() > ORBIT_MAX_TOUR => {
            return Err(Error::TooLarge(format!("tour of {} cities", c.len())))
        }
        (Task::Cvrp, Solution::Routes(r)) if r.len() > ORBIT_MAX_ROUTES => {
            return Err(Error::TooLarge(format!("{} routes", r.len())))
        }
        (Task::Ffsp, _) => {
            let machines = MachineLayout::new(inst).total();
            if inst.size() > ORBIT_MAX_FFSP_JOBS || machines > ORBIT_MAX_FFSP_MACHINES {
                return Err(Error::TooLarge(format!(
                    "ffsp with {} jobs and {machines} machines",
                    inst.size()
                )));
            }
        }
        _ => {}
    }
    let base = envs::representative(inst, sol)?;
    let mut index: HashMap<Vec<(usize, Action)>, usize> = HashMap::new();
    let mut members = Vec::new();
    let mut multiplicity = Vec::new();
    for spec in all_specs(inst, &base) {
        let t = apply_transform(inst, &base, &spec)?;
        let key = member_key(inst, &t)?;
        match index.get(&key) {
            Some(&i) => multiplicity[i] += 1,
            None => {
                index.insert(key, members.len());
                members.push(t);
                multiplicity.push(1);
            }
        }
    }
    Ok(Orbit {
        solution: sol.clone(),
        members,
        multiplicity,
    })
}

/// Closed-form orbit size: `2N` (TSP), `N` (ATSP), `k!·2^m` (CVRP with `k` routes, `m`
/// of them longer than one customer).
pub fn orbit_size(task: Task, sol: &Solution) -> Result<u128> {
    match (task, sol) {
        (Task::Tsp, Solution::Tour(c)) => Ok(2 * c.len() as u128),
        (Task::Atsp, Solution::Tour(c)) => Ok(c.len() as u128),
        (Task::Cvrp, Solution::Routes(routes)) => {
            let k = routes.len() as u128;
            let m = routes.iter().filter(|r| r.len() > 1).count() as u32;
            Ok((1..=k).product::<u128>() * (1u128 << m))
        }
        (Task::Ffsp, _) => Err(Error::Unsupported(
            "FFSP orbits have no closed form; use enumerate_orbit".into(),
        )),
        (task, _) => Err(Error::InvalidTrajectory(format!(
            "solution kind does not match task {task}"
        ))),
    }
}

/// Number of positions at which two equal-length trajectories differ.
pub fn hamming_distance(a: &[Action], b: &[Action]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// True iff both trajectories are valid, induce the same solution and have equal cost.
/// Costs are computed without a ledger.
pub fn verify_preserving(inst: &ProblemInstance, a: &Trajectory, b: &Trajectory) -> bool {
    let (Ok(sa), Ok(sb)) = (solution_of(inst, a), solution_of(inst, b)) else {
        return false;
    };
    let (Ok(ca), Ok(cb)) = (envs::trajectory_cost(inst, a), envs::trajectory_cost(inst, b)) else {
        return false;
    };
    sa == sb && costs_match(ca, cb) && costs_match(solution_cost(inst, &sa), cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_trajectory;
    use crate::instances::{generate, generate_with, GenOptions};
    use crate::rng::seeded;

    fn tsp4() -> ProblemInstance {
        generate(Task::Tsp, 4, 1, 1).unwrap().instances.remove(0)
    }

    #[test]
    fn tsp_shift_and_flip_examples() {
        let inst = tsp4();
        let t = Trajectory::routing(vec![0, 1, 2, 3]);
        let s = apply_transform(&inst, &t, &TransformSpec::Tsp { shift: 1, flip: false }).unwrap();
        assert_eq!(s.actions, vec![1, 2, 3, 0]);
        let f = apply_transform(&inst, &t, &TransformSpec::Tsp { shift: 0, flip: true }).unwrap();
        assert_eq!(f.actions, vec![3, 2, 1, 0]);
    }

    #[test]
    fn cvrp_swap_and_flip_example() {
        let coords = vec![[0.5, 0.5], [0.1, 0.2], [0.3, 0.9], [0.8, 0.4]];
        let inst = ProblemInstance::cvrp(coords, &[1, 1, 1], 10).unwrap();
        let t = Trajectory::routing(vec![0, 1, 2, 0, 3, 0]);
        // swap the two routes and flip the (1,2) route
        let spec = TransformSpec::Cvrp {
            order: vec![1, 0],
            flips: vec![true, false],
        };
        let out = apply_transform(&inst, &t, &spec).unwrap();
        assert_eq!(out.actions, vec![0, 3, 0, 2, 1, 0]);
        assert!(verify_preserving(&inst, &t, &out));
    }

    #[test]
    fn cvrp_cyclic_shift_is_not_a_symmetry() {
        let coords = vec![[0.5, 0.5], [0.1, 0.2], [0.3, 0.9], [0.8, 0.4]];
        let inst = ProblemInstance::cvrp(coords, &[1, 1, 1], 10).unwrap();
        let t = Trajectory::routing(vec![0, 1, 2, 0, 3, 0]);
        // rotating the customer visits by one position inside the sequence
        let shifted = Trajectory::routing(vec![0, 2, 0, 3, 1, 0]);
        assert!(!verify_preserving(&inst, &t, &shifted));
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming_distance(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 0);
        assert_eq!(hamming_distance(&[0, 1, 2, 3], &[3, 2, 1, 0]).unwrap(), 4);
        assert_eq!(hamming_distance(&[0, 1, 2, 3], &[1, 2, 3, 0]).unwrap(), 4);
        assert!(matches!(
            hamming_distance(&[0, 1], &[0, 1, 2]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn orbit_size_closed_forms() {
        let tour6 = Solution::Tour((0..6).collect());
        assert_eq!(orbit_size(Task::Tsp, &tour6).unwrap(), 12);
        assert_eq!(orbit_size(Task::Atsp, &Solution::Tour(vec![0, 1, 2])).unwrap(), 3);
        let routes = Solution::Routes(vec![vec![1], vec![2, 3, 4], vec![5, 6]]);
        assert_eq!(orbit_size(Task::Cvrp, &routes).unwrap(), 24);
        assert!(matches!(
            orbit_size(Task::Ffsp, &Solution::Schedule(vec![])),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn enumerated_orbit_sizes() {
        let inst = tsp4();
        let o = enumerate_orbit(&inst, &Solution::Tour(vec![0, 1, 2, 3])).unwrap();
        assert_eq!(o.len(), 8);
        let atsp = generate(Task::Atsp, 5, 1, 2).unwrap().instances.remove(0);
        let o = enumerate_orbit(&atsp, &Solution::Tour(vec![0, 1, 2, 3, 4])).unwrap();
        assert_eq!(o.len(), 5);
        let coords = vec![[0.5, 0.5], [0.1, 0.2], [0.3, 0.9], [0.8, 0.4], [0.2, 0.2]];
        let cvrp = ProblemInstance::cvrp(coords, &[1, 1, 1, 1], 10).unwrap();
        let sol = Solution::Routes(vec![vec![1, 2], vec![3, 4]]);
        let o = enumerate_orbit(&cvrp, &sol).unwrap();
        assert_eq!(o.len(), 8);
        for m in &o.members {
            assert_eq!(solution_of(&cvrp, m).unwrap(), sol);
        }
    }

    #[test]
    fn identity_policy_returns_input() {
        let inst = tsp4();
        let t = Trajectory::routing(vec![2, 0, 3, 1]);
        let mut rng = seeded(0);
        assert_eq!(sample_with(TransformPolicy::Identity, &inst, &t, &mut rng).unwrap(), t);
        let id = identity_spec(&inst, &t);
        assert_eq!(apply_transform(&inst, &t, &id).unwrap(), t);
    }

    #[test]
    fn ffsp_orbit_members_distinct_and_preserving() {
        let opts = GenOptions {
            ffsp_stages: 2,
            ffsp_machines: 2,
            cvrp_capacity: None,
        };
        let d = generate_with(Task::Ffsp, 4, 5, 3, opts).unwrap();
        let mut rng = seeded(4);
        for inst in &d.instances {
            let t = random_trajectory(inst, &mut rng).unwrap();
            let sol = solution_of(inst, &t).unwrap();
            let o = enumerate_orbit(inst, &sol).unwrap();
            assert_eq!(o.total_specs(), 24);
            assert!(!o.is_empty());
            let keys: std::collections::HashSet<_> =
                o.members.iter().map(|m| member_key(inst, m).unwrap()).collect();
            assert_eq!(keys.len(), o.len());
            assert!(keys.contains(&member_key(inst, &t).unwrap()));
            for m in &o.members {
                assert!(verify_preserving(inst, &t, m));
            }
        }
    }

    #[test]
    fn invalid_input_rejected() {
        let inst = tsp4();
        let mut rng = seeded(0);
        assert!(sample_symmetric(&inst, &Trajectory::routing(vec![0, 1, 1, 2]), &mut rng).is_err());
        let t = Trajectory::routing(vec![0, 1, 2, 3]);
        assert!(apply_transform(&inst, &t, &TransformSpec::Atsp { shift: 1 }).is_err());
        assert!(apply_transform(&inst, &t, &TransformSpec::Tsp { shift: 4, flip: false }).is_err());
    }
}
