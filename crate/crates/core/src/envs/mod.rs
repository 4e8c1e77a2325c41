//! Deterministic episodic MDPs for TSP, ATSP, CVRP and FFSP.
//!
//! A state is a pure function of `(instance, action prefix)` (plus, for FFSP, the
//! machine tie-break order fixed at the start of the episode). The reward is paid
//! only at the terminal state and equals minus the cost of the solution the
//! trajectory induces.
//!
//! Action ids:
//!
//! | task | ids |
//! |------|-----|
//! | TSP / ATSP | city `0..n` |
//! | CVRP | depot `0`, customers `1..=n` |
//! | FFSP | job `0..n`, skip `n` |

mod ffsp;
mod oracle;
mod routing;

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::budget::BudgetLedger;
use crate::error::{Error, Result};
use crate::instances::{ProblemInstance, Task};

pub use ffsp::{decision_key, FfspState, MachineLayout};
pub use oracle::{brute_force_best, oracle_limit};
pub use routing::RoutingState;

pub(crate) use ffsp::replay_schedule as ffsp_replay;
pub(crate) use oracle::next_permutation;

pub type Action = usize;

/// Relative tolerance for cost equality between symmetric trajectories.
pub const COST_RTOL: f64 = 1e-9;

/// An action sequence that fully determines an episode.
///
/// FFSP trajectories also carry the machine tie-break order the episode was decoded
/// under: the order in which idle machines are consulted at each decision time.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_order: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn routing(actions: Vec<Action>) -> Self {
        Self {
            actions,
            machine_order: None,
        }
    }

    pub fn ffsp(machine_order: Vec<usize>, actions: Vec<Action>) -> Self {
        Self {
            actions,
            machine_order: Some(machine_order),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let acts: Vec<String> = self.actions.iter().map(|a| a.to_string()).collect();
        write!(f, "({})", acts.join(","))?;
        if let Some(order) = &self.machine_order {
            let o: Vec<String> = order.iter().map(|m| m.to_string()).collect();
            write!(f, " order=({})", o.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScheduledJob {
    pub job: usize,
    pub start: u32,
}

/// Canonical form of the object a trajectory builds.
///
/// Two trajectories are symmetric exactly when their solutions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Solution {
    /// Cycle rotated so the smallest city comes first; for symmetric TSP the second
    /// entry is the smaller of the first city's two neighbours.
    Tour(Vec<usize>),
    /// Customer routes, each oriented so its first id is below its last, sorted by first id.
    Routes(Vec<Vec<usize>>),
    /// Per global machine (stage-major), the jobs it processes with start times.
    Schedule(Vec<Vec<ScheduledJob>>),
}

impl Solution {
    pub fn routes(&self) -> Option<&[Vec<usize>]> {
        match self {
            Solution::Routes(r) => Some(r),
            _ => None,
        }
    }
}

/// MDP state. Cheap to clone; holds a borrow of the instance.
#[derive(Debug, Clone)]
pub enum State<'a> {
    Routing(RoutingState<'a>),
    Ffsp(FfspState<'a>),
}

impl<'a> State<'a> {
    /// Initial state `s_1`. FFSP uses the base machine order (stage-major, index-minor).
    pub fn initial(inst: &'a ProblemInstance) -> Result<Self> {
        match inst.task() {
            Task::Ffsp => Ok(State::Ffsp(FfspState::new(inst, None)?)),
            _ => Ok(State::Routing(RoutingState::new(inst))),
        }
    }

    /// Initial state for a trajectory: FFSP episodes start under the trajectory's
    /// machine order.
    pub fn for_trajectory(inst: &'a ProblemInstance, traj: &Trajectory) -> Result<Self> {
        match (inst.task(), &traj.machine_order) {
            (Task::Ffsp, order) => Ok(State::Ffsp(FfspState::new(inst, order.as_deref())?)),
            (_, None) => Ok(State::Routing(RoutingState::new(inst))),
            (_, Some(_)) => Err(Error::InvalidTrajectory(
                "machine order on a routing trajectory".into(),
            )),
        }
    }

    pub fn instance(&self) -> &'a ProblemInstance {
        match self {
            State::Routing(s) => s.instance(),
            State::Ffsp(s) => s.instance(),
        }
    }

    pub fn prefix(&self) -> &[Action] {
        match self {
            State::Routing(s) => s.prefix(),
            State::Ffsp(s) => s.prefix(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            State::Routing(s) => s.is_terminal(),
            State::Ffsp(s) => s.is_terminal(),
        }
    }

    /// Feasible action ids in increasing order; empty at a terminal state.
    pub fn feasible_actions(&self) -> Vec<Action> {
        match self {
            State::Routing(s) => s.feasible_actions(),
            State::Ffsp(s) => s.feasible_actions(),
        }
    }

    pub fn feasible_mask(&self) -> Result<Vec<bool>> {
        if self.is_terminal() {
            return Err(Error::TerminalState);
        }
        let mut mask = vec![false; self.instance().num_actions()];
        for a in self.feasible_actions() {
            mask[a] = true;
        }
        Ok(mask)
    }

    pub fn apply(&mut self, action: Action) -> Result<()> {
        match self {
            State::Routing(s) => s.apply(action),
            State::Ffsp(s) => s.apply(action),
        }
    }

    pub fn step(&self, action: Action) -> Result<State<'a>> {
        let mut next = self.clone();
        next.apply(action)?;
        Ok(next)
    }

    /// Canonical solution of a terminal state.
    pub fn solution(&self) -> Result<Solution> {
        if !self.is_terminal() {
            return Err(Error::InvalidTrajectory("trajectory is not terminal".into()));
        }
        Ok(match self {
            State::Routing(s) => s.solution(),
            State::Ffsp(s) => s.solution(),
        })
    }

    /// The trajectory that produced this state.
    pub fn trajectory(&self) -> Trajectory {
        match self {
            State::Routing(s) => Trajectory::routing(s.prefix().to_vec()),
            State::Ffsp(s) => Trajectory::ffsp(s.order().to_vec(), s.prefix().to_vec()),
        }
    }
}

pub fn initial_state(inst: &ProblemInstance) -> Result<State<'_>> {
    State::initial(inst)
}

/// Replays `traj` from `s_1`, checking every step against the feasibility mask.
pub fn replay<'a>(inst: &'a ProblemInstance, traj: &Trajectory) -> Result<State<'a>> {
    let mut state = State::for_trajectory(inst, traj)?;
    for (t, &a) in traj.actions.iter().enumerate() {
        if state.is_terminal() {
            return Err(Error::InvalidTrajectory(format!(
                "trajectory continues past the terminal state at step {t}"
            )));
        }
        state.apply(a).map_err(|e| match e {
            Error::InfeasibleAction { action, .. } => Error::InfeasibleAction { action, step: t },
            other => other,
        })?;
    }
    if !state.is_terminal() {
        return Err(Error::InvalidTrajectory(format!(
            "trajectory of length {} does not reach a terminal state",
            traj.len()
        )));
    }
    Ok(state)
}

/// The map `C`: trajectory to canonical solution. Does not touch any ledger.
pub fn solution_of(inst: &ProblemInstance, traj: &Trajectory) -> Result<Solution> {
    replay(inst, traj)?.solution()
}

/// Cost of a canonical solution, accumulated in canonical index order.
pub fn solution_cost(inst: &ProblemInstance, sol: &Solution) -> f64 {
    match sol {
        Solution::Tour(cycle) => {
            let n = cycle.len();
            let mut total = 0.0;
            for i in 0..n {
                total += inst.dist(cycle[i], cycle[(i + 1) % n]);
            }
            total
        }
        Solution::Routes(routes) => {
            let mut total = 0.0;
            for r in routes {
                let mut prev = 0;
                for &c in r {
                    total += inst.dist(prev, c);
                    prev = c;
                }
                total += inst.dist(prev, 0);
            }
            total
        }
        Solution::Schedule(machines) => {
            let layout = MachineLayout::new(inst);
            let last = layout.stages() - 1;
            let mut makespan = 0;
            for (g, jobs) in machines.iter().enumerate() {
                if layout.stage_of(g) != last {
                    continue;
                }
                for sj in jobs {
                    let end = sj.start + inst.proc_time(last, layout.local_of(g), sj.job);
                    makespan = makespan.max(end);
                }
            }
            f64::from(makespan)
        }
    }
}

/// Objective value of a trajectory without metering. Training code must use
/// [`episodic_reward`]; this is for validation, diagnostics and oracles.
pub fn trajectory_cost(inst: &ProblemInstance, traj: &Trajectory) -> Result<f64> {
    let sol = solution_of(inst, traj)?;
    Ok(solution_cost(inst, &sol))
}

/// Terminal reward `R(s_T) = -cost`. Charges exactly one call to `ledger`.
pub fn episodic_reward(
    inst: &ProblemInstance,
    traj: &Trajectory,
    ledger: &BudgetLedger,
) -> Result<f64> {
    let cost = trajectory_cost(inst, traj)?;
    ledger.charge(1);
    Ok(-cost)
}

/// A trajectory that induces `sol`: routes in canonical order for routing tasks,
/// and the base machine order for FFSP.
pub fn representative(inst: &ProblemInstance, sol: &Solution) -> Result<Trajectory> {
    match (inst.task(), sol) {
        (Task::Tsp | Task::Atsp, Solution::Tour(c)) => Ok(Trajectory::routing(c.clone())),
        (Task::Cvrp, Solution::Routes(routes)) => {
            let mut acts = vec![0];
            for r in routes {
                acts.extend_from_slice(r);
                acts.push(0);
            }
            Ok(Trajectory::routing(acts))
        }
        (Task::Ffsp, Solution::Schedule(_)) => {
            let order: Vec<usize> = (0..MachineLayout::new(inst).total()).collect();
            ffsp::replay_schedule(inst, sol, &order)
        }
        _ => Err(Error::InvalidTrajectory(format!(
            "solution kind does not match task {}",
            inst.task()
        ))),
    }
}

/// Rollout choosing uniformly among feasible actions.
pub fn random_trajectory(inst: &ProblemInstance, rng: &mut impl rand::Rng) -> Result<Trajectory> {
    let mut state = State::initial(inst)?;
    while !state.is_terminal() {
        let feas = state.feasible_actions();
        let a = *feas
            .choose(rng)
            .ok_or_else(|| Error::InvalidTrajectory("no feasible action".into()))?;
        state.apply(a)?;
    }
    Ok(state.trajectory())
}

/// Relative equality used for symmetric-cost checks.
pub fn costs_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= COST_RTOL * a.abs().max(b.abs()).max(1e-300)
}
