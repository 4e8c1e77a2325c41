//! Flexible flow shop decoding.
//!
//! Time advances between machine-completion events. At each event time the idle
//! machines are consulted in the episode's machine order; a machine with at least one
//! available job is a decision point and picks a job or skips. A machine with nothing
//! available is passed over without a decision. Skipping is only offered when the
//! episode can still progress afterwards: some machine is busy, or a machine later in
//! the order at this time has an available job.

use crate::error::{Error, Result};
use crate::instances::ProblemInstance;

use super::{Action, ScheduledJob, Solution, Trajectory};

/// Global machine numbering: stage-major, local index minor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineLayout {
    stage_of: Vec<usize>,
    local_of: Vec<usize>,
    stages: usize,
}

impl MachineLayout {
    pub fn new(inst: &ProblemInstance) -> Self {
        let stages = inst.ffsp_stages().expect("machine layout of a non-FFSP instance");
        let mut stage_of = Vec::new();
        let mut local_of = Vec::new();
        for (s, st) in stages.iter().enumerate() {
            for m in 0..st.machines {
                stage_of.push(s);
                local_of.push(m);
            }
        }
        Self {
            stage_of,
            local_of,
            stages: stages.len(),
        }
    }

    pub fn total(&self) -> usize {
        self.stage_of.len()
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn stage_of(&self, g: usize) -> usize {
        self.stage_of[g]
    }

    pub fn local_of(&self, g: usize) -> usize {
        self.local_of[g]
    }
}

#[derive(Debug, Clone)]
pub struct FfspState<'a> {
    inst: &'a ProblemInstance,
    layout: MachineLayout,
    order: Vec<usize>,
    time: u32,
    cursor: usize,
    busy_until: Vec<u32>,
    /// Completion time per `(stage, job)` once assigned, index `stage * n + job`.
    done_at: Vec<Option<u32>>,
    assigned_in_stage: Vec<usize>,
    total_assigned: usize,
    schedule: Vec<Vec<ScheduledJob>>,
    prefix: Vec<Action>,
    acting: Vec<usize>,
}

impl<'a> FfspState<'a> {
    pub(crate) fn new(inst: &'a ProblemInstance, order: Option<&[usize]>) -> Result<Self> {
        let layout = MachineLayout::new(inst);
        let total = layout.total();
        let order = match order {
            Some(o) => {
                let mut seen = vec![false; total];
                if o.len() != total || o.iter().any(|&g| g >= total || std::mem::replace(&mut seen[g], true)) {
                    return Err(Error::InvalidTrajectory(format!(
                        "machine order must be a permutation of 0..{total}"
                    )));
                }
                o.to_vec()
            }
            None => (0..total).collect(),
        };
        let n = inst.size();
        let stages = layout.stages();
        let mut state = Self {
            inst,
            layout,
            order,
            time: 0,
            cursor: 0,
            busy_until: vec![0; total],
            done_at: vec![None; stages * n],
            assigned_in_stage: vec![0; stages],
            total_assigned: 0,
            schedule: vec![Vec::new(); total],
            prefix: Vec::new(),
            acting: Vec::new(),
        };
        state.advance()?;
        Ok(state)
    }

    pub fn instance(&self) -> &'a ProblemInstance {
        self.inst
    }

    pub fn layout(&self) -> &MachineLayout {
        &self.layout
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn prefix(&self) -> &[Action] {
        &self.prefix
    }

    pub fn time(&self) -> u32 {
        self.time
    }

    /// Machines that made each decision so far, aligned with the prefix.
    pub fn acting_history(&self) -> &[usize] {
        &self.acting
    }

    pub fn skip_action(&self) -> Action {
        self.inst.size()
    }

    /// Global id of the machine deciding at this state.
    pub fn acting_machine(&self) -> Option<usize> {
        if self.is_terminal() {
            None
        } else {
            Some(self.order[self.cursor])
        }
    }

    pub fn assigned_in_stage(&self, stage: usize) -> usize {
        self.assigned_in_stage[stage]
    }

    /// Completion time of `job` at `stage`, if it has been assigned there.
    pub fn stage_done_at(&self, stage: usize, job: usize) -> Option<u32> {
        self.done_at[stage * self.inst.size() + job]
    }

    pub fn is_terminal(&self) -> bool {
        self.total_assigned == self.layout.stages() * self.inst.size()
    }

    fn job_available(&self, stage: usize, job: usize) -> bool {
        let n = self.inst.size();
        self.done_at[stage * n + job].is_none()
            && (stage == 0
                || matches!(self.done_at[(stage - 1) * n + job], Some(t) if t <= self.time))
    }

    fn machine_can_act(&self, g: usize) -> bool {
        if self.busy_until[g] > self.time {
            return false;
        }
        let stage = self.layout.stage_of(g);
        self.assigned_in_stage[stage] < self.inst.size()
            && (0..self.inst.size()).any(|j| self.job_available(stage, j))
    }

    fn skip_allowed(&self) -> bool {
        self.busy_until.iter().any(|&b| b > self.time)
            || self.order[self.cursor + 1..]
                .iter()
                .any(|&g| self.machine_can_act(g))
    }

    pub fn feasible_actions(&self) -> Vec<Action> {
        if self.is_terminal() {
            return Vec::new();
        }
        let g = self.order[self.cursor];
        let stage = self.layout.stage_of(g);
        let mut out: Vec<Action> = (0..self.inst.size())
            .filter(|&j| self.job_available(stage, j))
            .collect();
        if self.skip_allowed() {
            out.push(self.skip_action());
        }
        out
    }

    /// Moves the cursor (and time) to the next decision point.
    fn advance(&mut self) -> Result<()> {
        let total = self.layout.total();
        loop {
            if self.is_terminal() {
                return Ok(());
            }
            while self.cursor < total {
                if self.machine_can_act(self.order[self.cursor]) {
                    return Ok(());
                }
                self.cursor += 1;
            }
            let next = self
                .busy_until
                .iter()
                .copied()
                .filter(|&b| b > self.time)
                .min()
                .ok_or_else(|| Error::InvalidTrajectory("schedule deadlocked".into()))?;
            self.time = next;
            self.cursor = 0;
        }
    }

    pub(crate) fn apply(&mut self, a: Action) -> Result<()> {
        let infeasible = Error::InfeasibleAction {
            action: a,
            step: self.prefix.len(),
        };
        if self.is_terminal() {
            return Err(infeasible);
        }
        let g = self.order[self.cursor];
        if a == self.skip_action() {
            if !self.skip_allowed() {
                return Err(infeasible);
            }
        } else {
            let stage = self.layout.stage_of(g);
            if a >= self.inst.size() || !self.job_available(stage, a) {
                return Err(infeasible);
            }
            let p = self.inst.proc_time(stage, self.layout.local_of(g), a);
            let end = self.time + p;
            self.busy_until[g] = end;
            self.done_at[stage * self.inst.size() + a] = Some(end);
            self.assigned_in_stage[stage] += 1;
            self.total_assigned += 1;
            self.schedule[g].push(ScheduledJob {
                job: a,
                start: self.time,
            });
        }
        self.prefix.push(a);
        self.acting.push(g);
        self.cursor += 1;
        self.advance()
    }

    pub(crate) fn solution(&self) -> Solution {
        Solution::Schedule(self.schedule.clone())
    }

    /// Largest completion time so far; a lower bound on the final makespan.
    pub(crate) fn lower_bound(&self, min_rest: &[Vec<u32>]) -> u32 {
        let n = self.inst.size();
        let stages = self.layout.stages();
        let mut lb = 0;
        for j in 0..n {
            // last assigned stage of j
            let mut bound = 0;
            let mut next_stage = 0;
            for s in 0..stages {
                if let Some(t) = self.done_at[s * n + j] {
                    bound = t;
                    next_stage = s + 1;
                }
            }
            if next_stage < stages {
                bound = bound.max(self.time) + min_rest[next_stage][j];
            }
            lb = lb.max(bound);
        }
        lb
    }
}

/// Decision key: `(acting machine, action)` per step. Two FFSP trajectories with equal
/// keys visit identical states, so the policy cannot tell them apart.
pub fn decision_key(state: &FfspState<'_>) -> Vec<(usize, Action)> {
    state
        .acting
        .iter()
        .copied()
        .zip(state.prefix.iter().copied())
        .collect()
}

/// Regenerates the job/skip sequence that reproduces `sol` under `order`.
pub(crate) fn replay_schedule(
    inst: &ProblemInstance,
    sol: &Solution,
    order: &[usize],
) -> Result<Trajectory> {
    let Solution::Schedule(machines) = sol else {
        return Err(Error::InvalidTrajectory("not a schedule".into()));
    };
    let mut state = FfspState::new(inst, Some(order))?;
    if machines.len() != state.layout.total() {
        return Err(Error::InvalidTrajectory("schedule has wrong machine count".into()));
    }
    let mut next_idx = vec![0usize; machines.len()];
    while !state.is_terminal() {
        let g = state.order[state.cursor];
        let action = match machines[g].get(next_idx[g]) {
            Some(sj) if sj.start == state.time => {
                next_idx[g] += 1;
                sj.job
            }
            Some(sj) if sj.start < state.time => {
                return Err(Error::InvalidTrajectory(format!(
                    "machine {g} missed job {} at time {}",
                    sj.job, sj.start
                )))
            }
            _ => state.skip_action(),
        };
        state.apply(action)?;
    }
    if state.schedule != *machines {
        return Err(Error::InvalidTrajectory(
            "schedule is not reproducible by the decoder".into(),
        ));
    }
    Ok(Trajectory::ffsp(order.to_vec(), state.prefix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{replay, solution_of, State};
    use crate::instances::{generate_with, GenOptions, Task};
    use crate::rng::seeded;
    use rand::seq::SliceRandom;

    fn opts(stages: usize, machines: usize) -> GenOptions {
        GenOptions {
            ffsp_stages: stages,
            ffsp_machines: machines,
            cvrp_capacity: None,
        }
    }

    #[test]
    fn skip_sequence_regenerated_under_permuted_order() {
        let mut rng = seeded(3);
        let d = generate_with(Task::Ffsp, 5, 10, 8, opts(3, 4)).unwrap();
        for inst in &d.instances {
            let t = crate::envs::random_trajectory(inst, &mut rng).unwrap();
            let sol = solution_of(inst, &t).unwrap();
            let mut order: Vec<usize> = (0..12).collect();
            order.shuffle(&mut rng);
            let t2 = replay_schedule(inst, &sol, &order).unwrap();
            assert_eq!(t2.machine_order.as_deref(), Some(&order[..]));
            assert_eq!(solution_of(inst, &t2).unwrap(), sol);
        }
    }

    #[test]
    fn rejects_bad_machine_order() {
        let inst = generate_with(Task::Ffsp, 3, 1, 1, opts(1, 2)).unwrap().instances.remove(0);
        assert!(FfspState::new(&inst, Some(&[0, 0])).is_err());
        assert!(FfspState::new(&inst, Some(&[0])).is_err());
        assert!(FfspState::new(&inst, Some(&[1, 0])).is_ok());
    }

    #[test]
    fn skip_not_offered_when_it_would_stall() {
        // one machine, nothing running: the first decision must assign
        let inst = generate_with(Task::Ffsp, 3, 1, 1, opts(1, 1)).unwrap().instances.remove(0);
        let s = State::initial(&inst).unwrap();
        assert_eq!(s.feasible_actions(), vec![0, 1, 2]);
        let s = s.step(1).unwrap();
        // machine busy: it is not a decision point until it completes
        let t = s.step(0).unwrap().step(2).unwrap();
        assert!(t.is_terminal());
        let full = replay(&inst, &t.trajectory()).unwrap();
        assert!(full.is_terminal());
    }
}
