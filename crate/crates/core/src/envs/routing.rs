use crate::error::{Error, Result};
use crate::instances::{ProblemInstance, Task};

use super::{Action, Solution};

/// State of a TSP, ATSP or CVRP episode.
#[derive(Debug, Clone)]
pub struct RoutingState<'a> {
    inst: &'a ProblemInstance,
    prefix: Vec<Action>,
    visited: Vec<bool>,
    unvisited: usize,
    remaining: u32,
}

impl<'a> RoutingState<'a> {
    pub(crate) fn new(inst: &'a ProblemInstance) -> Self {
        let n_actions = inst.num_actions();
        Self {
            inst,
            prefix: Vec::with_capacity(n_actions * 2),
            visited: vec![false; n_actions],
            unvisited: inst.size(),
            remaining: inst.capacity().unwrap_or(0),
        }
    }

    pub fn instance(&self) -> &'a ProblemInstance {
        self.inst
    }

    pub fn prefix(&self) -> &[Action] {
        &self.prefix
    }

    pub fn last(&self) -> Option<Action> {
        self.prefix.last().copied()
    }

    pub fn first(&self) -> Option<Action> {
        self.prefix.first().copied()
    }

    /// CVRP only: capacity left on the current vehicle.
    pub fn remaining_capacity(&self) -> u32 {
        self.remaining
    }

    pub fn is_visited(&self, node: usize) -> bool {
        self.visited[node]
    }

    pub fn is_terminal(&self) -> bool {
        match self.inst.task() {
            Task::Cvrp => self.unvisited == 0 && self.last() == Some(0),
            _ => self.unvisited == 0,
        }
    }

    pub fn feasible_actions(&self) -> Vec<Action> {
        if self.is_terminal() {
            return Vec::new();
        }
        match self.inst.task() {
            Task::Cvrp => {
                let last = match self.last() {
                    None => return vec![0],
                    Some(l) => l,
                };
                let demands = self.inst.demands().expect("cvrp demands");
                let mut out = Vec::new();
                if last != 0 {
                    out.push(0);
                }
                out.extend(
                    (1..=self.inst.size())
                        .filter(|&c| !self.visited[c] && demands[c] <= self.remaining),
                );
                out
            }
            _ => (0..self.inst.size()).filter(|&c| !self.visited[c]).collect(),
        }
    }

    fn is_feasible(&self, a: Action) -> bool {
        if a >= self.inst.num_actions() || self.is_terminal() {
            return false;
        }
        match self.inst.task() {
            Task::Cvrp => match self.last() {
                None => a == 0,
                Some(last) if a == 0 => last != 0,
                Some(_) => {
                    !self.visited[a] && self.inst.demands().expect("cvrp demands")[a] <= self.remaining
                }
            },
            _ => !self.visited[a],
        }
    }

    pub(crate) fn apply(&mut self, a: Action) -> Result<()> {
        if !self.is_feasible(a) {
            return Err(Error::InfeasibleAction {
                action: a,
                step: self.prefix.len(),
            });
        }
        if self.inst.task() == Task::Cvrp && a == 0 {
            self.remaining = self.inst.capacity().expect("cvrp capacity");
        } else {
            self.visited[a] = true;
            self.unvisited -= 1;
            if let Some(d) = self.inst.demands() {
                self.remaining -= d[a];
            }
        }
        self.prefix.push(a);
        Ok(())
    }

    pub(crate) fn solution(&self) -> Solution {
        match self.inst.task() {
            Task::Tsp => Solution::Tour(canonical_cycle(&self.prefix, true)),
            Task::Atsp => Solution::Tour(canonical_cycle(&self.prefix, false)),
            Task::Cvrp => Solution::Routes(canonical_routes(&self.prefix)),
            Task::Ffsp => unreachable!("routing state on FFSP instance"),
        }
    }
}

/// Rotates the cycle to start at its smallest city; with `undirected`, also orients it
/// so the second city is the smaller neighbour of the first.
pub(crate) fn canonical_cycle(cycle: &[usize], undirected: bool) -> Vec<usize> {
    let n = cycle.len();
    let (start, _) = cycle
        .iter()
        .enumerate()
        .min_by_key(|(_, &c)| c)
        .expect("non-empty cycle");
    let forward: Vec<usize> = (0..n).map(|i| cycle[(start + i) % n]).collect();
    if undirected && n > 2 && forward[n - 1] < forward[1] {
        let mut back = Vec::with_capacity(n);
        back.push(forward[0]);
        back.extend(forward[1..].iter().rev());
        back
    } else {
        forward
    }
}

/// Splits a depot-delimited CVRP action sequence into canonical routes.
pub(crate) fn split_routes(actions: &[usize]) -> Vec<Vec<usize>> {
    actions
        .split(|&a| a == 0)
        .filter(|r| !r.is_empty())
        .map(<[usize]>::to_vec)
        .collect()
}

pub(crate) fn canonical_routes(actions: &[usize]) -> Vec<Vec<usize>> {
    let mut routes = split_routes(actions);
    for r in &mut routes {
        if r.len() > 1 && r[0] > r[r.len() - 1] {
            r.reverse();
        }
    }
    routes.sort_unstable_by_key(|r| r[0]);
    routes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_cycle_idempotent() {
        let c = canonical_cycle(&[4, 2, 0, 3, 1], true);
        assert_eq!(c[0], 0);
        assert!(c[1] < c[4]);
        assert_eq!(canonical_cycle(&c, true), c);
        let d = canonical_cycle(&[4, 2, 0, 3, 1], false);
        assert_eq!(d, vec![0, 3, 1, 4, 2]);
        assert_eq!(canonical_cycle(&d, false), d);
    }

    #[test]
    fn canonical_routes_idempotent() {
        let r = canonical_routes(&[0, 5, 3, 0, 2, 0, 4, 1, 0]);
        assert_eq!(r, vec![vec![1, 4], vec![2], vec![3, 5]]);
        let mut flat = vec![0];
        for route in &r {
            flat.extend(route);
            flat.push(0);
        }
        assert_eq!(canonical_routes(&flat), r);
    }
}
