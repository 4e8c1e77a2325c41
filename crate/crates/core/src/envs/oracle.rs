//! Exhaustive optimum for oracle-sized instances. Never touches a budget ledger.

use crate::error::{Error, Result};
use crate::instances::{ProblemInstance, Task};

use super::ffsp::{FfspState, MachineLayout};
use super::routing::{canonical_cycle, canonical_routes};
use super::{solution_cost, Solution};

/// Largest size `brute_force_best` accepts for `task`.
pub fn oracle_limit(task: Task) -> usize {
    match task {
        Task::Tsp | Task::Atsp => 10,
        Task::Cvrp => 8,
        Task::Ffsp => 6,
    }
}

/// Exact optimum by enumeration, returned in canonical form with its cost.
pub fn brute_force_best(inst: &ProblemInstance) -> Result<(Solution, f64)> {
    let task = inst.task();
    if inst.size() > oracle_limit(task) {
        return Err(Error::TooLarge(format!(
            "{task} with size {} exceeds oracle limit {}",
            inst.size(),
            oracle_limit(task)
        )));
    }
    let sol = match task {
        Task::Tsp | Task::Atsp => best_tour(inst),
        Task::Cvrp => best_routes(inst),
        Task::Ffsp => best_schedule(inst)?,
    };
    let cost = solution_cost(inst, &sol);
    Ok((sol, cost))
}

fn best_tour(inst: &ProblemInstance) -> Solution {
    let n = inst.size();
    let mut path = Vec::with_capacity(n);
    path.push(0);
    let mut used = vec![false; n];
    used[0] = true;
    let mut best = (f64::INFINITY, Vec::new());
    tour_dfs(inst, &mut path, &mut used, 0.0, &mut best);
    Solution::Tour(canonical_cycle(&best.1, inst.task() == Task::Tsp))
}

fn tour_dfs(
    inst: &ProblemInstance,
    path: &mut Vec<usize>,
    used: &mut [bool],
    partial: f64,
    best: &mut (f64, Vec<usize>),
) {
    let n = used.len();
    let last = *path.last().expect("path starts at city 0");
    if path.len() == n {
        let total = partial + inst.dist(last, path[0]);
        if total < best.0 {
            *best = (total, path.clone());
        }
        return;
    }
    for c in 1..n {
        if used[c] {
            continue;
        }
        let next = partial + inst.dist(last, c);
        if next >= best.0 {
            continue;
        }
        used[c] = true;
        path.push(c);
        tour_dfs(inst, path, used, next, best);
        path.pop();
        used[c] = false;
    }
}

/// Every CVRP solution is some customer order cut into consecutive routes, so the
/// optimum is the best capacity-feasible split over all orders.
fn best_routes(inst: &ProblemInstance) -> Solution {
    let n = inst.size();
    let demands = inst.demands().expect("cvrp demands");
    let cap = inst.capacity().expect("cvrp capacity");
    let mut perm: Vec<usize> = (1..=n).collect();
    let mut best = (f64::INFINITY, Vec::new());
    loop {
        let (cost, routes) = optimal_split(inst, &perm, demands, cap);
        if cost < best.0 {
            best = (cost, routes);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    let mut flat = vec![0];
    for r in &best.1 {
        flat.extend_from_slice(r);
        flat.push(0);
    }
    Solution::Routes(canonical_routes(&flat))
}

fn optimal_split(
    inst: &ProblemInstance,
    order: &[usize],
    demands: &[u32],
    cap: u32,
) -> (f64, Vec<Vec<usize>>) {
    let n = order.len();
    // best[i]: cheapest cover of order[..i]; from[i]: start of the last route
    let mut best = vec![f64::INFINITY; n + 1];
    let mut from = vec![0usize; n + 1];
    best[0] = 0.0;
    for i in 0..n {
        if !best[i].is_finite() {
            continue;
        }
        let mut load = 0;
        let mut inner = 0.0;
        for j in i..n {
            load += demands[order[j]];
            if load > cap {
                break;
            }
            if j > i {
                inner += inst.dist(order[j - 1], order[j]);
            }
            let cost = best[i] + inst.dist(0, order[i]) + inner + inst.dist(order[j], 0);
            if cost < best[j + 1] {
                best[j + 1] = cost;
                from[j + 1] = i;
            }
        }
    }
    let mut routes = Vec::new();
    let mut end = n;
    while end > 0 {
        let start = from[end];
        routes.push(order[start..end].to_vec());
        end = start;
    }
    routes.reverse();
    (best[n], routes)
}

pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Branch and bound over the FFSP decision tree (base machine order). Exact over the
/// decoder's reachable schedules.
fn best_schedule(inst: &ProblemInstance) -> Result<Solution> {
    let layout = MachineLayout::new(inst);
    let stages = inst.ffsp_stages().expect("ffsp stages");
    let n = inst.size();
    // min_rest[s][j]: sum over stages s.. of the fastest machine for job j
    let mut min_rest = vec![vec![0u32; n]; layout.stages() + 1];
    for s in (0..layout.stages()).rev() {
        for j in 0..n {
            let fastest = (0..stages[s].machines)
                .map(|m| inst.proc_time(s, m, j))
                .min()
                .expect("stage has machines");
            min_rest[s][j] = min_rest[s + 1][j] + fastest;
        }
    }
    let root = FfspState::new(inst, None)?;
    let mut best: (u32, Option<Solution>) = (u32::MAX, None);
    schedule_dfs(&root, &min_rest, &mut best)?;
    best.1
        .ok_or_else(|| Error::InvalidTrajectory("no complete schedule found".into()))
}

fn schedule_dfs(
    state: &FfspState<'_>,
    min_rest: &[Vec<u32>],
    best: &mut (u32, Option<Solution>),
) -> Result<()> {
    if state.is_terminal() {
        let lb = state.lower_bound(min_rest);
        if lb < best.0 {
            *best = (lb, Some(state.solution()));
        }
        return Ok(());
    }
    if state.lower_bound(min_rest) >= best.0 {
        return Ok(());
    }
    for a in state.feasible_actions() {
        let mut next = state.clone();
        next.apply(a)?;
        schedule_dfs(&next, min_rest, best)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{random_trajectory, trajectory_cost};
    use crate::instances::{generate, generate_with, GenOptions};
    use crate::rng::seeded;

    #[test]
    fn unit_square_optimum() {
        let inst =
            ProblemInstance::tsp(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        let (sol, cost) = brute_force_best(&inst).unwrap();
        assert_eq!(cost, 4.0);
        assert_eq!(sol, Solution::Tour(vec![0, 1, 2, 3]));
    }

    #[test]
    fn oracle_beats_random_trajectories() {
        let mut rng = seeded(10);
        let cases = [
            (Task::Tsp, 7, GenOptions::default()),
            (Task::Atsp, 6, GenOptions::default()),
            (Task::Cvrp, 6, GenOptions::default()),
            (
                Task::Ffsp,
                4,
                GenOptions {
                    ffsp_stages: 2,
                    ffsp_machines: 2,
                    cvrp_capacity: None,
                },
            ),
        ];
        for (task, n, opts) in cases {
            let d = generate_with(task, n, 3, 77, opts).unwrap();
            for inst in &d.instances {
                let (_, opt) = brute_force_best(inst).unwrap();
                for _ in 0..100 {
                    let t = random_trajectory(inst, &mut rng).unwrap();
                    assert!(opt <= trajectory_cost(inst, &t).unwrap() + 1e-12, "{task}");
                }
            }
        }
    }

    #[test]
    fn too_large_rejected() {
        let d = generate(Task::Tsp, 11, 1, 0).unwrap();
        assert!(matches!(brute_force_best(&d.instances[0]), Err(Error::TooLarge(_))));
        let d = generate(Task::Cvrp, 9, 1, 0).unwrap();
        assert!(matches!(brute_force_best(&d.instances[0]), Err(Error::TooLarge(_))));
    }

    #[test]
    fn next_permutation_counts() {
        let mut v = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut v) {
            count += 1;
        }
        assert_eq!(count, 24);
    }
}
