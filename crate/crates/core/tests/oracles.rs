//! Values pinned from independent enumeration written for these tests.

use symrd::envs::{brute_force_best, solution_of, trajectory_cost};
use symrd::eval::{entropy_decomposition_exact, optimality_gap};
use symrd::instances::generate;
use symrd::symmetry::{enumerate_orbit, orbit_size};
use symrd::{PolicyParams, ProblemInstance, Solution, Task, Trajectory};

mod common;
use common::{cycle_cost, enumerated_optimum, heap_permutations};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn heap_enumeration_counts() {
    let mut v: Vec<usize> = (0..5).collect();
    let mut out = Vec::new();
    heap_permutations(&mut v, &mut out);
    out.sort();
    out.dedup();
    assert_eq!(out.len(), 120);
}

const ATSP5_SEED: u64 = 7;
const ATSP5_OPTIMUM: f64 = 1.2323428743250622;

#[test]
fn atsp_five_optimum_is_pinned() {
    let inst = &generate(Task::Atsp, 5, 1, ATSP5_SEED).unwrap().instances[0];
    let independent = enumerated_optimum(inst);
    assert!(close(independent, ATSP5_OPTIMUM, 1e-12), "{independent}");
    let (_, cost) = brute_force_best(inst).unwrap();
    assert!(close(cost, ATSP5_OPTIMUM, 1e-12));
}

const TSP6_SEED: u64 = 11;
const TSP6_ZERO_POLICY_GAP: f64 = 0.48658343848732527;

#[test]
fn tsp_six_optimality_gap_is_pinned() {
    // zero parameters decode the identity tour by the lowest-id tie-break
    let data = generate(Task::Tsp, 6, 20, TSP6_SEED).unwrap();
    let independent = data
        .instances
        .iter()
        .map(|inst| {
            let tour: Vec<usize> = (0..6).collect();
            cycle_cost(inst, &tour) / enumerated_optimum(inst) - 1.0
        })
        .sum::<f64>()
        / 20.0;
    assert!(close(independent, TSP6_ZERO_POLICY_GAP, 1e-12), "{independent}");
    let params = PolicyParams::zeros(Task::Tsp, 8).unwrap();
    let gap = optimality_gap(&params, &data.instances).unwrap();
    assert!(close(gap, TSP6_ZERO_POLICY_GAP, 1e-12), "{gap}");
}

#[test]
fn unit_square_tour() {
    let inst = ProblemInstance::tsp(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
    let (_, cost) = brute_force_best(&inst).unwrap();
    assert!(close(cost, 4.0, 1e-12));
}

/// Groups all permutations of N cities by canonical solution.
fn orbit_sizes_by_enumeration(inst: &ProblemInstance) -> Vec<usize> {
    let n = inst.size();
    let mut cities: Vec<usize> = (0..n).collect();
    let mut perms = Vec::new();
    heap_permutations(&mut cities, &mut perms);
    let mut groups = std::collections::BTreeMap::<Solution, usize>::new();
    for p in perms {
        let sol = solution_of(inst, &Trajectory::routing(p)).unwrap();
        *groups.entry(sol).or_default() += 1;
    }
    groups.into_values().collect()
}

#[test]
fn tsp_four_orbits_have_eight_members() {
    let inst = &generate(Task::Tsp, 4, 1, 3).unwrap().instances[0];
    let sizes = orbit_sizes_by_enumeration(inst);
    assert_eq!(sizes, vec![8, 8, 8]);
    let sol = solution_of(inst, &Trajectory::routing(vec![0, 1, 2, 3])).unwrap();
    assert_eq!(enumerate_orbit(inst, &sol).unwrap().len(), 8);
    assert_eq!(orbit_size(Task::Tsp, &sol).unwrap(), 8);
}

#[test]
fn atsp_five_orbits_have_five_members() {
    let inst = &generate(Task::Atsp, 5, 1, 3).unwrap().instances[0];
    let sizes = orbit_sizes_by_enumeration(inst);
    assert_eq!(sizes.len(), 24);
    assert!(sizes.iter().all(|&s| s == 5));
    let sol = solution_of(inst, &Trajectory::routing(vec![0, 1, 2, 3, 4])).unwrap();
    assert_eq!(enumerate_orbit(inst, &sol).unwrap().len(), 5);
}

/// Depot-separated sequences over customers 1..=4 split into the given route sets.
fn cvrp_sequences_for(routes: &[Vec<usize>], inst: &ProblemInstance) -> usize {
    let target = Solution::Routes(routes.to_vec());
    let customers: usize = routes.iter().map(Vec::len).sum();
    let mut items: Vec<usize> = (1..=customers).collect();
    let mut perms = Vec::new();
    heap_permutations(&mut items, &mut perms);
    let mut count = 0;
    for p in perms {
        // every way to cut the permutation into nonempty consecutive routes
        for mask in 0..(1u32 << (customers - 1)) {
            let mut actions = vec![0];
            for (i, &c) in p.iter().enumerate() {
                actions.push(c);
                if i + 1 < customers && mask & (1 << i) != 0 {
                    actions.push(0);
                }
            }
            actions.push(0);
            if let Ok(sol) = solution_of(inst, &Trajectory::routing(actions)) {
                if sol == target {
                    count += 1;
                }
            }
        }
    }
    count
}

fn small_cvrp(customers: usize) -> ProblemInstance {
    let coords: Vec<[f64; 2]> = (0..=customers)
        .map(|i| [0.1 + 0.13 * i as f64, 0.7 - 0.11 * (i * i % 5) as f64])
        .collect();
    ProblemInstance::cvrp(coords, &vec![1; customers], 100).unwrap()
}

#[test]
fn cvrp_two_pair_routes_have_eight_sequences() {
    let inst = small_cvrp(4);
    let routes = vec![vec![1, 2], vec![3, 4]];
    assert_eq!(cvrp_sequences_for(&routes, &inst), 8);
    let sol = Solution::Routes(routes);
    assert_eq!(enumerate_orbit(&inst, &sol).unwrap().len(), 8);
    assert_eq!(orbit_size(Task::Cvrp, &sol).unwrap(), 8);
}

#[test]
fn cvrp_routes_of_lengths_one_three_two() {
    let inst = small_cvrp(6);
    let routes = vec![vec![1], vec![2, 3, 4], vec![5, 6]];
    assert_eq!(cvrp_sequences_for(&routes, &inst), 24);
    let sol = Solution::Routes(routes);
    assert_eq!(enumerate_orbit(&inst, &sol).unwrap().len(), 24);
    assert_eq!(orbit_size(Task::Cvrp, &sol).unwrap(), 24);
}

#[test]
fn swapping_two_cities_changes_cost() {
    let inst = &generate(Task::Tsp, 8, 1, 21).unwrap().instances[0];
    let a = Trajectory::routing((0..8).collect());
    let b = Trajectory::routing(vec![0, 1, 5, 3, 4, 2, 6, 7]);
    let (ca, cb) = (trajectory_cost(inst, &a).unwrap(), trajectory_cost(inst, &b).unwrap());
    assert!(!close(ca, cb, 1e-9));
    assert!(!symrd::symmetry::verify_preserving(inst, &a, &b));
}

#[test]
fn uniform_policy_entropy_on_four_cities() {
    let inst = &generate(Task::Tsp, 4, 1, 5).unwrap().instances[0];
    let params = PolicyParams::zeros(Task::Tsp, 4).unwrap();
    let e = entropy_decomposition_exact(&params, inst).unwrap();
    assert!((e.h_traj - 24f64.ln()).abs() < 1e-10);
    assert!((e.h_sol - 3f64.ln()).abs() < 1e-10);
    assert!((e.e_cond - 8f64.ln()).abs() < 1e-10);
    assert!((e.h_uniform_bound - e.h_traj).abs() < 1e-10);
}
