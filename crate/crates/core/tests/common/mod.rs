//! Independent brute-force enumeration shared by the test targets.

use symrd::ProblemInstance;

/// Heap's algorithm over all permutations of `items`.
pub fn heap_permutations(items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let n = items.len();
    let mut c = vec![0usize; n];
    out.push(items.clone());
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            out.push(items.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

pub fn cycle_cost(inst: &ProblemInstance, tour: &[usize]) -> f64 {
    (0..tour.len())
        .map(|i| inst.dist(tour[i], tour[(i + 1) % tour.len()]))
        .sum()
}

/// Best closed tour with city 0 fixed first.
pub fn enumerated_optimum(inst: &ProblemInstance) -> f64 {
    let n = inst.size();
    let mut rest: Vec<usize> = (1..n).collect();
    let mut perms = Vec::new();
    heap_permutations(&mut rest, &mut perms);
    perms
        .iter()
        .map(|p| {
            let mut tour = vec![0];
            tour.extend(p);
            cycle_cost(inst, &tour)
        })
        .fold(f64::INFINITY, f64::min)
}
