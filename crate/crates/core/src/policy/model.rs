//! Parameter layout, per-instance encoding, forward rollouts and reverse accumulation.
//!
//! For a state with acting context `c` and candidate embeddings `E = Φ W_e`:
//!
//! ```text
//! q        = W_qᵀ c
//! logit_a  = (q · E_a) / √d + w_pair · g_a
//! π(a | s) = softmax over feasible a
//! ```
//!
//! `g_a` is a fixed pairwise feature (negative travel distance from the current node,
//! or negative processing time on the acting machine). The critic reads the mean of a
//! separate embedding `Φ W_c` through a linear head.

use crate::envs::{Action, State, Trajectory};
use crate::error::{Error, Result};
use crate::instances::{ProblemInstance, Task, FFSP_MAX_MACHINES, FFSP_MAX_STAGES};

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub task: Task,
    pub d: usize,
    pub f: usize,
    pub c: usize,
    pub we: usize,
    pub wq: usize,
    pub w_pair: usize,
    pub wce: usize,
    pub wv: usize,
    pub bv: usize,
    pub total: usize,
}

pub(crate) fn feature_dim(task: Task) -> usize {
    match task {
        Task::Tsp | Task::Atsp => 5,
        Task::Cvrp => 7,
        Task::Ffsp => FFSP_MAX_MACHINES + 3,
    }
}

pub(crate) fn context_dim(task: Task, d: usize) -> usize {
    match task {
        Task::Tsp | Task::Atsp => 3 * d + 2,
        Task::Cvrp => 3 * d + 3,
        Task::Ffsp => d + FFSP_MAX_MACHINES + FFSP_MAX_STAGES + 2,
    }
}

impl Layout {
    pub fn new(task: Task, d: usize) -> Self {
        let f = feature_dim(task);
        let c = context_dim(task, d);
        let we = 0;
        let wq = we + f * d;
        let w_pair = wq + c * d;
        let wce = w_pair + 1;
        let wv = wce + f * d;
        let bv = wv + d;
        Self {
            task,
            d,
            f,
            c,
            we,
            wq,
            w_pair,
            wce,
            wv,
            bv,
            total: bv + 1,
        }
    }
}

/// Instance-dependent inputs and embeddings, computed once per parameter setting.
pub(crate) struct Encoding<'a> {
    pub inst: &'a ProblemInstance,
    /// One feature table per stage for FFSP, a single table for routing. Row-major
    /// `rows × f`.
    pub features: Vec<Vec<f64>>,
    pub emb: Vec<Vec<f64>>,
    pub rows: usize,
    /// Rows entering the mean embedding (all nodes, or the job rows of every stage).
    pub node_rows: usize,
    pub mean_emb: Vec<f64>,
    pub mean_features: Vec<f64>,
}

fn routing_features(inst: &ProblemInstance) -> Vec<f64> {
    let n_act = inst.num_actions();
    let mut out = Vec::with_capacity(n_act * feature_dim(inst.task()));
    match inst.task() {
        Task::Tsp => {
            for p in inst.coords().expect("tsp coords") {
                out.extend_from_slice(&[p[0], p[1], p[0] * p[0], p[1] * p[1], 1.0]);
            }
        }
        Task::Cvrp => {
            let q = f64::from(inst.capacity().expect("cvrp capacity"));
            let demands = inst.demands().expect("cvrp demands");
            for (i, p) in inst.coords().expect("cvrp coords").iter().enumerate() {
                let depot = if i == 0 { 1.0 } else { 0.0 };
                out.extend_from_slice(&[
                    p[0],
                    p[1],
                    p[0] * p[0],
                    p[1] * p[1],
                    f64::from(demands[i]) / q,
                    depot,
                    1.0,
                ]);
            }
        }
        Task::Atsp => {
            let n = inst.size();
            let off = (n - 1) as f64;
            for a in 0..n {
                let row = (0..n).filter(|&j| j != a).map(|j| inst.dist(a, j));
                let col = (0..n).filter(|&i| i != a).map(|i| inst.dist(i, a));
                let row_mean = row.clone().sum::<f64>() / off;
                let row_min = row.fold(f64::INFINITY, f64::min);
                let col_mean = col.clone().sum::<f64>() / off;
                let col_min = col.fold(f64::INFINITY, f64::min);
                out.extend_from_slice(&[row_mean, row_min, col_mean, col_min, 1.0]);
            }
        }
        Task::Ffsp => unreachable!(),
    }
    out
}

const FFSP_TIME_SCALE: f64 = 10.0;

fn ffsp_features(inst: &ProblemInstance, stage: usize) -> Vec<f64> {
    let n = inst.size();
    let f = feature_dim(Task::Ffsp);
    let machines = inst.ffsp_stages().expect("ffsp stages")[stage].machines;
    let mut out = vec![0.0; (n + 1) * f];
    for j in 0..n {
        let row = &mut out[j * f..(j + 1) * f];
        let mut sum = 0.0;
        for m in 0..machines {
            let p = f64::from(inst.proc_time(stage, m, j)) / FFSP_TIME_SCALE;
            row[m] = p;
            sum += p;
        }
        row[FFSP_MAX_MACHINES] = sum / machines as f64;
        row[f - 1] = 1.0;
    }
    // skip row
    out[n * f + f - 2] = 1.0;
    out[n * f + f - 1] = 1.0;
    out
}

fn matmul_rows(x: &[f64], rows: usize, inner: usize, w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[k * cols..(k + 1) * cols];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    out
}

impl<'a> Encoding<'a> {
    pub fn new(lay: &Layout, params: &[f64], inst: &'a ProblemInstance) -> Self {
        let d = lay.d;
        let (features, rows, node_rows) = match inst.task() {
            Task::Ffsp => {
                let stages = inst.ffsp_stages().expect("ffsp stages").len();
                let tables = (0..stages).map(|s| ffsp_features(inst, s)).collect();
                (tables, inst.size() + 1, inst.size())
            }
            _ => (
                vec![routing_features(inst)],
                inst.num_actions(),
                inst.num_actions(),
            ),
        };
        let we = &params[lay.we..lay.we + lay.f * d];
        let emb: Vec<Vec<f64>> = features
            .iter()
            .map(|phi| matmul_rows(phi, rows, lay.f, we, d))
            .collect();
        let count = (node_rows * features.len()) as f64;
        let mut mean_emb = vec![0.0; d];
        let mut mean_features = vec![0.0; lay.f];
        for (phi, e) in features.iter().zip(&emb) {
            for r in 0..node_rows {
                for k in 0..d {
                    mean_emb[k] += e[r * d + k] / count;
                }
                for k in 0..lay.f {
                    mean_features[k] += phi[r * lay.f + k] / count;
                }
            }
        }
        Self {
            inst,
            features,
            emb,
            rows,
            node_rows,
            mean_emb,
            mean_features,
        }
    }

    fn row(&self, table: usize, a: usize, d: usize) -> &[f64] {
        &self.emb[table][a * d..(a + 1) * d]
    }
}

/// Where a rollout gets its actions from.
pub(crate) enum ActionSource<'t, R> {
    Sample(&'t mut R),
    Greedy,
    Given(&'t Trajectory),
}

/// One recorded decision with more than one feasible action.
pub(crate) struct StepTrace {
    pub t: usize,
    pub table: usize,
    pub feasible: Vec<Action>,
    pub probs: Vec<f64>,
    pub chosen: usize,
    pub context: Vec<f64>,
    pub q: Vec<f64>,
    pub pair: Vec<f64>,
    pub last: Option<usize>,
    pub first: Option<usize>,
}

pub(crate) struct Trace {
    pub steps: Vec<StepTrace>,
    pub log_prob: f64,
    pub trajectory: Trajectory,
}

struct StepInputs {
    table: usize,
    context: Vec<f64>,
    pair: Vec<f64>,
    last: Option<usize>,
    first: Option<usize>,
}

fn step_inputs(lay: &Layout, enc: &Encoding<'_>, state: &State<'_>, feasible: &[Action]) -> StepInputs {
    let d = lay.d;
    let inst = enc.inst;
    let mut context = Vec::with_capacity(lay.c);
    context.extend_from_slice(&enc.mean_emb);
    match state {
        State::Routing(r) => {
            let last = r.last();
            let first = r.first();
            for node in [last, first] {
                match node {
                    Some(a) => context.extend_from_slice(enc.row(0, a, d)),
                    None => context.extend(std::iter::repeat(0.0).take(d)),
                }
            }
            if inst.task() == Task::Cvrp {
                let q = f64::from(inst.capacity().expect("cvrp capacity"));
                context.push(f64::from(r.remaining_capacity()) / q);
            }
            context.push(if last.is_none() { 1.0 } else { 0.0 });
            context.push(1.0);
            let pair = feasible
                .iter()
                .map(|&a| match last {
                    Some(l) => -inst.dist(l, a),
                    None => 0.0,
                })
                .collect();
            StepInputs {
                table: 0,
                context,
                pair,
                last,
                first,
            }
        }
        State::Ffsp(f) => {
            let g = f.acting_machine().expect("non-terminal ffsp state");
            let stage = f.layout().stage_of(g);
            let local = f.layout().local_of(g);
            let mut onehot = [0.0; FFSP_MAX_MACHINES + FFSP_MAX_STAGES];
            onehot[local] = 1.0;
            onehot[FFSP_MAX_MACHINES + stage] = 1.0;
            context.extend_from_slice(&onehot);
            context.push(f.assigned_in_stage(stage) as f64 / inst.size() as f64);
            context.push(1.0);
            let skip = f.skip_action();
            let pair = feasible
                .iter()
                .map(|&a| {
                    if a == skip {
                        0.0
                    } else {
                        -f64::from(inst.proc_time(stage, local, a)) / FFSP_TIME_SCALE
                    }
                })
                .collect();
            StepInputs {
                table: stage,
                context,
                pair,
                last: None,
                first: None,
            }
        }
    }
}

/// Log-probabilities over `feasible` at `state`, plus what backward needs.
fn step_forward(
    lay: &Layout,
    params: &[f64],
    enc: &Encoding<'_>,
    state: &State<'_>,
    feasible: &[Action],
) -> (StepInputs, Vec<f64>, Vec<f64>) {
    let d = lay.d;
    let inputs = step_inputs(lay, enc, state, feasible);
    let wq = &params[lay.wq..lay.wq + lay.c * d];
    let mut q = vec![0.0; d];
    for (k, &cv) in inputs.context.iter().enumerate() {
        if cv == 0.0 {
            continue;
        }
        for (qj, &w) in q.iter_mut().zip(&wq[k * d..(k + 1) * d]) {
            *qj += cv * w;
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let w_pair = params[lay.w_pair];
    let logits: Vec<f64> = feasible
        .iter()
        .zip(&inputs.pair)
        .map(|(&a, &g)| {
            let e = enc.row(inputs.table, a, d);
            q.iter().zip(e).map(|(x, y)| x * y).sum::<f64>() * scale + w_pair * g
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let log_probs = logits.iter().map(|l| l - lse).collect();
    (inputs, q, log_probs)
}

/// Log-probabilities of every feasible action at `state`.
pub(crate) fn action_log_probs(
    lay: &Layout,
    params: &[f64],
    enc: &Encoding<'_>,
    state: &State<'_>,
) -> (Vec<Action>, Vec<f64>) {
    let feasible = state.feasible_actions();
    if feasible.len() == 1 {
        return (feasible, vec![0.0]);
    }
    let (_, _, lp) = step_forward(lay, params, enc, state, &feasible);
    (feasible, lp)
}

pub(crate) fn rollout<R: rand::Rng>(
    lay: &Layout,
    params: &[f64],
    enc: &Encoding<'_>,
    mut source: ActionSource<'_, R>,
    record: bool,
) -> Result<Trace> {
    let inst = enc.inst;
    let mut state = match &source {
        ActionSource::Given(t) => State::for_trajectory(inst, t)?,
        _ => State::initial(inst)?,
    };
    let mut steps = Vec::new();
    let mut log_prob = 0.0;
    let mut t = 0usize;
    while !state.is_terminal() {
        let feasible = state.feasible_actions();
        let chosen = match &mut source {
            ActionSource::Given(traj) => {
                let a = *traj.actions.get(t).ok_or_else(|| {
                    Error::InvalidTrajectory(format!(
                        "trajectory of length {} ends before a terminal state",
                        traj.len()
                    ))
                })?;
                Some(
                    feasible
                        .iter()
                        .position(|&f| f == a)
                        .ok_or(Error::InfeasibleAction { action: a, step: t })?,
                )
            }
            _ => None,
        };
        if feasible.len() == 1 {
            state.apply(feasible[0])?;
            t += 1;
            continue;
        }
        let (inputs, q, log_probs) = step_forward(lay, params, enc, &state, &feasible);
        let idx = match (&mut source, chosen) {
            (_, Some(i)) => i,
            (ActionSource::Sample(rng), None) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = log_probs.len() - 1;
                for (i, lp) in log_probs.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
            // ties go to the lowest action id, which comes first in `feasible`
            (ActionSource::Greedy, None) => log_probs
                .iter()
                .enumerate()
                .fold(0, |best, (i, &lp)| if lp > log_probs[best] { i } else { best }),
            (ActionSource::Given(_), None) => unreachable!(),
        };
        log_prob += log_probs[idx];
        let a = feasible[idx];
        if record {
            steps.push(StepTrace {
                t,
                table: inputs.table,
                probs: log_probs.iter().map(|lp| lp.exp()).collect(),
                feasible,
                chosen: idx,
                context: inputs.context,
                q,
                pair: inputs.pair,
                last: inputs.last,
                first: inputs.first,
            });
        }
        state.apply(a)?;
        t += 1;
    }
    if let ActionSource::Given(traj) = &source {
        if traj.len() != t {
            return Err(Error::InvalidTrajectory(format!(
                "trajectory continues past the terminal state at step {t}"
            )));
        }
    }
    Ok(Trace {
        steps,
        log_prob,
        trajectory: state.trajectory(),
    })
}

/// Adds `coeff · ∇θ log π(τ)` to `grad`.
pub(crate) fn backward(
    lay: &Layout,
    params: &[f64],
    enc: &Encoding<'_>,
    trace: &Trace,
    coeff: f64,
    grad: &mut [f64],
) {
    if coeff == 0.0 || trace.steps.is_empty() {
        return;
    }
    let d = lay.d;
    let scale = 1.0 / (d as f64).sqrt();
    let wq = &params[lay.wq..lay.wq + lay.c * d];
    let mut d_emb: Vec<Vec<f64>> = enc.emb.iter().map(|e| vec![0.0; e.len()]).collect();
    let mut d_mean = vec![0.0; d];
    let mut d_pair = 0.0;
    let mut dq = vec![0.0; d];
    let mut dc = vec![0.0; lay.c];
    for st in &trace.steps {
        dq.iter_mut().for_each(|v| *v = 0.0);
        for (i, (&a, &p)) in st.feasible.iter().zip(&st.probs).enumerate() {
            let delta = coeff * (if i == st.chosen { 1.0 } else { 0.0 } - p);
            if delta == 0.0 {
                continue;
            }
            d_pair += delta * st.pair[i];
            let e = enc.row(st.table, a, d);
            let de = &mut d_emb[st.table][a * d..(a + 1) * d];
            for k in 0..d {
                dq[k] += delta * e[k] * scale;
                de[k] += delta * st.q[k] * scale;
            }
        }
        let gq = &mut grad[lay.wq..lay.wq + lay.c * d];
        for (k, &cv) in st.context.iter().enumerate() {
            let mut acc = 0.0;
            let row = &wq[k * d..(k + 1) * d];
            let grow = &mut gq[k * d..(k + 1) * d];
            for j in 0..d {
                if cv != 0.0 {
                    grow[j] += cv * dq[j];
                }
                acc += row[j] * dq[j];
            }
            dc[k] = acc;
        }
        for k in 0..d {
            d_mean[k] += dc[k];
        }
        if let Some(l) = st.last {
            let de = &mut d_emb[0][l * d..(l + 1) * d];
            for k in 0..d {
                de[k] += dc[d + k];
            }
        }
        if let Some(f) = st.first {
            let de = &mut d_emb[0][f * d..(f + 1) * d];
            for k in 0..d {
                de[k] += dc[2 * d + k];
            }
        }
    }
    grad[lay.w_pair] += d_pair;
    let count = (enc.node_rows * enc.features.len()) as f64;
    let gwe = &mut grad[lay.we..lay.we + lay.f * d];
    for (phi, de) in enc.features.iter().zip(d_emb.iter_mut()) {
        for r in 0..enc.node_rows {
            for k in 0..d {
                de[r * d + k] += d_mean[k] / count;
            }
        }
        for r in 0..enc.rows {
            let prow = &phi[r * lay.f..(r + 1) * lay.f];
            let drow = &de[r * d..(r + 1) * d];
            for (fi, &pv) in prow.iter().enumerate() {
                if pv == 0.0 {
                    continue;
                }
                let g = &mut gwe[fi * d..(fi + 1) * d];
                for k in 0..d {
                    g[k] += pv * drow[k];
                }
            }
        }
    }
}

/// Critic value `w_v · mean(Φ W_c) + b_v` and its pre-activation mean embedding.
pub(crate) fn critic_forward(lay: &Layout, params: &[f64], enc: &Encoding<'_>) -> (f64, Vec<f64>) {
    let d = lay.d;
    let wce = &params[lay.wce..lay.wce + lay.f * d];
    let mut h = vec![0.0; d];
    for (fi, &m) in enc.mean_features.iter().enumerate() {
        for k in 0..d {
            h[k] += m * wce[fi * d + k];
        }
    }
    let wv = &params[lay.wv..lay.wv + d];
    let v = h.iter().zip(wv).map(|(a, b)| a * b).sum::<f64>() + params[lay.bv];
    (v, h)
}

/// Adds `∂ (V - target)² / ∂θ` to `grad` and returns the loss.
pub(crate) fn critic_backward(
    lay: &Layout,
    params: &[f64],
    enc: &Encoding<'_>,
    target: f64,
    grad: &mut [f64],
) -> f64 {
    let d = lay.d;
    let (v, h) = critic_forward(lay, params, enc);
    let dv = 2.0 * (v - target);
    let wv = &params[lay.wv..lay.wv + d];
    for k in 0..d {
        grad[lay.wv + k] += dv * h[k];
    }
    grad[lay.bv] += dv;
    for (fi, &m) in enc.mean_features.iter().enumerate() {
        for k in 0..d {
            grad[lay.wce + fi * d + k] += dv * wv[k] * m;
        }
    }
    (v - target) * (v - target)
}
