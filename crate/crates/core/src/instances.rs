//! Problem instances and fixed datasets for the four tasks.
//!
//! Sampling laws:
//!
//! - TSP and CVRP node coordinates are i.i.d. uniform on `[0,1]²`.
//! - CVRP demands are i.i.d. uniform integers in `1..=9`, the depot (node 0) has demand 0,
//!   and capacity follows the usual size table (30 for 20 customers, 40 for 50).
//! - ATSP distances are i.i.d. uniform on `(0,1)` with a zero diagonal. The triangle
//!   inequality is not enforced.
//! - FFSP processing times are i.i.d. uniform integers in `2..=9`, default 3 stages of
//!   4 machines.
//!
//! Dataset files are line-based JSON: a header line followed by one instance per line.
//! Floats are written in shortest round-trip form, so `load(save(d)) == d` bit for bit.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DATASET_FORMAT: &str = "symrd-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Upper bounds on FFSP shape. The policy pads job features to these sizes.
pub const FFSP_MAX_STAGES: usize = 4;
pub const FFSP_MAX_MACHINES: usize = 4;

pub const FFSP_DEFAULT_STAGES: usize = 3;
pub const FFSP_DEFAULT_MACHINES: usize = 4;
const FFSP_TIME_RANGE: (u32, u32) = (2, 9);
const CVRP_DEMAND_RANGE: (u32, u32) = (1, 9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tsp,
    Atsp,
    Cvrp,
    Ffsp,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Tsp, Task::Atsp, Task::Cvrp, Task::Ffsp];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Tsp => "tsp",
            Task::Atsp => "atsp",
            Task::Cvrp => "cvrp",
            Task::Ffsp => "ffsp",
        }
    }

    pub fn is_routing(self) -> bool {
        !matches!(self, Task::Ffsp)
    }

    fn min_size(self) -> usize {
        if self.is_routing() {
            3
        } else {
            2
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(Task::Tsp),
            "atsp" => Ok(Task::Atsp),
            "cvrp" => Ok(Task::Cvrp),
            "ffsp" => Ok(Task::Ffsp),
            other => Err(Error::Format(format!("unknown task `{other}`"))),
        }
    }
}

/// Processing times of one FFSP stage, stored machine-major: `times[m * jobs + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfspStage {
    pub machines: usize,
    pub times: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
enum InstanceData {
    Tsp {
        coords: Vec<[f64; 2]>,
    },
    Atsp {
        /// Row-major `n × n`.
        dist: Vec<f64>,
    },
    Cvrp {
        /// Depot at index 0, then `n` customers.
        coords: Vec<[f64; 2]>,
        /// Same indexing as `coords`; `demands[0] == 0`.
        demands: Vec<u32>,
        capacity: u32,
    },
    Ffsp {
        stages: Vec<FfspStage>,
    },
}

/// Immutable problem data. `n` counts cities (TSP/ATSP), customers (CVRP) or jobs (FFSP).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    n: usize,
    #[serde(flatten)]
    data: InstanceData,
}

impl ProblemInstance {
    pub fn tsp(coords: Vec<[f64; 2]>) -> Result<Self> {
        let inst = Self {
            n: coords.len(),
            data: InstanceData::Tsp { coords },
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn atsp(n: usize, dist: Vec<f64>) -> Result<Self> {
        let inst = Self {
            n,
            data: InstanceData::Atsp { dist },
        };
        inst.validate()?;
        Ok(inst)
    }

    /// `coords[0]` is the depot; `demands` lists customer demands only.
    pub fn cvrp(coords: Vec<[f64; 2]>, demands: &[u32], capacity: u32) -> Result<Self> {
        let mut all = Vec::with_capacity(demands.len() + 1);
        all.push(0);
        all.extend_from_slice(demands);
        let inst = Self {
            n: demands.len(),
            data: InstanceData::Cvrp {
                coords,
                demands: all,
                capacity,
            },
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn ffsp(jobs: usize, stages: Vec<FfspStage>) -> Result<Self> {
        let inst = Self {
            n: jobs,
            data: InstanceData::Ffsp { stages },
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn task(&self) -> Task {
        match self.data {
            InstanceData::Tsp { .. } => Task::Tsp,
            InstanceData::Atsp { .. } => Task::Atsp,
            InstanceData::Cvrp { .. } => Task::Cvrp,
            InstanceData::Ffsp { .. } => Task::Ffsp,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Number of distinct action ids in the MDP.
    pub fn num_actions(&self) -> usize {
        match self.task() {
            Task::Tsp | Task::Atsp => self.n,
            // depot + customers, or jobs + skip
            Task::Cvrp | Task::Ffsp => self.n + 1,
        }
    }

    /// Node coordinates (TSP, and CVRP with the depot first).
    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        match &self.data {
            InstanceData::Tsp { coords } | InstanceData::Cvrp { coords, .. } => Some(coords),
            _ => None,
        }
    }

    pub fn demands(&self) -> Option<&[u32]> {
        match &self.data {
            InstanceData::Cvrp { demands, .. } => Some(demands),
            _ => None,
        }
    }

    pub fn capacity(&self) -> Option<u32> {
        match &self.data {
            InstanceData::Cvrp { capacity, .. } => Some(*capacity),
            _ => None,
        }
    }

    pub fn ffsp_stages(&self) -> Option<&[FfspStage]> {
        match &self.data {
            InstanceData::Ffsp { stages } => Some(stages),
            _ => None,
        }
    }

    /// Processing time of `job` on local machine `machine` of `stage`.
    pub fn proc_time(&self, stage: usize, machine: usize, job: usize) -> u32 {
        let stages = self.ffsp_stages().expect("proc_time on a non-FFSP instance");
        stages[stage].times[machine * self.n + job]
    }

    /// Travel cost between two nodes. For ATSP this is the directed matrix entry.
    pub fn dist(&self, from: usize, to: usize) -> f64 {
        match &self.data {
            InstanceData::Tsp { coords } | InstanceData::Cvrp { coords, .. } => {
                let dx = coords[from][0] - coords[to][0];
                let dy = coords[from][1] - coords[to][1];
                (dx * dx + dy * dy).sqrt()
            }
            InstanceData::Atsp { dist } => dist[from * self.n + to],
            InstanceData::Ffsp { .. } => panic!("dist on an FFSP instance"),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        let task = self.task();
        if self.n < task.min_size() {
            return Err(Error::InvalidSize {
                task,
                reason: format!("size {} below minimum {}", self.n, task.min_size()),
            });
        }
        let in_unit = |p: &[f64; 2]| p.iter().all(|c| (0.0..=1.0).contains(c));
        match &self.data {
            InstanceData::Tsp { coords } => {
                if !coords.iter().all(in_unit) {
                    return bad("coordinate outside [0,1]^2".into());
                }
            }
            InstanceData::Atsp { dist } => {
                if dist.len() != self.n * self.n {
                    return bad(format!("distance matrix has {} entries", dist.len()));
                }
                for i in 0..self.n {
                    for j in 0..self.n {
                        let v = dist[i * self.n + j];
                        if i == j && v != 0.0 {
                            return bad(format!("nonzero diagonal at {i}"));
                        }
                        if !(v.is_finite() && v >= 0.0) {
                            return bad(format!("invalid distance at ({i},{j})"));
                        }
                    }
                }
            }
            InstanceData::Cvrp {
                coords,
                demands,
                capacity,
            } => {
                if coords.len() != self.n + 1 || demands.len() != self.n + 1 {
                    return bad("cvrp arrays must have n+1 entries".into());
                }
                if !coords.iter().all(in_unit) {
                    return bad("coordinate outside [0,1]^2".into());
                }
                if demands[0] != 0 {
                    return bad("depot demand must be 0".into());
                }
                if demands[1..].iter().any(|&d| d == 0 || d > *capacity) {
                    return bad("customer demand must be in 1..=capacity".into());
                }
            }
            InstanceData::Ffsp { stages } => {
                if stages.is_empty() || stages.len() > FFSP_MAX_STAGES {
                    return bad(format!("ffsp needs 1..={FFSP_MAX_STAGES} stages"));
                }
                for (s, st) in stages.iter().enumerate() {
                    if st.machines == 0 || st.machines > FFSP_MAX_MACHINES {
                        return bad(format!("stage {s}: 1..={FFSP_MAX_MACHINES} machines"));
                    }
                    if st.times.len() != st.machines * self.n {
                        return bad(format!("stage {s}: wrong processing-time count"));
                    }
                    if st.times.iter().any(|&p| p == 0) {
                        return bad(format!("stage {s}: processing times must be >= 1"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Optional shape overrides for [`generate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenOptions {
    pub ffsp_stages: usize,
    pub ffsp_machines: usize,
    pub cvrp_capacity: Option<u32>,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            ffsp_stages: FFSP_DEFAULT_STAGES,
            ffsp_machines: FFSP_DEFAULT_MACHINES,
            cvrp_capacity: None,
        }
    }
}

pub fn cvrp_default_capacity(n: usize) -> u32 {
    match n {
        0..=10 => 20,
        11..=20 => 30,
        21..=50 => 40,
        _ => 50,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    pub n: usize,
    pub seed: u64,
    pub instances: Vec<ProblemInstance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    task: Task,
    n: usize,
    count: usize,
    seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            task: self.task,
            n: self.n,
            count: self.instances.len(),
            seed: self.seed,
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for inst in &self.instances {
            serde_json::to_writer(&mut *w, inst)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = fs::File::open(path)?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Format(format!("not a dataset file: `{}`", header.format)));
        }
        if header.version != DATASET_VERSION {
            return Err(Error::FormatVersion {
                found: header.version,
                expected: DATASET_VERSION,
            });
        }
        let mut instances = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let inst: ProblemInstance = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("instance {i}: {e}")))?;
            inst.validate()
                .map_err(|e| Error::Format(format!("instance {i}: {e}")))?;
            if inst.task() != header.task || inst.size() != header.n {
                return Err(Error::Format(format!(
                    "instance {i} does not match header ({} n={})",
                    header.task, header.n
                )));
            }
            instances.push(inst);
        }
        if instances.len() != header.count {
            return Err(Error::Format(format!(
                "truncated dataset: header says {} instances, found {}",
                header.count,
                instances.len()
            )));
        }
        Ok(Self {
            task: header.task,
            n: header.n,
            seed: header.seed,
            instances,
        })
    }
}

pub fn generate(task: Task, n: usize, count: usize, seed: u64) -> Result<Dataset> {
    generate_with(task, n, count, seed, GenOptions::default())
}

pub fn generate_with(
    task: Task,
    n: usize,
    count: usize,
    seed: u64,
    opts: GenOptions,
) -> Result<Dataset> {
    if n < task.min_size() {
        return Err(Error::InvalidSize {
            task,
            reason: format!("size {n} below minimum {}", task.min_size()),
        });
    }
    if count == 0 {
        return Err(Error::InvalidSize {
            task,
            reason: "count must be at least 1".into(),
        });
    }
    let mut rng = rng::seeded(seed);
    let instances = (0..count)
        .map(|_| sample_instance(task, n, opts, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        task,
        n,
        seed,
        instances,
    })
}

/// Draws a single instance from the task distribution.
pub fn sample_instance(
    task: Task,
    n: usize,
    opts: GenOptions,
    rng: &mut impl rand::Rng,
) -> Result<ProblemInstance> {
    fn point(rng: &mut impl rand::Rng) -> [f64; 2] {
        [rng.gen::<f64>(), rng.gen::<f64>()]
    }
    match task {
        Task::Tsp => ProblemInstance::tsp((0..n).map(|_| point(rng)).collect()),
        Task::Atsp => {
            let mut dist = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        dist[i * n + j] = rng.sample(Open01);
                    }
                }
            }
            ProblemInstance::atsp(n, dist)
        }
        Task::Cvrp => {
            let coords: Vec<_> = (0..=n).map(|_| point(rng)).collect();
            let demands: Vec<u32> = (0..n)
                .map(|_| rng.gen_range(CVRP_DEMAND_RANGE.0..=CVRP_DEMAND_RANGE.1))
                .collect();
            let capacity = opts.cvrp_capacity.unwrap_or_else(|| cvrp_default_capacity(n));
            ProblemInstance::cvrp(coords, &demands, capacity)
        }
        Task::Ffsp => {
            let stages = (0..opts.ffsp_stages)
                .map(|_| FfspStage {
                    machines: opts.ffsp_machines,
                    times: (0..opts.ffsp_machines * n)
                        .map(|_| rng.gen_range(FFSP_TIME_RANGE.0..=FFSP_TIME_RANGE.1))
                        .collect(),
                })
                .collect();
            ProblemInstance::ffsp(n, stages)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsp_coordinates_in_unit_square() {
        let d = generate(Task::Tsp, 4, 1, 3).unwrap();
        let coords = d.instances[0].coords().unwrap();
        assert_eq!(coords.len(), 4);
        assert!(coords.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn atsp_zero_diagonal() {
        let d = generate(Task::Atsp, 5, 1, 3).unwrap();
        let inst = &d.instances[0];
        let diag: Vec<f64> = (0..5).map(|i| inst.dist(i, i)).collect();
        assert_eq!(diag, vec![0.0; 5]);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    let v = inst.dist(i, j);
                    assert!(v > 0.0 && v < 1.0);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(Task::Tsp, 4, 1, 42).unwrap();
        let b = generate(Task::Tsp, 4, 1, 42).unwrap();
        let bits = |d: &Dataset| -> Vec<u64> {
            d.instances[0]
                .coords()
                .unwrap()
                .iter()
                .flatten()
                .map(|c| c.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, generate(Task::Tsp, 4, 1, 43).unwrap());
    }

    #[test]
    fn cvrp_demands_within_capacity() {
        let d = generate(Task::Cvrp, 20, 50, 9).unwrap();
        for inst in &d.instances {
            let q = inst.capacity().unwrap();
            assert_eq!(q, 30);
            let dem = inst.demands().unwrap();
            assert_eq!(dem[0], 0);
            assert!(dem[1..].iter().all(|&v| (1..=9).contains(&v) && v <= q));
        }
    }

    #[test]
    fn ffsp_default_shape() {
        let d = generate(Task::Ffsp, 6, 2, 1).unwrap();
        let stages = d.instances[0].ffsp_stages().unwrap();
        assert_eq!(stages.len(), 3);
        for st in stages {
            assert_eq!(st.machines, 4);
            assert!(st.times.iter().all(|&p| (2..=9).contains(&p)));
        }
    }

    #[test]
    fn too_small_sizes_rejected() {
        assert!(matches!(
            generate(Task::Tsp, 2, 1, 0),
            Err(Error::InvalidSize { .. })
        ));
        assert!(matches!(
            generate(Task::Ffsp, 1, 1, 0),
            Err(Error::InvalidSize { .. })
        ));
        assert!(generate(Task::Ffsp, 2, 1, 0).is_ok());
        assert!(generate(Task::Tsp, 4, 0, 0).is_err());
    }

    #[test]
    fn round_trip_in_memory() {
        for task in Task::ALL {
            let d = generate(task, 5, 3, 11).unwrap();
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            let back = Dataset::read_from(&buf[..]).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let d = generate(Task::Cvrp, 6, 4, 2).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            Dataset::read_from(cut.as_bytes()),
            Err(Error::Format(_))
        ));
        // cut in the middle of a line
        let half = &text[..text.len() / 2];
        assert!(matches!(
            Dataset::read_from(half.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn unknown_task_tag_is_format_error() {
        let d = generate(Task::Tsp, 4, 1, 2).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"tsp\"", "\"knapsack\"");
        assert!(matches!(
            Dataset::read_from(text.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let d = generate(Task::Tsp, 4, 1, 2).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("\"version\":1", "\"version\":7");
        assert!(matches!(
            Dataset::read_from(text.as_bytes()),
            Err(Error::FormatVersion { found: 7, .. })
        ));
    }
}
