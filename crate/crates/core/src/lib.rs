//! Symmetric reinforcement distillation (SymRD) for constructive
//! combinatorial-optimization policies.
//!
//! The crate is organised bottom-up:
//!
//! - [`instances`]: problem generators and dataset files for TSP, ATSP, CVRP and FFSP.
//! - [`envs`]: deterministic episodic MDPs, the trajectory-to-solution map and exact oracles.
//! - [`symmetry`]: solution-preserving transformations, orbit enumeration and diagnostics.
//! - [`policy`]: a small autoregressive policy with hand-derived gradients.
//! - [`training`]: the alternating RL / symmetric self-distillation loop under a reward budget.
//! - [`eval`]: validation cost, symmetry gap, exact entropy decomposition, AUC and optimality gap.
//! - [`verify`]: property suites shared by the CLI and the acceptance tests.
//!
//! Every call that evaluates the objective of a *training* trajectory is metered by a
//! [`BudgetLedger`]; nothing else touches it.

pub mod budget;
pub mod envs;
pub mod error;
pub mod eval;
pub mod instances;
pub mod policy;
pub mod rng;
pub mod symmetry;
pub mod training;
pub mod verify;

pub use budget::BudgetLedger;
pub use envs::{Action, Solution, State, Trajectory};
pub use error::{Error, Result};
pub use instances::{Dataset, ProblemInstance, Task};
pub use policy::PolicyParams;
