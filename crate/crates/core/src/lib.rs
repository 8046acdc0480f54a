//! Distributed resource allocation over switching undirected networks with
//! nonlinear, sign-preserving agent actuation.
//!
//! Agents hold local states `x_i` and cooperatively minimize `Σ f_i(x_i, t)`
//! subject to `Σ a_i x_i = b`, exchanging scaled gradients with their
//! current neighbors only.

pub mod actuation;
pub mod costs;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod netgraph;
pub mod oracle;

pub use actuation::Actuation;
pub use costs::LocalCost;
pub use dynamics::{simulate, AllocationProblem, SimConfig, StateMatrix, Trajectory};
pub use error::{Error, Result};
pub use netgraph::{GraphSchedule, WeightedGraph};
pub use oracle::{solve_kkt, KktSolution};
