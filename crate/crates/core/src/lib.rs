//! Coordinated pass@K policy optimization on a synthetic multi-strategy
//! environment.
//!
//! A single tabular policy plays two roles: a planner that emits a tuple of
//! `K` strategies for a problem, and a solver that answers once per strategy.
//! The crate covers the environment, the policy, gated rewards, the split
//! surrogate and its gradient, the staged training pipeline, evaluation,
//! significance testing, corpus decontamination and a config-driven runner.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod stats;
pub mod synthenv;

pub use error::{Error, Result};
pub use policy::{PlanMode, PolicyParams, Trajectory};
pub use synthenv::{Answer, ProblemSpec, Strategy};
