//! Core algorithms for legible leader/follower teams.
//!
//! Everything in this crate is pure computation over owned data and builds
//! without `std` (only `alloc` is required). File formats, the command line
//! and wall-clock bookkeeping live in the companion `legible` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agents;
pub mod experiment;
pub mod foraging;
pub mod grid;
pub mod legibility;
pub mod mdp;
pub mod planner;
pub mod pursuit;
pub mod seeds;
pub mod stats;

pub use mdp::{
    bellman_residual, evaluate_policy, greedy_policy, softmax_policy, value_iteration,
    DeterministicPolicy, MdpError, QFunction, SolverOptions, StochasticPolicy, TabularMDP,
    Transitions,
};
