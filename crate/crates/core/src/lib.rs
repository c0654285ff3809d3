//! Partially observable restless bandits with restart.
//!
//! Arms are Markov chains whose state is hidden while passive and reset to
//! a draw from `Q` when activated. Two observation models are supported:
//! in model A nothing is revealed, in model B the post-reset state is
//! revealed. The crate computes Whittle indices on a truncated
//! information-state chain, checks them against dynamic-programming
//! oracles, and simulates index, myopic and optimal scheduling policies.

pub mod arm;
pub mod dp;
pub mod error;
pub mod info;
pub mod matrix;
pub mod policy_eval;
pub mod sim;
pub mod whittle;

pub use arm::{default_cost, Arm, CostSpec};
pub use error::{Error, Result};
pub use info::{Discount, InfoChain, InfoState, Model};
pub use matrix::{make_structured_matrix, sample_reset_pmf, ResetPmf, StochasticMatrix};
pub use policy_eval::{PolicyValue, ThresholdPolicy};
pub use whittle::IndexTable;
