//! Low-rank CP tensor methods for reinforcement learning in factored action
//! spaces.
//!
//! The joint action-value function of an n-agent problem, curried per state,
//! is an order-n tensor. This crate provides:
//!
//! - dense and CP-factored tensor types with contraction and the factored
//!   inner product ([`tensor`]),
//! - alternating least squares for full and partially observed tensors, plus
//!   rank probing and a confidence-boosting cluster selector ([`decomp`]),
//! - tabular factored-action MDPs, low-rank instance generators, the
//!   tensor-games benchmark, and trajectory sampling ([`env`]),
//! - the tensorised Bellman operator, exact and iterative policy evaluation,
//!   and policy improvement over joint action tensors ([`bellman`]),
//! - model-based learning that estimates reward/transition tensors from
//!   rollouts by CP completion ([`model_based`]),
//! - a model-free actor-critic whose central critic is a rank-k CP tensor,
//!   with VDN and independent actor-critic baselines ([`model_free`]).

pub mod bellman;
pub mod decomp;
pub mod env;
pub mod envfile;
pub mod error;
pub mod model_based;
pub mod model_free;
pub mod tensor;

pub use error::{Error, Result};
