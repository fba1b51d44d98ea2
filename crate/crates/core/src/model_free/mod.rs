//! Model-free actor-critic on tensor games, with a rank-k CP-factored
//! central critic, plus the additive (VDN) and independent actor-critic
//! baselines and the representability reductions.
//!
//! No neural networks: for stateless games the critic factors and the policy
//! logits are free parameter tables, updated by plain gradient steps or an
//! Adam-style rule. Every analytic gradient has a finite-difference test.

mod actor;
mod critic;
mod optim;
mod reductions;
mod targets;
mod train;

pub use actor::{actor_gradient, actor_step, temperature, ActorParams};
pub use critic::{critic_grad, CriticGrad, CriticParams};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use reductions::{fql_to_cp, vdn_to_cp};
pub use targets::{gae_advantages, multi_step_targets};
pub use train::{
    curve_csv, train_iac, train_tensor_game, train_vdn, CurvePoint, LearningCurve, MfConfig,
    CURVE_CSV_HEADER,
};
