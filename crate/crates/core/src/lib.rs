//! Causal action discovery and causal policy-gradient agents for multi-stage
//! robot tasks.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: multi-reward staged MDP abstractions and trajectory segmentation.
//! * [`envs`]: two analytic kinematic environments with known causal structure.
//! * [`nn`]: a small f64 MLP with Gaussian heads, Adam, and gradient checking.
//! * [`discovery`]: intervention data collection, reward models, KL scoring,
//!   and causal-action selection.
//! * [`agents`]: causal PPO and SAC agents, orchestration, and evaluation.
//! * [`config`] and [`report`]: run configuration and run comparison.

pub mod error;
pub mod matrix;
pub mod mdp;
pub mod rng;
pub mod envs;
pub mod nn;
pub mod discovery;
pub mod agents;
pub mod config;
pub mod report;

pub use error::{Error, Result};
pub use matrix::CausalMatrix;
pub use mdp::{ActionVector, RewardVector, StagedEnv, StagedTaskSpec, Transition};
