//! Volt-VAR control on radial distribution feeders with two-stage
//! reinforcement learning: an exact power-flow environment, soft actor-critic,
//! its jointly adversarial variant for offline robust training, and the
//! transfer/evaluation pipeline that moves agents online.

pub mod env;
pub mod netcore;
pub mod neural;
pub mod sac;

pub use netcore::{
    Branch, Bus, Injections, NetworkModel, NetworkError, PowerFlowSolution,
};
