//! Controlled diffusions, irregular holding times, and Euler–Maruyama simulation.

mod envs;
mod holding;
mod model;
mod sim;

pub use envs::{drift_chain, lq1d, ou, ChainParams, LqParams, OuParams};
pub use holding::{sample_holding_time, Bucket, HoldingTimeSpec};
pub use model::{Action, ActionSet, ActionSetKind, DiffusionModel, Dynamics, FnDynamics};
pub use sim::{
    default_substep, discounted_return, em_step, em_step_with_noise, env_transition,
    env_transition_with_midpoint, rollout, FnPolicy, Policy, StartState, Transition,
};
