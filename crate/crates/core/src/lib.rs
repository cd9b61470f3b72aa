//! Continuous-time reinforcement learning on controlled diffusions.
//!
//! Values evolve by a Hamiltonian flow `V <- V + tau * H(V)` where `H`
//! aggregates the advantage rate `q = r + L^a V - beta V` over actions.
//! The crate provides the model-based flow, finite-horizon and Richardson
//! estimators of `q`, single-critic actor-critic agents, and independent
//! oracles (grid dynamic programming, scalar Riccati, exact OU moments).

pub mod agents;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod grid;
pub mod hamiltonian;
pub mod oracle;
pub mod q_estimation;
pub mod quadrature;
pub mod rng;
pub mod single_critic;
pub mod value_flow;
pub mod verify;

pub use error::{Error, Result};
