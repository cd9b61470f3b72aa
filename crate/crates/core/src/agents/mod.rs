//! Learning agents on sampled transitions: replay, approximators, CT-SAC,
//! CT-TD3, the orthogonality baseline, evaluation, metrics and checkpoints.

mod approx;
mod buffer;
mod checkpoint;
mod config;
mod env;
mod eval;
mod metrics;
mod mlp;
mod orthogonality;
mod sac;
mod td3;

pub use approx::{state_grid, CriticModel, GaussianActor, MlpCritic};
pub use buffer::ReplayBuffer;
pub use checkpoint::{Approximator, Checkpoint, CHECKPOINT_FORMAT};
pub use config::{AgentConfig, ApproxSpec};
pub use env::Env;
pub use eval::{episode_return, evaluate_policy, evaluate_policy_seeded, EvalStats};
pub use metrics::{MetricsLog, MetricsRow, METRICS_COLUMNS};
pub use mlp::{Activation, Adam, Mlp, MlpCache};
pub use orthogonality::{martingale_orthogonality_train, orthogonality_residual, OrthPolicy};
pub use sac::{ct_sac_train, log_boltzmann, SacAgent, SacOutcome, SacPolicy};
pub use td3::{actor_slope, ct_td3_train, td3_target_from_parts, DeterministicActor, Td3Agent, Td3Outcome};
