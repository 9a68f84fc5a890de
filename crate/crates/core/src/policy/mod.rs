//! Actor-critic networks, the PPO and Fair-PPO objectives, and training.

pub mod adam;
pub mod checkpoint;
pub mod learner;
pub mod loss;
pub mod network;
pub mod objective;

pub use adam::{optimize_step, AdamState};
pub use checkpoint::Checkpoint;
pub use learner::{argmax, sample_index, Decision, PenaltyUpdate, PpoLearner, UpdateStats};
pub use loss::{
    advantages, clip_objective, dynamic_lambda, entropy, fair_ppo_loss, gae, ppo_loss, value_loss,
    AdvantageBatch, FairPpoConfig, LambdaMode, PpoConfig, Sample, LAMBDA_MAX,
};
pub use network::{policy_forward, value_forward, Architecture, Head, ParameterSet};
pub use objective::{gradient, FairPpoObjective, Member, Objective, ProspectiveTerm};
