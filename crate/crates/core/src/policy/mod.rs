//! LSTM stopping policy and its REINFORCE training.

pub mod checkpoint;
pub mod lstm;
pub mod optim;
pub mod train;

pub use lstm::{backward, forward, forward_cached, unroll, PolicyParams, PolicyState, StepCache, BLOCK_NAMES};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    act, action_probs, evaluate_greedy, evaluate_sampled, expected_return_at, log_softmax, reinforce_gradient,
    reinforce_update, rollout, rollout_with, train, ActMode, EpochLog, EvalSummary, TrainConfig, Trajectory,
};
