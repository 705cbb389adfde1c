//! PPO actor-critic intrusion detector.

mod model;
mod ppo;
mod train;

pub use model::{Heads, IdsNet, IdsNetSpec, Scaler, Trunk};
pub use ppo::{
    critic_loss, encode_transitions, encode_transitions_in, gae, ids_reward, minibatches, ppo_policy_loss,
    TransitionSlot,
};
pub use train::{
    continue_training, max_mean_reward, train_ids, write_curve, IdsConfig, IdsEpochStats, TrainedIds,
};
