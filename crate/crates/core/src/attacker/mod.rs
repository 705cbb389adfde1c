//! Stealthy false-SoC attacker: environment, policies and training.

mod env;
mod policy;
mod rollout;
mod train;

pub use env::{
    encode_state, perturb, AttackAction, AttackEnv, AttackState, EnvConfig, EpisodeReturn, GainMode,
    StepOutcome, ADVERSARY_ID, ADVERSARY_INDEX, FEATURE_DIM,
};
pub use policy::{Memory, PolicyKind, PolicyNet, PolicySpec, Squash};
pub use rollout::{evaluate, generate_attack_dataset, EvalStats, Strategy};
pub use train::{
    continue_training, score_function, train_attacker, write_curve, AttackerTrainConfig, Baseline,
    EpochStats, TrainedAttacker,
};
