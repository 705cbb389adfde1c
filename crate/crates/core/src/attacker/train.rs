//! REINFORCE with an exponential-moving-average baseline.

use std::io::Write;

use evguard_autodiff::{adam_step, AdamConfig, AutodiffError, Gradients};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{AttackEnv, EnvConfig, EpisodeReturn};
use super::policy::{PolicyNet, PolicySpec};
use super::rollout::{play, Strategy};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::traces::LabeledTuple;

/// EMA of episode return used as the REINFORCE baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub b: Option<f64>,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { b: None, decay }
    }

    /// First observation seeds the average directly.
    pub fn update(&mut self, value: f64) -> f64 {
        let next = match self.b {
            None => value,
            Some(old) => self.decay * old + (1.0 - self.decay) * value,
        };
        self.b = Some(next);
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackerTrainConfig {
    pub policy: PolicySpec,
    pub env: EnvConfig,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for AttackerTrainConfig {
    fn default() -> Self {
        Self {
            policy: PolicySpec::default(),
            env: EnvConfig::default(),
            epochs: 500,
            episodes_per_epoch: 64,
            learning_rate: 1e-3,
            ema_decay: 0.9,
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

impl AttackerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.env.validate()?;
        if self.episodes_per_epoch == 0 {
            return Err(Error::Config("episodes_per_epoch must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema decay must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_abs_perturbation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedAttacker {
    pub policy: PolicyNet,
    pub curve: Vec<EpochStats>,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Autodiff(AutodiffError::NonFinite(what)) => {
            Error::Diverged(format!("attacker epoch {epoch}: non-finite {what}"))
        }
        other => other,
    }
}

pub fn train_attacker(benign: &[LabeledTuple], cfg: &AttackerTrainConfig) -> Result<TrainedAttacker> {
    cfg.validate()?;
    let policy = PolicyNet::new(cfg.policy, rng::derive_seed(cfg.seed, &[tag::INIT, 0]))?;
    continue_training(policy, benign, cfg)
}

/// Trains an existing policy; `cfg.policy` is ignored.
pub fn continue_training(
    mut policy: PolicyNet,
    benign: &[LabeledTuple],
    cfg: &AttackerTrainConfig,
) -> Result<TrainedAttacker> {
    cfg.validate()?;
    if benign.is_empty() {
        return Err(Error::Dataset("attacker training needs benign traces".into()));
    }
    let battery = cfg.env.station.battery_kwh;
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut baseline = Baseline::new(cfg.ema_decay);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let n = cfg.episodes_per_epoch as f64;

    for epoch in 0..cfg.epochs {
        let net = &policy;
        let episodes = (0..cfg.episodes_per_epoch)
            .into_par_iter()
            .map(|e| {
                let seed = rng::derive_seed(cfg.seed, &[tag::ATTACK_TRAIN, epoch as u64, e as u64]);
                let (env, first) = AttackEnv::reset(benign, cfg.env, seed)?;
                play(Strategy::Policy { net, greedy: false }, env, first, seed, true)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| diverged(epoch, e))?;

        let returns: Vec<f64> = episodes.iter().map(|ep| ep.ret.normalized_w(battery)).collect();
        let mean_return = returns.iter().sum::<f64>() / n;
        let mean_abs = episodes
            .iter()
            .map(|ep| ep.ret.mean_abs_perturbation())
            .sum::<f64>()
            / n;
        let b = baseline.b.unwrap_or(mean_return);

        let grads = episodes
            .into_par_iter()
            .zip(returns.par_iter())
            .map(|(mut ep, &w)| -> Result<Gradients> {
                let g = &mut ep.actor.graph;
                let parts = g.concat_rows(&ep.actor.log_probs)?;
                let total = g.sum(parts);
                let loss = g.scale(total, -(w - b) / n);
                Ok(g.backward(loss)?)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| diverged(epoch, e))?;

        let params = policy.params_mut();
        params.zero_grad();
        for g in &grads {
            g.accumulate_into(params);
        }
        if let Some(max) = cfg.grad_clip {
            params.clip_grad_norm(max);
        }
        adam_step(params, &adam).map_err(|e| diverged(epoch, e.into()))?;
        baseline.update(mean_return);

        curve.push(EpochStats {
            epoch,
            mean_reward: mean_return,
            mean_abs_perturbation: mean_abs,
        });
    }
    Ok(TrainedAttacker { policy, curve })
}

/// Plays one episode at fixed parameters and returns its return together
/// with the flattened gradient of the summed action log-probabilities.
pub fn score_function(
    policy: &PolicyNet,
    benign: &[LabeledTuple],
    env: &EnvConfig,
    seed: u64,
) -> Result<(EpisodeReturn, Vec<f64>)> {
    let (e, first) = AttackEnv::reset(benign, *env, seed)?;
    let mut ep = play(Strategy::Policy { net: policy, greedy: false }, e, first, seed, true)?;
    let g = &mut ep.actor.graph;
    let parts = g.concat_rows(&ep.actor.log_probs)?;
    let total = g.sum(parts);
    let grads = g.backward(total)?;
    let mut params = policy.params().clone();
    params.zero_grad();
    grads.accumulate_into(&mut params);
    let flat = params.ids().flat_map(|id| params.grad(id).data().to_vec()).collect();
    Ok((ep.ret, flat))
}

pub fn write_curve<W: Write>(writer: W, curve: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "mean_reward", "mean_abs_perturbation"])?;
    for s in curve {
        w.write_record([
            s.epoch.to_string(),
            format!("{:.10}", s.mean_reward),
            format!("{:.10}", s.mean_abs_perturbation),
        ])?;
    }
    w.flush()?;
    Ok(())
}
