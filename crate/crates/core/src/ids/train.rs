//! PPO training of the detector over the labelled dataset.

use std::io::Write;

use evguard_autodiff::nn::categorical_logprob;
use evguard_autodiff::{adam_step, AdamConfig, AutodiffError, Graph};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{IdsNet, IdsNetSpec, Scaler};
use super::ppo::{critic_loss, encode_transitions_in, gae, ids_reward, minibatches, ppo_policy_loss};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sim::SLOTS_PER_DAY;
use crate::traces::{Label, LabeledTuple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdsConfig {
    pub net: IdsNetSpec,
    pub clip_epsilon: f64,
    /// Discount applied to the next row's value.
    pub discount: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Optimisation passes over each collected trajectory.
    pub update_passes: usize,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    /// Fit a per-slot input scaler on the training rows.
    pub standardize_inputs: bool,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for IdsConfig {
    fn default() -> Self {
        Self {
            net: IdsNetSpec::default(),
            clip_epsilon: 0.2,
            discount: 0.5,
            gae_lambda: 1.0,
            learning_rate: 4e-5,
            epochs: 200,
            minibatch_size: 64,
            update_passes: 4,
            value_coef: 0.5,
            normalize_advantages: false,
            standardize_inputs: true,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl IdsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config("clip epsilon must be in (0, 1)".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config("discount must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gae lambda must be in [0, 1]".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if self.minibatch_size == 0 || self.update_passes == 0 {
            return Err(Error::Config("minibatch size and update passes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdsEpochStats {
    pub epoch: usize,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedIds {
    pub net: IdsNet,
    pub curve: Vec<IdsEpochStats>,
}

/// Best achievable mean per-step reward: every attack caught, every benign row passed.
pub fn max_mean_reward(rows: &[LabeledTuple]) -> f64 {
    let malicious = rows.iter().filter(|r| r.label == Label::Malicious).count();
    malicious as f64 / rows.len().max(1) as f64
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Autodiff(AutodiffError::NonFinite(what)) => {
            Error::Diverged(format!("IDS epoch {epoch}: non-finite {what}"))
        }
        other => other,
    }
}

pub fn train_ids(rows: &[LabeledTuple], cfg: &IdsConfig) -> Result<TrainedIds> {
    cfg.validate()?;
    let mut net = IdsNet::new(cfg.net, rng::derive_seed(cfg.seed, &[tag::INIT, 1]))?;
    if cfg.standardize_inputs {
        net = net.with_scaler(Scaler::fit(rows)?)?;
    }
    continue_training(net, rows, cfg)
}

struct Rollout {
    order: Vec<usize>,
    actions: Vec<usize>,
    old_log_probs: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
    mean_reward: f64,
}

fn collect(net: &IdsNet, rows: &[LabeledTuple], cfg: &IdsConfig, epoch: usize) -> Result<Rollout> {
    let mut order_rng = rng::stream(cfg.seed, &[tag::IDS, epoch as u64, 0]);
    let order = minibatches(rows.len(), rows.len(), &mut order_rng).concat();
    let steps = encode_transitions_in(rows, &order)?;

    let mut probs = Vec::with_capacity(order.len());
    let mut values = Vec::with_capacity(order.len() + 1);
    for chunk in order.chunks(512) {
        let refs: Vec<&[f64; SLOTS_PER_DAY]> = chunk.iter().map(|&i| &rows[i].features).collect();
        let (p, v) = net.evaluate(&refs)?;
        probs.extend(p);
        values.extend(v);
    }
    values.push(0.0);

    let mut act_rng = rng::stream(cfg.seed, &[tag::IDS, epoch as u64, 1]);
    let mut actions = Vec::with_capacity(order.len());
    let mut old_log_probs = Vec::with_capacity(order.len());
    let mut rewards = Vec::with_capacity(order.len());
    for (t, step) in steps.iter().enumerate() {
        let p_mal = probs[t][1];
        let a = usize::from(act_rng.random::<f64>() < p_mal);
        actions.push(a);
        old_log_probs.push(probs[t][a].max(f64::MIN_POSITIVE).ln());
        rewards.push(ids_reward(a as u8, step.label.as_index() as u8));
    }

    let mut advantages = gae(&rewards, &values, cfg.discount, cfg.gae_lambda)?;
    let returns: Vec<f64> = advantages.iter().zip(&values).map(|(a, v)| a + v).collect();
    if cfg.normalize_advantages {
        let n = advantages.len() as f64;
        let mean = advantages.iter().sum::<f64>() / n;
        let sd = (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        advantages.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
    }
    Ok(Rollout {
        order,
        actions,
        old_log_probs,
        advantages,
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        returns,
    })
}

/// Trains an existing network; `cfg.net` and `cfg.standardize_inputs` are ignored.
pub fn continue_training(mut net: IdsNet, rows: &[LabeledTuple], cfg: &IdsConfig) -> Result<TrainedIds> {
    cfg.validate()?;
    let has = |l: Label| rows.iter().any(|r| r.label == l);
    if !has(Label::Benign) || !has(Label::Malicious) {
        return Err(Error::Dataset("IDS training needs both classes".into()));
    }
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let ro = collect(&net, rows, cfg, epoch).map_err(|e| diverged(epoch, e))?;
        let (mut policy_sum, mut critic_sum, mut updates) = (0.0, 0.0, 0usize);
        for pass in 0..cfg.update_passes {
            let mut rng = rng::stream(cfg.seed, &[tag::IDS, epoch as u64, 2 + pass as u64]);
            for batch in minibatches(ro.order.len(), cfg.minibatch_size, &mut rng) {
                let feats: Vec<&[f64; SLOTS_PER_DAY]> =
                    batch.iter().map(|&t| &rows[ro.order[t]].features).collect();
                let pick = |v: &[f64]| batch.iter().map(|&t| v[t]).collect::<Vec<_>>();
                let actions: Vec<usize> = batch.iter().map(|&t| ro.actions[t]).collect();

                let mut g = Graph::new();
                let heads = net.forward(&mut g, &feats)?;
                let logp = categorical_logprob(&mut g, heads.logits, &actions)?;
                let pl = ppo_policy_loss(
                    &mut g,
                    logp,
                    &pick(&ro.old_log_probs),
                    &pick(&ro.advantages),
                    cfg.clip_epsilon,
                )?;
                let cl = critic_loss(&mut g, heads.values, &pick(&ro.returns))?;
                let weighted = g.scale(cl, cfg.value_coef);
                let loss = g.add(pl, weighted)?;
                policy_sum += g.value(pl).item();
                critic_sum += g.value(cl).item();
                updates += 1;

                let grads = g.backward(loss).map_err(|e| diverged(epoch, e.into()))?;
                let params = net.params_mut();
                params.zero_grad();
                grads.accumulate_into(params);
                if let Some(max) = cfg.grad_clip {
                    params.clip_grad_norm(max);
                }
                adam_step(params, &adam).map_err(|e| diverged(epoch, e.into()))?;
            }
        }
        curve.push(IdsEpochStats {
            epoch,
            mean_reward: ro.mean_reward,
            policy_loss: policy_sum / updates as f64,
            critic_loss: critic_sum / updates as f64,
        });
    }
    Ok(TrainedIds { net, curve })
}

pub fn write_curve<W: Write>(writer: W, curve: &[IdsEpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "mean_reward", "policy_loss", "critic_loss"])?;
    for s in curve {
        w.write_record([
            s.epoch.to_string(),
            format!("{:.10}", s.mean_reward),
            format!("{:.10}", s.policy_loss),
            format!("{:.10}", s.critic_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}
