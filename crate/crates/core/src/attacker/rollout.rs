//! Episode rollouts shared by training, evaluation and dataset generation.

use evguard_autodiff::{Graph, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::env::{encode_state, AttackAction, AttackEnv, AttackState, EnvConfig, EpisodeReturn};
use super::policy::{Memory, PolicyNet};
use crate::error::Result;
use crate::rng::{self, tag};
use crate::traces::LabeledTuple;

/// Who picks `o_t`.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    /// Always reports the truth.
    Honest,
    /// Adds the same offset every slot.
    Constant(f64),
    /// Samples from the policy, or uses its squashed mean when `greedy`.
    Policy { net: &'a PolicyNet, greedy: bool },
}

pub(crate) struct Actor<'a> {
    strategy: Strategy<'a>,
    pub(crate) graph: Graph,
    memory: Option<Memory>,
    pub(crate) log_probs: Vec<Var>,
    track: bool,
}

impl<'a> Actor<'a> {
    pub(crate) fn new(strategy: Strategy<'a>, track: bool) -> Self {
        let mut graph = Graph::new();
        let memory = match strategy {
            Strategy::Policy { net, .. } => Some(net.start(&mut graph)),
            _ => None,
        };
        Self {
            strategy,
            graph,
            memory,
            log_probs: Vec::new(),
            track,
        }
    }

    pub(crate) fn act(&mut self, state: &AttackState, cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self.strategy {
            Strategy::Honest => Ok(0.0),
            Strategy::Constant(o) => Ok(AttackAction::saturating(o).value()),
            Strategy::Policy { net, greedy } => {
                let features = encode_state(state, cfg);
                let mem = self.memory.as_mut().expect("policy memory");
                let (mu, sigma) = net.forward(&mut self.graph, mem, &features)?;
                let (m, s) = (self.graph.value(mu).item(), self.graph.value(sigma).item());
                let u = if greedy {
                    m
                } else {
                    let eps: f64 = StandardNormal.sample(rng);
                    m + s * eps
                };
                if self.track {
                    let lp = net.log_prob(&mut self.graph, mu, sigma, u)?;
                    self.log_probs.push(lp);
                }
                Ok(net.spec().squash.apply(u))
            }
        }
    }
}

pub(crate) struct Episode<'a> {
    pub(crate) actor: Actor<'a>,
    pub(crate) ret: EpisodeReturn,
    pub(crate) reported: Vec<f64>,
}

pub(crate) fn play<'a>(
    strategy: Strategy<'a>,
    mut env: AttackEnv,
    first: AttackState,
    seed: u64,
    track: bool,
) -> Result<Episode<'a>> {
    let cfg = *env.config();
    let mut actor = Actor::new(strategy, track);
    let mut rng = rng::stream(seed, &[2]);
    let mut state = Some(first);
    let mut reported = Vec::with_capacity(crate::sim::SLOTS_PER_DAY);
    while let Some(s) = state {
        let o = actor.act(&s, &cfg, &mut rng)?;
        let out = env.step(AttackAction::saturating(o))?;
        reported.push(out.reported_soc);
        state = out.next_state;
    }
    Ok(Episode {
        actor,
        ret: env.episode_return(),
        reported,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub episodes: usize,
    /// Mean of `power_gained / B - stealth_penalty`.
    pub mean_reward: f64,
    pub mean_power_gain_kwh: f64,
    pub std_power_gain_kwh: f64,
    pub mean_abs_perturbation: f64,
}

/// Plays `episodes` seeded episodes. Environment draws depend only on the
/// seed, so different strategies face identical arrivals.
pub fn evaluate(
    strategy: Strategy<'_>,
    benign: &[LabeledTuple],
    cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    let returns = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let s = rng::derive_seed(seed, &[tag::ATTACK_EVAL, e as u64]);
            let (env, first) = AttackEnv::reset(benign, *cfg, s)?;
            Ok(play(strategy, env, first, s, false)?.ret)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = returns.len().max(1) as f64;
    let b = cfg.station.battery_kwh;
    let mean_gain = returns.iter().map(|r| r.power_gained).sum::<f64>() / n;
    let var_gain = returns
        .iter()
        .map(|r| (r.power_gained - mean_gain).powi(2))
        .sum::<f64>()
        / n;
    Ok(EvalStats {
        episodes,
        mean_reward: returns.iter().map(|r| r.normalized_w(b)).sum::<f64>() / n,
        mean_power_gain_kwh: mean_gain,
        std_power_gain_kwh: var_gain.sqrt(),
        mean_abs_perturbation: returns.iter().map(|r| r.mean_abs_perturbation()).sum::<f64>() / n,
    })
}

/// Replays every benign tuple as the adversary's true trace and records what
/// it reports. Output row `i` is the attacked version of input row `i`.
pub fn generate_attack_dataset(
    strategy: Strategy<'_>,
    benign: &[LabeledTuple],
    cfg: &EnvConfig,
    seed: u64,
) -> Result<Vec<LabeledTuple>> {
    benign
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let s = rng::derive_seed(seed, &[tag::ATTACK_DATA, i as u64]);
            let (env, first) = AttackEnv::reset_with_trace(row.features, *cfg, s)?;
            let ep = play(strategy, env, first, s, false)?;
            let mut features = [0.0; crate::sim::SLOTS_PER_DAY];
            features.copy_from_slice(&ep.reported);
            Ok(LabeledTuple::malicious(features))
        })
        .collect()
}
