//! TOML run configuration, one section per pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacker::{AttackerTrainConfig, EnvConfig, GainMode, PolicyKind, PolicySpec, Squash};
use crate::balance::BalanceConfig;
use crate::error::{Error, Result};
use crate::handcrafted::HandcraftedAttack;
use crate::ids::{IdsConfig, IdsNetSpec, Trunk};
use crate::rng::{self, tag};
use crate::sim::StationConfig;
use crate::traces::VehicleProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracesSection {
    pub n_vehicles: u32,
    pub n_days: u32,
    /// Separate vehicles used only for held-out benign evaluation.
    pub heldout_vehicles: u32,
    pub heldout_days: u32,
    pub profile: VehicleProfile,
}

impl Default for TracesSection {
    fn default() -> Self {
        Self {
            n_vehicles: 64,
            n_days: 24,
            heldout_vehicles: 32,
            heldout_days: 8,
            profile: VehicleProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackerSection {
    pub policy: PolicyKind,
    pub hidden: usize,
    pub layers: usize,
    pub squash: Squash,
    pub init_sigma: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub learning_rate: f64,
    pub ema_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub arrival_rate: f64,
    /// Stealth weight nu.
    pub stealth_weight: f64,
    pub gain_mode: GainMode,
}

impl Default for AttackerSection {
    fn default() -> Self {
        let t = AttackerTrainConfig::default();
        Self {
            policy: t.policy.kind,
            hidden: t.policy.hidden,
            layers: t.policy.layers,
            squash: t.policy.squash,
            init_sigma: t.policy.init_sigma,
            epochs: t.epochs,
            episodes_per_epoch: t.episodes_per_epoch,
            learning_rate: t.learning_rate,
            ema_decay: t.ema_decay,
            grad_clip: t.grad_clip.unwrap_or(0.0),
            arrival_rate: t.env.arrival_rate,
            stealth_weight: t.env.stealth_weight,
            gain_mode: t.env.gain_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackDataSection {
    /// Share of benign traces replayed under attack.
    pub attack_fraction: f64,
    /// Attacker architectures whose datasets are built and evaluated.
    pub sources: Vec<PolicyKind>,
    /// Use the policy mean instead of sampling.
    pub greedy: bool,
}

impl Default for AttackDataSection {
    fn default() -> Self {
        Self {
            attack_fraction: 0.5,
            sources: vec![PolicyKind::Lstm, PolicyKind::Attention, PolicyKind::Mlp],
            greedy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceSection {
    pub target_ratio: f64,
    pub k_neighbors: usize,
}

impl Default for BalanceSection {
    fn default() -> Self {
        let b = BalanceConfig::default();
        Self {
            target_ratio: b.target_ratio,
            k_neighbors: b.k_neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdsSection {
    pub trunk: Trunk,
    pub hidden: usize,
    pub layers: usize,
    pub clip_epsilon: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub update_passes: usize,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    pub standardize_inputs: bool,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for IdsSection {
    fn default() -> Self {
        let c = IdsConfig::default();
        Self {
            trunk: c.net.trunk,
            hidden: c.net.hidden,
            layers: c.net.layers,
            clip_epsilon: c.clip_epsilon,
            discount: c.discount,
            gae_lambda: c.gae_lambda,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            minibatch_size: c.minibatch_size,
            update_passes: c.update_passes,
            value_coef: c.value_coef,
            normalize_advantages: c.normalize_advantages,
            standardize_inputs: c.standardize_inputs,
            grad_clip: c.grad_clip.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Share of the balanced dataset held out for testing.
    pub test_fraction: f64,
    /// Episodes used to compare the trained attacker with honest reporting.
    pub attack_eval_episodes: usize,
    pub offset_delta: f64,
    pub under_range: (f64, f64),
    pub floor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            attack_eval_episodes: 200,
            offset_delta: 0.3,
            under_range: (0.3, 0.8),
            floor: 0.2,
        }
    }
}

impl EvalSection {
    pub fn handcrafted(&self) -> [HandcraftedAttack; 3] {
        [
            HandcraftedAttack::FixedOffset {
                delta: self.offset_delta,
            },
            HandcraftedAttack::RandomUnder {
                low: self.under_range.0,
                high: self.under_range.1,
            },
            HandcraftedAttack::ZeroFloor { floor: self.floor },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub stealth_weights: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Trailing epochs averaged into a converged reward.
    pub final_window: usize,
    /// Overrides `attacker.epochs` for the nu sweep when non-zero.
    pub attacker_epochs: usize,
    /// Overrides `ids.epochs` for the learning-rate sweep when non-zero.
    pub ids_epochs: usize,
    /// Also run both sweeps at the end of `run-all`.
    pub in_run_all: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            stealth_weights: vec![0.2, 0.4, 0.6],
            learning_rates: vec![4e-5, 4e-4, 4e-3],
            seeds: vec![1, 2, 3],
            final_window: 50,
            attacker_epochs: 0,
            ids_epochs: 0,
            in_run_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub station: StationConfig,
    pub traces: TracesSection,
    pub attacker: AttackerSection,
    pub attack_data: AttackDataSection,
    pub balance: BalanceSection,
    pub ids: IdsSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            station: StationConfig::default(),
            traces: TracesSection::default(),
            attacker: AttackerSection::default(),
            attack_data: AttackDataSection::default(),
            balance: BalanceSection::default(),
            ids: IdsSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

fn clip(v: f64) -> Option<f64> {
    (v > 0.0).then_some(v)
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.station.validate()?;
        self.traces.profile.validate()?;
        if self.traces.n_vehicles == 0 || self.traces.n_days == 0 {
            return Err(Error::Config("traces need at least one vehicle and one day".into()));
        }
        if self.traces.profile.battery_kwh != self.station.battery_kwh {
            return Err(Error::Config(
                "traces.profile.battery_kwh must equal station.battery_kwh".into(),
            ));
        }
        for kind in self.attack_data.sources.iter().copied().chain([self.attacker.policy]) {
            self.attacker_config(kind, self.seed).validate()?;
        }
        if !(self.attack_data.attack_fraction > 0.0 && self.attack_data.attack_fraction <= 1.0) {
            return Err(Error::Config("attack_fraction must be in (0, 1]".into()));
        }
        self.balance_config().validate()?;
        self.ids_config(self.seed).validate()?;
        if !(self.eval.test_fraction > 0.0 && self.eval.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must be in (0, 1)".into()));
        }
        for attack in self.eval.handcrafted() {
            attack.validate()?;
        }
        if self.sweep.final_window == 0 {
            return Err(Error::Config("sweep.final_window must be positive".into()));
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            station: self.station,
            arrival_rate: self.attacker.arrival_rate,
            stealth_weight: self.attacker.stealth_weight,
            gain_mode: self.attacker.gain_mode,
        }
    }

    pub fn attacker_config(&self, kind: PolicyKind, seed: u64) -> AttackerTrainConfig {
        let a = &self.attacker;
        AttackerTrainConfig {
            policy: PolicySpec {
                kind,
                hidden: a.hidden,
                layers: a.layers,
                squash: a.squash,
                init_sigma: a.init_sigma,
            },
            env: self.env_config(),
            epochs: a.epochs,
            episodes_per_epoch: a.episodes_per_epoch,
            learning_rate: a.learning_rate,
            ema_decay: a.ema_decay,
            grad_clip: clip(a.grad_clip),
            seed: rng::derive_seed(seed, &[tag::ATTACK_TRAIN, kind as u64]),
        }
    }

    pub fn balance_config(&self) -> BalanceConfig {
        BalanceConfig {
            target_ratio: self.balance.target_ratio,
            k_neighbors: self.balance.k_neighbors,
            seed: rng::derive_seed(self.seed, &[tag::BALANCE]),
        }
    }

    pub fn ids_config(&self, seed: u64) -> IdsConfig {
        let i = &self.ids;
        IdsConfig {
            net: IdsNetSpec {
                trunk: i.trunk,
                hidden: i.hidden,
                layers: i.layers,
            },
            clip_epsilon: i.clip_epsilon,
            discount: i.discount,
            gae_lambda: i.gae_lambda,
            learning_rate: i.learning_rate,
            epochs: i.epochs,
            minibatch_size: i.minibatch_size,
            update_passes: i.update_passes,
            value_coef: i.value_coef,
            normalize_advantages: i.normalize_advantages,
            standardize_inputs: i.standardize_inputs,
            grad_clip: clip(i.grad_clip),
            seed: rng::derive_seed(seed, &[tag::IDS]),
        }
    }
}
