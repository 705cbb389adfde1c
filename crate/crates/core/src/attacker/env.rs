//! Single-adversary charging environment.
//!
//! Each slot the adversary's true SoC comes from a benign day trace and
//! `Poisson(arrival_rate)` honest EVs arrive with uniform SoC. The adversary
//! reports `clamp(true + o_t, 0, 1)` and is rewarded with the energy the
//! coordinator grants it (kWh) minus a stealth penalty `nu * |o_t|`. Training
//! uses the gain divided by B so that `nu` is on the scale of one battery.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sim::{schedule, ChargingRequest, StationConfig, SLOTS_PER_DAY};
use crate::traces::LabeledTuple;

pub const ADVERSARY_ID: u32 = 0;
/// Index of the adversary inside [`AttackState::soc_vector`].
pub const ADVERSARY_INDEX: usize = 0;

/// How the adversary's gain `C_i(t)` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Energy granted this slot.
    Energy,
    /// A full battery's worth when selected, regardless of demand.
    Selected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub station: StationConfig,
    /// Mean number of honest EVs arriving alongside the adversary each slot.
    pub arrival_rate: f64,
    /// Stealth penalty weight (nu).
    pub stealth_weight: f64,
    pub gain_mode: GainMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            station: StationConfig::default(),
            arrival_rate: 29.0,
            stealth_weight: 0.2,
            gain_mode: GainMode::Energy,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.station.validate()?;
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            return Err(Error::Config("arrival_rate must be finite and >= 0".into()));
        }
        if !(self.stealth_weight >= 0.0) {
            return Err(Error::Config("stealth weight nu must be >= 0".into()));
        }
        Ok(())
    }
}

/// What the adversary observes in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackState {
    pub slot: u32,
    /// SoCs of every request this slot; the adversary's true SoC sits at
    /// [`ADVERSARY_INDEX`].
    pub soc_vector: Vec<f64>,
    /// The adversary's own deadline.
    pub adversary_tcc: f64,
}

impl AttackState {
    pub fn adversary_soc(&self) -> f64 {
        self.soc_vector[ADVERSARY_INDEX]
    }

    pub fn others(&self) -> &[f64] {
        &self.soc_vector[ADVERSARY_INDEX + 1..]
    }
}

/// Perturbation `o_t`, always within `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackAction(f64);

impl AttackAction {
    pub fn new(o: f64) -> Result<Self> {
        if (-1.0..=1.0).contains(&o) {
            Ok(Self(o))
        } else {
            Err(Error::InvalidRequest(format!("perturbation {o} outside [-1, 1]")))
        }
    }

    /// Clamps into `[-1, 1]`; NaN maps to 0.
    pub fn saturating(o: f64) -> Self {
        if o.is_nan() {
            Self(0.0)
        } else {
            Self(o.clamp(-1.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn perturb(true_soc: f64, o: f64) -> f64 {
    (true_soc + o).clamp(0.0, 1.0)
}

/// Frozen accounting for one episode; `w` is derived, never accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeReturn {
    /// Sum of per-slot gains in kWh.
    pub power_gained: f64,
    /// Sum of `nu * |o_t|`.
    pub stealth_penalty: f64,
    pub abs_perturbation: f64,
    pub steps: u32,
}

impl EpisodeReturn {
    pub fn w(&self) -> f64 {
        self.power_gained - self.stealth_penalty
    }

    /// Return with the gain expressed in batteries; this is what training sees.
    pub fn normalized_w(&self, battery_kwh: f64) -> f64 {
        self.power_gained / battery_kwh - self.stealth_penalty
    }

    pub fn mean_abs_perturbation(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.abs_perturbation / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `gain - penalty`, gain in kWh.
    pub reward: f64,
    pub gain: f64,
    pub penalty: f64,
    pub reported_soc: f64,
    pub selected: bool,
    pub next_state: Option<AttackState>,
}

pub struct AttackEnv {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    trace: [f64; SLOTS_PER_DAY],
    slot: usize,
    batch: Vec<ChargingRequest>,
    ret: EpisodeReturn,
}

impl AttackEnv {
    /// Starts an episode on a uniformly drawn benign trace.
    pub fn reset(benign: &[LabeledTuple], cfg: EnvConfig, seed: u64) -> Result<(Self, AttackState)> {
        if benign.is_empty() {
            return Err(Error::Dataset("attack environment needs benign traces".into()));
        }
        let mut pick = rng::stream(seed, &[0]);
        let trace = benign[pick.random_range(0..benign.len())].features;
        Self::reset_with_trace(trace, cfg, seed)
    }

    /// Starts an episode with a fixed adversary trace.
    pub fn reset_with_trace(
        trace: [f64; SLOTS_PER_DAY],
        cfg: EnvConfig,
        seed: u64,
    ) -> Result<(Self, AttackState)> {
        cfg.validate()?;
        let mut env = Self {
            cfg,
            rng: rng::stream(seed, &[1]),
            trace,
            slot: 0,
            batch: Vec::new(),
            ret: EpisodeReturn::default(),
        };
        let state = env.draw_slot()?;
        Ok((env, state))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn episode_return(&self) -> EpisodeReturn {
        self.ret
    }

    fn draw_tcc(&mut self) -> f64 {
        let horizon = self.cfg.station.tcc_horizon_slots;
        let remaining = self.rng.random_range(1..=horizon);
        self.cfg.station.normalized_tcc(remaining)
    }

    fn draw_slot(&mut self) -> Result<AttackState> {
        let arrivals = if self.cfg.arrival_rate > 0.0 {
            let poisson = Poisson::new(self.cfg.arrival_rate)
                .map_err(|e| Error::Config(format!("arrival rate: {e}")))?;
            poisson.sample(&mut self.rng) as u32
        } else {
            0
        };
        let slot = self.slot as u32;
        let adversary_tcc = self.draw_tcc();
        let adversary = ChargingRequest::new(ADVERSARY_ID, slot, self.trace[self.slot], adversary_tcc)?;
        self.batch.clear();
        self.batch.push(adversary);
        for k in 0..arrivals {
            let soc = self.rng.random::<f64>();
            let tcc = self.draw_tcc();
            self.batch.push(ChargingRequest::new(k + 1, slot, soc, tcc)?);
        }
        Ok(AttackState {
            slot,
            soc_vector: self.batch.iter().map(|r| r.soc).collect(),
            adversary_tcc,
        })
    }

    /// Applies the adversary's perturbation to the current slot and advances.
    pub fn step(&mut self, action: AttackAction) -> Result<StepOutcome> {
        if self.slot >= SLOTS_PER_DAY {
            return Err(Error::InvalidRequest("episode already finished".into()));
        }
        let o = action.value();
        let true_soc = self.batch[ADVERSARY_INDEX].soc;
        let reported_soc = perturb(true_soc, o);
        self.batch[ADVERSARY_INDEX].soc = reported_soc;

        let station = self.cfg.station;
        let alloc = schedule(&self.batch, &station)?;
        let selected = alloc.is_selected(ADVERSARY_ID);
        let gain = match self.cfg.gain_mode {
            GainMode::Energy => alloc.granted(ADVERSARY_ID),
            GainMode::Selected => {
                if selected {
                    station.battery_kwh
                } else {
                    0.0
                }
            }
        };
        let penalty = self.cfg.stealth_weight * o.abs();
        self.ret.power_gained += gain;
        self.ret.stealth_penalty += penalty;
        self.ret.abs_perturbation += o.abs();
        self.ret.steps += 1;

        self.slot += 1;
        let next_state = if self.slot < SLOTS_PER_DAY {
            Some(self.draw_slot()?)
        } else {
            None
        };
        Ok(StepOutcome {
            reward: gain - penalty,
            gain,
            penalty,
            reported_soc,
            selected,
            next_state,
        })
    }
}

/// Number of policy input features produced by [`encode_state`].
pub const FEATURE_DIM: usize = 8;

/// Fixed-width summary of one slot's observation.
pub fn encode_state(state: &AttackState, cfg: &EnvConfig) -> [f64; FEATURE_DIM] {
    let others = state.others();
    let n = others.len() as f64;
    let (mean, std, min) = if others.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let mean = others.iter().sum::<f64>() / n;
        let var = others.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let min = others.iter().cloned().fold(f64::INFINITY, f64::min);
        (mean, var.sqrt(), min)
    };
    let station = cfg.station;
    let other_demand: f64 = others.iter().map(|s| (1.0 - s) * station.battery_kwh).sum();
    [
        state.adversary_soc(),
        state.adversary_tcc,
        state.slot as f64 / SLOTS_PER_DAY as f64,
        n / 30.0,
        mean,
        std,
        min,
        other_demand / station.capacity_kwh,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::LabeledTuple;

    fn flat(soc: f64) -> Vec<LabeledTuple> {
        vec![LabeledTuple::benign([soc; SLOTS_PER_DAY])]
    }

    #[test]
    fn perturb_examples() {
        assert_eq!(perturb(0.5, 0.0), 0.5);
        assert_eq!(perturb(0.3, -0.8), 0.0);
        assert!((perturb(0.6, -0.25) - 0.35).abs() < 1e-15);
        assert_eq!(perturb(0.9, 0.5), 1.0);
    }

    #[test]
    fn action_range_is_enforced() {
        assert!(AttackAction::new(1.01).is_err());
        assert!(AttackAction::new(-1.0).is_ok());
        assert_eq!(AttackAction::saturating(-3.0).value(), -1.0);
        assert_eq!(AttackAction::saturating(f64::NAN).value(), 0.0);
    }

    #[test]
    fn zero_arrival_rate_leaves_adversary_alone() {
        let cfg = EnvConfig {
            arrival_rate: 0.0,
            ..EnvConfig::default()
        };
        let (mut env, mut state) = AttackEnv::reset(&flat(0.4), cfg, 3).unwrap();
        for _ in 0..SLOTS_PER_DAY {
            assert_eq!(state.soc_vector.len(), 1);
            match env.step(AttackAction::saturating(0.0)).unwrap().next_state {
                Some(s) => state = s,
                None => break,
            }
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let data = crate::traces::build_benign_dataset(4, 2, &[Default::default()], 1).unwrap();
        let (_, a) = AttackEnv::reset(&data, EnvConfig::default(), 17).unwrap();
        let (_, b) = AttackEnv::reset(&data, EnvConfig::default(), 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(AttackEnv::reset(&[], EnvConfig::default(), 0).is_err());
    }

    #[test]
    fn unselected_without_penalty_earns_nothing() {
        let mut cfg = EnvConfig {
            arrival_rate: 0.0,
            stealth_weight: 0.0,
            ..EnvConfig::default()
        };
        cfg.station.capacity_kwh = 1.0;
        // demand 0.6 * 27 kWh does not fit under 1 kWh
        let (mut env, _) = AttackEnv::reset(&flat(0.4), cfg, 0).unwrap();
        let out = env.step(AttackAction::saturating(0.0)).unwrap();
        assert!(!out.selected);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn selected_without_penalty_earns_its_demand() {
        let cfg = EnvConfig {
            arrival_rate: 0.0,
            stealth_weight: 0.0,
            ..EnvConfig::default()
        };
        let soc = 1.0 - 10.0 / 27.0;
        let (mut env, _) = AttackEnv::reset(&flat(soc), cfg, 0).unwrap();
        let out = env.step(AttackAction::saturating(0.0)).unwrap();
        assert!(out.selected);
        assert!((out.reward - 10.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_uses_perturbation_magnitude() {
        let mut cfg = EnvConfig {
            arrival_rate: 0.0,
            stealth_weight: 0.4,
            ..EnvConfig::default()
        };
        cfg.station.battery_kwh = 10.0;
        // true 0.7 reported as 0.2: 8 kWh of demand, granted in full
        let (mut env, _) = AttackEnv::reset(&flat(0.7), cfg, 0).unwrap();
        let out = env.step(AttackAction::new(-0.5).unwrap()).unwrap();
        assert!((out.penalty - 0.2).abs() < 1e-15);
        assert!((out.gain - 8.0).abs() < 1e-9);
        assert!((out.reward - 7.8).abs() < 1e-9);
        let ret = env.episode_return();
        assert!((ret.normalized_w(10.0) - 0.6).abs() < 1e-9);
    }

    #[test]
    fn episode_runs_exactly_48_slots() {
        let (mut env, _) = AttackEnv::reset(&flat(0.5), EnvConfig::default(), 9).unwrap();
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(AttackAction::saturating(-0.1)).unwrap().next_state.is_none() {
                break;
            }
        }
        assert_eq!(steps, SLOTS_PER_DAY);
        assert!(env.step(AttackAction::saturating(0.0)).is_err());
        assert_eq!(env.episode_return().steps, SLOTS_PER_DAY as u32);
    }

    #[test]
    fn encoded_features_are_bounded() {
        let data = crate::traces::build_benign_dataset(2, 2, &[Default::default()], 4).unwrap();
        let cfg = EnvConfig::default();
        let (_, s) = AttackEnv::reset(&data, cfg, 2).unwrap();
        let f = encode_state(&s, &cfg);
        assert_eq!(f[0], s.adversary_soc());
        assert!(f.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
