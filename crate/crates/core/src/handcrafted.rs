//! Simple rule-based falsification attacks, used only as unseen test families.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::traces::LabeledTuple;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HandcraftedAttack {
    /// Reports `soc - delta`.
    FixedOffset { delta: f64 },
    /// Reports `soc * u` with a fresh `u ~ U[low, high]` every slot.
    RandomUnder { low: f64, high: f64 },
    /// Reports `min(soc, floor)`.
    ZeroFloor { floor: f64 },
}

impl HandcraftedAttack {
    /// The three held-out families at their default strengths.
    pub fn defaults() -> [HandcraftedAttack; 3] {
        [
            HandcraftedAttack::FixedOffset { delta: 0.3 },
            HandcraftedAttack::RandomUnder { low: 0.3, high: 0.8 },
            HandcraftedAttack::ZeroFloor { floor: 0.2 },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            HandcraftedAttack::FixedOffset { .. } => "fixed_offset",
            HandcraftedAttack::RandomUnder { .. } => "random_under",
            HandcraftedAttack::ZeroFloor { .. } => "zero_floor",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            HandcraftedAttack::FixedOffset { delta } => (0.0..=1.0).contains(&delta),
            HandcraftedAttack::RandomUnder { low, high } => 0.0 <= low && low <= high && high <= 1.0,
            HandcraftedAttack::ZeroFloor { floor } => (0.0..=1.0).contains(&floor),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid {} parameters: {self:?}", self.name())))
        }
    }
}

pub fn handcrafted_attacks(
    benign: &[LabeledTuple],
    attack: HandcraftedAttack,
    seed: u64,
) -> Result<Vec<LabeledTuple>> {
    attack.validate()?;
    Ok(benign
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = rng::stream(seed, &[tag::HANDCRAFTED, i as u64]);
            let mut f = row.features;
            for v in f.iter_mut() {
                *v = match attack {
                    HandcraftedAttack::FixedOffset { delta } => *v - delta,
                    HandcraftedAttack::RandomUnder { low, high } => *v * rng.random_range(low..=high),
                    HandcraftedAttack::ZeroFloor { floor } => v.min(floor),
                }
                .clamp(0.0, 1.0);
            }
            LabeledTuple::malicious(f)
        })
        .collect())
}
