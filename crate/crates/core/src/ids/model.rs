//! Actor-critic network over 48-slot SoC sequences.

use std::collections::BTreeMap;
use std::path::Path;

use evguard_autodiff::nn::{self, Dense, LstmParams, Mlp};
use evguard_autodiff::{checkpoint, Graph, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SLOTS_PER_DAY;
use crate::traces::{Label, LabeledTuple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trunk {
    Mlp,
    /// Reads the sequence one slot at a time and uses the final hidden state.
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdsNetSpec {
    pub trunk: Trunk,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for IdsNetSpec {
    fn default() -> Self {
        Self {
            trunk: Trunk::Mlp,
            hidden: 64,
            layers: 2,
        }
    }
}

/// Per-slot standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Scaler {
    /// Slots with (near) zero spread get sd 1 so they only shift.
    pub fn fit(rows: &[LabeledTuple]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset("cannot fit a scaler on no rows".into()));
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..SLOTS_PER_DAY)
            .map(|j| rows.iter().map(|r| r.features[j]).sum::<f64>() / n)
            .collect();
        let sd = (0..SLOTS_PER_DAY)
            .map(|j| {
                let var = rows.iter().map(|r| (r.features[j] - mean[j]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    fn apply(&self, j: usize, x: f64) -> f64 {
        (x - self.mean[j]) / self.sd[j]
    }
}

#[derive(Debug, Clone)]
enum Body {
    Mlp(Mlp),
    Lstm(Vec<LstmParams>),
}

#[derive(Debug, Clone)]
pub struct IdsNet {
    spec: IdsNetSpec,
    params: ParamSet,
    body: Body,
    scaler: Option<Scaler>,
    actor: Dense,
    critic: Dense,
}

pub struct Heads {
    /// `m x 2` action logits.
    pub logits: Var,
    /// `m x 1` state values.
    pub values: Var,
}

impl IdsNet {
    pub fn new(spec: IdsNetSpec, seed: u64) -> Result<Self> {
        if spec.hidden == 0 || spec.layers == 0 {
            return Err(Error::Config("IDS hidden size and depth must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = spec.hidden;
        let body = match spec.trunk {
            Trunk::Mlp => {
                let mut sizes = vec![SLOTS_PER_DAY];
                sizes.extend(std::iter::repeat_n(h, spec.layers));
                Body::Mlp(Mlp::new(&mut params, "trunk", &sizes, &mut rng))
            }
            Trunk::Lstm => Body::Lstm(
                (0..spec.layers)
                    .map(|i| {
                        let input = if i == 0 { 1 } else { h };
                        LstmParams::new(&mut params, &format!("trunk{i}"), input, h, &mut rng)
                    })
                    .collect(),
            ),
        };
        let actor = Dense::new(&mut params, "actor", h, 2, &mut rng);
        let critic = Dense::new(&mut params, "critic", h, 1, &mut rng);
        for id in [actor.w, critic.w] {
            params.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= 0.1);
        }
        Ok(Self {
            spec,
            params,
            body,
            scaler: None,
            actor,
            critic,
        })
    }

    pub fn with_scaler(mut self, scaler: Scaler) -> Result<Self> {
        if scaler.mean.len() != SLOTS_PER_DAY || scaler.sd.len() != SLOTS_PER_DAY {
            return Err(Error::Config("scaler must have one entry per slot".into()));
        }
        self.scaler = Some(scaler);
        Ok(self)
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    fn input(&self, j: usize, x: f64) -> f64 {
        match &self.scaler {
            Some(s) => s.apply(j, x),
            None => x,
        }
    }

    pub fn spec(&self) -> &IdsNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Forward pass for the given rows.
    pub fn forward(&self, g: &mut Graph, rows: &[&[f64; SLOTS_PER_DAY]]) -> Result<Heads> {
        let m = rows.len();
        let p = &self.params;
        let z = match &self.body {
            Body::Mlp(mlp) => {
                let data = rows
                    .iter()
                    .flat_map(|r| r.iter().enumerate().map(|(j, &x)| self.input(j, x)))
                    .collect();
                let x = g.constant(Tensor::new(m, SLOTS_PER_DAY, data)?);
                let z = mlp.forward(g, p, x)?;
                g.relu(z)
            }
            Body::Lstm(cells) => {
                let zeros = Tensor::zeros(m, self.spec.hidden);
                let mut h: Vec<Var> = cells.iter().map(|_| g.constant(zeros.clone())).collect();
                let mut c = h.clone();
                for t in 0..SLOTS_PER_DAY {
                    let mut input = g.constant(Tensor::column(rows.iter().map(|r| self.input(t, r[t])).collect()));
                    for (i, cell) in cells.iter().enumerate() {
                        let (h2, c2) = nn::lstm_cell(g, p, cell, input, h[i], c[i])?;
                        h[i] = h2;
                        c[i] = c2;
                        input = h2;
                    }
                }
                *h.last().expect("at least one layer")
            }
        };
        Ok(Heads {
            logits: self.actor.forward(g, p, z)?,
            values: self.critic.forward(g, p, z)?,
        })
    }

    /// Per-row `(p_benign, p_malicious)` and state values, without keeping a graph.
    pub fn evaluate(&self, rows: &[&[f64; SLOTS_PER_DAY]]) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
        let mut g = Graph::new();
        let heads = self.forward(&mut g, rows)?;
        let probs = g.softmax_rows(heads.logits);
        let p = g.value(probs);
        let probs = (0..rows.len()).map(|r| [p.get(r, 0), p.get(r, 1)]).collect();
        Ok((probs, g.value(heads.values).data().to_vec()))
    }

    /// Most likely label and the probability of the malicious action.
    pub fn classify(&self, features: &[f64]) -> Result<(Label, f64)> {
        let row: &[f64; SLOTS_PER_DAY] = features.try_into().map_err(|_| Error::FeatureCount {
            expected: SLOTS_PER_DAY,
            got: features.len(),
        })?;
        let (probs, _) = self.evaluate(&[row])?;
        let p = probs[0][1];
        let label = if p > probs[0][0] {
            Label::Malicious
        } else {
            Label::Benign
        };
        Ok((label, p))
    }

    /// Batched [`IdsNet::classify`] over dataset rows, in chunks.
    pub fn classify_rows(&self, rows: &[LabeledTuple]) -> Result<Vec<(Label, f64)>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(512) {
            let refs: Vec<&[f64; SLOTS_PER_DAY]> = chunk.iter().map(|r| &r.features).collect();
            let (probs, _) = self.evaluate(&refs)?;
            out.extend(probs.into_iter().map(|[b, m]| {
                let label = if m > b { Label::Malicious } else { Label::Benign };
                (label, m)
            }));
        }
        Ok(out)
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("model".into(), serde_json::json!("ids_actor_critic"));
        meta.insert("spec".into(), serde_json::to_value(self.spec)?);
        if let Some(scaler) = &self.scaler {
            meta.insert("scaler".into(), serde_json::to_value(scaler)?);
        }
        checkpoint::save(manifest_path, &self.params, meta)?;
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (loaded, manifest) = checkpoint::load(manifest_path)?;
        let spec: IdsNetSpec = manifest
            .meta
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::Config("checkpoint has no IDS spec".into()))
            .and_then(|v| Ok(serde_json::from_value(v)?))?;
        let mut net = Self::new(spec, 0)?;
        net.params.load_values_from(&loaded)?;
        match manifest.meta.get("scaler") {
            Some(v) => net.with_scaler(serde_json::from_value(v.clone())?),
            None => Ok(net),
        }
    }
}
