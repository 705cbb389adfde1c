//! Gaussian attack policies over the slot sequence.

use std::collections::BTreeMap;
use std::path::Path;

use evguard_autodiff::nn::{self, AttentionParams, Dense, LstmParams, Mlp};
use evguard_autodiff::{checkpoint, Graph, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::FEATURE_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Lstm,
    Attention,
    /// Memoryless feed-forward policy.
    Mlp,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Lstm => "lstm",
            PolicyKind::Attention => "attention",
            PolicyKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(PolicyKind::Lstm),
            "attention" => Ok(PolicyKind::Attention),
            "mlp" => Ok(PolicyKind::Mlp),
            other => Err(Error::Config(format!("unknown policy kind `{other}`"))),
        }
    }
}

/// How the Gaussian sample is mapped into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squash {
    Tanh,
    Clamp,
}

impl Squash {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Squash::Tanh => u.tanh(),
            Squash::Clamp => u.clamp(-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub hidden: usize,
    pub layers: usize,
    pub squash: Squash,
    /// Standard deviation of the untrained policy's Gaussian.
    #[serde(default = "default_init_sigma")]
    pub init_sigma: f64,
}

fn default_init_sigma() -> f64 {
    0.25
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Lstm,
            hidden: 64,
            layers: 2,
            squash: Squash::Tanh,
            init_sigma: default_init_sigma(),
        }
    }
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("policy hidden size and depth must be positive".into()));
        }
        if !(self.init_sigma > nn::SIGMA_FLOOR) {
            return Err(Error::Config(format!("init_sigma must exceed {}", nn::SIGMA_FLOOR)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Arch {
    Lstm {
        cells: Vec<LstmParams>,
        head: Dense,
    },
    Attention {
        embed: Dense,
        blocks: Vec<(AttentionParams, Dense)>,
        head: Dense,
    },
    Mlp {
        body: Mlp,
    },
}

/// Per-episode recurrent state threaded through [`PolicyNet::forward`].
pub enum Memory {
    Lstm { h: Vec<Var>, c: Vec<Var> },
    /// Keys and values of every earlier slot, one list per block.
    Attention { keys: Vec<Vec<Var>>, values: Vec<Vec<Var>> },
    Stateless,
}

#[derive(Debug, Clone)]
pub struct PolicyNet {
    spec: PolicySpec,
    params: ParamSet,
    arch: Arch,
}

impl PolicyNet {
    pub fn new(spec: PolicySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let h = spec.hidden;
        let arch = match spec.kind {
            PolicyKind::Lstm => {
                let cells = (0..spec.layers)
                    .map(|i| {
                        let input = if i == 0 { FEATURE_DIM } else { h };
                        LstmParams::new(&mut params, &format!("lstm{i}"), input, h, &mut rng)
                    })
                    .collect();
                let head = Dense::new(&mut params, "head", h, 2, &mut rng);
                Arch::Lstm { cells, head }
            }
            PolicyKind::Attention => {
                let embed = Dense::new(&mut params, "embed", FEATURE_DIM, h, &mut rng);
                let blocks = (0..spec.layers)
                    .map(|i| {
                        let attn = AttentionParams::new(&mut params, &format!("attn{i}"), h, &mut rng);
                        let ffn = Dense::new(&mut params, &format!("ffn{i}"), h, h, &mut rng);
                        (attn, ffn)
                    })
                    .collect();
                let head = Dense::new(&mut params, "head", h, 2, &mut rng);
                Arch::Attention { embed, blocks, head }
            }
            PolicyKind::Mlp => {
                let mut sizes = vec![FEATURE_DIM];
                sizes.extend(std::iter::repeat_n(h, spec.layers));
                sizes.push(2);
                Arch::Mlp {
                    body: Mlp::new(&mut params, "mlp", &sizes, &mut rng),
                }
            }
        };
        let mut net = Self { spec, params, arch };
        net.shrink_head();
        Ok(net)
    }

    /// Small output weights and a sigma bias so the untrained policy is close
    /// to `N(0, init_sigma)`.
    fn shrink_head(&mut self) {
        let head = match &self.arch {
            Arch::Lstm { head, .. } | Arch::Attention { head, .. } => head,
            Arch::Mlp { body } => body.layers.last().expect("non-empty mlp"),
        };
        let (w, b) = (head.w, head.b);
        self.params
            .value_mut(w)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= 0.1);
        // inverse softplus
        let s = self.spec.init_sigma - nn::SIGMA_FLOOR;
        self.params.value_mut(b).data_mut()[1] = s.exp_m1().ln();
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn start(&self, g: &mut Graph) -> Memory {
        match &self.arch {
            Arch::Lstm { cells, .. } => {
                let zeros = |g: &mut Graph, n| g.constant(Tensor::zeros(1, n));
                Memory::Lstm {
                    h: cells.iter().map(|c| zeros(g, c.hidden)).collect(),
                    c: cells.iter().map(|c| zeros(g, c.hidden)).collect(),
                }
            }
            Arch::Attention { blocks, .. } => Memory::Attention {
                keys: vec![Vec::new(); blocks.len()],
                values: vec![Vec::new(); blocks.len()],
            },
            Arch::Mlp { .. } => Memory::Stateless,
        }
    }

    /// One slot forward; returns `(mu, sigma)` as `1 x 1` nodes.
    pub fn forward(&self, g: &mut Graph, mem: &mut Memory, features: &[f64]) -> Result<(Var, Var)> {
        if features.len() != FEATURE_DIM {
            return Err(Error::FeatureCount {
                expected: FEATURE_DIM,
                got: features.len(),
            });
        }
        let p = &self.params;
        let x = g.constant(Tensor::row(features.to_vec()));
        let raw = match (&self.arch, mem) {
            (Arch::Lstm { cells, head }, Memory::Lstm { h, c }) => {
                let mut input = x;
                for (i, cell) in cells.iter().enumerate() {
                    let (h2, c2) = nn::lstm_cell(g, p, cell, input, h[i], c[i])?;
                    h[i] = h2;
                    c[i] = c2;
                    input = h2;
                }
                let z = g.relu(input);
                head.forward(g, p, z)?
            }
            (Arch::Attention { embed, blocks, head }, Memory::Attention { keys, values }) => {
                let mut z = embed.forward(g, p, x)?;
                for (i, (attn, ffn)) in blocks.iter().enumerate() {
                    let (q, k, v) = attn.project(g, p, z)?;
                    keys[i].push(k);
                    values[i].push(v);
                    let ks = g.concat_rows(&keys[i])?;
                    let vs = g.concat_rows(&values[i])?;
                    let (a, _) = nn::attend(g, q, ks, vs, None)?;
                    let r = g.add(z, a)?;
                    let f = ffn.forward(g, p, r)?;
                    z = g.relu(f);
                }
                head.forward(g, p, z)?
            }
            (Arch::Mlp { body }, Memory::Stateless) => body.forward(g, p, x)?,
            _ => return Err(Error::Config("policy memory does not match architecture".into())),
        };
        Ok(nn::gaussian_head(g, raw)?)
    }

    /// Log-density of the pre-squash sample `u`.
    pub fn log_prob(&self, g: &mut Graph, mu: Var, sigma: Var, u: f64) -> Result<Var> {
        let u = g.constant(Tensor::scalar(u));
        Ok(match self.spec.squash {
            Squash::Tanh => nn::squashed_normal_logprob(g, mu, sigma, u)?,
            Squash::Clamp => nn::normal_logprob(g, mu, sigma, u)?,
        })
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("model".into(), serde_json::json!("attack_policy"));
        meta.insert("spec".into(), serde_json::to_value(self.spec)?);
        checkpoint::save(manifest_path, &self.params, meta)?;
        Ok(())
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (loaded, manifest) = checkpoint::load(manifest_path)?;
        let spec: PolicySpec = manifest
            .meta
            .get("spec")
            .cloned()
            .ok_or_else(|| Error::Config("checkpoint has no policy spec".into()))
            .and_then(|v| Ok(serde_json::from_value(v)?))?;
        let mut net = Self::new(spec, 0)?;
        net.params.load_values_from(&loaded)?;
        Ok(net)
    }
}
