//! ADASYN oversampling of the minority class.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::traces::{Label, LabeledTuple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// Desired minority:majority ratio after oversampling.
    pub target_ratio: f64,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            target_ratio: 1.0,
            k_neighbors: 5,
            seed: 0,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_ratio > 0.0) || !self.target_ratio.is_finite() {
            return Err(Error::Config("target_ratio must be positive".into()));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where a synthetic row came from: `parent + u * (neighbor - parent)`, before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOrigin {
    /// Index into the input rows.
    pub parent: usize,
    pub neighbor: usize,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    /// Original rows followed by synthetics, ordered by parent.
    pub rows: Vec<LabeledTuple>,
    /// One entry per synthetic row, aligned with `rows[original_len..]`.
    pub origins: Vec<SyntheticOrigin>,
    pub original_len: usize,
    pub minority: Label,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows to `rows[i]` among `candidates`, excluding `i`.
/// Ties break on index so the result is deterministic.
fn nearest(rows: &[LabeledTuple], i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (sq_dist(&rows[i].features, &rows[j].features), j))
        .collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
    }
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, j)| j).collect()
}

/// Splits `total` across `weights` proportionally with largest-remainder rounding,
/// so the parts always sum to `total`.
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

pub fn adasyn(rows: &[LabeledTuple], cfg: &BalanceConfig) -> Result<Vec<LabeledTuple>> {
    adasyn_with_origins(rows, cfg).map(|b| b.rows)
}

pub fn adasyn_with_origins(rows: &[LabeledTuple], cfg: &BalanceConfig) -> Result<Balanced> {
    cfg.validate()?;
    let (benign, malicious): (Vec<usize>, Vec<usize>) =
        (0..rows.len()).partition(|&i| rows[i].label == Label::Benign);
    if benign.is_empty() || malicious.is_empty() {
        return Err(Error::Dataset("ADASYN needs both classes present".into()));
    }
    let (minority_label, minority, majority) = if malicious.len() <= benign.len() {
        (Label::Malicious, malicious, benign)
    } else {
        (Label::Benign, benign, malicious)
    };
    let target = (cfg.target_ratio * majority.len() as f64).round() as usize;
    let g = target.saturating_sub(minority.len());
    let unchanged = Balanced {
        rows: rows.to_vec(),
        origins: Vec::new(),
        original_len: rows.len(),
        minority: minority_label,
    };
    if g == 0 {
        return Ok(unchanged);
    }
    let k = cfg.k_neighbors;
    if minority.len() <= k {
        return Err(Error::Dataset(format!(
            "minority class has {} rows, needs more than k = {k}",
            minority.len()
        )));
    }

    let everyone: Vec<usize> = (0..rows.len()).collect();
    let density: Vec<(f64, Vec<usize>)> = minority
        .par_iter()
        .map(|&i| {
            let around = nearest(rows, i, &everyone, k);
            let hostile = around.iter().filter(|&&j| rows[j].label != minority_label).count();
            (hostile as f64 / around.len() as f64, nearest(rows, i, &minority, k))
        })
        .collect();
    let ratios: Vec<f64> = density.iter().map(|(r, _)| *r).collect();
    let counts = apportion(&ratios, g);

    let synth: Vec<Vec<(LabeledTuple, SyntheticOrigin)>> = minority
        .par_iter()
        .zip(density.par_iter())
        .zip(counts.par_iter())
        .map(|((&i, (_, neighbors)), &n)| {
            let mut rng = rng::stream(cfg.seed, &[tag::BALANCE, i as u64]);
            (0..n)
                .map(|_| {
                    let z = neighbors[rng.random_range(0..neighbors.len())];
                    let u: f64 = rng.random();
                    let mut features = rows[i].features;
                    for (f, &other) in features.iter_mut().zip(&rows[z].features) {
                        *f = (*f + u * (other - *f)).clamp(0.0, 1.0);
                    }
                    let row = LabeledTuple {
                        features,
                        label: minority_label,
                    };
                    (row, SyntheticOrigin { parent: i, neighbor: z, u })
                })
                .collect()
        })
        .collect();

    let mut out = unchanged;
    for (row, origin) in synth.into_iter().flatten() {
        out.rows.push(row);
        out.origins.push(origin);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n_benign: usize, n_mal: usize) -> Vec<LabeledTuple> {
        let mut out = Vec::new();
        for i in 0..n_benign {
            out.push(LabeledTuple::benign([0.6 + 0.3 * (i as f64 / n_benign as f64); 48]));
        }
        for i in 0..n_mal {
            let mut f = [0.2 + 0.3 * (i as f64 / n_mal as f64); 48];
            f[i % 48] = 0.9;
            out.push(LabeledTuple::malicious(f));
        }
        out
    }

    #[test]
    fn balanced_input_is_returned_unchanged() {
        let input = rows(20, 20);
        assert_eq!(adasyn(&input, &BalanceConfig::default()).unwrap(), input);
    }

    #[test]
    fn hundred_to_fifty_makes_fifty() {
        let input = rows(100, 50);
        let out = adasyn(&input, &BalanceConfig::default()).unwrap();
        assert_eq!(out.len(), 200);
        assert_eq!(out[..150], input[..]);
        assert!(out[150..].iter().all(|r| r.label == Label::Malicious));
    }

    #[test]
    fn single_class_and_tiny_minority_are_errors() {
        assert!(adasyn(&rows(10, 0), &BalanceConfig::default()).is_err());
        assert!(adasyn(&rows(10, 5), &BalanceConfig::default()).is_err());
        assert!(adasyn(&rows(10, 6), &BalanceConfig::default()).is_ok());
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[0.0, 0.0], 5), vec![3, 2]);
        assert_eq!(apportion(&[0.0, 3.0, 1.0], 8), vec![0, 6, 2]);
    }
}
