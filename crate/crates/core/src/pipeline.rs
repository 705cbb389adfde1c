//! End-to-end experiment stages over an output directory.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacker::{self, PolicyKind, PolicyNet, Strategy};
use crate::balance::adasyn;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::handcrafted::handcrafted_attacks;
use crate::ids::{self, IdsNet};
use crate::metrics::{compute_metrics, write_metrics_csv, Metrics};
use crate::plot::{line_chart, Series};
use crate::rng::{self, tag};
use crate::traces::{build_benign_dataset, read_dataset, write_dataset, Label, LabeledTuple};

/// File names inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn benign(&self) -> PathBuf {
        self.root.join("benign.csv")
    }

    pub fn heldout(&self) -> PathBuf {
        self.root.join("heldout_benign.csv")
    }

    pub fn policy(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("attacker_{}", kind.as_str())).join("policy.json")
    }

    pub fn reward_curve(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("attacker_{}", kind.as_str())).join("reward_curve.csv")
    }

    pub fn attacks(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("attacks_{}.csv", kind.as_str()))
    }

    pub fn balanced(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("balanced_{}.csv", kind.as_str()))
    }

    pub fn train_split(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("train_{}.csv", kind.as_str()))
    }

    pub fn test_split(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("test_{}.csv", kind.as_str()))
    }

    pub fn ids_model(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("ids_{}", kind.as_str())).join("model.json")
    }

    pub fn learning_curve(&self, kind: PolicyKind) -> PathBuf {
        self.root.join(format!("ids_{}", kind.as_str())).join("learning_curve.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn attacker_eval(&self) -> PathBuf {
        self.root.join("attacker_eval.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config: String,
    pub datasets: BTreeMap<String, Artifact>,
    pub checkpoints: BTreeMap<String, Artifact>,
    pub metrics: BTreeMap<String, Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Rewards of one sweep run, plus mean |o_t| for attacker runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub seed: u64,
    pub rewards: Vec<f64>,
    pub abs_perturbation: Vec<f64>,
}

/// Mean and sample standard deviation of the last `window` values.
pub fn window_stats(values: &[f64], window: usize) -> (f64, f64) {
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = if tail.len() > 1 {
        tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Trains one attacker per (nu, seed) on `benign`.
pub fn nu_sweep(cfg: &Config, benign: &[LabeledTuple]) -> Result<Vec<SweepRun>> {
    let mut runs = Vec::new();
    for &nu in &cfg.sweep.stealth_weights {
        for &seed in &cfg.sweep.seeds {
            let mut c = cfg.clone();
            c.attacker.stealth_weight = nu;
            if cfg.sweep.attacker_epochs > 0 {
                c.attacker.epochs = cfg.sweep.attacker_epochs;
            }
            let trained = attacker::train_attacker(benign, &c.attacker_config(c.attacker.policy, seed))?;
            runs.push(SweepRun {
                value: nu,
                seed,
                rewards: trained.curve.iter().map(|e| e.mean_reward).collect(),
                abs_perturbation: trained.curve.iter().map(|e| e.mean_abs_perturbation).collect(),
            });
        }
    }
    Ok(runs)
}

/// Trains one detector per (learning rate, seed) on `rows`.
pub fn lr_sweep(cfg: &Config, rows: &[LabeledTuple]) -> Result<Vec<SweepRun>> {
    let mut runs = Vec::new();
    for &lr in &cfg.sweep.learning_rates {
        for &seed in &cfg.sweep.seeds {
            let mut c = cfg.ids_config(seed);
            c.learning_rate = lr;
            if cfg.sweep.ids_epochs > 0 {
                c.epochs = cfg.sweep.ids_epochs;
            }
            let trained = ids::train_ids(rows, &c)?;
            runs.push(SweepRun {
                value: lr,
                seed,
                rewards: trained.curve.iter().map(|e| e.mean_reward).collect(),
                abs_perturbation: Vec::new(),
            });
        }
    }
    Ok(runs)
}

/// Per-class shuffled split; `test_fraction` of each class goes to the test side.
pub fn stratified_split(
    rows: &[LabeledTuple],
    test_fraction: f64,
    seed: u64,
) -> (Vec<LabeledTuple>, Vec<LabeledTuple>) {
    let mut is_test = vec![false; rows.len()];
    for (k, label) in [Label::Benign, Label::Malicious].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].label == label).collect();
        idx.shuffle(&mut rng::stream(seed, &[tag::SPLIT, 1, k as u64]));
        let n_test = (test_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = rows.iter().zip(&is_test).partition(|(_, &t)| t);
    (
        train.into_iter().map(|(r, _)| *r).collect(),
        test.into_iter().map(|(r, _)| *r).collect(),
    )
}

fn read_rows(path: &Path) -> Result<Vec<LabeledTuple>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_dataset(BufReader::new(File::open(path)?))
}

fn write_rows(path: &Path, rows: &[LabeledTuple]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_dataset(BufWriter::new(File::create(path)?), rows)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn labels(rows: &[LabeledTuple]) -> Vec<u8> {
    rows.iter().map(|r| r.label.as_index() as u8).collect()
}

pub struct Pipeline {
    cfg: Config,
    layout: Layout,
}

impl Pipeline {
    pub fn new(cfg: Config, out_dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            layout: Layout::new(out_dir),
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn gen_data(&self) -> Result<()> {
        let t = &self.cfg.traces;
        let profiles = [t.profile.clone()];
        let seed = |k| rng::derive_seed(self.cfg.seed, &[tag::TRACES, k]);
        let benign = build_benign_dataset(t.n_vehicles, t.n_days, &profiles, seed(0))?;
        let heldout = build_benign_dataset(t.heldout_vehicles, t.heldout_days, &profiles, seed(1))?;
        write_rows(&self.layout.benign(), &benign)?;
        write_rows(&self.layout.heldout(), &heldout)
    }

    pub fn train_attacker(&self, kind: PolicyKind) -> Result<()> {
        let benign = read_rows(&self.layout.benign())?;
        let trained = attacker::train_attacker(&benign, &self.cfg.attacker_config(kind, self.cfg.seed))?;
        let path = self.layout.policy(kind);
        fs::create_dir_all(path.parent().expect("policy path has a parent"))?;
        trained.policy.save(&path)?;
        attacker::write_curve(create(&self.layout.reward_curve(kind))?, &trained.curve)
    }

    fn load_policy(&self, kind: PolicyKind) -> Result<PolicyNet> {
        let path = self.layout.policy(kind);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        PolicyNet::load(&path)
    }

    /// Indices of the benign rows replayed under attack, ascending.
    pub fn attack_sources(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(self.cfg.seed, &[tag::SPLIT, 0]));
        let take = ((self.cfg.attack_data.attack_fraction * n as f64).ceil() as usize).min(n);
        let mut chosen = idx[..take].to_vec();
        chosen.sort_unstable();
        chosen
    }

    pub fn gen_attacks(&self, kind: PolicyKind) -> Result<()> {
        let benign = read_rows(&self.layout.benign())?;
        let policy = self.load_policy(kind)?;
        let src: Vec<LabeledTuple> = self.attack_sources(benign.len()).iter().map(|&i| benign[i]).collect();
        let strategy = Strategy::Policy {
            net: &policy,
            greedy: self.cfg.attack_data.greedy,
        };
        let seed = rng::derive_seed(self.cfg.seed, &[tag::ATTACK_DATA, kind as u64]);
        let attacks = attacker::generate_attack_dataset(strategy, &src, &self.cfg.env_config(), seed)?;
        write_rows(&self.layout.attacks(kind), &attacks)
    }

    pub fn balance(&self, kind: PolicyKind) -> Result<()> {
        let mut rows = read_rows(&self.layout.benign())?;
        rows.extend(read_rows(&self.layout.attacks(kind))?);
        let balanced = adasyn(&rows, &self.cfg.balance_config())?;
        write_rows(&self.layout.balanced(kind), &balanced)?;
        let (train, test) = stratified_split(&balanced, self.cfg.eval.test_fraction, self.cfg.seed);
        write_rows(&self.layout.train_split(kind), &train)?;
        write_rows(&self.layout.test_split(kind), &test)
    }

    pub fn train_ids(&self, kind: PolicyKind) -> Result<()> {
        let train = read_rows(&self.layout.train_split(kind))?;
        let trained = ids::train_ids(&train, &self.cfg.ids_config(self.cfg.seed))?;
        let path = self.layout.ids_model(kind);
        fs::create_dir_all(path.parent().expect("model path has a parent"))?;
        trained.net.save(&path)?;
        ids::write_curve(create(&self.layout.learning_curve(kind))?, &trained.curve)
    }

    fn load_ids(&self, kind: PolicyKind) -> Result<IdsNet> {
        let path = self.layout.ids_model(kind);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        IdsNet::load(&path)
    }

    /// Detector metrics for one attack source: held-out test split, held-out
    /// benign vehicles and each handcrafted family built from them.
    pub fn detector_metrics(&self, kind: PolicyKind) -> Result<Vec<(String, Metrics)>> {
        let net = self.load_ids(kind)?;
        let test = read_rows(&self.layout.test_split(kind))?;
        let heldout = read_rows(&self.layout.heldout())?;
        let predict = |rows: &[LabeledTuple]| -> Result<Metrics> {
            let preds: Vec<u8> = net
                .classify_rows(rows)?
                .into_iter()
                .map(|(l, _)| l.as_index() as u8)
                .collect();
            compute_metrics(&preds, &labels(rows))
        };
        let name = kind.as_str();
        let mut out = vec![
            (format!("{name}/test"), predict(&test)?),
            (format!("{name}/heldout_benign"), predict(&heldout)?),
        ];
        let seed = rng::derive_seed(self.cfg.seed, &[tag::HANDCRAFTED]);
        for attack in self.cfg.eval.handcrafted() {
            let rows = handcrafted_attacks(&heldout, attack, seed)?;
            out.push((format!("{name}/{}", attack.name()), predict(&rows)?));
        }
        Ok(out)
    }

    pub fn evaluate(&self, kinds: &[PolicyKind]) -> Result<()> {
        let mut rows = Vec::new();
        for &kind in kinds {
            rows.extend(self.detector_metrics(kind)?);
        }
        write_metrics_csv(create(&self.layout.metrics())?, &rows)?;

        let benign = read_rows(&self.layout.benign())?;
        let env = self.cfg.env_config();
        let episodes = self.cfg.eval.attack_eval_episodes;
        let seed = rng::derive_seed(self.cfg.seed, &[tag::ATTACK_EVAL]);
        let honest = attacker::evaluate(Strategy::Honest, &benign, &env, episodes, seed)?;
        let sources = self.attack_sources(benign.len());
        let true_mean = mean_soc(sources.iter().map(|&i| &benign[i]));

        let mut w = csv::Writer::from_writer(create(&self.layout.attacker_eval())?);
        w.write_record([
            "source",
            "mean_power_gain_kwh",
            "honest_power_gain_kwh",
            "gain_ratio",
            "mean_reward",
            "mean_abs_perturbation",
            "mean_true_soc",
            "mean_reported_soc",
        ])?;
        let mut reward_series = Vec::new();
        let mut ids_series = Vec::new();
        for &kind in kinds {
            let policy = self.load_policy(kind)?;
            let stats = attacker::evaluate(Strategy::Policy { net: &policy, greedy: false }, &benign, &env, episodes, seed)?;
            let attacks = read_rows(&self.layout.attacks(kind))?;
            w.write_record([
                kind.as_str().to_string(),
                format!("{:.6}", stats.mean_power_gain_kwh),
                format!("{:.6}", honest.mean_power_gain_kwh),
                format!("{:.6}", stats.mean_power_gain_kwh / honest.mean_power_gain_kwh),
                format!("{:.6}", stats.mean_reward),
                format!("{:.6}", stats.mean_abs_perturbation),
                format!("{:.6}", true_mean),
                format!("{:.6}", mean_soc(attacks.iter())),
            ])?;
            reward_series.push(Series {
                name: kind.as_str().into(),
                points: read_curve(&self.layout.reward_curve(kind))?,
            });
            ids_series.push(Series {
                name: kind.as_str().into(),
                points: read_curve(&self.layout.learning_curve(kind))?,
            });
        }
        w.flush()?;
        let plots = self.layout.plots_dir();
        fs::create_dir_all(&plots)?;
        fs::write(
            plots.join("attacker_reward.svg"),
            line_chart("Attacker reward per epoch", "epoch", "mean reward", &reward_series),
        )?;
        fs::write(
            plots.join("ids_reward.svg"),
            line_chart("Detector reward per epoch", "epoch", "mean reward", &ids_series),
        )?;
        Ok(())
    }

    pub fn sweep(&self) -> Result<()> {
        let dir = self.layout.sweep_dir();
        fs::create_dir_all(&dir)?;
        let window = self.cfg.sweep.final_window;
        let benign = read_rows(&self.layout.benign())?;
        let nu_runs = nu_sweep(&self.cfg, &benign)?;
        write_sweep(&dir.join("nu_summary.csv"), "nu", &nu_runs, window)?;
        write_sweep_curves(&dir.join("nu_curves.csv"), "nu", &nu_runs)?;

        let train = read_rows(&self.layout.train_split(self.cfg.attacker.policy))?;
        let lr_runs = lr_sweep(&self.cfg, &train)?;
        write_sweep(&dir.join("lr_summary.csv"), "learning_rate", &lr_runs, window)?;
        write_sweep_curves(&dir.join("lr_curves.csv"), "learning_rate", &lr_runs)?;

        let plots = self.layout.plots_dir();
        fs::create_dir_all(&plots)?;
        fs::write(
            plots.join("nu_sweep.svg"),
            line_chart("Attacker reward by stealth weight", "epoch", "mean reward", &mean_curves("nu", &nu_runs)),
        )?;
        fs::write(
            plots.join("lr_sweep.svg"),
            line_chart("Detector reward by learning rate", "epoch", "mean reward", &mean_curves("lr", &lr_runs)),
        )?;
        Ok(())
    }

    /// Hashes every artifact currently present and writes `manifest.json`.
    pub fn write_manifest(&self) -> Result<RunManifest> {
        let l = &self.layout;
        let mut datasets = vec![("benign".to_string(), l.benign()), ("heldout_benign".to_string(), l.heldout())];
        let mut checkpoints = Vec::new();
        let mut metrics = vec![
            ("metrics".to_string(), l.metrics()),
            ("attacker_eval".to_string(), l.attacker_eval()),
            ("nu_summary".to_string(), l.sweep_dir().join("nu_summary.csv")),
            ("lr_summary".to_string(), l.sweep_dir().join("lr_summary.csv")),
        ];
        for kind in [PolicyKind::Lstm, PolicyKind::Attention, PolicyKind::Mlp] {
            let k = kind.as_str();
            datasets.push((format!("attacks_{k}"), l.attacks(kind)));
            datasets.push((format!("balanced_{k}"), l.balanced(kind)));
            datasets.push((format!("train_{k}"), l.train_split(kind)));
            datasets.push((format!("test_{k}"), l.test_split(kind)));
            checkpoints.push((format!("attacker_{k}"), l.policy(kind)));
            checkpoints.push((format!("ids_{k}"), l.ids_model(kind)));
            metrics.push((format!("reward_curve_{k}"), l.reward_curve(kind)));
            metrics.push((format!("learning_curve_{k}"), l.learning_curve(kind)));
        }
        let collect = |items: Vec<(String, PathBuf)>| -> Result<BTreeMap<String, Artifact>> {
            let mut out = BTreeMap::new();
            for (name, path) in items {
                if !path.exists() {
                    continue;
                }
                let mut sha256 = sha256_file(&path)?;
                // a checkpoint is its manifest plus the binary it points at
                let bin = path.with_extension("bin");
                if bin.exists() {
                    sha256 = format!("{sha256}:{}", sha256_file(&bin)?);
                }
                let rel = path.strip_prefix(l.root()).unwrap_or(&path);
                out.insert(
                    name,
                    Artifact {
                        path: rel.to_string_lossy().into_owned(),
                        sha256,
                    },
                );
            }
            Ok(out)
        };
        let manifest = RunManifest {
            seed: self.cfg.seed,
            config: self.cfg.to_toml_string()?,
            datasets: collect(datasets)?,
            checkpoints: collect(checkpoints)?,
            metrics: collect(metrics)?,
        };
        fs::write(l.manifest(), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }

    /// Every stage in order for each configured attack source.
    pub fn run_all(&self, sources: &[PolicyKind]) -> Result<RunManifest> {
        self.gen_data()?;
        for &kind in sources {
            self.train_attacker(kind)?;
            self.gen_attacks(kind)?;
            self.balance(kind)?;
            self.train_ids(kind)?;
        }
        self.evaluate(sources)?;
        if self.cfg.sweep.in_run_all {
            self.sweep()?;
        }
        self.write_manifest()
    }
}

fn mean_soc<'a>(rows: impl Iterator<Item = &'a LabeledTuple>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in rows {
        sum += r.features.iter().sum::<f64>();
        n += r.features.len();
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Reads `(epoch, mean_reward)` from a curve CSV.
fn read_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Dataset(format!("{}: bad curve row", path.display())))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

fn write_sweep(path: &Path, key: &str, runs: &[SweepRun], window: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([key, "seed", "final_mean_reward", "final_reward_sd", "final_mean_abs_perturbation"])?;
    for run in runs {
        let (mean, sd) = window_stats(&run.rewards, window);
        let abs = if run.abs_perturbation.is_empty() {
            String::new()
        } else {
            format!("{:.10}", window_stats(&run.abs_perturbation, window).0)
        };
        w.write_record([
            format!("{}", run.value),
            run.seed.to_string(),
            format!("{mean:.10}"),
            format!("{sd:.10}"),
            abs,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_sweep_curves(path: &Path, key: &str, runs: &[SweepRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([key, "seed", "epoch", "mean_reward"])?;
    for run in runs {
        for (epoch, r) in run.rewards.iter().enumerate() {
            w.write_record([
                format!("{}", run.value),
                run.seed.to_string(),
                epoch.to_string(),
                format!("{r:.10}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Seed-averaged curve per swept value.
fn mean_curves(key: &str, runs: &[SweepRun]) -> Vec<Series> {
    let mut values: Vec<f64> = runs.iter().map(|r| r.value).collect();
    values.dedup();
    values
        .into_iter()
        .map(|v| {
            let group: Vec<&SweepRun> = runs.iter().filter(|r| r.value == v).collect();
            let len = group.iter().map(|r| r.rewards.len()).min().unwrap_or(0);
            let points = (0..len)
                .map(|e| {
                    let m = group.iter().map(|r| r.rewards[e]).sum::<f64>() / group.len() as f64;
                    (e as f64, m)
                })
                .collect();
            Series {
                name: format!("{key}={v}"),
                points,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_stats_uses_the_tail() {
        let (m, sd) = window_stats(&[100.0, 1.0, 2.0, 3.0], 3);
        assert_eq!(m, 2.0);
        assert!((sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn stratified_split_keeps_class_shares() {
        let mut rows = vec![LabeledTuple::benign([0.5; 48]); 50];
        rows.extend(vec![LabeledTuple::malicious([0.1; 48]); 30]);
        let (train, test) = stratified_split(&rows, 0.2, 3);
        assert_eq!(test.len(), 16);
        assert_eq!(train.len(), 64);
        assert_eq!(test.iter().filter(|r| r.label == Label::Malicious).count(), 6);
    }
}
