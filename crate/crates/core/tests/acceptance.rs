//! Desk-scale acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,4` runs a subset; `ACCEPTANCE_STRICT=1` turns any FAIL
//! into a non-zero exit.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::time::{Duration, Instant};

use evguard_autodiff::check::{grad_check, grad_check_many, grad_check_params};
use evguard_autodiff::nn::{self, AttentionParams, LstmParams};
use evguard_autodiff::{Graph, ParamSet, Tensor, Var};
use evguard_core::attacker::{self, PolicyKind, Strategy};
use evguard_core::balance::{adasyn_with_origins, BalanceConfig};
use evguard_core::config::Config;
use evguard_core::metrics::Metrics;
use evguard_core::pipeline::{lr_sweep, nu_sweep, window_stats, Pipeline};
use evguard_core::sim::{priority, schedule, ChargingRequest, StationConfig};
use evguard_core::traces::{read_dataset, Label, LabeledTuple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u8,
    pass: bool,
    detail: String,
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn desk(seed: u64) -> Config {
    let mut c = Config::default();
    c.seed = seed;
    c.traces.n_vehicles = 64;
    c.traces.n_days = 24;
    c.traces.heldout_vehicles = 32;
    c.traces.heldout_days = 8;
    c.attacker.hidden = 32;
    c.attacker.layers = 1;
    c.attacker.epochs = 400;
    c.attacker.episodes_per_epoch = 64;
    c.attack_data.sources = vec![PolicyKind::Lstm, PolicyKind::Attention];
    c
}

fn rows(path: &Path) -> Vec<LabeledTuple> {
    read_dataset(BufReader::new(File::open(path).unwrap())).unwrap()
}

// ---- 1: gradient checks

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn project(g: &mut Graph, y: Var, w: &Tensor) -> evguard_autodiff::Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    const H: f64 = 1e-4;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name: &'static str, e: f64| match worst.iter_mut().find(|w| w.0 == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let inputs = [random(&mut rng, 3, 4, 1.0), random(&mut rng, 4, 5, 1.0), random(&mut rng, 1, 5, 1.0)];
        let proj = random(&mut rng, 3, 5, 1.0);
        let e = grad_check_many(|g, v| { let y = nn::dense(g, v[0], v[1], v[2])?; project(g, y, &proj) }, &inputs, H).unwrap();
        note("dense", e);

        let mut x = random(&mut rng, 4, 6, 1.0);
        x.data_mut().iter_mut().filter(|v| v.abs() < 0.01).for_each(|v| *v = 0.5);
        let proj = random(&mut rng, 4, 6, 1.0);
        note("relu", grad_check(|g, x| { let y = g.relu(x); project(g, y, &proj) }, &x, H).unwrap());

        let mut params = ParamSet::new();
        let cell = LstmParams::new(&mut params, "lstm", 3, 4, &mut rng);
        let (x, h, c) = (random(&mut rng, 2, 3, 1.0), random(&mut rng, 2, 4, 1.0), random(&mut rng, 2, 4, 1.0));
        let ph = random(&mut rng, 2, 4, 1.0);
        let e = grad_check_many(
            |g, v| { let (h1, _) = nn::lstm_cell(g, &params, &cell, v[0], v[1], v[2])?; project(g, h1, &ph) },
            &[x.clone(), h.clone(), c.clone()],
            H,
        )
        .unwrap();
        note("lstm cell", e);
        let e = grad_check_params(
            |g, p| {
                let (xs, hs, cs) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
                let (h1, c1) = nn::lstm_cell(g, p, &cell, xs, hs, cs)?;
                let (h2, _) = nn::lstm_cell(g, p, &cell, xs, h1, c1)?;
                project(g, h2, &ph)
            },
            &params,
            H,
        )
        .unwrap();
        note("lstm cell", e);

        let mut params = ParamSet::new();
        let attn = AttentionParams::new(&mut params, "attn", 4, &mut rng);
        let x = random(&mut rng, 5, 4, 1.0);
        let proj = random(&mut rng, 5, 4, 1.0);
        let e = grad_check(|g, x| { let y = nn::attention_block(g, &params, &attn, x, true)?; project(g, y, &proj) }, &x, H).unwrap();
        note("attention", e);
        let e = grad_check_params(
            |g, p| { let xs = g.constant(x.clone()); let y = nn::attention_block(g, p, &attn, xs, true)?; project(g, y, &proj) },
            &params,
            H,
        )
        .unwrap();
        note("attention", e);

        let raw = random(&mut rng, 1, 2, 1.5);
        let a = random(&mut rng, 1, 1, 2.0);
        let e = grad_check_many(|g, v| { let (mu, s) = nn::gaussian_head(g, v[0])?; nn::normal_logprob(g, mu, s, v[1]) }, &[raw, a], H).unwrap();
        note("gaussian log-prob", e);

        let mu = random(&mut rng, 1, 3, 1.0);
        let sigma = random(&mut rng, 1, 3, 0.4).map(|s| s.abs() + 0.2);
        let u = random(&mut rng, 1, 3, 2.5);
        let e = grad_check_many(|g, v| { let lp = nn::squashed_normal_logprob(g, v[0], v[1], v[2])?; Ok(g.sum(lp)) }, &[mu, sigma, u], H).unwrap();
        note("tanh squash", e);
    }
    let t = start.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let list: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome {
        id: 1,
        pass: max < 1e-4 && t < Duration::from_secs(60),
        detail: format!("20 seeds, max rel err per layer: {}; {:.1}s (limit 60s)", list.join(", "), t.as_secs_f64()),
    }
}

// ---- 2: coordinator safety and monotonicity

fn coordinator() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut over = 0usize;
    for _ in 0..10_000 {
        let n = rng.random_range(0..40);
        let reqs: Vec<ChargingRequest> = (0..n)
            .map(|i| ChargingRequest::new(i, 0, rng.random(), rng.random()).unwrap())
            .collect();
        let cfg = StationConfig {
            capacity_kwh: rng.random_range(1.0..400.0),
            upsilon: rng.random(),
            ..StationConfig::default()
        };
        let a = schedule(&reqs, &cfg).unwrap();
        if a.granted_kwh.values().sum::<f64>() > cfg.capacity_kwh + 1e-9 {
            over += 1;
        }
    }

    // every lowered report on a 0.05 grid, for every EV of batches up to 10
    let (mut cases, mut violations) = (0usize, 0usize);
    for trial in 0..500 {
        let n = 1 + trial % 10;
        let base: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let cfg = StationConfig {
            capacity_kwh: rng.random_range(10.0..150.0),
            upsilon: rng.random(),
            ..StationConfig::default()
        };
        for who in 0..n {
            let truth = ChargingRequest::new(who as u32, 0, base[who].0, base[who].1).unwrap();
            let omega0 = priority(&truth, &cfg).omega;
            for step in 0..=20 {
                let reported = step as f64 / 20.0;
                if reported >= base[who].0 {
                    break;
                }
                let reqs: Vec<ChargingRequest> = base
                    .iter()
                    .enumerate()
                    .map(|(i, &(s, t))| ChargingRequest::new(i as u32, 0, if i == who { reported } else { s }, t).unwrap())
                    .collect();
                let me = priority(&reqs[who], &cfg);
                let alloc = schedule(&reqs, &cfg).unwrap();
                // energy granted to requests ranked ahead, by the admission rule
                let rank = |r: &ChargingRequest| {
                    let o = priority(r, &cfg).omega;
                    (if r.soc < 1.0 { o / (1.0 - r.soc) } else { f64::INFINITY }, o, std::cmp::Reverse(r.ev_id))
                };
                let mine = rank(&reqs[who]);
                let ahead: f64 = reqs
                    .iter()
                    .filter(|r| r.ev_id != who as u32 && rank(r).partial_cmp(&mine) == Some(std::cmp::Ordering::Greater))
                    .map(|r| alloc.granted(r.ev_id))
                    .sum();
                let demoted = ahead + me.demand_kwh <= cfg.capacity_kwh && !alloc.is_selected(who as u32);
                if me.omega < omega0 - 1e-12 || demoted {
                    violations += 1;
                }
                cases += 1;
            }
        }
    }
    let t = start.elapsed();
    Outcome {
        id: 2,
        pass: over == 0 && violations == 0 && t < Duration::from_secs(120),
        detail: format!(
            "10000 batches, {over} over capacity; {cases} under-reports, {violations} demotions; {:.1}s (limit 120s)",
            t.as_secs_f64()
        ),
    }
}

// ---- 3: attacker efficacy at nu = 0

fn efficacy() -> Outcome {
    let start = Instant::now();
    let mut cfg = desk(1);
    cfg.attacker.stealth_weight = 0.0;
    cfg.attacker.epochs = 500;
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(cfg.clone(), dir.path()).unwrap();
    p.gen_data().unwrap();
    let benign = rows(&p.layout().benign());
    let trained = attacker::train_attacker(&benign, &cfg.attacker_config(PolicyKind::Lstm, cfg.seed)).unwrap();
    let env = cfg.env_config();
    let honest = attacker::evaluate(Strategy::Honest, &benign, &env, 200, 99).unwrap();
    let attack = attacker::evaluate(Strategy::Policy { net: &trained.policy, greedy: false }, &benign, &env, 200, 99).unwrap();
    let ratio = attack.mean_power_gain_kwh / honest.mean_power_gain_kwh;
    let t = start.elapsed();
    Outcome {
        id: 3,
        pass: ratio >= 1.25 && minutes(t) < 10.0,
        detail: format!(
            "power gain {:.1} kWh vs honest {:.1} kWh over 200 shared episodes, ratio {ratio:.3} (need >= 1.25); {:.1} min (limit 10)",
            attack.mean_power_gain_kwh,
            honest.mean_power_gain_kwh,
            minutes(t)
        ),
    }
}

// ---- 4: stealth-weight ordering

fn nu_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = desk(1);
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(cfg.clone(), dir.path()).unwrap();
    p.gen_data().unwrap();
    let runs = nu_sweep(&cfg, &rows(&p.layout().benign())).unwrap();
    let w = cfg.sweep.final_window;
    let summary: Vec<(f64, f64, f64, f64)> = cfg
        .sweep
        .stealth_weights
        .iter()
        .map(|&nu| {
            let group: Vec<_> = runs.iter().filter(|r| r.value == nu).collect();
            let n = group.len() as f64;
            let mean = group.iter().map(|r| window_stats(&r.rewards, w).0).sum::<f64>() / n;
            let sd = group.iter().map(|r| window_stats(&r.rewards, w).1).sum::<f64>() / n;
            let abs = group.iter().map(|r| window_stats(&r.abs_perturbation, w).0).sum::<f64>() / n;
            (nu, mean, sd, abs)
        })
        .collect();
    let mut pass = true;
    for pair in summary.windows(2) {
        let margin = pair[0].2.max(pair[1].2);
        pass &= pair[0].1 - pair[1].1 >= margin;
    }
    let t = start.elapsed();
    pass &= minutes(t) < 30.0;
    let parts: Vec<String> = summary
        .iter()
        .map(|(nu, m, sd, a)| format!("r({nu})={m:.3} sd {sd:.3} |o| {a:.3}"))
        .collect();
    Outcome {
        id: 4,
        pass,
        detail: format!(
            "3 seeds, last {w} epochs: {}; need gaps >= larger sd; {:.1} min (limit 30)",
            parts.join(", "),
            minutes(t)
        ),
    }
}

// ---- 6, 7, 8 share trained pipelines

struct Shared {
    dirs: Vec<(u64, tempfile::TempDir)>,
    metrics: Vec<(u64, PolicyKind, Vec<(String, Metrics)>)>,
    balanced_sizes: Vec<(u64, PolicyKind, usize)>,
    elapsed: Duration,
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn build_shared() -> Shared {
    let start = Instant::now();
    let mut shared = Shared {
        dirs: Vec::new(),
        metrics: Vec::new(),
        balanced_sizes: Vec::new(),
        elapsed: Duration::ZERO,
    };
    for seed in SEEDS {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(desk(seed), dir.path()).unwrap();
        p.gen_data().unwrap();
        for kind in [PolicyKind::Lstm, PolicyKind::Attention] {
            p.train_attacker(kind).unwrap();
            p.gen_attacks(kind).unwrap();
            p.balance(kind).unwrap();
            p.train_ids(kind).unwrap();
            shared.balanced_sizes.push((seed, kind, rows(&p.layout().balanced(kind)).len()));
            shared.metrics.push((seed, kind, p.detector_metrics(kind).unwrap()));
        }
        shared.dirs.push((seed, dir));
    }
    shared.elapsed = start.elapsed();
    shared
}

fn find<'a>(s: &'a Shared, seed: u64, kind: PolicyKind, name: &str) -> &'a Metrics {
    let (_, _, m) = s.metrics.iter().find(|(sd, k, _)| *sd == seed && *k == kind).unwrap();
    &m.iter().find(|(n, _)| n.ends_with(&format!("/{name}"))).unwrap().1
}

fn ids_quality(s: &Shared) -> Outcome {
    let mut pass = minutes(s.elapsed) < 20.0;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let l = find(s, seed, PolicyKind::Lstm, "test");
        let a = find(s, seed, PolicyKind::Attention, "test");
        for m in [l, a] {
            pass &= m.accuracy >= 0.95 && m.f1 >= 0.95;
        }
        pass &= a.accuracy >= l.accuracy && a.f1 >= l.f1;
        parts.push(format!(
            "seed {seed}: lstm acc {:.4} f1 {:.4}, attention acc {:.4} f1 {:.4}",
            l.accuracy, l.f1, a.accuracy, a.f1
        ));
    }
    let smallest = s.balanced_sizes.iter().map(|b| b.2).min().unwrap();
    pass &= smallest >= 2000;
    Outcome {
        id: 6,
        pass,
        detail: format!(
            "{}; smallest balanced set {smallest} rows; {:.1} min incl. attacker training (limit 20)",
            parts.join("; "),
            minutes(s.elapsed)
        ),
    }
}

fn generalization(s: &Shared) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let fpr = find(s, seed, PolicyKind::Lstm, "heldout_benign").false_positive_rate;
        pass &= fpr <= 0.05;
        let mut line = format!("seed {seed}: benign fpr {fpr:.4}");
        for fam in ["fixed_offset", "random_under", "zero_floor"] {
            let r = find(s, seed, PolicyKind::Lstm, fam).recall;
            pass &= r >= 0.90;
            line.push_str(&format!(", {fam} recall {r:.4}"));
        }
        parts.push(line);
    }
    Outcome {
        id: 7,
        pass: pass && start.elapsed() < Duration::from_secs(300),
        detail: format!("LSTM-trained detector; {}; need recall >= 0.90, fpr <= 0.05", parts.join("; ")),
    }
}

fn adasyn_check(s: &Shared) -> Outcome {
    let start = Instant::now();
    let (seed, dir) = &s.dirs[0];
    let p = Pipeline::new(desk(*seed), dir.path()).unwrap();
    let mut input = rows(&p.layout().benign());
    input.extend(rows(&p.layout().attacks(PolicyKind::Lstm)));
    let cfg = BalanceConfig {
        seed: 8,
        ..BalanceConfig::default()
    };
    let b = adasyn_with_origins(&input, &cfg).unwrap();
    let n_min = b.rows.iter().filter(|r| r.label == b.minority).count() as f64;
    let n_maj = b.rows.len() as f64 - n_min;
    let ratio = n_min / n_maj;
    let mut bad = 0usize;
    for (row, o) in b.rows[b.original_len..].iter().zip(&b.origins) {
        let (x, z) = (&input[o.parent], &input[o.neighbor]);
        let ok = x.label == b.minority
            && z.label == b.minority
            && (0.0..=1.0).contains(&o.u)
            && (0..48).all(|j| {
                let (lo, hi) = (x.features[j].min(z.features[j]), x.features[j].max(z.features[j]));
                row.features[j] >= lo - 1e-12 && row.features[j] <= hi + 1e-12
            });
        if !ok {
            bad += 1;
        }
    }
    let t = start.elapsed();
    let minority = if b.minority == Label::Malicious { "malicious" } else { "benign" };
    Outcome {
        id: 8,
        pass: (ratio - cfg.target_ratio).abs() <= 0.05 * cfg.target_ratio && bad == 0 && t < Duration::from_secs(60),
        detail: format!(
            "{} synthetic {minority} rows, class ratio {ratio:.4} (target {}), {bad} off-segment; {:.1}s (limit 60s)",
            b.origins.len(),
            cfg.target_ratio,
            t.as_secs_f64()
        ),
    }
}

// ---- 5: learning-rate ordering

fn lr_ordering(s: &Shared) -> Outcome {
    let start = Instant::now();
    let (seed, dir) = &s.dirs[0];
    let cfg = desk(*seed);
    let p = Pipeline::new(cfg.clone(), dir.path()).unwrap();
    let train = rows(&p.layout().train_split(PolicyKind::Lstm));
    let runs = lr_sweep(&cfg, &train).unwrap();
    let w = cfg.sweep.final_window;
    let lrs = &cfg.sweep.learning_rates;
    let mean_for = |lr: f64| {
        let g: Vec<_> = runs.iter().filter(|r| r.value == lr).collect();
        g.iter().map(|r| window_stats(&r.rewards, w).0).sum::<f64>() / g.len() as f64
    };
    let means: Vec<f64> = lrs.iter().map(|&lr| mean_for(lr)).collect();
    let mut pass = means.windows(2).all(|m| m[0] > m[1]);
    let t = start.elapsed();
    pass &= minutes(t) < 20.0;
    let per_seed: Vec<String> = cfg
        .sweep
        .seeds
        .iter()
        .map(|&sd| {
            let vals: Vec<String> = lrs
                .iter()
                .map(|&lr| {
                    let r = runs.iter().find(|r| r.value == lr && r.seed == sd).unwrap();
                    format!("{:.4}", window_stats(&r.rewards, w).0)
                })
                .collect();
            format!("seed {sd} [{}]", vals.join(", "))
        })
        .collect();
    let parts: Vec<String> = lrs.iter().zip(&means).map(|(lr, m)| format!("r({lr:e})={m:.4}")).collect();
    Outcome {
        id: 5,
        pass,
        detail: format!(
            "{} epochs, last {w}: {}; {}; need strictly decreasing; {:.1} min (limit 20)",
            cfg.ids.epochs,
            parts.join(", "),
            per_seed.join(", "),
            minutes(t)
        ),
    }
}

// ---- 9: determinism of run-all

fn determinism() -> Outcome {
    let start = Instant::now();
    let mut cfg = desk(9);
    cfg.traces.n_vehicles = 16;
    cfg.traces.n_days = 6;
    cfg.traces.heldout_vehicles = 8;
    cfg.traces.heldout_days = 2;
    cfg.attacker.epochs = 15;
    cfg.attacker.episodes_per_epoch = 16;
    cfg.attack_data.sources = vec![PolicyKind::Lstm, PolicyKind::Attention, PolicyKind::Mlp];
    cfg.ids.epochs = 10;
    cfg.eval.attack_eval_episodes = 20;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = Pipeline::new(cfg.clone(), a.path()).unwrap().run_all(&cfg.attack_data.sources).unwrap();
    let mb = Pipeline::new(cfg.clone(), b.path()).unwrap().run_all(&cfg.attack_data.sources).unwrap();
    let mut differing = Vec::new();
    for (name, art) in &ma.metrics {
        let other = std::fs::read(b.path().join(&art.path)).unwrap();
        if std::fs::read(a.path().join(&art.path)).unwrap() != other {
            differing.push(name.clone());
        }
    }
    let same_manifest = ma == mb;
    Outcome {
        id: 9,
        pass: differing.is_empty() && same_manifest,
        detail: format!(
            "{} metric files compared byte for byte, {} differ; manifests {}; {:.1}s",
            ma.metrics.len(),
            differing.len(),
            if same_manifest { "identical" } else { "differ" },
            start.elapsed().as_secs_f64()
        ),
    }
}

fn main() {
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut results: Vec<Outcome> = Vec::new();
    let mut report = |o: Outcome| {
        println!("criterion {}: {} | {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push(o);
    };

    if wanted(1) {
        report(gradients());
    }
    if wanted(2) {
        report(coordinator());
    }
    if wanted(3) {
        report(efficacy());
    }
    if wanted(4) {
        report(nu_ordering());
    }
    if [5, 6, 7, 8].into_iter().any(wanted) {
        let shared = build_shared();
        if wanted(6) {
            report(ids_quality(&shared));
        }
        if wanted(7) {
            report(generalization(&shared));
        }
        if wanted(8) {
            report(adasyn_check(&shared));
        }
        if wanted(5) {
            report(lr_ordering(&shared));
        }
    }
    if wanted(9) {
        report(determinism());
    }

    results.sort_by_key(|o| o.id);
    println!();
    println!("acceptance summary");
    for o in &results {
        println!("  {} {}", o.id, if o.pass { "PASS" } else { "FAIL" });
    }
    let failed = results.iter().filter(|o| !o.pass).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
