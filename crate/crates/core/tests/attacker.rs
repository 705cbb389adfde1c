use evguard_core::attacker::*;
use evguard_core::traces::{build_benign_dataset, LabeledTuple, VehicleProfile};

fn benign() -> Vec<LabeledTuple> {
    build_benign_dataset(16, 4, &[VehicleProfile::default()], 21).unwrap()
}

fn small(stealth_weight: f64, epochs: usize, seed: u64) -> AttackerTrainConfig {
    AttackerTrainConfig {
        policy: PolicySpec {
            kind: PolicyKind::Lstm,
            hidden: 16,
            layers: 1,
            ..PolicySpec::default()
        },
        env: EnvConfig {
            stealth_weight,
            ..EnvConfig::default()
        },
        epochs,
        episodes_per_epoch: 32,
        seed,
        ..AttackerTrainConfig::default()
    }
}

#[test]
fn poisson_arrivals_have_the_configured_mean() {
    let rows = benign();
    let cfg = EnvConfig {
        arrival_rate: 4.0,
        ..EnvConfig::default()
    };
    let n = 10_000;
    let total: usize = (0..n)
        .map(|s| AttackEnv::reset(&rows, cfg, s).unwrap().1.others().len())
        .sum();
    let mean = total as f64 / n as f64;
    // sd of the sample mean is sqrt(4 / n)
    assert!((mean - 4.0).abs() < 3.0 * (4.0 / n as f64).sqrt(), "mean {mean}");
}

#[test]
fn zero_rate_leaves_the_adversary_alone() {
    let rows = benign();
    let cfg = EnvConfig {
        arrival_rate: 0.0,
        ..EnvConfig::default()
    };
    let (mut env, first) = AttackEnv::reset(&rows, cfg, 3).unwrap();
    let mut state = Some(first);
    let mut seen = 0;
    while let Some(s) = state {
        assert!(s.others().is_empty());
        state = env.step(AttackAction::new(-0.1).unwrap()).unwrap().next_state;
        seen += 1;
    }
    assert_eq!(seen, 48);
}

#[test]
fn seeded_resets_agree_and_empty_data_fails() {
    let rows = benign();
    let a = AttackEnv::reset(&rows, EnvConfig::default(), 8).unwrap().1;
    let b = AttackEnv::reset(&rows, EnvConfig::default(), 8).unwrap().1;
    assert_eq!(a, b);
    assert!(AttackEnv::reset(&[], EnvConfig::default(), 8).is_err());
}

#[test]
fn returns_decompose_and_reports_stay_in_range() {
    let rows = benign();
    let cfg = EnvConfig {
        stealth_weight: 0.4,
        ..EnvConfig::default()
    };
    for seed in 0..20 {
        let (mut env, _) = AttackEnv::reset(&rows, cfg, seed).unwrap();
        let mut sum = 0.0;
        for t in 0..48 {
            let o = ((seed as f64 + t as f64) * 0.37).sin();
            let out = env.step(AttackAction::new(o).unwrap()).unwrap();
            assert!((0.0..=1.0).contains(&out.reported_soc));
            sum += out.reward;
        }
        let ret = env.episode_return();
        assert_eq!(ret.w(), ret.power_gained - ret.stealth_penalty);
        assert!((ret.w() - sum).abs() < 1e-9);
    }
}

#[test]
fn baseline_reduces_gradient_variance() {
    let rows = benign();
    let env = EnvConfig::default();
    let b = env.station.battery_kwh;
    for seed in 0..10 {
        let spec = PolicySpec {
            hidden: 8,
            layers: 1,
            ..PolicySpec::default()
        };
        let net = PolicyNet::new(spec, seed).unwrap();
        let samples: Vec<(f64, Vec<f64>)> = (0..48)
            .map(|e| {
                let (ret, grad) = score_function(&net, &rows, &env, seed * 1000 + e).unwrap();
                (ret.normalized_w(b), grad)
            })
            .collect();
        let mean_w = samples.iter().map(|s| s.0).sum::<f64>() / samples.len() as f64;
        let total_variance = |baseline: f64| {
            let dim = samples[0].1.len();
            let n = samples.len() as f64;
            (0..dim)
                .map(|j| {
                    let xs: Vec<f64> = samples.iter().map(|(w, g)| (w - baseline) * g[j]).collect();
                    let m = xs.iter().sum::<f64>() / n;
                    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
                })
                .sum::<f64>()
        };
        let (with, without) = (total_variance(mean_w), total_variance(0.0));
        assert!(with <= without, "seed {seed}: {with} > {without}");
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let rows = benign();
    let mut cfg = small(0.2, 3, 5);
    cfg.learning_rate = 0.0;
    let start = PolicyNet::new(cfg.policy, evguard_core::rng::derive_seed(cfg.seed, &[evguard_core::rng::tag::INIT, 0])).unwrap();
    let trained = train_attacker(&rows, &cfg).unwrap();
    for id in start.params().ids() {
        let (a, b) = (start.params().value(id).data(), trained.policy.params().value(id).data());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn training_is_seed_deterministic() {
    let rows = benign();
    let a = train_attacker(&rows, &small(0.2, 4, 9)).unwrap();
    let b = train_attacker(&rows, &small(0.2, 4, 9)).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.policy.params(), b.policy.params());
}

#[test]
fn honest_replay_reproduces_benign_rows() {
    let rows = benign();
    let out = generate_attack_dataset(Strategy::Honest, &rows, &EnvConfig::default(), 1).unwrap();
    assert_eq!(out.len(), rows.len());
    for (a, b) in out.iter().zip(&rows) {
        assert_eq!(a.features, b.features);
        assert_eq!(a.label, evguard_core::traces::Label::Malicious);
    }
    let zero = generate_attack_dataset(Strategy::Constant(0.0), &rows, &EnvConfig::default(), 1).unwrap();
    assert!(zero.iter().zip(&rows).all(|(a, b)| a.features == b.features));
}

#[test]
fn trained_policy_under_reports() {
    let rows = benign();
    let trained = train_attacker(&rows, &small(0.2, 80, 2)).unwrap();
    let attacked = generate_attack_dataset(
        Strategy::Policy {
            net: &trained.policy,
            greedy: false,
        },
        &rows,
        &EnvConfig::default(),
        4,
    )
    .unwrap();
    let mean = |r: &[LabeledTuple]| r.iter().flat_map(|t| t.features).sum::<f64>() / (r.len() * 48) as f64;
    let (reported, truth) = (mean(&attacked), mean(&rows));
    assert!(reported < truth, "{reported} >= {truth}");
}

#[test]
fn heavier_stealth_weight_perturbs_less() {
    let rows = benign();
    let tail = |nu: f64| {
        let curve = train_attacker(&rows, &small(nu, 200, 1)).unwrap().curve;
        curve[150..].iter().map(|e| e.mean_abs_perturbation).sum::<f64>() / 50.0
    };
    let (light, heavy) = (tail(0.2), tail(0.6));
    assert!(heavy <= light, "nu=0.6 |o| {heavy} > nu=0.2 |o| {light}");
}
