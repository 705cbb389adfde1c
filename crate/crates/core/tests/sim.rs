use evguard_core::sim::{priority, read_requests, schedule, write_allocation, ChargingRequest, StationConfig};
use proptest::prelude::*;

fn station(capacity_kwh: f64, upsilon: f64) -> StationConfig {
    StationConfig {
        capacity_kwh,
        upsilon,
        ..StationConfig::default()
    }
}

fn batch(points: &[(f64, f64)]) -> Vec<ChargingRequest> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(soc, tcc))| ChargingRequest::new(i as u32, 0, soc, tcc).unwrap())
        .collect()
}

/// Written from the admission rule directly: sort by omega per unit deficit
/// (full batteries first), ties by omega then id, then first fit.
fn oracle(reqs: &[ChargingRequest], cfg: &StationConfig) -> Vec<(u32, bool, f64)> {
    let mut order: Vec<&ChargingRequest> = reqs.iter().collect();
    let key = |r: &ChargingRequest| {
        let omega = cfg.upsilon * (1.0 - r.soc) + (1.0 - cfg.upsilon) * (1.0 - r.tcc);
        let density = if r.soc < 1.0 { omega / (1.0 - r.soc) } else { f64::INFINITY };
        (density, omega)
    };
    order.sort_by(|a, b| {
        let (da, oa) = key(a);
        let (db, ob) = key(b);
        db.partial_cmp(&da)
            .unwrap()
            .then(ob.partial_cmp(&oa).unwrap())
            .then(a.ev_id.cmp(&b.ev_id))
    });
    let mut used = 0.0;
    let mut out: Vec<(u32, bool, f64)> = Vec::new();
    for r in order {
        let demand = (1.0 - r.soc) * cfg.battery_kwh;
        if used + demand <= cfg.capacity_kwh {
            used += demand;
            out.push((r.ev_id, true, demand));
        } else {
            out.push((r.ev_id, false, 0.0));
        }
    }
    out.sort_by_key(|x| x.0);
    out
}

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn never_exceeds_capacity(
        points in prop::collection::vec((unit(), unit()), 0..40),
        capacity in 1.0..400.0f64,
        upsilon in 0.0..=1.0f64,
    ) {
        let cfg = station(capacity, upsilon);
        let alloc = schedule(&batch(&points), &cfg).unwrap();
        let total: f64 = alloc.granted_kwh.values().sum();
        prop_assert!(total <= capacity + 1e-9);
        prop_assert!((total - alloc.total_kwh).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn matches_independent_greedy(
        points in prop::collection::vec((unit(), unit()), 0..20),
        capacity in 1.0..200.0f64,
        upsilon in 0.0..=1.0f64,
    ) {
        let cfg = station(capacity, upsilon);
        let reqs = batch(&points);
        let alloc = schedule(&reqs, &cfg).unwrap();
        for (id, selected, granted) in oracle(&reqs, &cfg) {
            prop_assert_eq!(alloc.is_selected(id), selected);
            prop_assert_eq!(alloc.granted(id), granted);
        }
    }

    #[test]
    fn scaling_battery_and_capacity_keeps_selection(
        points in prop::collection::vec((unit(), unit()), 0..20),
        capacity in 1.0..200.0f64,
        scale in prop_oneof![Just(0.5), Just(2.0), Just(4.0), Just(0.25)],
    ) {
        let cfg = station(capacity, 0.5);
        let scaled = StationConfig {
            capacity_kwh: capacity * scale,
            battery_kwh: cfg.battery_kwh * scale,
            ..cfg
        };
        let reqs = batch(&points);
        prop_assert_eq!(schedule(&reqs, &cfg).unwrap().selected, schedule(&reqs, &scaled).unwrap().selected);
    }

    #[test]
    fn identical_batches_identical_allocations(
        points in prop::collection::vec((unit(), unit()), 0..20),
        capacity in 1.0..200.0f64,
    ) {
        let cfg = station(capacity, 0.5);
        let reqs = batch(&points);
        let a = schedule(&reqs, &cfg).unwrap();
        let b = schedule(&reqs, &cfg).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_allocation(&mut x, &a).unwrap();
        write_allocation(&mut y, &b).unwrap();
        prop_assert_eq!(x, y);
    }
}

/// Lowering one EV's reported SoC never lowers its omega, and leaves it
/// selected whenever its demand fits after everyone admitted ahead of it.
#[test]
fn under_reporting_never_demotes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let mut checked = 0usize;
    for trial in 0..300 {
        let n = 1 + trial % 10;
        let points: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let cfg = station(rng.random_range(10.0..150.0), rng.random::<f64>());
        for who in 0..n {
            let (true_soc, tcc) = points[who];
            let base = priority(&ChargingRequest::new(who as u32, 0, true_soc, tcc).unwrap(), &cfg).omega;
            for &reported in grid.iter().filter(|&&s| s < true_soc) {
                let mut p = points.clone();
                p[who].0 = reported;
                let reqs = batch(&p);
                let me = reqs[who];
                let omega = priority(&me, &cfg).omega;
                assert!(omega >= base - 1e-12, "omega fell from {base} to {omega}");

                let alloc = schedule(&reqs, &cfg).unwrap();
                let decisions = oracle(&reqs, &cfg);
                let ahead: f64 = {
                    let mut order: Vec<usize> = (0..n).collect();
                    let rank = |i: usize| {
                        let r = &reqs[i];
                        let o = priority(r, &cfg).omega;
                        (if r.soc < 1.0 { o / (1.0 - r.soc) } else { f64::INFINITY }, o)
                    };
                    order.sort_by(|&a, &b| {
                        rank(b).partial_cmp(&rank(a)).unwrap().then(a.cmp(&b))
                    });
                    order
                        .iter()
                        .take_while(|&&i| i != who)
                        .map(|&i| decisions[i].2)
                        .sum()
                };
                let demand = priority(&me, &cfg).demand_kwh;
                if ahead + demand <= cfg.capacity_kwh {
                    assert!(alloc.is_selected(me.ev_id), "trial {trial}: fitting EV was skipped");
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn csv_round_trip() {
    let text = "ev_id,slot,soc,tcc\n3,5,0.2,0.5\n7,5,0.9,0.1\n";
    let reqs = read_requests(text.as_bytes()).unwrap();
    assert_eq!(reqs.len(), 2);
    let alloc = schedule(&reqs, &station(25.0, 0.5)).unwrap();
    let mut out = Vec::new();
    write_allocation(&mut out, &alloc).unwrap();
    let out = String::from_utf8(out).unwrap();
    assert!(out.starts_with("ev_id,selected,granted_kwh\n3,true,21.6"), "{out}");
    assert!(out.contains("7,true,2.69999"), "{out}");
}

#[test]
fn bad_rows_are_rejected() {
    assert!(read_requests("ev_id,slot,soc,tcc\n1,0,1.5,0.2\n".as_bytes()).is_err());
    assert!(schedule(&batch(&[(0.1, 0.1), (0.2, 0.2)]).into_iter().map(|mut r| { r.ev_id = 4; r }).collect::<Vec<_>>(), &station(10.0, 0.5)).is_err());
}
