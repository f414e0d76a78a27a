use ato_core::demand::{moments, sample_path, window_distribution, DemandModel, DemandPath};
use ato_core::model::{effective_unit_cost, validate_system, RawSystem};
use proptest::prelude::*;

fn raw_strategy() -> impl Strategy<Value = RawSystem> {
    (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n, m, k)| {
        (
            proptest::collection::vec(proptest::collection::vec(0u8..3, m), n),
            proptest::collection::vec(0..k, n),
            proptest::collection::vec(0.1f64..5.0, n),
            proptest::collection::vec(0.1f64..5.0, m),
            Just(k),
        )
            .prop_map(move |(bom, classes, h, b, k)| {
                let mut bom: Vec<Vec<f64>> = bom.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
                for (j, row) in bom.iter_mut().enumerate() {
                    if row.iter().all(|&a| a == 0.0) {
                        row[j % m] = 1.0;
                    }
                }
                for i in 0..m {
                    if bom.iter().all(|r| r[i] == 0.0) {
                        bom[i % n][i] = 1.0;
                    }
                }
                let mut classes = classes;
                for c in 0..k.min(n) {
                    classes[c] = c;
                }
                let used = classes.iter().copied().max().unwrap() + 1;
                RawSystem {
                    bom,
                    lead_times: (1..=used).map(|l| l as f64 * 0.5).collect(),
                    component_class: classes,
                    holding: h,
                    backlog: b,
                }
            })
    })
}

proptest! {
    #[test]
    fn validation_is_idempotent(raw in raw_strategy()) {
        let sys = validate_system(&raw).unwrap();
        let again = validate_system(&sys.to_raw()).unwrap();
        prop_assert_eq!(&sys, &again);
        for j in 1..sys.components() {
            prop_assert!(sys.class_of(j - 1) <= sys.class_of(j));
        }
    }

    #[test]
    fn effective_cost_is_linear(raw in raw_strategy(), s in 0.1f64..3.0) {
        let sys = validate_system(&raw).unwrap();
        let c = effective_unit_cost(&sys).c;
        let h2: Vec<f64> = sys.holding().iter().map(|h| h * s).collect();
        let b2: Vec<f64> = sys.backlog().iter().map(|b| b + 1.0).collect();
        let c_h = effective_unit_cost(&sys.with_costs(&h2, sys.backlog()).unwrap()).c;
        let c_b = effective_unit_cost(&sys.with_costs(sys.holding(), &b2).unwrap()).c;
        for i in 0..sys.products() {
            prop_assert!(c[i] >= sys.backlog()[i]);
            let ah = c[i] - sys.backlog()[i];
            prop_assert!((c_h[i] - (sys.backlog()[i] + s * ah)).abs() < 1e-9);
            prop_assert!((c_b[i] - (c[i] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn window_demand_is_additive(seed in 0u64..1000, a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0) {
        let model = DemandModel::independent_poisson(&[2.0, 3.0]).unwrap();
        let path = sample_path(&model, -1.0, 10.0, seed, 0);
        let t1 = -1.0 + a;
        let t2 = t1 + b + 1e-3;
        let t3 = t2 + c + 1e-3;
        let whole = path.window_demand(t1, t3).unwrap();
        let left = path.window_demand(t1, t2).unwrap();
        let right = path.window_demand(t2, t3).unwrap();
        for i in 0..2 {
            prop_assert_eq!(whole[i], left[i] + right[i]);
        }
    }
}

#[test]
fn m_system_effective_costs() {
    let raw = RawSystem::from_component_lead_times(
        vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]],
        &[1.0, 1.5],
        vec![1.0, 1.0],
        vec![8.0, 3.5, 1.0],
    );
    assert_eq!(effective_unit_cost(&validate_system(&raw).unwrap()).c, vec![10.0, 4.5, 2.0]);
    let single = RawSystem::from_component_lead_times(vec![vec![1.0]], &[1.0], vec![2.0], vec![3.0]);
    assert_eq!(effective_unit_cost(&validate_system(&single).unwrap()).c, vec![5.0]);
}

#[test]
fn unit_window_mean_matches_rate() {
    let model = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let horizon = 100_000usize;
    let path = sample_path(&model, 0.0, horizon as f64, 2024, 0);
    for i in 0..2 {
        let counts: Vec<f64> = (0..horizon).map(|t| path.window_demand(t as f64, t as f64 + 1.0).unwrap()[i] as f64).collect();
        let mean = counts.iter().sum::<f64>() / horizon as f64;
        let se = (5.0 / horizon as f64).sqrt();
        assert!((mean - 5.0).abs() < 3.0 * se, "product {i}: mean {mean}");
    }
}

#[test]
fn window_statistics_are_stationary() {
    let model = DemandModel::independent_poisson(&[3.0]).unwrap();
    let path = sample_path(&model, 0.0, 4000.0, 77, 0);
    let sample = |from: usize| -> Vec<i64> { (from..from + 2000).map(|t| path.window_demand(t as f64, t as f64 + 1.0).unwrap()[0]).collect() };
    let (a, b) = (sample(0), sample(1999));
    let top = *a.iter().chain(&b).max().unwrap();
    let cdf = |s: &[i64], v: i64| s.iter().filter(|&&x| x <= v).count() as f64 / s.len() as f64;
    let ks = (0..=top).map(|v| (cdf(&a, v) - cdf(&b, v)).abs()).fold(0.0, f64::max);
    // 1% critical value for two samples of 2000.
    assert!(ks < 1.63 * (2.0f64 / 2000.0).sqrt(), "KS statistic {ks}");
}

fn poisson_pmf(mean: f64, r: u32) -> f64 {
    let mut p = (-mean).exp();
    for k in 1..=r {
        p *= mean / k as f64;
    }
    p
}

#[test]
fn clamp_mass_is_the_upper_tail() {
    let model = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let pmf = window_distribution(&model, 0.5, 4);
    let tail = 1.0 - (0..4).map(|r| poisson_pmf(2.5, r)).sum::<f64>();
    assert!((pmf.probability_of(&[4, 0]) - tail * poisson_pmf(2.5, 0)).abs() < 1e-14);
    assert!((pmf.probability_of(&[4, 4]) - tail * tail).abs() < 1e-14);
    for m in [0i64, 3, 12, 20] {
        for dur in [0.0, 0.5, 1.5] {
            let p = window_distribution(&model, dur, m);
            assert!((p.total_mass() - 1.0).abs() < 1e-12);
        }
    }
    let zero = window_distribution(&model, 0.5, 0);
    assert_eq!(zero.len(), 1);
    assert_eq!(zero.atom(0), &[0, 0]);
}

#[test]
fn compound_window_matches_direct_convolution() {
    // Orders of size (1,1) w.p. 0.5 or (2,0) w.p. 0.5 at rate 1.5 over duration 1.
    let model = DemandModel::compound(1.5, vec![vec![1, 1], vec![2, 0]], vec![0.5, 0.5]).unwrap();
    let pmf = window_distribution(&model, 1.0, 6);
    let mut oracle = std::collections::BTreeMap::new();
    for n in 0..60u32 {
        let pn = poisson_pmf(1.5, n);
        for k in 0..=n {
            let ways = (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64);
            let p = pn * ways * 0.5f64.powi(n as i32);
            let d = [(k + 2 * (n - k)).min(6) as i64, (k as i64).min(6)];
            *oracle.entry(d).or_insert(0.0) += p;
        }
    }
    for (d, p) in oracle {
        assert!((pmf.probability_of(&d) - p).abs() < 1e-11, "{d:?}");
    }
}

#[test]
fn moment_examples() {
    let model = DemandModel::independent_poisson(&[25.0, 25.0]).unwrap();
    let (mean, cov) = moments(&model, 1.0);
    assert_eq!(mean, vec![25.0, 25.0]);
    assert_eq!(cov, vec![25.0, 0.0, 0.0, 25.0]);
    let (mean, cov) = moments(&model, 0.0);
    assert!(mean.iter().chain(&cov).all(|&v| v == 0.0));
    let joint = DemandModel::compound(2.0, vec![vec![1, 1]], vec![1.0]).unwrap();
    assert_eq!(moments(&joint, 3.0).0, vec![6.0, 6.0]);
}

#[test]
fn paths_reject_bad_arrivals() {
    assert!(DemandPath::from_arrivals(1, 0.0, 1.0, &[(0.5, vec![0])]).is_err());
    assert!(DemandPath::from_arrivals(1, 0.0, 1.0, &[(0.5, vec![1]), (0.5, vec![1])]).is_err());
}
