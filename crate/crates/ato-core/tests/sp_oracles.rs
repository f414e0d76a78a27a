use ato_core::demand::{window_distribution, DemandModel, WindowPmf};
use ato_core::model::{validate_system, AtoSystem, RawSystem};
use ato_core::sp::{
    build_scenario_tree, build_stage_lp, lower_bound, two_stage_identical_bound, Backend, SpModel, SpOptions, SpSolver, Truncation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn n_system(long0: bool, scale: f64) -> AtoSystem {
    let lts = if long0 { [1.5, 1.0] } else { [1.0, 1.5] };
    let raw = RawSystem::from_component_lead_times(
        vec![vec![1.0, 1.0], vec![1.0, 0.0]],
        &lts,
        vec![1.0 * scale, 0.1 * scale],
        vec![0.4 * scale, 0.5 * scale],
    );
    validate_system(&raw).unwrap()
}

fn single(h: f64, b: f64, lts: &[f64]) -> AtoSystem {
    let bom = vec![vec![1.0]; lts.len()];
    validate_system(&RawSystem::from_component_lead_times(bom, lts, vec![h; lts.len()], vec![b])).unwrap()
}

fn opts(backend: Backend, truncation: Truncation) -> SpOptions {
    SpOptions { backend, truncation, ..SpOptions::default() }
}

fn poisson_trunc(mean: f64, m: usize) -> Vec<f64> {
    let mut p = vec![0.0; m + 1];
    let mut term = (-mean).exp();
    let mut acc = 0.0;
    for (r, slot) in p.iter_mut().enumerate().take(m) {
        if r > 0 {
            term *= mean / r as f64;
        }
        *slot = term;
        acc += term;
    }
    p[m] = 1.0 - acc;
    p
}

/// Smallest minimizer of `h y - c E min(D, y)` over `0..=m`.
fn newsvendor(h: f64, c: f64, pmf: &[f64]) -> (i64, f64) {
    let mut best = (0i64, f64::INFINITY);
    for y in 0..pmf.len() {
        let served: f64 = pmf.iter().enumerate().map(|(d, p)| p * d.min(y) as f64).sum();
        let v = h * y as f64 - c * served;
        if v < best.1 - 1e-12 {
            best = (y as i64, v);
        }
    }
    best
}

#[test]
fn newsvendor_oracle_both_backends() {
    let sys = single(1.0, 4.0, &[0.5]);
    let dm = DemandModel::independent_poisson(&[5.0]).unwrap();
    let pmf = poisson_trunc(2.5, 10);
    let (y_oracle, v_oracle) = newsvendor(1.0, 5.0, &pmf);
    let tail = |y: usize| pmf[y + 1..].iter().sum::<f64>();
    let fractile = (0..10).find(|&y| tail(y) <= 0.2).unwrap() as i64;
    assert_eq!(y_oracle, fractile);
    for backend in [Backend::Nested, Backend::TreeLp] {
        let mut s = SpSolver::from_system(&sys, &dm, opts(backend, Truncation::Fixed(10))).unwrap();
        let sol = s.solve_stage(1, &[], &[0]).unwrap();
        assert_eq!(sol.y_int, vec![y_oracle], "{backend:?}");
        assert!((sol.objective - v_oracle).abs() < 1e-9, "{backend:?}");
    }
}

#[test]
fn newsvendor_oracle_on_random_single_item_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let h = rng.gen_range(0.2..3.0);
        let b = rng.gen_range(0.5..10.0);
        let rate = rng.gen_range(0.5..6.0);
        let l = [0.5, 1.0, 1.5][rng.gen_range(0..3)];
        let m = rng.gen_range(3..15usize);
        let sys = single(h, b, &[l]);
        let dm = DemandModel::independent_poisson(&[rate]).unwrap();
        let pmf = poisson_trunc(rate * l, m);
        let (y, v) = newsvendor(h, h + b, &pmf);
        for backend in [Backend::Nested, Backend::TreeLp] {
            let mut s = SpSolver::from_system(&sys, &dm, opts(backend, Truncation::Fixed(m as i64))).unwrap();
            let sol = s.solve_stage(1, &[], &[0]).unwrap();
            assert_eq!(sol.y_int, vec![y]);
            assert!((sol.objective - v).abs() < 1e-8 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn deterministic_demand_stocks_exactly_the_demand() {
    let sys = single(1.0, 3.0, &[1.0, 2.0]);
    let dm = DemandModel::independent_poisson(&[1.0]).unwrap();
    let mut model = SpModel::new(&sys, &dm, &Truncation::Fixed(5)).unwrap();
    model.tree.stages = vec![WindowPmf::point_mass(1, 1.0, 5, &[3]), WindowPmf::point_mass(1, 1.0, 5, &[2])];
    for backend in [Backend::Nested, Backend::TreeLp] {
        let mut s = SpSolver::new(model.clone(), opts(backend, Truncation::Fixed(5)));
        let top = s.solve_stage(2, &[], &[0]).unwrap();
        assert_eq!(top.y_int, vec![5]);
        let low = s.solve_stage(1, &[5], &[2]).unwrap();
        assert_eq!(low.y_int, vec![5]);
        // Holding 5 + 5, everything served at c = 3 + 1 + 1.
        assert!((top.objective - (10.0 - 5.0 * 5.0)).abs() < 1e-9);
    }
}

#[test]
fn scenario_tree_examples() {
    let sys = n_system(true, 1.0);
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let tree = build_scenario_tree(&sys, &dm, &Truncation::Fixed(12), 1e7).unwrap();
    let leaves = tree.leaf_count(2);
    let total: f64 = (0..leaves).map(|l| tree.path_probability(2, 0, l)).sum();
    assert!((total - 1.0).abs() < 1e-10);
    for l in (0..leaves).step_by(97) {
        let d = tree.path_demand(2, 0, l);
        let (a, b) = (tree.digit(0, l, 1), tree.digit(0, l, 2));
        let s1 = tree.stages[0].atom(a);
        let s2 = tree.stages[1].atom(b);
        assert_eq!(d, vec![s1[0] + s2[0], s1[1] + s2[1]]);
    }
    let zero = DemandModel::independent_poisson(&[0.0, 0.0]).unwrap();
    let t0 = build_scenario_tree(&sys, &zero, &Truncation::SixSigma, 1e7).unwrap();
    assert_eq!(t0.leaf_count(2), 1);
    assert_eq!(t0.path_probability(2, 0, 0), 1.0);
    let k1 = single(1.0, 1.0, &[1.0]);
    let one = DemandModel::independent_poisson(&[2.0]).unwrap();
    let t1 = build_scenario_tree(&k1, &one, &Truncation::Fixed(7), 1e7).unwrap();
    assert_eq!(t1.leaf_count(1), window_distribution(&one, 1.0, 7).len());
    assert!(build_scenario_tree(&sys, &dm, &Truncation::Fixed(60), 1e6).is_err());
}

#[test]
fn stage_lp_variable_count() {
    let sys = n_system(false, 1.0);
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let model = SpModel::new(&sys, &dm, &Truncation::Fixed(3)).unwrap();
    let t = &model.tree;
    let lp2 = build_stage_lp(&model, 2, &[], &[0, 0]).unwrap();
    assert_eq!(lp2.ncols(), 2 * t.leaf_count(2) + t.path_count(2, 1) + t.path_count(2, 2));
    let lp1 = build_stage_lp(&model, 1, &[4], &[1, 0]).unwrap();
    assert_eq!(lp1.ncols(), 2 * t.leaf_count(1) + t.path_count(1, 1));
    assert!(build_stage_lp(&model, 1, &[], &[0, 0]).is_err());
    let k1 = single(1.0, 1.0, &[1.0]);
    let zero = DemandModel::independent_poisson(&[0.0]).unwrap();
    let single_leaf = SpModel::new(&k1, &zero, &Truncation::Fixed(0)).unwrap();
    let lp = build_stage_lp(&single_leaf, 1, &[], &[0]).unwrap();
    assert_eq!((lp.ncols(), lp.nrows()), (2, 1));
}

fn random_instance(rng: &mut ChaCha8Rng) -> (AtoSystem, DemandModel, i64) {
    let shapes: [(Vec<Vec<f64>>, usize); 4] = [
        (vec![vec![1.0, 1.0], vec![1.0, 0.0]], 2),
        (vec![vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]], 2),
        (vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]], 3),
        (vec![vec![1.0], vec![1.0]], 1),
    ];
    let (bom, m) = shapes[rng.gen_range(0..4)].clone();
    let n = bom.len();
    let lts: Vec<f64> = (0..n).map(|_| [0.5, 1.0][rng.gen_range(0..2)]).collect();
    let h: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..8.0)).collect();
    let rates: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..3.0)).collect();
    let sys = validate_system(&RawSystem::from_component_lead_times(bom, &lts, h, b)).unwrap();
    let mm = if m == 3 { 2 } else { rng.gen_range(2..5) };
    (sys, DemandModel::independent_poisson(&rates).unwrap(), mm)
}

#[test]
fn backends_agree_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 100 {
        let (sys, dm, mm) = random_instance(&mut rng);
        let model = SpModel::new(&sys, &dm, &Truncation::Fixed(mm)).unwrap();
        let kk = model.stages();
        if model.tree.projected_leaves(kk) > 1e4 {
            continue;
        }
        let mut nested = SpSolver::new(model.clone(), opts(Backend::Nested, Truncation::Fixed(mm)));
        let mut tree = SpSolver::new(model, opts(Backend::TreeLp, Truncation::Fixed(mm)));
        let x = vec![0; sys.products()];
        let a = nested.solve_stage(kk, &[], &x).unwrap();
        let b = tree.solve_stage(kk, &[], &x).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-6 * a.objective.abs().max(1.0), "{} vs {}", a.objective, b.objective);
        checked += 1;
    }
}

#[test]
fn optimum_lies_in_solution_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let (sys, dm, mm) = random_instance(&mut rng);
        let mut s = SpSolver::from_system(&sys, &dm, opts(Backend::Nested, Truncation::Fixed(mm))).unwrap();
        let kk = s.model().stages();
        let x: Vec<i64> = (0..sys.products()).map(|_| rng.gen_range(0..4)).collect();
        let sol = s.solve_stage(kk, &[], &x).unwrap();
        let bx = s.model().solution_box(kk, &[], &x);
        assert_eq!(sol.box_widenings, 0);
        for &y in &sol.y_int {
            assert!(y as f64 >= bx.lower_edge && y as f64 <= bx.upper_edge, "{y} outside {bx:?}");
        }
    }
}

#[test]
fn solution_box_formula() {
    let sys = n_system(true, 1.0);
    let zero = DemandModel::independent_poisson(&[0.0, 0.0]).unwrap();
    let model = SpModel::new(&sys, &zero, &Truncation::SixSigma).unwrap();
    let b0 = model.solution_box(2, &[], &[0, 0]);
    let c_max = 1.5f64;
    assert!((b0.upper_edge - c_max / 0.1).abs() < 1e-12);
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let model = SpModel::new(&sys, &dm, &Truncation::SixSigma).unwrap();
    let base = model.solution_box(2, &[], &[0, 0]).upper_edge;
    let one = model.solution_box(2, &[], &[3, 1]).upper_edge;
    let two = model.solution_box(2, &[], &[6, 2]).upper_edge;
    assert!(((two - base) - 2.0 * (one - base)).abs() < 1e-9);
}

#[test]
fn more_upstream_stock_never_raises_cost() {
    let sys = n_system(true, 10.0);
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let mut s = SpSolver::from_system(&sys, &dm, SpOptions::default()).unwrap();
    for y in 5..20 {
        for x in [[0, 0], [2, 1], [4, 4]] {
            let a = s.solve_stage(1, &[y], &x).unwrap().objective;
            let b = s.solve_stage(1, &[y + 1], &x).unwrap().objective;
            assert!(b <= a + 1e-9);
        }
    }
}

#[test]
fn truncation_refinement_converges() {
    for long0 in [true, false] {
        let sys = n_system(long0, 10.0);
        let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
        let solve = |t: Truncation| {
            let mut s = SpSolver::from_system(&sys, &dm, SpOptions { truncation: t, check_decomposition: false, ..SpOptions::default() }).unwrap();
            s.solve_stage(2, &[], &[0, 0]).unwrap().objective
        };
        let grid: Vec<f64> = [6, 8, 10, 12, 16, 20, 24].iter().map(|&m| solve(Truncation::Fixed(m))).collect();
        for w in grid.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{grid:?}");
        }
        let d = solve(Truncation::SixSigma);
        let dd = solve(Truncation::Scaled(2.0));
        assert!((d - dd).abs() <= 1e-3 * d.abs());
    }
}

#[test]
fn lipschitz_ratio_is_stable_across_truncation() {
    let sys = n_system(true, 10.0);
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let mut ratios = Vec::new();
    for m in [5, 10, 20] {
        let mut s = SpSolver::from_system(&sys, &dm, opts(Backend::Nested, Truncation::Fixed(m))).unwrap();
        let y_top = s.solve_stage(2, &[], &[0, 0]).unwrap().y_int;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = [rng.gen_range(0..12), rng.gen_range(0..12)];
            let base = s.solve_stage(1, &y_top, &x).unwrap().y_int[0];
            for i in 0..2 {
                let mut xp = x;
                xp[i] += 1;
                let moved = s.solve_stage(1, &y_top, &xp).unwrap().y_int[0];
                worst = worst.max((moved - base).abs() as f64);
            }
        }
        ratios.push(worst);
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(lo > 0.0 && hi < 2.0 * lo, "{ratios:?}");
}

#[test]
fn bound_examples() {
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let long = lower_bound(&n_system(true, 10.0), &dm, &SpOptions::default()).unwrap();
    let short = lower_bound(&n_system(false, 10.0), &dm, &SpOptions::default()).unwrap();
    assert!((long.value - 21.38).abs() <= 0.05, "{}", long.value);
    assert!((short.value - 18.95).abs() <= 0.05, "{}", short.value);
    assert!((long.decomposition - long.value).abs() <= 1e-6 * long.value);
    let caption = lower_bound(&n_system(true, 1.0), &dm, &SpOptions::default()).unwrap();
    assert!((10.0 * caption.value - long.value).abs() <= 1e-9 * long.value);
    let zero = DemandModel::independent_poisson(&[0.0, 0.0]).unwrap();
    assert_eq!(lower_bound(&n_system(true, 10.0), &zero, &SpOptions::default()).unwrap().value, 0.0);
}

#[test]
fn tree_backend_bound_matches_nested() {
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    for long0 in [true, false] {
        let sys = n_system(long0, 10.0);
        let t = lower_bound(&sys, &dm, &opts(Backend::TreeLp, Truncation::Fixed(3))).unwrap();
        let n = lower_bound(&sys, &dm, &opts(Backend::Nested, Truncation::Fixed(3))).unwrap();
        assert!((t.value - n.value).abs() <= 1e-6 * n.value.abs());
        assert!((t.decomposition - t.value).abs() <= 1e-6 * t.value.abs());
    }
}

#[test]
fn identical_lead_time_relaxation() {
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    for long0 in [true, false] {
        let sys = n_system(long0, 10.0);
        let full = lower_bound(&sys, &dm, &SpOptions::default()).unwrap().value;
        let relaxed = two_stage_identical_bound(&sys, &dm, &SpOptions::default()).unwrap();
        assert!(relaxed <= full + 1e-9);
    }
    let k1 = single(1.0, 2.0, &[1.0]);
    let one = DemandModel::independent_poisson(&[3.0]).unwrap();
    let a = lower_bound(&k1, &one, &SpOptions::default()).unwrap().value;
    let b = two_stage_identical_bound(&k1, &one, &SpOptions::default()).unwrap();
    assert!((a - b).abs() < 1e-12);
    let zero = DemandModel::independent_poisson(&[0.0]).unwrap();
    assert_eq!(two_stage_identical_bound(&k1, &zero, &SpOptions::default()).unwrap(), 0.0);
}

#[test]
fn solves_are_deterministic() {
    let dm = DemandModel::independent_poisson(&[5.0, 5.0]).unwrap();
    let sys = n_system(false, 10.0);
    let a = lower_bound(&sys, &dm, &SpOptions::default()).unwrap();
    let b = lower_bound(&sys, &dm, &SpOptions::default()).unwrap();
    assert_eq!(a, b);
}
