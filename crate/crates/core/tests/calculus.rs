mod common;

use common::{expect, max_abs_diff, scalar_tree};
use fbdsdej::calculus::*;
use fbdsdej::noise::{make_grid, Driver, MarkSpace, NoiseSources, ScenarioTree};
use proptest::prelude::*;

fn scalar(values: &[f64]) -> IntegrandProcess {
    IntegrandProcess::new(1, 1, values.iter().map(|v| vec![*v]).collect(), Measurability::Unstamped).unwrap()
}

fn constant_on(tree: &ScenarioTree, c: f64) -> IntegrandProcess {
    let p = Process::constant(tree.grid().steps() + 1, tree.leaf_count(), &[c]);
    IntegrandProcess::from_process(p, 1, Measurability::Adapted).unwrap()
}

fn path_value(p: &Process, node: usize) -> &[f64] {
    &p.values[node]
}

#[test]
fn zero_integrands_give_zero() {
    let t = scalar_tree(3, &[0.5], NoiseSources::all());
    let zero = constant_on(&t, 0.0);
    let w = driver_path(&t, &[Driver::W(0)]);
    let b = driver_path(&t, &[Driver::B(0)]);
    let g = t.grid();
    assert!(forward_integral(g, &zero, &w, 0.0, 1.0).unwrap().iter().all(|v| *v == 0.0));
    assert!(backward_integral(g, &zero, &b, 0.0, 1.0).unwrap().iter().all(|v| *v == 0.0));
    let counts = jump_count_path(&t);
    let k = IntegrandProcess::from_process(Process::constant(4, t.leaf_count(), &[0.0]), 1, Measurability::Adapted).unwrap();
    assert!(jump_integral(g, &k, &counts, t.marks(), 0.0, 1.0).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn constant_integrands_telescope() {
    let t = scalar_tree(4, &[], NoiseSources::all());
    let h = constant_on(&t, 1.5);
    let w = driver_path(&t, &[Driver::W(0)]);
    let b = driver_path(&t, &[Driver::B(0)]);
    let g = t.grid();
    let fw = forward_integral(g, &h, &w, 0.25, 0.75).unwrap();
    let want: Vec<f64> = path_value(&w, 3).iter().zip(path_value(&w, 1)).map(|(x, y)| 1.5 * (x - y)).collect();
    assert!(max_abs_diff(&fw, &want) < 1e-15);
    let bw = backward_integral(g, &h, &b, 0.0, 1.0).unwrap();
    let same = forward_integral(g, &h, &b, 0.0, 1.0).unwrap();
    assert_eq!(bw, same);
}

#[test]
fn defining_sums_on_a_two_step_path() {
    let grid = make_grid(1.0, 2).unwrap();
    let x = Process::new(1, vec![vec![0.0], vec![1.0], vec![0.0]]).unwrap();
    assert_eq!(forward_integral(&grid, &scalar(&[1.0, 2.0, 0.0]), &x, 0.0, 1.0).unwrap(), vec![-1.0]);
    assert_eq!(backward_integral(&grid, &scalar(&[0.0, 2.0, 3.0]), &x, 0.0, 1.0).unwrap(), vec![-1.0]);
}

#[test]
fn compensated_jump_on_one_step() {
    let t = scalar_tree(1, &[0.125], NoiseSources { w: false, b: false, jumps: true });
    let k = constant_on(&t, 1.0);
    let counts = jump_count_path(&t);
    let out = jump_integral(t.grid(), &k, &counts, t.marks(), 0.0, 1.0).unwrap();
    let jumped = path_value(&counts, 1);
    for (v, n) in out.iter().zip(jumped) {
        let want = if *n == 1.0 { 0.875 } else { -0.125 };
        assert!((v - want).abs() < 1e-15);
    }
    assert!(jumped.contains(&1.0) && jumped.contains(&0.0));
}

#[test]
fn no_marks_no_jump_integral() {
    let grid = make_grid(1.0, 3).unwrap();
    let counts = Process::constant(4, 2, &[0.0]);
    let k = IntegrandProcess { rows: 1, cols: 0, values: vec![vec![]; 4], stamp: Measurability::Unstamped };
    let out = jump_integral(&grid, &k, &counts, &MarkSpace::empty(), 0.0, 1.0).unwrap();
    assert!(out.iter().all(|v| *v == 0.0));
}

#[test]
fn mark_mismatch_is_rejected() {
    let t = scalar_tree(2, &[0.5], NoiseSources::all());
    let k = IntegrandProcess::from_process(Process::constant(3, t.leaf_count(), &[1.0, 1.0]), 1, Measurability::Adapted).unwrap();
    assert!(jump_integral(t.grid(), &k, &jump_count_path(&t), t.marks(), 0.0, 1.0).is_err());
}

#[test]
fn reversal_of_processes() {
    let p = Process::new(1, vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    assert_eq!(reverse_time(&p).values, vec![vec![3.0], vec![2.0], vec![1.0]]);
    let c = Process::constant(3, 2, &[4.0]);
    assert_eq!(reverse_time(&c), c);
    let b = Process::new(1, vec![vec![0.0], vec![0.7], vec![0.2]]).unwrap();
    let rb = reverse_driver(&b);
    assert_eq!(rb.values[0], vec![0.0]);
    assert!((rb.values[2][0] - (-0.2)).abs() < 1e-15);
}

#[test]
fn unit_integrand_reversal_identity() {
    let t = scalar_tree(4, &[], NoiseSources::all());
    let b = driver_path(&t, &[Driver::B(0)]);
    let h = constant_on(&t, 1.0);
    for i in 0..=4 {
        let r = check_reversal_identities(t.grid(), &h, &b, t.grid().node(i)).unwrap();
        let tail = &r.identities[1];
        let want: Vec<f64> = b.values[4].iter().zip(&b.values[i]).map(|(x, y)| x - y).collect();
        assert!(max_abs_diff(&tail.lhs, &want) < 1e-15);
        assert_eq!(r.max_deviation, 0.0);
    }
}

#[test]
fn wrong_endpoint_is_detected() {
    let t = scalar_tree(3, &[], NoiseSources::all());
    let b = driver_path(&t, &[Driver::B(0)]);
    let h = random_adapted_integrand(&t, 9, 1, 1);
    let r = check_reversal_identities_with(t.grid(), &h, &b, 0.0, Endpoint::Left).unwrap();
    assert!(r.max_deviation > 1e-3);
}

#[test]
fn backward_brownian_tail_is_a_backward_martingale() {
    let t = scalar_tree(3, &[], NoiseSources::all());
    let b = driver_path(&t, &[Driver::B(0)]);
    let tail = backward_tail_process(t.grid(), &constant_on(&t, 1.0), &b).unwrap();
    let v = is_backward_martingale(&t, &tail).unwrap();
    assert!(v.is_martingale);
    assert!(v.violation < 1e-14);
}

#[test]
fn backward_integrals_of_adapted_integrands_are_backward_martingales() {
    for trial in 0..20u64 {
        let t = scalar_tree(1 + (trial as usize) % 3, &[], NoiseSources::all());
        let h = random_backward_integrand(&t, 100 + trial).unwrap();
        assert!(h.verify_measurability(&t).unwrap() <= 1e-12);
        let b = driver_path(&t, &[Driver::B(0)]);
        let m = backward_tail_process(t.grid(), &h, &b).unwrap();
        let v = is_backward_martingale(&t, &m).unwrap();
        assert!(v.is_martingale, "trial {trial}: {}", v.violation);
    }
}

#[test]
fn forward_brownian_motion_is_not_a_backward_martingale() {
    let t = scalar_tree(2, &[], NoiseSources::all());
    let w = driver_path(&t, &[Driver::W(0)]);
    let v = is_backward_martingale(&t, &w).unwrap();
    assert!(!v.is_martingale);
    assert!(v.violation > 0.1);
}

#[test]
fn anticipating_integrand_breaks_the_martingale_property() {
    let t = scalar_tree(3, &[], NoiseSources::all());
    let b = driver_path(&t, &[Driver::B(0)]);
    let m = backward_tail_process(t.grid(), &anticipating_integrand(&t), &b).unwrap();
    assert!(!is_backward_martingale(&t, &m).unwrap().is_martingale);
    assert!(random_backward_integrand(&t, 3).unwrap().verify_measurability(&t).is_ok());
    let mut bad = anticipating_integrand(&t);
    bad.stamp = Measurability::BackwardBrownian;
    assert!(bad.verify_measurability(&t).is_err());
}

fn product(case: &str, steps: usize) -> ItoProductReport {
    let (marks, sources): (&[f64], _) = match case {
        "deterministic" => (&[], NoiseSources::none()),
        "backward" => (&[], NoiseSources { w: false, b: true, jumps: false }),
        _ => (&[0.5], NoiseSources { w: false, b: false, jumps: true }),
    };
    let t = scalar_tree(steps, marks, sources);
    let spec = match case {
        "deterministic" => SemimartingaleSpec::constant(&t, &[1.0], &[1.0], &[0.0], &[0.0], &[]).unwrap(),
        "backward" => SemimartingaleSpec::constant(&t, &[0.0], &[0.0], &[1.0], &[0.0], &[]).unwrap(),
        _ => SemimartingaleSpec::constant(&t, &[0.0], &[0.0], &[0.0], &[0.0], &[1.0]).unwrap(),
    };
    ito_product_check(&spec, &spec, &t, 1.0).unwrap()
}

#[test]
fn deterministic_product_is_integration_by_parts() {
    let r = product("deterministic", 8);
    assert!((r.lhs - 4.0).abs() < 1e-12);
    assert!(r.discrepancy.abs() <= r.dt);
    assert_eq!(r.jump_bracket, 0.0);
}

#[test]
fn backward_brownian_square_has_mean_t() {
    let r = product("backward", 8);
    assert!((r.lhs - 1.0).abs() < 1e-12);
    assert!((r.cross_left - 1.0).abs() < 1e-12);
    assert!((r.cross_right - 1.0).abs() < 1e-12);
    assert!((r.backward_bracket + 1.0).abs() < 1e-12);
    assert!(r.discrepancy.abs() < 1e-12);
}

#[test]
fn compensated_jump_square_has_mean_lambda_t() {
    let r = product("jump", 8);
    assert!((r.jump_bracket - 0.5).abs() < 1e-12);
    assert!((r.lhs - 0.5).abs() <= 2.0 * r.dt);
    assert!(r.discrepancy.abs() <= 2.0 * r.dt);
}

#[test]
fn product_discrepancy_is_first_order() {
    for case in ["deterministic", "jump"] {
        let d: Vec<f64> = [2, 4, 8].iter().map(|&n| product(case, n).discrepancy.abs()).collect();
        for w in d.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.35..=0.65).contains(&ratio), "{case}: {d:?}");
        }
    }
}

#[test]
fn product_check_rejects_mismatched_specs() {
    let t = scalar_tree(2, &[], NoiseSources::all());
    let a = SemimartingaleSpec::constant(&t, &[1.0], &[1.0], &[0.0], &[0.0], &[]).unwrap();
    let b = SemimartingaleSpec::constant(&t, &[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[]).unwrap();
    assert!(ito_product_check(&a, &b, &t, 1.0).is_err());
}

#[test]
fn default_suite_passes() {
    let cfg = CalculusSuiteConfig { trials: 5, ..CalculusSuiteConfig::default() };
    let rep = run_calculus_suite(&cfg).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.reversal_max_deviation <= 1e-12);
    assert_eq!(rep.product.len(), 9);
}

#[test]
fn wrong_endpoint_suite_fails() {
    let cfg = CalculusSuiteConfig { trials: 2, wrong_endpoint: true, ..CalculusSuiteConfig::default() };
    let rep = run_calculus_suite(&cfg).unwrap();
    assert!(!rep.pass);
    assert!(rep.reversal_max_deviation > 1e-6);
}

#[test]
fn suite_without_jumps_reports_zero_jump_terms() {
    let cfg = CalculusSuiteConfig { trials: 1, jump_intensity: 0.0, ..CalculusSuiteConfig::default() };
    let rep = run_calculus_suite(&cfg).unwrap();
    assert!(rep.product.iter().all(|r| r.jump_bracket == 0.0));
    assert!(rep.pass);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reversal_identities_hold_exactly(steps in 1usize..=6, seed in any::<u64>()) {
        let t = scalar_tree(steps, &[], NoiseSources::all());
        let h = random_adapted_integrand(&t, seed, 1, 1);
        let b = driver_path(&t, &[Driver::B(0)]);
        for i in 0..=steps {
            let r = check_reversal_identities(t.grid(), &h, &b, t.grid().node(i)).unwrap();
            prop_assert!(r.max_deviation <= 1e-12, "{:?}", r.identities.iter().map(|c| c.deviation).collect::<Vec<_>>());
        }
    }

    #[test]
    fn double_reversal_is_identity(steps in 1usize..=4, seed in any::<u64>()) {
        let t = scalar_tree(steps, &[], NoiseSources::all());
        let h = random_adapted_integrand(&t, seed, 1, 2);
        prop_assert_eq!(reverse_integrand(&reverse_integrand(&h)), h);
        let b = driver_path(&t, &[Driver::B(0)]);
        let bb = reverse_driver(&reverse_driver(&b));
        for (x, y) in bb.values.iter().zip(&b.values) {
            prop_assert!(max_abs_diff(x, y) < 1e-14);
        }
    }

    #[test]
    fn forward_integral_has_zero_mean(steps in 1usize..=4, seed in any::<u64>()) {
        let t = scalar_tree(steps, &[], NoiseSources::all());
        let h = random_adapted_integrand(&t, seed, 1, 1);
        let w = driver_path(&t, &[Driver::W(0)]);
        let v = forward_integral(t.grid(), &h, &w, 0.0, 1.0).unwrap();
        prop_assert!(expect(&t, &v).abs() < 1e-12);
    }
}
