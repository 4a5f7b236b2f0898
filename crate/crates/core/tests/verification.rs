mod common;

use common::{instance, scalar_tree, zero_problem, INSTANCES};
use fbdsdej::coefficients::{Coefficients, CoefficientSet};
use fbdsdej::continuation::{continuation_solve, ContinuationConfig};
use fbdsdej::field::{composite_distance, SolutionField};
use fbdsdej::noise::{make_grid, Dims, MarkSpace, NoiseSources, ScenarioTree, TreeConfig};
use fbdsdej::verification::*;
use fbdsdej::Error;
use proptest::prelude::*;

fn spec(theta1: f64, theta2: f64, beta1: f64, beta2: f64, psi0: f64, phi0: f64) -> LinearBvpSpec {
    LinearBvpSpec { theta1, theta2, beta1, beta2, psi0, phi0, horizon: 1.0 }
}

fn deterministic(steps: usize) -> ScenarioTree {
    scalar_tree(steps, &[], NoiseSources::none())
}

#[test]
fn uncoupled_oracle_is_constant() {
    let o = linear_bvp_oracle(&spec(0.0, 0.0, 0.5, 0.0, 2.0, 1.0), 4).unwrap();
    assert!(o.y.iter().all(|v| (v - 2.0).abs() < 1e-15));
    assert!(o.big_y.iter().all(|v| (v - 2.0).abs() < 1e-15));
    let o = linear_bvp_oracle(&spec(0.0, 0.0, 0.0, 1.0, 0.0, 1.0), 4).unwrap();
    assert!(o.big_y.iter().all(|v| (v - 1.0).abs() < 1e-15));
    assert!(o.y.iter().all(|v| (v + 1.0).abs() < 1e-15));
}

#[test]
fn exponential_oracle() {
    let o = linear_bvp_oracle(&LinearBvpSpec::exp_decay(), 8).unwrap();
    assert_eq!(o.t.len(), 9);
    assert_eq!(o.t[8], 1.0);
    for (i, t) in o.t.iter().enumerate() {
        assert!((o.y[i] - (-t).exp()).abs() < 1e-15);
        assert!((o.big_y[i] - (-t).exp()).abs() < 1e-15);
    }
}

#[test]
fn oracle_rejects_bad_input() {
    assert!(matches!(linear_bvp_oracle(&LinearBvpSpec::exp_decay(), 0), Err(Error::EmptyGrid)));
    let mut s = LinearBvpSpec::exp_decay();
    s.horizon = 0.0;
    assert!(matches!(linear_bvp_oracle(&s, 4), Err(Error::NonPositiveHorizon(_))));
    assert!(matches!(linear_bvp_oracle(&spec(-1.0, 1.0, 0.0, 0.0, 1.0, 0.0), 4), Err(Error::Precondition(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_satisfies_the_boundary_conditions(
        theta1 in 0.0f64..2.0, theta2 in 0.0f64..2.0, beta1 in 0.0f64..2.0, beta2 in 0.0f64..2.0,
        psi0 in -2.0f64..2.0, phi0 in -2.0f64..2.0,
    ) {
        let s = spec(theta1, theta2, beta1, beta2, psi0, phi0);
        let o = linear_bvp_oracle(&s, 16).unwrap();
        prop_assert!((o.y[0] + beta2 * o.big_y[0] - psi0).abs() < 1e-12);
        prop_assert!((o.big_y[16] - beta1 * o.y[16] - phi0).abs() < 1e-12);
    }

    #[test]
    fn oracle_satisfies_the_ode(theta1 in 0.1f64..2.0, theta2 in 0.1f64..2.0, psi0 in -2.0f64..2.0) {
        let s = spec(theta1, theta2, 1.0, 0.5, psi0, 0.3);
        let n = 4096;
        let o = linear_bvp_oracle(&s, n).unwrap();
        let dt = 1.0 / n as f64;
        for i in (1..n).step_by(512) {
            let dy = (o.y[i + 1] - o.y[i - 1]) / (2.0 * dt);
            let dbig = (o.big_y[i + 1] - o.big_y[i - 1]) / (2.0 * dt);
            prop_assert!((dy + theta2 * o.big_y[i]).abs() < 1e-5);
            prop_assert!((dbig + theta1 * o.y[i]).abs() < 1e-5);
        }
    }
}

#[test]
fn brute_force_on_the_zero_problem_is_zero() {
    let t = scalar_tree(2, &[0.5], NoiseSources::all());
    let out = brute_force_fixed_point(&zero_problem(&[0.5]), &t, 1e-12, &BruteForceConfig::default()).unwrap();
    assert!(out.field.to_flat().iter().all(|v| v.abs() < 1e-12));
    assert!(out.spread <= 1e-11);
    assert_eq!(out.iterations.len(), 8);
}

#[test]
fn brute_force_agrees_with_continuation() {
    for name in INSTANCES {
        let (t, c) = instance(name);
        let solved = continuation_solve(&t, &c, &ContinuationConfig::default()).unwrap();
        let bf = brute_force_fixed_point(&c, &t, 1e-11, &BruteForceConfig::default()).unwrap();
        let d = composite_distance(&t, &solved.field, &bf.field).unwrap();
        assert!(d <= 1e-8, "{name}: {d:e}");
    }
}

#[test]
fn damped_brute_force_matches_newton() {
    let (t, c) = instance("jumps");
    let newton = brute_force_fixed_point(&c, &t, 1e-11, &BruteForceConfig::default()).unwrap();
    let cfg = BruteForceConfig { method: BruteForceMethod::Damped { damping: 0.2 }, restarts: 2, ..Default::default() };
    match brute_force_fixed_point(&c, &t, 1e-11, &cfg) {
        Ok(damped) => assert!(composite_distance(&t, &newton.field, &damped.field).unwrap() <= 1e-8),
        Err(e) => assert!(matches!(e, Error::NoConvergence(_)), "{e}"),
    }
}

#[test]
fn brute_force_guards() {
    let (t, c) = instance("jumps");
    let cap = BruteForceConfig { max_unknowns: 3, ..Default::default() };
    assert!(matches!(brute_force_fixed_point(&c, &t, 1e-10, &cap), Err(Error::Unsupported(_))));
    let none = BruteForceConfig { restarts: 0, ..Default::default() };
    assert!(matches!(brute_force_fixed_point(&c, &t, 1e-10, &none), Err(Error::Config(_))));
    let damp = BruteForceConfig { method: BruteForceMethod::Damped { damping: 1.5 }, ..Default::default() };
    assert!(matches!(brute_force_fixed_point(&c, &t, 1e-10, &damp), Err(Error::Config(_))));
    let other = scalar_tree(3, &[], NoiseSources::all());
    assert!(matches!(brute_force_fixed_point(&c, &other, 1e-10, &BruteForceConfig::default()), Err(Error::Shape(_))));
}

#[test]
fn uniqueness_on_the_zero_problem() {
    let t = scalar_tree(2, &[0.5], NoiseSources::all());
    let rep = uniqueness_probe(&t, &zero_problem(&[0.5]), &ContinuationConfig::default(), 3, 1).unwrap();
    assert_eq!(rep.trials, 3);
    assert_eq!(rep.distances.len(), 3);
    assert!(rep.within(2.0));
}

#[test]
fn uniqueness_on_a_coupled_instance() {
    let (t, c) = instance("skew");
    let cfg = ContinuationConfig::default();
    let rep = uniqueness_probe(&t, &c, &cfg, 5, 9).unwrap();
    assert_eq!(rep.distances.len(), 10);
    assert!(rep.within(2.0), "{rep:?}");
    assert!(matches!(uniqueness_probe(&t, &c, &cfg, 1, 9), Err(Error::Config(_))));
}

#[test]
fn log_slope_examples() {
    let x = [1.0, 2.0, 4.0, 8.0];
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
    assert!((log_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(log_slope(&x, &[1.0, 1.0, 0.0, 1.0]), None);
    assert_eq!(log_slope(&[1.0], &[1.0]), None);
    assert_eq!(log_slope(&[2.0, 2.0], &[1.0, 3.0]), None);
}

#[test]
fn mean_error_of_the_oracle_itself_is_zero() {
    let n = 4;
    let t = deterministic(n);
    let o = linear_bvp_oracle(&LinearBvpSpec::exp_decay(), n).unwrap();
    let mut u = SolutionField::zeros(&t, CoefficientSet::layout(&common::exp_decay(&[])));
    for i in 0..=n {
        u.y[i][0] = o.y[i];
        u.big_y[i][0] = o.big_y[i];
    }
    assert_eq!(mean_error(&t, &u, &o), 0.0);
    u.y[2][0] += 0.25;
    assert!((mean_error(&t, &u, &o) - 0.25).abs() < 1e-15);
}

fn build_exp(n: usize) -> fbdsdej::Result<(ScenarioTree, CoefficientSet)> {
    let grid = make_grid(1.0, n)?;
    let t = ScenarioTree::build(grid, Dims::scalar(), &MarkSpace::empty(), &TreeConfig::with_sources(NoiseSources::none()))?;
    Ok((t, LinearBvpSpec::exp_decay().coefficients(MarkSpace::empty())?))
}

#[test]
fn decay_study_is_first_order() {
    let s = decay_study(build_exp, &[16, 32, 64], &ContinuationConfig::default(), Some(&LinearBvpSpec::exp_decay())).unwrap();
    assert_eq!(s.slope_of, "error");
    assert_eq!(s.rows.len(), 3);
    let slope = s.slope.unwrap();
    assert!((slope - 1.0).abs() < 0.1, "{slope}");
    assert!(s.rows.windows(2).all(|w| w[1].error.unwrap() < w[0].error.unwrap()));
}

#[test]
fn decay_study_of_the_zero_problem_has_no_slope() {
    let build = |n: usize| Ok((deterministic(n), zero_problem(&[])));
    let s = decay_study(build, &[4, 8], &ContinuationConfig::default(), None).unwrap();
    assert_eq!(s.slope_of, "residual");
    assert_eq!(s.slope, None);
    assert!(s.rows.iter().all(|r| r.residual_max == 0.0));
}
