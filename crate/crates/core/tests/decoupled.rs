mod common;

use common::{canonical, params, scalar_tree, tree, zero_problem};
use fbdsdej::coefficients::{Coefficients, Layout, Loadings};
use fbdsdej::continuation::Variant;
use fbdsdej::decoupled::*;
use fbdsdej::field::SolutionField;
use fbdsdej::noise::{keyed_rng, Dims, Driver, MarkSpace, NoiseModel, NoiseSources, ScenarioTree};
use fbdsdej::Error;
use proptest::prelude::*;
use rand::Rng;

fn layout(t: &ScenarioTree) -> Layout {
    Layout::new(t.dims(), t.marks())
}

fn constant(t: &ScenarioTree, c: ConstantForcing) -> FrozenForcing {
    FrozenForcing::constant(t, layout(t), &c).unwrap()
}

fn mean(t: &ScenarioTree, values: &[f64], layer: usize) -> f64 {
    SolutionField::layer_mean(t, values, layer, 1)[0]
}

#[test]
fn constant_terminal_value_propagates() {
    let t = scalar_tree(3, &[0.5], NoiseSources::all());
    let fc = constant(&t, ConstantForcing { terminal: vec![2.5], ..Default::default() });
    let bc = solve_backward_component(&t, &fc).unwrap();
    for i in 0..=3 {
        assert!(bc.big_y[i].iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert!(bc.big_z[i].iter().all(|v| v.abs() < 1e-14));
        assert!(bc.k[i].iter().all(|v| v.abs() < 1e-14));
    }
}

#[test]
fn unit_backward_drift_integrates_to_minus_one() {
    let t = scalar_tree(4, &[], NoiseSources::all());
    let fc = constant(&t, ConstantForcing { f: vec![1.0], ..Default::default() });
    let bc = solve_backward_component(&t, &fc).unwrap();
    assert!(bc.big_y[0].iter().all(|v| (v + 1.0).abs() < 1e-14));
    assert!(bc.big_y[2].iter().all(|v| (v + 0.5).abs() < 1e-14));
}

#[test]
fn terminal_brownian_value_is_represented_exactly() {
    let t = scalar_tree(1, &[], NoiseSources { w: true, b: false, jumps: false });
    let wt = t.leaf_path(Driver::W(0)).pop().unwrap();
    let leaves = LeafForcing {
        b: vec![vec![0.0; t.leaf_count()]; 2],
        sigma: vec![vec![0.0; t.leaf_count()]; 2],
        phi: vec![vec![]; 2],
        f: vec![vec![0.0; t.leaf_count()]; 2],
        g: vec![vec![0.0; t.leaf_count()]; 2],
        initial: vec![0.0; t.leaf_count()],
        terminal: wt,
    };
    let fc = FrozenForcing::from_leaves(&t, layout(&t), &leaves).unwrap();
    let bc = solve_backward_component(&t, &fc).unwrap();
    assert!(bc.big_y[0].iter().all(|v| v.abs() < 1e-15));
    assert!(bc.big_z[0].iter().all(|v| (v - 1.0).abs() < 1e-15));
}

#[test]
fn unadapted_forcing_is_rejected() {
    let t = scalar_tree(2, &[], NoiseSources::all());
    let leaves = t.leaf_count();
    let mut f = vec![vec![0.0; leaves]; 3];
    f[0] = t.leaf_increment(0, Driver::W(0));
    let lf = LeafForcing {
        b: vec![vec![0.0; leaves]; 3],
        sigma: vec![vec![0.0; leaves]; 3],
        phi: vec![vec![]; 3],
        f,
        g: vec![vec![0.0; leaves]; 3],
        initial: vec![0.0; leaves],
        terminal: vec![0.0; leaves],
    };
    assert!(matches!(FrozenForcing::from_leaves(&t, layout(&t), &lf), Err(Error::Measurability(_))));
}

#[test]
fn unit_forward_drift_gives_time() {
    let t = scalar_tree(4, &[0.5], NoiseSources::all());
    let fc = constant(&t, ConstantForcing { b: vec![1.0], ..Default::default() });
    let fw = solve_forward_component(&t, &fc).unwrap();
    for i in 0..=4 {
        let ti = t.grid().node(i);
        assert!(fw.y[i].iter().all(|v| (v - ti).abs() < 1e-14), "layer {i}");
        assert!(fw.z[i].iter().all(|v| v.abs() < 1e-14));
    }
}

#[test]
fn unit_diffusion_on_one_step() {
    let t = scalar_tree(1, &[], NoiseSources::all());
    let fc = constant(&t, ConstantForcing { sigma: vec![1.0], ..Default::default() });
    let fw = solve_forward_component(&t, &fc).unwrap();
    let dt = t.grid().dt();
    assert!(fw.y[1].iter().all(|v| (v.abs() - dt.sqrt()).abs() < 1e-15));
    assert!(fw.y[1].iter().any(|v| *v > 0.0) && fw.y[1].iter().any(|v| *v < 0.0));
}

#[test]
fn shape_mismatch_is_rejected() {
    let t = scalar_tree(2, &[], NoiseSources::all());
    let other = scalar_tree(3, &[], NoiseSources::all());
    let fc = FrozenForcing::zeros(&other, layout(&other));
    assert!(matches!(solve_backward_component(&t, &fc), Err(Error::Shape(_))));
    let bad = FrozenForcing::constant(&t, layout(&t), &ConstantForcing { b: vec![1.0, 2.0], ..Default::default() });
    assert!(matches!(bad, Err(Error::Shape(_))));
}

#[test]
fn decoupled_level_forward_first() {
    let t = scalar_tree(3, &[0.5], NoiseSources::all());
    let c = canonical(params(1.0, 1.0, 1.0, 0.0), &[0.5], 0.0, 0.0, Loadings::default());
    let fc = constant(&t, ConstantForcing { initial: vec![1.0], ..Default::default() });
    let u = solve_alpha0(&t, &c, Variant::ForwardFirst, &fc).unwrap();
    assert!(u.y.iter().flatten().all(|v| (v - 1.0).abs() < 1e-14));
    assert!(u.big_y[0].iter().all(|v| (v - 2.0).abs() < 1e-14));
    let sys = LevelSystem { coeffs: &c, alpha: 0.0, variant: Variant::ForwardFirst, forcing: &fc };
    assert!(sys.residual(&t, &u).unwrap().max() < 1e-13);
}

#[test]
fn decoupled_level_backward_first() {
    let t = scalar_tree(3, &[0.5], NoiseSources::all());
    let c = canonical(params(0.0, 1.0, 0.0, 1.0), &[0.5], 0.0, 0.0, Loadings::default());
    let fc = constant(&t, ConstantForcing { initial: vec![1.0], ..Default::default() });
    let u = solve_alpha0(&t, &c, Variant::BackwardFirst, &fc).unwrap();
    assert!(u.big_y.iter().flatten().all(|v| v.abs() < 1e-14));
    assert!(u.y.iter().flatten().all(|v| (v - 1.0).abs() < 1e-14));
    let sys = LevelSystem { coeffs: &c, alpha: 0.0, variant: Variant::BackwardFirst, forcing: &fc };
    assert!(sys.residual(&t, &u).unwrap().max() < 1e-13);
}

#[test]
fn residual_sees_a_perturbed_solution() {
    let t = scalar_tree(3, &[0.5], NoiseSources::all());
    let c = zero_problem(&[0.5]);
    let fc = constant(&t, ConstantForcing { f: vec![0.3], terminal: vec![1.0], ..Default::default() });
    let mut u = solve_alpha0(&t, &c, Variant::ForwardFirst, &fc).unwrap();
    let sys = LevelSystem { coeffs: &c, alpha: 0.0, variant: Variant::ForwardFirst, forcing: &fc };
    assert!(sys.residual(&t, &u).unwrap().max() < 1e-13);
    u.big_y[1].iter_mut().for_each(|v| *v += 1.0);
    assert!(sys.residual(&t, &u).unwrap().backward_max >= 1.0 - 1e-12);
}

fn random_forcing(t: &ScenarioTree, seed: u64) -> FrozenForcing {
    let mut fc = FrozenForcing::zeros(t, layout(t));
    let mut rng = keyed_rng(seed, 7, 0, 0);
    let mut fill = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
    for layers in [&mut fc.b, &mut fc.sigma, &mut fc.phi, &mut fc.f, &mut fc.g] {
        layers.iter_mut().for_each(&mut fill);
    }
    fill(&mut fc.initial);
    fill(&mut fc.terminal);
    fc
}

fn mixed_tree(steps: usize) -> ScenarioTree {
    tree(steps, Dims::new(1, 1, 1, 1).unwrap(), &MarkSpace::new(vec![0.5]).unwrap(), NoiseSources::all())
}

#[test]
fn forward_equation_via_time_reversal() {
    for seed in 0..4 {
        let t = mixed_tree(3);
        let fc = random_forcing(&t, seed);
        let direct = solve_forward_component(&t, &fc).unwrap();
        let rev = solve_forward_via_reversal(&t, &fc).unwrap();
        for i in 0..=3 {
            assert!(common::max_abs_diff(&direct.y[i], &rev.y[i]) < 1e-13, "y layer {i}");
            assert!(common::max_abs_diff(&direct.z[i], &rev.z[i]) < 1e-13, "z layer {i}");
        }
    }
    assert!(solve_forward_via_reversal(&mixed_tree(2).reversed(), &random_forcing(&mixed_tree(2), 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forced_sweeps_satisfy_the_discrete_equations(steps in 1usize..=3, seed in any::<u64>(), jumps in any::<bool>()) {
        // one forward driver per step, so every step has a complete representation
        let sources = NoiseSources { w: !jumps, b: true, jumps };
        let t = tree(steps, Dims::scalar(), &MarkSpace::new(vec![0.5]).unwrap(), sources);
        let c = zero_problem(&[0.5]);
        let fc = random_forcing(&t, seed);
        for variant in [Variant::ForwardFirst, Variant::BackwardFirst] {
            let u = solve_alpha0(&t, &c, variant, &fc).unwrap();
            let sys = LevelSystem { coeffs: &c, alpha: 0.0, variant, forcing: &fc };
            let r = sys.residual(&t, &u).unwrap();
            prop_assert!(r.max() < 1e-12, "{:?}", r);
        }
    }

    #[test]
    fn means_follow_the_drifts(steps in 1usize..=3, seed in any::<u64>()) {
        let t = mixed_tree(steps);
        let fc = random_forcing(&t, seed);
        let dt = t.grid().dt();
        let bc = solve_backward_component(&t, &fc).unwrap();
        let drift: f64 = (1..=steps).map(|i| mean(&t, &fc.f[i], i) * dt).sum();
        let want = mean(&t, &fc.terminal, steps) - drift;
        prop_assert!((mean(&t, &bc.big_y[0], 0) - want).abs() < 1e-12);
        let fw = solve_forward_component(&t, &fc).unwrap();
        let drift: f64 = (0..steps).map(|i| mean(&t, &fc.b[i], i) * dt).sum();
        let want = mean(&t, &fc.initial, 0) + drift;
        prop_assert!((mean(&t, &fw.y[steps], steps) - want).abs() < 1e-12);
    }

    #[test]
    fn backward_values_are_conditional_expectations(steps in 1usize..=3, seed in any::<u64>()) {
        // Y_i = E[Y_{i+1} − f_{i+1}Δt − g_{i+1}ΔB_i | F_i], and Z_i, k_i are the regression coefficients
        let t = mixed_tree(steps);
        let fc = random_forcing(&t, seed);
        let dt = t.grid().dt();
        let bc = solve_backward_component(&t, &fc).unwrap();
        for i in 0..steps {
            let next = t.expand(i + 1, &bc.big_y[i + 1], 1);
            let f = t.expand(i + 1, &fc.f[i + 1], 1);
            let g = t.expand(i + 1, &fc.g[i + 1], 1);
            let db = t.path_increment(i, Driver::B(0));
            let x: Vec<f64> = (0..next.len()).map(|q| next[q] - f[q] * dt - g[q] * db[q]).collect();
            let ce = fbdsdej::noise::conditional_expectation(&t, &x, 1, &fbdsdej::noise::InformationIndex::at(i)).unwrap();
            prop_assert!(common::max_abs_diff(&ce, &t.expand(i, &bc.big_y[i], 1)) < 1e-12);
            let dw = t.path_increment(i, Driver::W(0));
            let xw: Vec<f64> = x.iter().zip(&dw).map(|(a, b)| a * b / dt).collect();
            let z = fbdsdej::noise::conditional_expectation(&t, &xw, 1, &fbdsdej::noise::InformationIndex::at(i)).unwrap();
            prop_assert!(common::max_abs_diff(&z, &t.expand(i, &bc.big_z[i], 1)) < 1e-12);
        }
    }
}

#[test]
fn two_forward_drivers_leave_an_orthogonal_remainder() {
    let t = mixed_tree(1);
    let mut fc = FrozenForcing::zeros(&t, layout(&t));
    let dw = t.path_increment(0, Driver::W(0));
    let dn = t.path_increment(0, Driver::Jump(0));
    let product: Vec<f64> = dw.iter().zip(&dn).map(|(a, b)| a * b).collect();
    fc.terminal = t.compress_layer(1, &product, 1);
    let bc = solve_backward_component(&t, &fc).unwrap();
    assert!(bc.big_y[0].iter().all(|v| v.abs() < 1e-15));
    assert!(bc.big_z[0].iter().chain(&bc.k[0]).all(|v| v.abs() < 1e-15));
    let c = zero_problem(&[0.5]);
    let sys = LevelSystem { coeffs: &c, alpha: 0.0, variant: Variant::ForwardFirst, forcing: &fc };
    let u = solve_alpha0(&t, &c, Variant::ForwardFirst, &fc).unwrap();
    let r = sys.residual(&t, &u).unwrap();
    let p = 0.5 * t.grid().dt();
    assert!((r.backward_h2 - t.grid().dt() * t.grid().dt() * p * (1.0 - p)).abs() < 1e-14);
}

#[test]
fn delta_forcing_vanishes_at_zero_step() {
    let (t, c) = common::instance("jumps");
    let u = SolutionField::random(&t, c.layout(), 3, 1.0);
    let fc = delta_forcing(&t, &c, Variant::ForwardFirst, 0.0, &u);
    assert!(fc.b.iter().chain(&fc.f).flatten().all(|v| *v == 0.0));
    assert!(fc.initial.iter().chain(&fc.terminal).all(|v| *v == 0.0));
}
