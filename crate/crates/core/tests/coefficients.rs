mod common;

use common::{canonical, coupling, params, unit_r, zero_problem};
use fbdsdej::coefficients::*;
use fbdsdej::continuation::Variant;
use fbdsdej::noise::{Dims, MarkSpace};
use fbdsdej::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn lip(c: f64, gamma: f64, gamma_prime: f64) -> LipschitzConstants {
    LipschitzConstants { c, gamma, gamma_prime }
}

fn zero_with(dims: Dims, r: DMatrix<f64>, mono: MonotoneParams, l: LipschitzConstants) -> CoefficientSet {
    CoefficientSet::zero(dims, MarkSpace::empty(), Coupling::new(r, mono, l, Orientation::Standard)).unwrap()
}

fn scalar_affine(marks: &[f64], mono: MonotoneParams, l: LipschitzConstants, edit: impl FnOnce(&mut AffineFamily)) -> CoefficientSet {
    let marks = MarkSpace::new(marks.to_vec()).unwrap();
    let lay = Layout::new(Dims::scalar(), &marks);
    let mut a = AffineFamily::zeros(lay);
    edit(&mut a);
    CoefficientSet::affine(Dims::scalar(), marks, Coupling::new(unit_r(), mono, l, Orientation::Standard), a).unwrap()
}

fn row(v: [f64; 5]) -> AffineMap {
    AffineMap::from_rows(&[v.to_vec()], None, 5).unwrap()
}

#[test]
fn assembled_map_with_identity_coupling() {
    let c = canonical(params(2.0, 3.0, 1.0, 1.0), &[0.5], 0.0, 0.0, Loadings::default());
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    let a = assemble_a(&c, 0.3, &c.layout().view(&v));
    assert_eq!(a.rt_f, vec![-2.0]);
    assert_eq!(a.r_b, vec![-6.0]);
    assert_eq!(a.rt_g, vec![-6.0]);
    assert_eq!(a.r_sigma, vec![-12.0]);
    assert_eq!(a.r_phi, vec![-15.0]);
}

#[test]
fn canonical_bracket_closed_form() {
    let (t1, t2, pi) = (0.7, 1.3, 0.5);
    let c = canonical(params(t1, t2, 1.0, 1.0), &[pi], 0.0, 0.0, Loadings::default());
    let lay = c.layout();
    let u = [0.3, -1.0, 2.0, 0.5, -0.25];
    let ub = [1.0, 1.0, -1.0, 0.0, 0.75];
    let d: Vec<f64> = u.iter().zip(&ub).map(|(a, b)| a - b).collect();
    let want = -t1 * (d[0] * d[0] + d[2] * d[2]) - t2 * (d[1] * d[1] + d[3] * d[3] + pi * d[4] * d[4]);
    let got = bracket(&c, 0.0, &lay.view(&u), &lay.view(&ub));
    assert!((got - want).abs() < 1e-14);
}

#[test]
fn sign_flipped_bracket_is_positive() {
    let theta = 0.8;
    let c = CoefficientSet::sign_flipped(
        Dims::scalar(),
        MarkSpace::empty(),
        coupling(unit_r(), params(theta, theta, 1.0, 1.0)),
        vec![0.0],
        vec![0.0],
        Loadings::default(),
    )
    .unwrap();
    let lay = c.layout();
    let got = bracket(&c, 0.0, &lay.view(&[1.0, 1.0, 0.0, 0.0]), &lay.view(&[0.0; 4]));
    assert!((got - 2.0 * theta).abs() < 1e-15);
}

#[test]
fn canonical_family_passes_monotonicity() {
    let c = canonical(params(1.0, 1.0, 1.0, 0.5), &[0.5, 2.0], 1.0, 0.2, Loadings::default());
    let rep = check_monotonicity(&c, &Sampler::gaussian(500, 1), 1e-9);
    assert!(rep.pass, "{rep:?}");
    assert!(rep.bracket.max_abs_margin < 1e-9);
    let rep = check_monotonicity(&c, &Sampler::sphere(500, 2), 1e-9);
    assert!(rep.pass);
}

#[test]
fn wrong_sign_terminal_map_fails_monotonicity() {
    let c = scalar_affine(&[0.5], params(1.0, 1.0, 1.0, 0.0), LipschitzConstants::default(), |a| {
        a.f = row([-1.0, 0.0, 0.0, 0.0, 0.0]);
        a.g = row([0.0, 0.0, -1.0, 0.0, 0.0]);
        a.b = row([0.0, -1.0, 0.0, 0.0, 0.0]);
        a.sigma = row([0.0, 0.0, 0.0, -1.0, 0.0]);
        a.phi = row([0.0, 0.0, 0.0, 0.0, -1.0]);
        a.h = AffineMap::from_rows(&[vec![-1.0]], None, 1).unwrap();
    });
    let rep = check_monotonicity(&c, &Sampler::gaussian(200, 3), 1e-9);
    assert!(!rep.pass);
    assert!(rep.bracket.worst_margin >= -1e-9);
    assert!(rep.terminal_map.worst_margin < -1.0);
    assert!(rep.terminal_map.witness.is_some());
}

#[test]
fn orientation_decides_which_family_passes() {
    let flipped = |o| {
        CoefficientSet::sign_flipped(
            Dims::scalar(),
            MarkSpace::new(vec![0.5]).unwrap(),
            coupling(unit_r(), params(1.0, 1.0, 1.0, 1.0)),
            vec![1.0],
            vec![0.0],
            Loadings::default(),
        )
        .unwrap()
        .with_orientation(o)
    };
    let sampler = Sampler::gaussian(300, 4);
    assert!(!check_monotonicity(&flipped(Orientation::Standard), &sampler, 1e-9).pass);
    assert!(check_monotonicity(&flipped(Orientation::Primed), &sampler, 1e-9).pass);
    let c = canonical(params(1.0, 1.0, 1.0, 1.0), &[0.5], 1.0, 0.0, Loadings::default());
    assert!(!check_monotonicity(&c.with_orientation(Orientation::Primed), &sampler, 1e-9).pass);
}

#[test]
fn zero_family_has_zero_lipschitz_ratios() {
    let rep = check_lipschitz(&zero_problem(&[0.5]), &Sampler::gaussian(200, 5));
    assert!(rep.pass);
    assert_eq!(rep.zero_norm, 0.0);
    for e in &rep.entries {
        assert_eq!(e.main_ratio, 0.0, "{}", e.name);
        assert_eq!(e.split_ratio.unwrap_or(0.0), 0.0);
    }
}

#[test]
fn canonical_family_respects_declared_constants() {
    let build = |c| {
        CoefficientSet::canonical(
            Dims::scalar(),
            MarkSpace::new(vec![0.5]).unwrap(),
            Coupling::new(unit_r(), params(1.0, 1.0, 1.0, 0.5), lip(c, 0.5, 0.25), Orientation::Standard),
            vec![1.0],
            vec![0.0],
            Loadings::default(),
        )
        .unwrap()
    };
    let rep = check_lipschitz(&build(2.0), &Sampler::sphere(400, 6));
    assert!(rep.pass, "{:?}", rep.entries);
    assert_eq!(rep.entries.len(), 7);
    // φ reads one mark of k while |||k|||² weights it by Π = 0.5
    let rep = check_lipschitz(&build(1.0), &Sampler::sphere(400, 6));
    let phi = rep.entries.iter().find(|e| e.name == "phi").unwrap();
    assert!(!phi.pass && (phi.main_ratio - 2.0).abs() < 0.1);
}

#[test]
fn forward_diffusion_reading_z_breaks_the_split_constant() {
    let c = scalar_affine(&[0.5], params(1.0, 1.0, 1.0, 1.0), lip(1.0, 0.9, 0.4), |a| {
        a.sigma = row([0.0, 0.0, 1.0, 0.0, 0.0]);
    });
    let rep = check_lipschitz(&c, &Sampler::gaussian(200, 7));
    assert!(!rep.pass);
    let sigma = rep.entries.iter().find(|e| e.name == "sigma").unwrap();
    assert!(!sigma.pass);
    assert!((sigma.split_ratio.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(sigma.declared_split, Some(0.4));
}

#[test]
fn preconditions_for_more_backward_components() {
    let dims = Dims::new(1, 2, 1, 1).unwrap();
    let r = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
    let c = zero_with(dims, r, params(1.0, 1.0, 1.0, 1.0), lip(1.0, 0.5, 0.9));
    let v = validate_theorem_preconditions(&c);
    assert!(v.valid, "{:?}", v.violations);
    assert_eq!(v.variant, Some(Variant::ForwardFirst));
}

#[test]
fn preconditions_for_more_forward_components() {
    let dims = Dims::new(2, 1, 1, 1).unwrap();
    let r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let bad = validate_theorem_preconditions(&zero_with(dims, r.clone(), params(1.0, 1.0, 1.0, 1.0), lip(1.0, 0.5, 0.3)));
    assert!(!bad.valid);
    assert!(bad.violations.iter().any(|s| s.contains("γ′≤γ/2 fails")));
    let good = validate_theorem_preconditions(&zero_with(dims, r, params(1.0, 1.0, 1.0, 1.0), lip(1.0, 0.5, 0.25)));
    assert!(good.valid);
    assert_eq!(good.variant, Some(Variant::BackwardFirst));
}

#[test]
fn degenerate_monotonicity_is_rejected() {
    let c = zero_with(Dims::scalar(), unit_r(), params(0.0, 0.0, 1.0, 1.0), LipschitzConstants::default());
    let v = validate_theorem_preconditions(&c);
    assert!(!v.valid);
    assert!(v.violations.iter().any(|s| s == "θ1+θ2>0 fails"));
    assert!(matches!(v.into_result(), Err(Error::Precondition(_))));
}

#[test]
fn square_case_picks_variant_from_constants() {
    let pick = |p| validate_theorem_preconditions(&zero_with(Dims::scalar(), unit_r(), p, LipschitzConstants::default())).variant;
    assert_eq!(pick(params(1.0, 1.0, 1.0, 1.0)), Some(Variant::ForwardFirst));
    assert_eq!(pick(params(0.0, 1.0, 0.0, 1.0)), Some(Variant::BackwardFirst));
}

#[test]
fn rank_deficient_coupling_is_rejected() {
    let dims = Dims::new(2, 2, 1, 1).unwrap();
    let r = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    assert!(matches!(rank_bounds(&r), Err(Error::RankDeficient(_))));
    let v = validate_theorem_preconditions(&zero_with(dims, r, params(1.0, 1.0, 1.0, 1.0), LipschitzConstants::default()));
    assert!(!v.valid);
}

#[test]
fn rank_bound_examples() {
    let b = rank_bounds(&DMatrix::identity(2, 2)).unwrap();
    assert_eq!((b.lower, b.upper), (1.0, 1.0));
    let b = rank_bounds(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))).unwrap();
    assert!((b.lower - 1.0).abs() < 1e-15 && (b.upper - 2.0).abs() < 1e-15);
    let b = rank_bounds(&DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
    assert!((b.lower - 1.0).abs() < 1e-15 && (b.upper - 1.0).abs() < 1e-15);
}

#[test]
fn mismatched_coupling_shape_is_rejected() {
    let r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let err = CoefficientSet::zero(Dims::scalar(), MarkSpace::empty(), coupling(r, params(1.0, 1.0, 1.0, 1.0))).unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}

#[test]
fn negative_constants_are_rejected() {
    let err = CoefficientSet::zero(Dims::scalar(), MarkSpace::empty(), coupling(unit_r(), params(-1.0, 1.0, 1.0, 1.0)));
    assert!(matches!(err, Err(Error::Precondition(_))));
}

#[test]
fn mirroring_swaps_roles() {
    let dims = Dims::new(1, 2, 1, 1).unwrap();
    let r = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
    let c = CoefficientSet::canonical(
        dims,
        MarkSpace::empty(),
        coupling(r, params(1.0, 0.5, 0.8, 0.2)),
        vec![1.0],
        vec![0.0, 0.3],
        Loadings::default(),
    )
    .unwrap();
    let mir = Mirrored::new(&c).unwrap();
    assert_eq!((mir.dims().n, mir.dims().m), (2, 1));
    let p = mir.coupling().monotone;
    assert_eq!((p.theta1, p.theta2, p.beta1, p.beta2), (0.5, 1.0, 0.2, 0.8));
    assert_eq!(mir.coupling().orientation, Orientation::Primed);
    assert_eq!(mir.coupling().r().shape(), (1, 2));
    assert!(check_monotonicity(&mir, &Sampler::gaussian(300, 8), 1e-9).pass);
    let jumps = canonical(params(1.0, 1.0, 1.0, 1.0), &[0.5], 0.0, 0.0, Loadings::default());
    assert!(Mirrored::new(&jumps).is_err());
}

fn random_coupling(m: usize, n: usize, entries: &[f64]) -> DMatrix<f64> {
    let mut r = DMatrix::from_iterator(m, n, entries.iter().copied().take(m * n));
    for i in 0..m.min(n) {
        r[(i, i)] += 3.0;
    }
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_vanishes_on_the_diagonal(u in prop::collection::vec(-5.0f64..5.0, 5), t in 0.0f64..1.0) {
        let c = common::skew(0.7);
        let v = c.layout().view(&u);
        prop_assert_eq!(bracket(&c, t, &v, &v), 0.0);
    }

    #[test]
    fn canonical_bracket_matches_weighted_norms(
        m in 1usize..=3,
        n in 1usize..=3,
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        u in prop::collection::vec(-2.0f64..2.0, 40),
        theta1 in 0.0f64..2.0,
        theta2 in 0.0f64..2.0,
    ) {
        let dims = Dims::new(n, m, 1, 1).unwrap();
        let marks = MarkSpace::new(vec![0.5]).unwrap();
        let r = random_coupling(m, n, &entries);
        let c = CoefficientSet::canonical(
            dims, marks.clone(), coupling(r.clone(), params(theta1, theta2, 1.0, 1.0)),
            vec![0.0; n], vec![0.0; m], Loadings::default(),
        ).unwrap();
        let lay = c.layout();
        let q = lay.total();
        let a = lay.view(&u[..q]);
        let zero = vec![0.0; q];
        let got = bracket(&c, 0.0, &a, &lay.view(&zero));
        let rt = r.transpose();
        let nsq = |mat: &DMatrix<f64>, x: &[f64]| (mat * DVector::from_column_slice(x)).norm_squared();
        let want = -theta1 * (nsq(&r, a.y) + nsq(&r, a.z))
            - theta2 * (nsq(&rt, a.big_y) + nsq(&rt, a.big_z) + 0.5 * nsq(&rt, a.k));
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn rank_bounds_enclose_unit_images(
        m in 1usize..=3,
        n in 1usize..=3,
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        x in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let r = random_coupling(m, n, &entries);
        let b = rank_bounds(&r).unwrap();
        let (mat, len) = if m >= n { (r.clone(), n) } else { (r.transpose(), m) };
        let v = DVector::from_column_slice(&x[..len]);
        prop_assume!(v.norm() > 1e-3);
        let img = (&mat * v.normalize()).norm();
        prop_assert!(img >= b.lower - 1e-12 && img <= b.upper + 1e-12);
    }
}
