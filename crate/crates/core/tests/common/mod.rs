#![allow(dead_code)]

use fbdsdej::coefficients::{
    AffineFamily, AffineMap, CoefficientSet, Coupling, Layout, LipschitzConstants, Loadings, MonotoneParams, Orientation,
};
use fbdsdej::noise::{make_grid, Dims, MarkSpace, NoiseSources, ScenarioTree, TreeConfig};
use nalgebra::DMatrix;

pub fn tree(steps: usize, dims: Dims, marks: &MarkSpace, sources: NoiseSources) -> ScenarioTree {
    ScenarioTree::build(make_grid(1.0, steps).unwrap(), dims, marks, &TreeConfig::with_sources(sources)).unwrap()
}

pub fn scalar_tree(steps: usize, marks: &[f64], sources: NoiseSources) -> ScenarioTree {
    tree(steps, Dims::scalar(), &MarkSpace::new(marks.to_vec()).unwrap(), sources)
}

pub fn params(theta1: f64, theta2: f64, beta1: f64, beta2: f64) -> MonotoneParams {
    MonotoneParams { theta1, theta2, beta1, beta2 }
}

pub fn coupling(r: DMatrix<f64>, mono: MonotoneParams) -> Coupling {
    Coupling::new(r, mono, LipschitzConstants::default(), Orientation::Standard)
}

pub fn unit_r() -> DMatrix<f64> {
    DMatrix::from_element(1, 1, 1.0)
}

/// The scalar canonical family with `R = 1`.
pub fn canonical(mono: MonotoneParams, marks: &[f64], psi0: f64, phi0: f64, loadings: Loadings) -> CoefficientSet {
    CoefficientSet::canonical(
        Dims::scalar(),
        MarkSpace::new(marks.to_vec()).unwrap(),
        coupling(unit_r(), mono),
        vec![psi0],
        vec![phi0],
        loadings,
    )
    .unwrap()
}

/// The `e^{−t}` problem.
pub fn exp_decay(marks: &[f64]) -> CoefficientSet {
    canonical(params(1.0, 1.0, 1.0, 0.0), marks, 1.0, 0.0, Loadings::default())
}

pub fn zero_problem(marks: &[f64]) -> CoefficientSet {
    CoefficientSet::zero(Dims::scalar(), MarkSpace::new(marks.to_vec()).unwrap(), coupling(unit_r(), params(1.0, 1.0, 1.0, 1.0)))
        .unwrap()
}

/// Small stochastic instances on `N = 3` trees with every noise source on.
pub const INSTANCES: [&str; 6] = ["jumps", "loaded", "m_gt_n", "m_lt_n", "backward_first", "skew"];

pub fn instance(name: &str) -> (ScenarioTree, CoefficientSet) {
    let mono = params(1.0, 1.0, 1.0, 0.5);
    let none = Loadings::default();
    let (dims, marks, coeffs) = match name {
        "jumps" => {
            let marks = MarkSpace::new(vec![0.5]).unwrap();
            let c = CoefficientSet::canonical(Dims::scalar(), marks.clone(), coupling(unit_r(), mono), vec![1.0], vec![0.0], none)
                .unwrap();
            (Dims::scalar(), marks, c)
        }
        "loaded" => {
            let ld = Loadings { psi_b: vec![0.3], h_w: vec![0.4], h_jump: vec![] };
            let c = CoefficientSet::canonical(Dims::scalar(), MarkSpace::empty(), coupling(unit_r(), mono), vec![0.5], vec![0.2], ld)
                .unwrap();
            (Dims::scalar(), MarkSpace::empty(), c)
        }
        "m_gt_n" => {
            let dims = Dims::new(1, 2, 1, 1).unwrap();
            let r = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
            let c = CoefficientSet::canonical(dims, MarkSpace::empty(), coupling(r, mono), vec![1.0], vec![0.0, 0.3], none).unwrap();
            (dims, MarkSpace::empty(), c)
        }
        "m_lt_n" => {
            let dims = Dims::new(2, 1, 1, 1).unwrap();
            let r = DMatrix::from_row_slice(1, 2, &[1.0, -0.5]);
            let c = CoefficientSet::canonical(dims, MarkSpace::empty(), coupling(r, mono), vec![1.0, 0.2], vec![0.0], none).unwrap();
            (dims, MarkSpace::empty(), c)
        }
        "backward_first" => {
            let marks = MarkSpace::new(vec![0.5]).unwrap();
            let c = CoefficientSet::canonical(
                Dims::scalar(),
                marks.clone(),
                coupling(unit_r(), params(0.0, 1.0, 0.0, 1.0)),
                vec![1.0],
                vec![0.3],
                none,
            )
            .unwrap();
            (Dims::scalar(), marks, c)
        }
        "skew" => (Dims::scalar(), MarkSpace::new(vec![0.5]).unwrap(), skew(0.7)),
        other => panic!("unknown instance {other}"),
    };
    (tree(3, dims, &marks, NoiseSources::all()), coeffs)
}

/// Affine scalar system with a skew coupling `s` between `y` and `Y`:
/// `f = −y + sY + 0.1`, `b = −sy − Y + 0.2`, `g = −z`, `σ = −Z`, `φ = −k`,
/// `Ψ = −Y/2 + 1`, `h = y`. Monotone for every `s`.
pub fn skew(s: f64) -> CoefficientSet {
    let marks = MarkSpace::new(vec![0.5]).unwrap();
    let lay = Layout::new(Dims::scalar(), &marks);
    let row = |v: [f64; 5], c: Option<f64>| AffineMap::from_rows(&[v.to_vec()], c.map(|x| vec![x]), 5).unwrap();
    let mut a = AffineFamily::zeros(lay);
    a.f = row([-1.0, s, 0.0, 0.0, 0.0], Some(0.1));
    a.b = row([-s, -1.0, 0.0, 0.0, 0.0], Some(0.2));
    a.g = row([0.0, 0.0, -1.0, 0.0, 0.0], None);
    a.sigma = row([0.0, 0.0, 0.0, -1.0, 0.0], None);
    a.phi = row([0.0, 0.0, 0.0, 0.0, -1.0], None);
    a.psi = AffineMap::from_rows(&[vec![-0.5]], Some(vec![1.0]), 1).unwrap();
    a.h = AffineMap::from_rows(&[vec![1.0]], None, 1).unwrap();
    CoefficientSet::affine(Dims::scalar(), marks, coupling(unit_r(), mono_skew()), a).unwrap()
}

fn mono_skew() -> MonotoneParams {
    params(1.0, 1.0, 1.0, 0.5)
}

/// `Σ_leaf P(leaf) x(leaf)` for scalar leaf values.
pub fn expect(tree: &ScenarioTree, x: &[f64]) -> f64 {
    tree.leaf_weights().iter().zip(x).map(|(w, v)| w * v).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
