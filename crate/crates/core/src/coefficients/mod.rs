//! Coefficient systems `(b, σ, φ, f, g, Ψ, h)`, the coupling matrix `R`,
//! the bracket `⟨A(t,υ) − A(t,ῡ), υ − ῡ⟩`, and the built-in families.

mod checks;
mod families;
mod mirror;

pub use checks::{
    check_lipschitz, check_monotonicity, rank_bounds, validate_theorem_preconditions, ConditionReport,
    LipschitzEntry, LipschitzReport, MonotonicityReport, PreconditionVerdict, RankBounds, SampleCloud, Sampler,
    Witness,
};
pub use families::{AffineFamily, AffineMap, Family, Loadings};
pub use mirror::Mirrored;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{Dims, MarkSpace};

/// Offsets of the blocks of `vec(υ) = (y, Y, z, Z, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub l: usize,
    pub j: usize,
}

impl Layout {
    pub fn new(dims: Dims, marks: &MarkSpace) -> Self {
        Self { n: dims.n, m: dims.m, d: dims.d, l: dims.l, j: marks.count() }
    }

    pub fn z_len(&self) -> usize {
        self.n * self.l
    }

    pub fn big_z_len(&self) -> usize {
        self.m * self.d
    }

    pub fn k_len(&self) -> usize {
        self.m * self.j
    }

    pub fn total(&self) -> usize {
        self.n + self.m + self.z_len() + self.big_z_len() + self.k_len()
    }

    /// Split a packed `vec(υ)`.
    pub fn view<'a>(&self, v: &'a [f64]) -> QuintupleRef<'a> {
        let (y, rest) = v.split_at(self.n);
        let (big_y, rest) = rest.split_at(self.m);
        let (z, rest) = rest.split_at(self.z_len());
        let (big_z, k) = rest.split_at(self.big_z_len());
        QuintupleRef { y, big_y, z, big_z, k }
    }
}

/// Borrowed quintuple; `z` is `n×l`, `Z` is `m×d` (row-major) and `k` is
/// mark-major (`k[j*m + r]`).
#[derive(Debug, Clone, Copy)]
pub struct QuintupleRef<'a> {
    pub y: &'a [f64],
    pub big_y: &'a [f64],
    pub z: &'a [f64],
    pub big_z: &'a [f64],
    pub k: &'a [f64],
}

impl QuintupleRef<'_> {
    pub fn pack(&self) -> Vec<f64> {
        [self.y, self.big_y, self.z, self.big_z, self.k].concat()
    }

    /// `|y|² + |Y|² + ‖z‖² + ‖Z‖² + |||k|||²`.
    pub fn norm_sq(&self, marks: &MarkSpace) -> f64 {
        let sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let m = self.big_y.len();
        sq(self.y) + sq(self.big_y) + sq(self.z) + sq(self.big_z) + marks.weighted_norm_sq(self.k, m)
    }
}

/// Orientation of the monotonicity hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Standard,
    Primed,
}

impl Orientation {
    /// `+1` for the standard inequalities, `-1` for the primed ones.
    pub fn sign(self) -> f64 {
        match self {
            Orientation::Standard => 1.0,
            Orientation::Primed => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotoneParams {
    pub theta1: f64,
    pub theta2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzConstants {
    pub c: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
}

impl Default for LipschitzConstants {
    fn default() -> Self {
        Self { c: 1.0, gamma: 0.5, gamma_prime: 0.25 }
    }
}

/// The matrix `R` (`m×n`) with the declared constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    r: DMatrix<f64>,
    r_rows: Vec<f64>,
    pub monotone: MonotoneParams,
    pub lipschitz: LipschitzConstants,
    pub orientation: Orientation,
}

impl Coupling {
    pub fn new(r: DMatrix<f64>, monotone: MonotoneParams, lipschitz: LipschitzConstants, orientation: Orientation) -> Self {
        let r_rows = (0..r.nrows()).flat_map(|i| (0..r.ncols()).map(move |j| (i, j))).map(|(i, j)| r[(i, j)]).collect();
        Self { r, r_rows, monotone, lipschitz, orientation }
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    pub fn n(&self) -> usize {
        self.r.ncols()
    }

    /// `out (m×cols) = R · x (n×cols)`.
    pub fn r_mul(&self, x: &[f64], cols: usize, out: &mut [f64]) {
        let (m, n) = (self.m(), self.n());
        for r in 0..m {
            for c in 0..cols {
                let mut acc = 0.0;
                for a in 0..n {
                    acc += self.r_rows[r * n + a] * x[a * cols + c];
                }
                out[r * cols + c] = acc;
            }
        }
    }

    /// `out (n×cols) = R* · x (m×cols)`.
    pub fn rt_mul(&self, x: &[f64], cols: usize, out: &mut [f64]) {
        let (m, n) = (self.m(), self.n());
        for a in 0..n {
            for c in 0..cols {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += self.r_rows[r * n + a] * x[r * cols + c];
                }
                out[a * cols + c] = acc;
            }
        }
    }
}

/// A coefficient system. Implementations must be reentrant.
pub trait Coefficients: Sync {
    fn dims(&self) -> Dims;
    fn marks(&self) -> &MarkSpace;
    fn coupling(&self) -> &Coupling;
    /// Forward drift, `R^n`.
    fn b(&self, t: f64, v: &QuintupleRef, out: &mut [f64]);
    /// Forward `dW` coefficient, `R^{n×d}`.
    fn sigma(&self, t: f64, v: &QuintupleRef, out: &mut [f64]);
    /// Forward jump coefficient at mark `mark`, `R^n`.
    fn phi(&self, t: f64, v: &QuintupleRef, mark: usize, out: &mut [f64]);
    /// Backward drift, `R^m`.
    fn f(&self, t: f64, v: &QuintupleRef, out: &mut [f64]);
    /// Backward `d←B` coefficient, `R^{m×l}`.
    fn g(&self, t: f64, v: &QuintupleRef, out: &mut [f64]);
    /// Initial map; `b_total` is `B_T` (known at time 0).
    fn psi(&self, big_y: &[f64], b_total: &[f64], out: &mut [f64]);
    /// Terminal map; `w_total` is `W_T`, `jump_total` is `Ñ_T` per mark.
    fn h(&self, y: &[f64], w_total: &[f64], jump_total: &[f64], out: &mut [f64]);
    /// Affine coefficients allow exact finite-difference Jacobians.
    fn is_affine(&self) -> bool {
        false
    }
    /// Whether any coefficient depends on `z`.
    fn reads_z(&self) -> bool {
        true
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dims(), self.marks())
    }
}

/// A concrete coefficient system built from one of the built-in families.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    dims: Dims,
    marks: MarkSpace,
    coupling: Coupling,
    family: Family,
}

impl CoefficientSet {
    pub fn new(dims: Dims, marks: MarkSpace, coupling: Coupling, family: Family) -> Result<Self> {
        dims.validate()?;
        if coupling.m() != dims.m || coupling.n() != dims.n {
            return Err(Error::Shape(format!(
                "R must be {}×{}, got {}×{}",
                dims.m,
                dims.n,
                coupling.m(),
                coupling.n()
            )));
        }
        let lip = coupling.lipschitz;
        let mono = coupling.monotone;
        for (name, v) in [
            ("c", lip.c),
            ("γ", lip.gamma),
            ("γ′", lip.gamma_prime),
            ("θ1", mono.theta1),
            ("θ2", mono.theta2),
            ("β1", mono.beta1),
            ("β2", mono.beta2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Precondition(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        family.validate(Layout::new(dims, &marks))?;
        Ok(Self { dims, marks, coupling, family })
    }

    /// All coefficients identically zero.
    pub fn zero(dims: Dims, marks: MarkSpace, coupling: Coupling) -> Result<Self> {
        Self::new(dims, marks, coupling, Family::Zero)
    }

    /// `f = −θ1 R y`, `b = −θ2 R* Y`, `g = −θ1 R z`, `σ = −θ2 R* Z`,
    /// `φ = −θ2 R* k`, `Ψ(Y) = −β2 R* Y + ψ0`, `h(y) = β1 R y + φ0`, using the
    /// coupling's constants; satisfies the monotonicity hypotheses with equality.
    pub fn canonical(
        dims: Dims,
        marks: MarkSpace,
        coupling: Coupling,
        psi0: Vec<f64>,
        phi0: Vec<f64>,
        loadings: Loadings,
    ) -> Result<Self> {
        Self::new(dims, marks, coupling, Family::Canonical { psi0, phi0, loadings, sign: 1.0 })
    }

    /// The canonical family with every coefficient negated; satisfies the
    /// primed hypotheses with equality.
    pub fn sign_flipped(
        dims: Dims,
        marks: MarkSpace,
        coupling: Coupling,
        psi0: Vec<f64>,
        phi0: Vec<f64>,
        loadings: Loadings,
    ) -> Result<Self> {
        Self::new(dims, marks, coupling, Family::Canonical { psi0, phi0, loadings, sign: -1.0 })
    }

    pub fn affine(dims: Dims, marks: MarkSpace, coupling: Coupling, family: AffineFamily) -> Result<Self> {
        Self::new(dims, marks, coupling, Family::Affine(Box::new(family)))
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.coupling.orientation = orientation;
        self
    }
}

impl Coefficients for CoefficientSet {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn marks(&self) -> &MarkSpace {
        &self.marks
    }

    fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    fn b(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        families::eval_b(self, t, v, out)
    }

    fn sigma(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        families::eval_sigma(self, t, v, out)
    }

    fn phi(&self, t: f64, v: &QuintupleRef, mark: usize, out: &mut [f64]) {
        families::eval_phi(self, t, v, mark, out)
    }

    fn f(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        families::eval_f(self, t, v, out)
    }

    fn g(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        families::eval_g(self, t, v, out)
    }

    fn psi(&self, big_y: &[f64], b_total: &[f64], out: &mut [f64]) {
        families::eval_psi(self, big_y, b_total, out)
    }

    fn h(&self, y: &[f64], w_total: &[f64], jump_total: &[f64], out: &mut [f64]) {
        families::eval_h(self, y, w_total, jump_total, out)
    }

    fn is_affine(&self) -> bool {
        true
    }

    fn reads_z(&self) -> bool {
        families::reads_z(self)
    }
}

/// `A(t,υ) = (R*f, Rb, R*g, Rσ, Rφ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledA {
    pub rt_f: Vec<f64>,
    pub r_b: Vec<f64>,
    pub rt_g: Vec<f64>,
    pub r_sigma: Vec<f64>,
    pub r_phi: Vec<f64>,
}

pub fn assemble_a<C: Coefficients + ?Sized>(coeffs: &C, t: f64, v: &QuintupleRef) -> AssembledA {
    let lay = coeffs.layout();
    let cp = coeffs.coupling();
    let mut f = vec![0.0; lay.m];
    let mut b = vec![0.0; lay.n];
    let mut g = vec![0.0; lay.m * lay.l];
    let mut sigma = vec![0.0; lay.n * lay.d];
    let mut phi = vec![0.0; lay.n];
    coeffs.f(t, v, &mut f);
    coeffs.b(t, v, &mut b);
    coeffs.g(t, v, &mut g);
    coeffs.sigma(t, v, &mut sigma);
    let mut out = AssembledA {
        rt_f: vec![0.0; lay.n],
        r_b: vec![0.0; lay.m],
        rt_g: vec![0.0; lay.n * lay.l],
        r_sigma: vec![0.0; lay.m * lay.d],
        r_phi: vec![0.0; lay.m * lay.j],
    };
    cp.rt_mul(&f, 1, &mut out.rt_f);
    cp.r_mul(&b, 1, &mut out.r_b);
    cp.rt_mul(&g, lay.l, &mut out.rt_g);
    cp.r_mul(&sigma, lay.d, &mut out.r_sigma);
    for j in 0..lay.j {
        coeffs.phi(t, v, j, &mut phi);
        cp.r_mul(&phi, 1, &mut out.r_phi[j * lay.m..(j + 1) * lay.m]);
    }
    out
}

/// `⟨A(t,υ) − A(t,ῡ), υ − ῡ⟩` with the jump pairing weighted by `Π`.
pub fn bracket<C: Coefficients + ?Sized>(coeffs: &C, t: f64, v: &QuintupleRef, vbar: &QuintupleRef) -> f64 {
    let a = assemble_a(coeffs, t, v);
    let abar = assemble_a(coeffs, t, vbar);
    let dot = |x: &[f64], xb: &[f64], u: &[f64], ub: &[f64]| -> f64 {
        x.iter().zip(xb).zip(u.iter().zip(ub)).map(|((a, ab), (p, pb))| (a - ab) * (p - pb)).sum()
    };
    let marks = coeffs.marks();
    let m = coeffs.dims().m;
    let jumps: f64 = (0..marks.count())
        .map(|j| {
            let s = j * m..(j + 1) * m;
            marks.intensity(j) * dot(&a.r_phi[s.clone()], &abar.r_phi[s.clone()], &v.k[s.clone()], &vbar.k[s])
        })
        .sum();
    dot(&a.rt_f, &abar.rt_f, v.y, vbar.y)
        + dot(&a.r_b, &abar.r_b, v.big_y, vbar.big_y)
        + dot(&a.rt_g, &abar.rt_g, v.z, vbar.z)
        + dot(&a.r_sigma, &abar.r_sigma, v.big_z, vbar.big_z)
        + jumps
}
