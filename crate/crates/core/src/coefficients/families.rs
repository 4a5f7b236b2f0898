use serde::{Deserialize, Serialize};

use super::{CoefficientSet, Coefficients, Layout, QuintupleRef};
use crate::error::{Error, Result};

/// Affine map `x ↦ M x + c` with `M` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub rows: usize,
    pub cols: usize,
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, matrix: vec![0.0; rows * cols], offset: vec![0.0; rows] }
    }

    pub fn from_rows(matrix: &[Vec<f64>], offset: Option<Vec<f64>>, cols: usize) -> Result<Self> {
        let rows = matrix.len();
        if matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape(format!("every matrix row must have {cols} entries")));
        }
        let offset = offset.unwrap_or_else(|| vec![0.0; rows]);
        if offset.len() != rows {
            return Err(Error::Shape(format!("offset must have {rows} entries")));
        }
        Ok(Self { rows, cols, matrix: matrix.concat(), offset })
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.matrix[r * self.cols..(r + 1) * self.cols];
            out[r] = self.offset[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    fn check(&self, name: &str, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols || self.matrix.len() != rows * cols || self.offset.len() != rows {
            return Err(Error::Shape(format!("{name} must be {rows}×{cols} with {rows} offsets")));
        }
        Ok(())
    }

    fn reads(&self, cols: std::ops::Range<usize>) -> bool {
        (0..self.rows).any(|r| cols.clone().any(|c| self.matrix[r * self.cols + c] != 0.0))
    }
}

/// Loadings of the boundary maps on the terminal noise: `Ψ += L_B B_T`,
/// `h += L_W W_T + L_N Ñ_T`. Empty vectors mean zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Loadings {
    #[serde(default)]
    pub psi_b: Vec<f64>,
    #[serde(default)]
    pub h_w: Vec<f64>,
    #[serde(default)]
    pub h_jump: Vec<f64>,
}

impl Loadings {
    fn check(&self, lay: Layout) -> Result<()> {
        for (name, v, len) in [
            ("psi_b", &self.psi_b, lay.n * lay.l),
            ("h_w", &self.h_w, lay.m * lay.d),
            ("h_jump", &self.h_jump, lay.m * lay.j),
        ] {
            if !v.is_empty() && v.len() != len {
                return Err(Error::Shape(format!("loading {name} must have {len} entries")));
            }
        }
        Ok(())
    }

    fn add(mat: &[f64], x: &[f64], out: &mut [f64]) {
        if mat.is_empty() || x.is_empty() {
            return;
        }
        let cols = x.len();
        for (r, o) in out.iter_mut().enumerate() {
            *o += mat[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Every coefficient affine in `vec(υ)`; `φ(ρ_j) = μ_j (M_φ vec(υ) + c_φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFamily {
    pub b: AffineMap,
    pub sigma: AffineMap,
    pub phi: AffineMap,
    pub phi_scale: Vec<f64>,
    pub f: AffineMap,
    pub g: AffineMap,
    pub psi: AffineMap,
    pub h: AffineMap,
    pub loadings: Loadings,
}

impl AffineFamily {
    pub fn zeros(lay: Layout) -> Self {
        let q = lay.total();
        Self {
            b: AffineMap::zeros(lay.n, q),
            sigma: AffineMap::zeros(lay.n * lay.d, q),
            phi: AffineMap::zeros(lay.n, q),
            phi_scale: vec![1.0; lay.j],
            f: AffineMap::zeros(lay.m, q),
            g: AffineMap::zeros(lay.m * lay.l, q),
            psi: AffineMap::zeros(lay.n, lay.m),
            h: AffineMap::zeros(lay.m, lay.n),
            loadings: Loadings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Zero,
    Canonical { psi0: Vec<f64>, phi0: Vec<f64>, loadings: Loadings, sign: f64 },
    Affine(Box<AffineFamily>),
}

impl Family {
    pub(super) fn validate(&self, lay: Layout) -> Result<()> {
        match self {
            Family::Zero => Ok(()),
            Family::Canonical { psi0, phi0, loadings, .. } => {
                if psi0.len() != lay.n {
                    return Err(Error::Shape(format!("psi0 must have {} entries", lay.n)));
                }
                if phi0.len() != lay.m {
                    return Err(Error::Shape(format!("phi0 must have {} entries", lay.m)));
                }
                loadings.check(lay)
            }
            Family::Affine(a) => {
                let q = lay.total();
                a.b.check("b", lay.n, q)?;
                a.sigma.check("sigma", lay.n * lay.d, q)?;
                a.phi.check("phi", lay.n, q)?;
                a.f.check("f", lay.m, q)?;
                a.g.check("g", lay.m * lay.l, q)?;
                a.psi.check("psi", lay.n, lay.m)?;
                a.h.check("h", lay.m, lay.n)?;
                if a.phi_scale.len() != lay.j {
                    return Err(Error::Shape(format!("phi_scale must have {} entries", lay.j)));
                }
                a.loadings.check(lay)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Zero => "zero",
            Family::Canonical { sign, .. } if *sign < 0.0 => "sign_flipped",
            Family::Canonical { .. } => "canonical_monotone",
            Family::Affine(_) => "general_affine",
        }
    }
}

fn scale(out: &mut [f64], s: f64) {
    out.iter_mut().for_each(|v| *v *= s);
}

pub(super) fn eval_b(c: &CoefficientSet, _t: f64, v: &QuintupleRef, out: &mut [f64]) {
    match &c.family {
        Family::Zero => out.fill(0.0),
        Family::Canonical { sign, .. } => {
            c.coupling.rt_mul(v.big_y, 1, out);
            scale(out, -sign * c.coupling.monotone.theta2);
        }
        Family::Affine(a) => a.b.apply(&v.pack(), out),
    }
}

pub(super) fn eval_sigma(c: &CoefficientSet, _t: f64, v: &QuintupleRef, out: &mut [f64]) {
    match &c.family {
        Family::Zero => out.fill(0.0),
        Family::Canonical { sign, .. } => {
            c.coupling.rt_mul(v.big_z, c.dims.d, out);
            scale(out, -sign * c.coupling.monotone.theta2);
        }
        Family::Affine(a) => a.sigma.apply(&v.pack(), out),
    }
}

pub(super) fn eval_phi(c: &CoefficientSet, _t: f64, v: &QuintupleRef, mark: usize, out: &mut [f64]) {
    let m = c.dims.m;
    match &c.family {
        Family::Zero => out.fill(0.0),
        Family::Canonical { sign, .. } => {
            c.coupling.rt_mul(&v.k[mark * m..(mark + 1) * m], 1, out);
            scale(out, -sign * c.coupling.monotone.theta2);
        }
        Family::Affine(a) => {
            a.phi.apply(&v.pack(), out);
            scale(out, a.phi_scale[mark]);
        }
    }
}

pub(super) fn eval_f(c: &CoefficientSet, _t: f64, v: &QuintupleRef, out: &mut [f64]) {
    match &c.family {
        Family::Zero => out.fill(0.0),
        Family::Canonical { sign, .. } => {
            c.coupling.r_mul(v.y, 1, out);
            scale(out, -sign * c.coupling.monotone.theta1);
        }
        Family::Affine(a) => a.f.apply(&v.pack(), out),
    }
}

pub(super) fn eval_g(c: &CoefficientSet, _t: f64, v: &QuintupleRef, out: &mut [f64]) {
    match &c.family {
        Family::Zero => out.fill(0.0),
        Family::Canonical { sign, .. } => {
            c.coupling.r_mul(v.z, c.dims.l, out);
            scale(out, -sign * c.coupling.monotone.theta1);
        }
        Family::Affine(a) => a.g.apply(&v.pack(), out),
    }
}

pub(super) fn eval_psi(c: &CoefficientSet, big_y: &[f64], b_total: &[f64], out: &mut [f64]) {
    match &c.family {
        Family::Zero => out.fill(0.0),
        Family::Canonical { psi0, loadings, sign, .. } => {
            c.coupling.rt_mul(big_y, 1, out);
            scale(out, -sign * c.coupling.monotone.beta2);
            out.iter_mut().zip(psi0).for_each(|(o, p)| *o += p);
            Loadings::add(&loadings.psi_b, b_total, out);
        }
        Family::Affine(a) => {
            a.psi.apply(big_y, out);
            Loadings::add(&a.loadings.psi_b, b_total, out);
        }
    }
}

pub(super) fn eval_h(c: &CoefficientSet, y: &[f64], w_total: &[f64], jump_total: &[f64], out: &mut [f64]) {
    match &c.family {
        Family::Zero => out.fill(0.0),
        Family::Canonical { phi0, loadings, sign, .. } => {
            c.coupling.r_mul(y, 1, out);
            scale(out, sign * c.coupling.monotone.beta1);
            out.iter_mut().zip(phi0).for_each(|(o, p)| *o += p);
            Loadings::add(&loadings.h_w, w_total, out);
            Loadings::add(&loadings.h_jump, jump_total, out);
        }
        Family::Affine(a) => {
            a.h.apply(y, out);
            Loadings::add(&a.loadings.h_w, w_total, out);
            Loadings::add(&a.loadings.h_jump, jump_total, out);
        }
    }
}

pub(super) fn reads_z(c: &CoefficientSet) -> bool {
    match &c.family {
        Family::Zero => false,
        Family::Canonical { .. } => c.coupling.monotone.theta1 != 0.0,
        Family::Affine(a) => {
            let lay = c.layout();
            let zs = lay.n + lay.m..lay.n + lay.m + lay.z_len();
            [&a.b, &a.sigma, &a.phi, &a.f, &a.g].iter().any(|map| map.reads(zs.clone()))
        }
    }
}
