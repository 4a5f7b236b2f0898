use super::{Coefficients, Coupling, MonotoneParams, Orientation, QuintupleRef};
use crate::error::{Error, Result};
use crate::noise::{Dims, MarkSpace};

/// The time-reversed system with the roles of the two equations swapped.
///
/// Reading the backward equation backwards in time gives a forward equation
/// for `Y` driven by the reversed `B`, and vice versa, so an `m×n` problem
/// becomes an `n×m` one with `R ↦ R*`, `(θ1, β1) ↔ (θ2, β2)` and the opposite
/// orientation. Solutions map onto each other on the reversed tree
/// ([`crate::noise::ScenarioTree::reversed`]). Only defined without jumps.
pub struct Mirrored<'a, C: Coefficients + ?Sized> {
    inner: &'a C,
    dims: Dims,
    coupling: Coupling,
}

impl<'a, C: Coefficients + ?Sized> Mirrored<'a, C> {
    pub fn new(inner: &'a C) -> Result<Self> {
        if inner.marks().count() > 0 {
            return Err(Error::Unsupported("mirroring requires a problem without jumps".into()));
        }
        let d = inner.dims();
        let cp = inner.coupling();
        let mono = cp.monotone;
        let coupling = Coupling::new(
            cp.r().transpose(),
            MonotoneParams { theta1: mono.theta2, theta2: mono.theta1, beta1: mono.beta2, beta2: mono.beta1 },
            cp.lipschitz,
            match cp.orientation {
                Orientation::Standard => Orientation::Primed,
                Orientation::Primed => Orientation::Standard,
            },
        );
        Ok(Self { inner, dims: Dims { n: d.m, m: d.n, d: d.l, l: d.d }, coupling })
    }

    fn with_original<T>(&self, v: &QuintupleRef, run: impl FnOnce(&QuintupleRef) -> T) -> T {
        let neg = |x: &[f64]| x.iter().map(|a| -a).collect::<Vec<f64>>();
        let z = neg(v.big_z);
        let big_z = neg(v.z);
        let orig = QuintupleRef { y: v.big_y, big_y: v.y, z: &z, big_z: &big_z, k: &[] };
        run(&orig)
    }
}

impl<C: Coefficients + ?Sized> Coefficients for Mirrored<'_, C> {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn marks(&self) -> &MarkSpace {
        self.inner.marks()
    }

    fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    fn b(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        self.with_original(v, |u| self.inner.f(t, u, out));
        out.iter_mut().for_each(|x| *x = -*x);
    }

    fn sigma(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        self.with_original(v, |u| self.inner.g(t, u, out));
    }

    fn phi(&self, _t: f64, _v: &QuintupleRef, _mark: usize, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn f(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        self.with_original(v, |u| self.inner.b(t, u, out));
        out.iter_mut().for_each(|x| *x = -*x);
    }

    fn g(&self, t: f64, v: &QuintupleRef, out: &mut [f64]) {
        self.with_original(v, |u| self.inner.sigma(t, u, out));
    }

    fn psi(&self, big_y: &[f64], b_total: &[f64], out: &mut [f64]) {
        let w: Vec<f64> = b_total.iter().map(|a| -a).collect();
        self.inner.h(big_y, &w, &[], out);
    }

    fn h(&self, y: &[f64], w_total: &[f64], _jump_total: &[f64], out: &mut [f64]) {
        let b: Vec<f64> = w_total.iter().map(|a| -a).collect();
        self.inner.psi(y, &b, out);
    }

    fn is_affine(&self) -> bool {
        self.inner.is_affine()
    }
}
