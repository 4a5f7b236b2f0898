//! Independent oracles and end-to-end checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    CoefficientSet, Coefficients, Coupling, LipschitzConstants, Loadings, MonotoneParams, Orientation,
};
use crate::continuation::{continuation_solve, ContinuationConfig, StartPolicy};
use crate::error::{Error, Result};
use crate::field::{composite_distance, widths, SolutionField};
use crate::noise::{
    information_atoms, keyed_rng, Dims, Driver, InformationIndex, MarkSpace, NoiseModel, ScenarioTree,
};

/// Scalar deterministic reduction `y' = −θ2 Y`, `Y' = −θ1 y`,
/// `y(0) = −β2 Y(0) + ψ0`, `Y(T) = β1 y(T) + φ0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBvpSpec {
    pub theta1: f64,
    pub theta2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub psi0: f64,
    pub phi0: f64,
    pub horizon: f64,
}

impl LinearBvpSpec {
    /// The problem whose solution is `y = Y = e^{−t}` on `[0, 1]`.
    pub fn exp_decay() -> Self {
        Self { theta1: 1.0, theta2: 1.0, beta1: 1.0, beta2: 0.0, psi0: 1.0, phi0: 0.0, horizon: 1.0 }
    }

    pub fn monotone(&self) -> MonotoneParams {
        MonotoneParams { theta1: self.theta1, theta2: self.theta2, beta1: self.beta1, beta2: self.beta2 }
    }

    /// The canonical scalar family with these constants and `R = 1`.
    pub fn coefficients(&self, marks: MarkSpace) -> Result<CoefficientSet> {
        let cp = Coupling::new(
            DMatrix::from_element(1, 1, 1.0),
            self.monotone(),
            LipschitzConstants::default(),
            Orientation::Standard,
        );
        CoefficientSet::canonical(Dims::scalar(), marks, cp, vec![self.psi0], vec![self.phi0], Loadings::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvpTrajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub big_y: Vec<f64>,
}

/// `e^{Mt}` for `M = [[0, −θ2], [−θ1, 0]]`, using `M² = θ1θ2 I`.
fn propagator(theta1: f64, theta2: f64, t: f64) -> [[f64; 2]; 2] {
    let w2 = theta1 * theta2;
    let (c, s) = if w2.abs() < 1e-14 {
        (1.0, t)
    } else {
        let w = w2.sqrt();
        ((w * t).cosh(), (w * t).sinh() / w)
    };
    [[c, -theta2 * s], [-theta1 * s, c]]
}

/// Closed-form solution on the nodes of a uniform grid with `steps` steps.
pub fn linear_bvp_oracle(spec: &LinearBvpSpec, steps: usize) -> Result<BvpTrajectory> {
    if steps == 0 {
        return Err(Error::EmptyGrid);
    }
    if !(spec.horizon > 0.0) {
        return Err(Error::NonPositiveHorizon(spec.horizon));
    }
    let m = spec.monotone();
    if [m.theta1, m.theta2, m.beta1, m.beta2].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Precondition("θ1, θ2, β1, β2 must be nonnegative".into()));
    }
    let e = propagator(spec.theta1, spec.theta2, spec.horizon);
    // y0 + β2 Y0 = ψ0 ; (E21 − β1 E11) y0 + (E22 − β1 E12) Y0 = φ0
    let a = [[1.0, spec.beta2], [e[1][0] - spec.beta1 * e[0][0], e[1][1] - spec.beta1 * e[0][1]]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().fold(1.0f64, |s, v| s.max(v.abs()));
    if det.abs() <= 1e-12 * scale * scale {
        return Err(Error::SingularBoundary);
    }
    let y0 = (spec.psi0 * a[1][1] - spec.beta2 * spec.phi0) / det;
    let big_y0 = (a[0][0] * spec.phi0 - a[1][0] * spec.psi0) / det;
    let dt = spec.horizon / steps as f64;
    let mut out = BvpTrajectory { t: Vec::new(), y: Vec::new(), big_y: Vec::new() };
    for i in 0..=steps {
        let t = if i == steps { spec.horizon } else { i as f64 * dt };
        let p = propagator(spec.theta1, spec.theta2, t);
        out.t.push(t);
        out.y.push(p[0][0] * y0 + p[0][1] * big_y0);
        out.big_y.push(p[1][0] * y0 + p[1][1] * big_y0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BruteForceConfig {
    pub method: BruteForceMethod,
    pub restarts: usize,
    pub max_newton: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub max_unknowns: usize,
}

/// Iteration used by the brute-force oracle. `Damped` is `u ← u + ω(RHS(u) − u)`
/// and `max_newton` caps its sweeps at `10⁴·max_newton`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BruteForceMethod {
    Newton,
    Damped { damping: f64 },
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        Self { method: BruteForceMethod::Newton, restarts: 8, max_newton: 50, seed: 0xB0B, init_scale: 1.0, max_unknowns: 3000 }
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceOutcome {
    pub field: SolutionField,
    pub iterations: Vec<usize>,
    /// Largest pairwise max-norm gap between restarts.
    pub spread: f64,
}

/// Grouped averages over the atoms of one σ-field.
struct Atoms {
    ids: Vec<usize>,
    mass: Vec<f64>,
    weights: Vec<f64>,
}

impl Atoms {
    fn new(tree: &ScenarioTree, info: &InformationIndex) -> Self {
        let ids = information_atoms(tree, info);
        let weights = tree.leaf_weights();
        let count = ids.iter().copied().max().map_or(0, |m| m + 1);
        let mut mass = vec![0.0; count];
        for (leaf, &a) in ids.iter().enumerate() {
            mass[a] += weights[leaf];
        }
        Self { ids, mass, weights }
    }

    fn expect(&self, x: &[f64], dim: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.mass.len() * dim];
        for (leaf, &a) in self.ids.iter().enumerate() {
            for c in 0..dim {
                acc[a * dim + c] += self.weights[leaf] * x[leaf * dim + c];
            }
        }
        let mut out = vec![0.0; x.len()];
        for (leaf, &a) in self.ids.iter().enumerate() {
            for c in 0..dim {
                out[leaf * dim + c] = acc[a * dim + c] / self.mass[a];
            }
        }
        out
    }
}

fn times(x: &[f64], inc: &[f64], dim: usize) -> Vec<f64> {
    x.iter().enumerate().map(|(i, v)| v * inc[i / dim]).collect()
}

/// Right-hand side of the fully coupled discrete system evaluated on
/// leaf-indexed values, with conditional expectations taken as grouped
/// averages over information atoms.
struct FullSystem<'a, C: Coefficients + ?Sized> {
    coeffs: &'a C,
    tree: &'a ScenarioTree,
    atoms: Vec<Atoms>,
    w_total: Vec<f64>,
    b_total: Vec<f64>,
    jump_total: Vec<f64>,
}

impl<'a, C: Coefficients + ?Sized> FullSystem<'a, C> {
    fn new(coeffs: &'a C, tree: &'a ScenarioTree) -> Self {
        let n = tree.grid().steps();
        let lay = coeffs.layout();
        let leaves = tree.leaf_count();
        let totals = |drivers: Vec<Driver>| {
            let paths: Vec<Vec<f64>> = drivers.iter().map(|&d| tree.leaf_path(d).swap_remove(n)).collect();
            let k = paths.len();
            let mut out = vec![0.0; leaves * k];
            for (c, p) in paths.iter().enumerate() {
                for leaf in 0..leaves {
                    out[leaf * k + c] = p[leaf];
                }
            }
            out
        };
        Self {
            coeffs,
            tree,
            atoms: (0..=n).map(|i| Atoms::new(tree, &InformationIndex::at(i))).collect(),
            w_total: totals((0..lay.d).map(Driver::W).collect()),
            b_total: totals((0..lay.l).map(Driver::B).collect()),
            jump_total: totals((0..lay.j).map(Driver::Jump).collect()),
        }
    }

    fn rhs(&self, u: &SolutionField) -> SolutionField {
        let c = self.coeffs;
        let lay = c.layout();
        let tree = self.tree;
        let n = tree.grid().steps();
        let dt = tree.grid().dt();
        let leaves = tree.leaf_count();
        let mut out = u.clone();
        let eval = |i: usize, width: usize, body: &dyn Fn(&crate::coefficients::QuintupleRef, &mut [f64])| {
            let mut v = vec![0.0; leaves * width];
            for leaf in 0..leaves {
                body(&u.node(i, leaf), &mut v[leaf * width..(leaf + 1) * width]);
            }
            v
        };
        let t = |i: usize| tree.grid().node(i);
        let var = |d: Driver| tree.increment_variance(d);

        let mut y0 = vec![0.0; leaves * lay.n];
        for leaf in 0..leaves {
            c.psi(
                &u.big_y[0][leaf * lay.m..(leaf + 1) * lay.m],
                &self.b_total[leaf * lay.l..(leaf + 1) * lay.l],
                &mut y0[leaf * lay.n..(leaf + 1) * lay.n],
            );
        }
        out.y[0] = y0;
        for i in 0..n {
            let b = eval(i, lay.n, &|q, o| c.b(t(i), q, o));
            let sg = eval(i, lay.n * lay.d, &|q, o| c.sigma(t(i), q, o));
            let ph = eval(i, lay.n * lay.j, &|q, o| {
                for j in 0..lay.j {
                    c.phi(t(i), q, j, &mut o[j * lay.n..(j + 1) * lay.n]);
                }
            });
            let mut x = u.y[i].clone();
            for leaf in 0..leaves {
                for a in 0..lay.n {
                    x[leaf * lay.n + a] += b[leaf * lay.n + a] * dt;
                }
            }
            for k in 0..lay.d {
                let inc = tree.leaf_increment(i, Driver::W(k));
                for leaf in 0..leaves {
                    for a in 0..lay.n {
                        x[leaf * lay.n + a] += sg[leaf * lay.n * lay.d + a * lay.d + k] * inc[leaf];
                    }
                }
            }
            for j in 0..lay.j {
                let inc = tree.leaf_increment(i, Driver::Jump(j));
                for leaf in 0..leaves {
                    for a in 0..lay.n {
                        x[leaf * lay.n + a] += ph[leaf * lay.n * lay.j + j * lay.n + a] * inc[leaf];
                    }
                }
            }
            let at = &self.atoms[i + 1];
            out.y[i + 1] = at.expect(&x, lay.n);
            let mut z = vec![0.0; leaves * lay.z_len()];
            for k in 0..lay.l {
                let v = var(Driver::B(k));
                if v == 0.0 {
                    continue;
                }
                let inc = tree.leaf_increment(i, Driver::B(k));
                let p = at.expect(&times(&x, &inc, lay.n), lay.n);
                for leaf in 0..leaves {
                    for a in 0..lay.n {
                        z[leaf * lay.z_len() + a * lay.l + k] = p[leaf * lay.n + a] / v;
                    }
                }
            }
            out.z[i + 1] = z;
        }
        out.z[0] = self.atoms[0].expect(&out.z[1], lay.z_len());

        let mut yn = vec![0.0; leaves * lay.m];
        for leaf in 0..leaves {
            c.h(
                &u.y[n][leaf * lay.n..(leaf + 1) * lay.n],
                &self.w_total[leaf * lay.d..(leaf + 1) * lay.d],
                &self.jump_total[leaf * lay.j..(leaf + 1) * lay.j],
                &mut yn[leaf * lay.m..(leaf + 1) * lay.m],
            );
        }
        out.big_y[n] = yn;
        for i in (0..n).rev() {
            let f = eval(i + 1, lay.m, &|q, o| c.f(t(i + 1), q, o));
            let g = eval(i + 1, lay.m * lay.l, &|q, o| c.g(t(i + 1), q, o));
            let mut x = u.big_y[i + 1].clone();
            for (xv, fv) in x.iter_mut().zip(&f) {
                *xv -= fv * dt;
            }
            for k in 0..lay.l {
                let inc = tree.leaf_increment(i, Driver::B(k));
                for leaf in 0..leaves {
                    for a in 0..lay.m {
                        x[leaf * lay.m + a] -= g[leaf * lay.m * lay.l + a * lay.l + k] * inc[leaf];
                    }
                }
            }
            let at = &self.atoms[i];
            out.big_y[i] = at.expect(&x, lay.m);
            let mut bz = vec![0.0; leaves * lay.big_z_len()];
            for k in 0..lay.d {
                let v = var(Driver::W(k));
                if v == 0.0 {
                    continue;
                }
                let inc = tree.leaf_increment(i, Driver::W(k));
                let p = at.expect(&times(&x, &inc, lay.m), lay.m);
                for leaf in 0..leaves {
                    for a in 0..lay.m {
                        bz[leaf * lay.big_z_len() + a * lay.d + k] = p[leaf * lay.m + a] / v;
                    }
                }
            }
            let mut kk = vec![0.0; leaves * lay.k_len()];
            for j in 0..lay.j {
                let v = var(Driver::Jump(j));
                if v == 0.0 {
                    continue;
                }
                let inc = tree.leaf_increment(i, Driver::Jump(j));
                let p = at.expect(&times(&x, &inc, lay.m), lay.m);
                for leaf in 0..leaves {
                    for a in 0..lay.m {
                        kk[leaf * lay.k_len() + j * lay.m + a] = p[leaf * lay.m + a] / v;
                    }
                }
            }
            out.big_z[i] = bz;
            out.k[i] = kk;
        }
        out.big_z[n] = self.atoms[n].expect(&out.big_z[n - 1], lay.big_z_len());
        out.k[n] = self.atoms[n].expect(&out.k[n - 1], lay.k_len());
        out
    }
}

fn leaf_field(tree: &ScenarioTree, u: &SolutionField) -> SolutionField {
    let w = widths(u.layout);
    let mut out = u.clone();
    for (b, block) in out.blocks_mut().into_iter().enumerate() {
        for (i, layer) in block.iter_mut().enumerate() {
            *layer = tree.expand_layer(i, layer, w[b]);
        }
    }
    out
}

fn layer_field(tree: &ScenarioTree, u: &SolutionField) -> SolutionField {
    let w = widths(u.layout);
    let mut out = u.clone();
    for (b, block) in out.blocks_mut().into_iter().enumerate() {
        for (i, layer) in block.iter_mut().enumerate() {
            *layer = tree.compress_layer(i, layer, w[b]);
        }
    }
    out
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Newton's method with a dense finite-difference Jacobian on the complete
/// unknown vector of the fully coupled discrete system, from `restarts`
/// random starts. Convergence means `max|RHS(u) − u| ≤ tolerance`.
pub fn brute_force_fixed_point<C: Coefficients + ?Sized>(
    coeffs: &C,
    tree: &ScenarioTree,
    tolerance: f64,
    cfg: &BruteForceConfig,
) -> Result<BruteForceOutcome> {
    let lay = coeffs.layout();
    if tree.dims() != coeffs.dims() || tree.marks().count() != lay.j {
        return Err(Error::Shape("coefficients and tree disagree on dimensions".into()));
    }
    let template = SolutionField::zeros(tree, lay);
    let unknowns = template.flat_len();
    if unknowns > cfg.max_unknowns {
        return Err(Error::Unsupported(format!("{unknowns} unknowns exceed the oracle's cap of {}", cfg.max_unknowns)));
    }
    if cfg.restarts == 0 {
        return Err(Error::Config("brute force needs restarts ≥ 1".into()));
    }
    if let BruteForceMethod::Damped { damping } = cfg.method {
        if !(damping > 0.0 && damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
    }
    let jac = FullSystem::new(coeffs, tree);
    let affine = coeffs.is_affine();
    let map = |x: &[f64]| -> Vec<f64> {
        let g = layer_field(tree, &jac.rhs(&leaf_field(tree, &template.with_flat(x)))).to_flat();
        g.iter().zip(x).map(|(a, b)| a - b).collect()
    };
    let runs: Vec<Result<(SolutionField, usize)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut x = random_field(tree, lay, cfg.seed.wrapping_add(r as u64), cfg.init_scale).to_flat();
            if let BruteForceMethod::Damped { damping } = cfg.method {
                let sweeps = cfg.max_newton.saturating_mul(10_000);
                for it in 0..=sweeps {
                    let fx = map(&x);
                    let gap = fx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if !gap.is_finite() {
                        return Err(Error::NoConvergence("brute force diverged".into()));
                    }
                    if gap <= tolerance {
                        return Ok((template.with_flat(&x), it));
                    }
                    x.iter_mut().zip(&fx).for_each(|(a, d)| *a += damping * d);
                }
                return Err(Error::NoConvergence(format!("damped iteration did not converge in {sweeps} sweeps")));
            }
            for it in 0..=cfg.max_newton {
                let fx = map(&x);
                let gap = fx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if !gap.is_finite() {
                    return Err(Error::NoConvergence("brute force diverged".into()));
                }
                if gap <= tolerance {
                    return Ok((template.with_flat(&x), it));
                }
                if it == cfg.max_newton {
                    break;
                }
                let mut jm = DMatrix::zeros(unknowns, unknowns);
                for col in 0..unknowns {
                    let h = if affine { 1.0 } else { 1e-7 * x[col].abs().max(1.0) };
                    let mut xp = x.clone();
                    xp[col] += h;
                    let fp = map(&xp);
                    for row in 0..unknowns {
                        jm[(row, col)] = (fp[row] - fx[row]) / h;
                    }
                }
                let rhs = DVector::from_iterator(unknowns, fx.iter().map(|v| -v));
                let step = jm.lu().solve(&rhs).ok_or_else(|| Error::LinearSolve("singular brute-force Jacobian".into()))?;
                x.iter_mut().zip(step.iter()).for_each(|(a, d)| *a += d);
            }
            Err(Error::NoConvergence(format!("brute force did not converge in {} Newton steps", cfg.max_newton)))
        })
        .collect();
    let mut fields = Vec::new();
    let mut iterations = Vec::new();
    for r in runs {
        let (f, it) = r?;
        fields.push(f);
        iterations.push(it);
    }
    let flats: Vec<Vec<f64>> = fields.iter().map(|f| f.to_flat()).collect();
    let mut spread = 0.0f64;
    for a in 0..flats.len() {
        for b in a + 1..flats.len() {
            spread = spread.max(max_gap(&flats[a], &flats[b]));
        }
    }
    if spread > 10.0 * tolerance {
        return Err(Error::PossibleNonUniqueness { spread });
    }
    Ok(BruteForceOutcome { field: fields.swap_remove(0), iterations, spread })
}

fn random_field<M: NoiseModel + ?Sized>(model: &M, lay: crate::coefficients::Layout, seed: u64, scale: f64) -> SolutionField {
    let mut f = SolutionField::zeros(model, lay);
    let mut rng = keyed_rng(seed, 0xB2_07E, 0, 0);
    for block in f.blocks_mut() {
        for layer in block.iter_mut() {
            layer.iter_mut().for_each(|v| *v = scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub trials: usize,
    pub tolerance: f64,
    pub distances: Vec<f64>,
    pub max_distance: f64,
}

impl UniquenessReport {
    pub fn within(&self, factor: f64) -> bool {
        self.max_distance <= factor * self.tolerance
    }
}

/// Run the continuation from `trials` independent random starts and return
/// the largest pairwise composite distance between the final fields.
pub fn uniqueness_probe<M: NoiseModel + ?Sized, C: Coefficients + ?Sized>(
    model: &M,
    coeffs: &C,
    cfg: &ContinuationConfig,
    trials: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    if trials < 2 {
        return Err(Error::Config("uniqueness probe needs at least 2 trials".into()));
    }
    let fields: Vec<Result<SolutionField>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut c = *cfg;
            c.start = StartPolicy::Random { seed: seed.wrapping_mul(31).wrapping_add(k as u64 * 1_000_003), scale: 1.0 };
            continuation_solve(model, coeffs, &c).map(|o| o.field)
        })
        .collect();
    let fields: Vec<SolutionField> = fields.into_iter().collect::<Result<_>>()?;
    let mut distances = Vec::new();
    for a in 0..fields.len() {
        for b in a + 1..fields.len() {
            distances.push(composite_distance(model, &fields[a], &fields[b])?);
        }
    }
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    Ok(UniquenessReport { trials, tolerance: cfg.tolerance, distances, max_distance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub steps: usize,
    pub dt: f64,
    pub residual_max: f64,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `log(error)` (or `log(residual)` without an
    /// oracle) against `log(Δt)`; `None` when the quantity vanishes.
    pub slope: Option<f64>,
    pub slope_of: String,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().chain(x).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Largest gap between the layer means of `(y, Y)` and a scalar oracle.
pub fn mean_error<M: NoiseModel + ?Sized>(model: &M, u: &SolutionField, oracle: &BvpTrajectory) -> f64 {
    (0..=u.steps())
        .map(|i| {
            let y = SolutionField::layer_mean(model, &u.y[i], i, 1)[0];
            let big_y = SolutionField::layer_mean(model, &u.big_y[i], i, 1)[0];
            (y - oracle.y[i]).abs().max((big_y - oracle.big_y[i]).abs())
        })
        .fold(0.0, f64::max)
}

/// Solve the problem built by `build` for each step count and tabulate the
/// residual of the discrete system and, with an oracle, the error of the
/// layer means against it.
pub fn decay_study<C, F>(
    build: F,
    steps: &[usize],
    cfg: &ContinuationConfig,
    oracle: Option<&LinearBvpSpec>,
) -> Result<DecayStudy>
where
    C: Coefficients,
    F: Fn(usize) -> Result<(ScenarioTree, C)> + Sync,
{
    let rows: Vec<Result<DecayRow>> = steps
        .par_iter()
        .map(|&n| {
            let (tree, coeffs) = build(n)?;
            let out = continuation_solve(&tree, &coeffs, cfg)?;
            let error = match oracle {
                Some(spec) => Some(mean_error(&tree, &out.field, &linear_bvp_oracle(spec, n)?)),
                None => None,
            };
            Ok(DecayRow { steps: n, dt: tree.grid().dt(), residual_max: out.report.residual.max(), error })
        })
        .collect();
    let rows: Vec<DecayRow> = rows.into_iter().collect::<Result<_>>()?;
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let (slope, slope_of) = if oracle.is_some() {
        let e: Vec<f64> = rows.iter().map(|r| r.error.unwrap_or(0.0)).collect();
        (log_slope(&dts, &e), "error".to_string())
    } else {
        let e: Vec<f64> = rows.iter().map(|r| r.residual_max).collect();
        (log_slope(&dts, &e), "residual".to_string())
    };
    Ok(DecayStudy { rows, slope, slope_of })
}
