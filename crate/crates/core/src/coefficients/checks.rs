use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bracket, Coefficients, Layout, Orientation};
use crate::continuation::Variant;
use crate::error::{Error, Result};
use crate::noise::keyed_rng;
use nalgebra::DMatrix;

/// Shape of the cloud the pair differences are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SampleCloud {
    Gaussian { scale: f64 },
    /// Uniform directions on the unit sphere with radii cycling through the strata.
    Sphere { radii: Vec<f64> },
}

/// Deterministic generator of argument pairs for the checkers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub count: usize,
    pub seed: u64,
    pub cloud: SampleCloud,
    pub horizon: f64,
}

struct Sample {
    t: f64,
    u: Vec<f64>,
    ubar: Vec<f64>,
    noise: Vec<f64>,
}

impl Sampler {
    pub fn gaussian(count: usize, seed: u64) -> Self {
        Self { count, seed, cloud: SampleCloud::Gaussian { scale: 1.0 }, horizon: 1.0 }
    }

    pub fn sphere(count: usize, seed: u64) -> Self {
        Self { count, seed, cloud: SampleCloud::Sphere { radii: vec![1e-3, 1e-1, 1.0, 10.0] }, horizon: 1.0 }
    }

    fn draw(&self, idx: usize, q: usize, noise_len: usize, mask: Option<&[bool]>) -> Sample {
        let mut rng = keyed_rng(self.seed, idx as u64, 0, mask.map_or(0, |m| 1 + mask_id(m)));
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let (base_scale, mut delta): (f64, Vec<f64>) = match &self.cloud {
            SampleCloud::Gaussian { scale } => (*scale, (0..q).map(|_| scale * normal()).collect()),
            SampleCloud::Sphere { radii } => {
                let dir: Vec<f64> = (0..q).map(|_| normal()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = radii[idx % radii.len()];
                (1.0, dir.iter().map(|v| r * v / norm).collect())
            }
        };
        if let Some(mask) = mask {
            delta.iter_mut().zip(mask).for_each(|(v, keep)| {
                if !keep {
                    *v = 0.0
                }
            });
        }
        let u: Vec<f64> = (0..q).map(|_| base_scale * normal()).collect();
        let noise = (0..noise_len).map(|_| normal()).collect();
        let ubar = u.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let t = self.horizon * rng.gen::<f64>();
        Sample { t, u, ubar, noise }
    }
}

fn mask_id(mask: &[bool]) -> u64 {
    mask.iter().fold(0u64, |acc, &b| acc.wrapping_mul(31).wrapping_add(b as u64 + 1))
}

/// A violating (or worst) sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub upsilon: Vec<f64>,
    pub upsilon_bar: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub worst_margin: f64,
    pub max_abs_margin: f64,
    pub witness: Option<Witness>,
}

impl ConditionReport {
    fn from_margins(margins: &[(f64, usize)], samples: &[Sample], tolerance: f64) -> Self {
        let mut worst = f64::INFINITY;
        let mut worst_idx = None;
        let mut max_abs: f64 = 0.0;
        for &(m, i) in margins {
            max_abs = max_abs.max(m.abs());
            if m < worst {
                worst = m;
                worst_idx = Some(i);
            }
        }
        let witness = worst_idx.filter(|_| worst < -tolerance).map(|i| Witness {
            t: samples[i].t,
            upsilon: samples[i].u.clone(),
            upsilon_bar: samples[i].ubar.clone(),
            margin: worst,
        });
        Self { worst_margin: if margins.is_empty() { 0.0 } else { worst }, max_abs_margin: max_abs, witness }
    }

    fn passes(&self, tolerance: f64) -> bool {
        self.worst_margin >= -tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    pub orientation: Orientation,
    pub tolerance: f64,
    pub bracket: ConditionReport,
    pub initial_map: ConditionReport,
    pub terminal_map: ConditionReport,
    pub pass: bool,
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn noise_len(lay: Layout) -> usize {
    lay.d + lay.l + lay.j
}

fn split_noise(lay: Layout, noise: &[f64]) -> (&[f64], &[f64], &[f64]) {
    let (w, rest) = noise.split_at(lay.d);
    let (b, jumps) = rest.split_at(lay.l);
    (w, b, jumps)
}

/// Sampled margins of the monotonicity hypotheses on the bracket and on the
/// boundary maps, in the coefficient set's declared orientation.
pub fn check_monotonicity<C: Coefficients + ?Sized>(coeffs: &C, sampler: &Sampler, tolerance: f64) -> MonotonicityReport {
    let lay = coeffs.layout();
    let cp = coeffs.coupling();
    let mono = cp.monotone;
    let s = cp.orientation.sign();
    let marks = coeffs.marks();
    let samples: Vec<Sample> =
        (0..sampler.count).into_par_iter().map(|i| sampler.draw(i, lay.total(), noise_len(lay), None)).collect();
    let margins: Vec<(f64, f64, f64)> = samples
        .par_iter()
        .map(|smp| {
            let v = lay.view(&smp.u);
            let vb = lay.view(&smp.ubar);
            let br = bracket(coeffs, smp.t, &v, &vb);
            let dy = diff(v.y, vb.y);
            let dyy = diff(v.big_y, vb.big_y);
            let dz = diff(v.z, vb.z);
            let dzz = diff(v.big_z, vb.big_z);
            let dk = diff(v.k, vb.k);
            let mut ry = vec![0.0; lay.m];
            let mut rz = vec![0.0; lay.m * lay.l];
            let mut rty = vec![0.0; lay.n];
            let mut rtz = vec![0.0; lay.n * lay.d];
            let mut rtk = vec![0.0; lay.n * lay.j];
            cp.r_mul(&dy, 1, &mut ry);
            cp.r_mul(&dz, lay.l, &mut rz);
            cp.rt_mul(&dyy, 1, &mut rty);
            cp.rt_mul(&dzz, lay.d, &mut rtz);
            for j in 0..lay.j {
                cp.rt_mul(&dk[j * lay.m..(j + 1) * lay.m], 1, &mut rtk[j * lay.n..(j + 1) * lay.n]);
            }
            let q = mono.theta1 * (sq(&ry) + sq(&rz))
                + mono.theta2 * (sq(&rty) + sq(&rtz) + marks.weighted_norm_sq(&rtk, lay.n));
            let a1 = -s * br - q;

            let (w, b, jumps) = split_noise(lay, &smp.noise);
            let mut psi = vec![0.0; lay.n];
            let mut psib = vec![0.0; lay.n];
            coeffs.psi(v.big_y, b, &mut psi);
            coeffs.psi(vb.big_y, b, &mut psib);
            let a2_psi = -s * dot(&diff(&psi, &psib), &rty) - mono.beta2 * sq(&rty);
            let mut h = vec![0.0; lay.m];
            let mut hb = vec![0.0; lay.m];
            coeffs.h(v.y, w, jumps, &mut h);
            coeffs.h(vb.y, w, jumps, &mut hb);
            let a2_h = s * dot(&diff(&h, &hb), &ry) - mono.beta1 * sq(&ry);
            (a1, a2_psi, a2_h)
        })
        .collect();
    let pick = |k: usize| -> Vec<(f64, usize)> {
        margins.iter().enumerate().map(|(i, m)| ([m.0, m.1, m.2][k], i)).collect()
    };
    let bracket_report = ConditionReport::from_margins(&pick(0), &samples, tolerance);
    let initial_map = ConditionReport::from_margins(&pick(1), &samples, tolerance);
    let terminal_map = ConditionReport::from_margins(&pick(2), &samples, tolerance);
    let pass = bracket_report.passes(tolerance) && initial_map.passes(tolerance) && terminal_map.passes(tolerance);
    MonotonicityReport {
        samples: sampler.count,
        orientation: cp.orientation,
        tolerance,
        bracket: bracket_report,
        initial_map,
        terminal_map,
        pass,
    }
}

/// Empirical Lipschitz ratios of one coefficient.
///
/// `main_ratio` is the largest `|Δcoef|²` per unit of the `c`-weighted
/// argument difference over pairs whose split arguments agree; `split_ratio`
/// the same per unit of the split arguments (`z` for σ and φ, `(Z, k)` for g)
/// over pairs differing only there. Ψ and h use unsquared ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEntry {
    pub name: String,
    pub main_ratio: f64,
    pub declared_main: f64,
    pub split_ratio: Option<f64>,
    pub declared_split: Option<f64>,
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub samples: usize,
    pub entries: Vec<LipschitzEntry>,
    /// `|A(t,0)|²` integrated over `[0,T]` (trapezoid on 65 nodes).
    pub zero_norm: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Coef {
    B,
    F,
    Sigma,
    Phi,
    G,
    Psi,
    H,
}

struct Parts {
    y: f64,
    big_y: f64,
    z: f64,
    big_z: f64,
    k: f64,
}

fn eval_sq_diff<C: Coefficients + ?Sized>(coeffs: &C, which: Coef, smp: &Sample, lay: Layout) -> f64 {
    let v = lay.view(&smp.u);
    let vb = lay.view(&smp.ubar);
    let (w, b, jumps) = split_noise(lay, &smp.noise);
    let run = |len: usize, eval: &dyn Fn(&super::QuintupleRef, &mut [f64])| {
        let mut a = vec![0.0; len];
        let mut ab = vec![0.0; len];
        eval(&v, &mut a);
        eval(&vb, &mut ab);
        sq(&diff(&a, &ab))
    };
    match which {
        Coef::B => run(lay.n, &|u, o| coeffs.b(smp.t, u, o)),
        Coef::F => run(lay.m, &|u, o| coeffs.f(smp.t, u, o)),
        Coef::Sigma => run(lay.n * lay.d, &|u, o| coeffs.sigma(smp.t, u, o)),
        Coef::G => run(lay.m * lay.l, &|u, o| coeffs.g(smp.t, u, o)),
        Coef::Phi => (0..lay.j).map(|j| run(lay.n, &|u, o| coeffs.phi(smp.t, u, j, o))).fold(0.0, f64::max),
        Coef::Psi => run(lay.n, &|u, o| coeffs.psi(u.big_y, b, o)).sqrt(),
        Coef::H => run(lay.m, &|u, o| coeffs.h(u.y, w, jumps, o)).sqrt(),
    }
}

fn parts(lay: Layout, smp: &Sample, marks: &crate::noise::MarkSpace) -> Parts {
    let v = lay.view(&smp.u);
    let vb = lay.view(&smp.ubar);
    Parts {
        y: sq(&diff(v.y, vb.y)),
        big_y: sq(&diff(v.big_y, vb.big_y)),
        z: sq(&diff(v.z, vb.z)),
        big_z: sq(&diff(v.big_z, vb.big_z)),
        k: marks.weighted_norm_sq(&diff(v.k, vb.k), lay.m),
    }
}

fn block_mask(lay: Layout, keep: [bool; 5]) -> Vec<bool> {
    let sizes = [lay.n, lay.m, lay.z_len(), lay.big_z_len(), lay.k_len()];
    sizes.iter().zip(keep).flat_map(|(&len, k)| std::iter::repeat(k).take(len)).collect()
}

/// Sampled check of the Lipschitz hypotheses against the declared `c, γ, γ′`.
pub fn check_lipschitz<C: Coefficients + ?Sized>(coeffs: &C, sampler: &Sampler) -> LipschitzReport {
    let lay = coeffs.layout();
    let lip = coeffs.coupling().lipschitz;
    let marks = coeffs.marks();
    let nl = noise_len(lay);
    let draw_all = |mask: Option<Vec<bool>>| -> Vec<Sample> {
        (0..sampler.count).into_par_iter().map(|i| sampler.draw(i, lay.total(), nl, mask.as_deref())).collect()
    };
    let general = draw_all(None);
    let no_z = draw_all(Some(block_mask(lay, [true, true, false, true, true])));
    let z_only = draw_all(Some(block_mask(lay, [false, false, true, false, false])));
    let no_zk = draw_all(Some(block_mask(lay, [true, true, true, false, false])));
    let zk_only = draw_all(Some(block_mask(lay, [false, false, false, true, true])));
    let tol = 1e-9;

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let max_over = |set: &[Sample], which: Coef, den: &(dyn Fn(&Parts) -> f64 + Sync)| -> f64 {
        set.par_iter()
            .map(|s| ratio(eval_sq_diff(coeffs, which, s, lay), den(&parts(lay, s, marks))))
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max)
    };
    let worst = |sets: &[&[Sample]], which: Coef, rhs: &(dyn Fn(&Parts) -> f64 + Sync)| -> f64 {
        sets.iter()
            .flat_map(|set| {
                set.par_iter()
                    .map(|s| {
                        let p = parts(lay, s, marks);
                        let r = rhs(&p);
                        (r - eval_sq_diff(coeffs, which, s, lay)) / r.max(1e-300)
                    })
                    .collect::<Vec<f64>>()
            })
            .fold(f64::INFINITY, f64::min)
    };

    let full = |p: &Parts| p.y + p.big_y + p.z + p.big_z + p.k;
    let mut entries = Vec::new();
    for (name, which) in [("b", Coef::B), ("f", Coef::F)] {
        let main = max_over(&general, which, &full);
        let wm = worst(&[&general], which, &|p| lip.c * full(p));
        entries.push(LipschitzEntry {
            name: name.into(),
            main_ratio: main,
            declared_main: lip.c,
            split_ratio: None,
            declared_split: None,
            worst_margin: wm,
            pass: wm >= -tol,
        });
    }
    for (name, which) in [("sigma", Coef::Sigma), ("phi", Coef::Phi)] {
        let rest = |p: &Parts| p.y + p.big_y + p.big_z + p.k;
        let main = max_over(&no_z, which, &rest);
        let split = max_over(&z_only, which, &|p: &Parts| p.z);
        let wm = worst(&[&general, &no_z, &z_only], which, &|p| lip.c * rest(p) + lip.gamma_prime * p.z);
        entries.push(LipschitzEntry {
            name: name.into(),
            main_ratio: main,
            declared_main: lip.c,
            split_ratio: Some(split),
            declared_split: Some(lip.gamma_prime),
            worst_margin: wm,
            pass: wm >= -tol,
        });
    }
    {
        let rest = |p: &Parts| p.y + p.big_y + p.z;
        let main = max_over(&no_zk, Coef::G, &rest);
        let split = max_over(&zk_only, Coef::G, &|p: &Parts| p.big_z + p.k);
        let wm = worst(&[&general, &no_zk, &zk_only], Coef::G, &|p| lip.c * rest(p) + lip.gamma * (p.big_z + p.k));
        entries.push(LipschitzEntry {
            name: "g".into(),
            main_ratio: main,
            declared_main: lip.c,
            split_ratio: Some(split),
            declared_split: Some(lip.gamma),
            worst_margin: wm,
            pass: wm >= -tol,
        });
    }
    for (name, which, pick) in [
        ("psi", Coef::Psi, (|p: &Parts| p.big_y) as fn(&Parts) -> f64),
        ("h", Coef::H, (|p: &Parts| p.y) as fn(&Parts) -> f64),
    ] {
        let main = max_over(&general, which, &|p: &Parts| pick(p).sqrt());
        let wm = worst(&[&general], which, &|p| lip.c * pick(p).sqrt());
        entries.push(LipschitzEntry {
            name: name.into(),
            main_ratio: main,
            declared_main: lip.c,
            split_ratio: None,
            declared_split: None,
            worst_margin: wm,
            pass: wm >= -tol,
        });
    }
    let zero_norm = zero_quintuple_norm(coeffs, sampler.horizon);
    let pass = entries.iter().all(|e| e.pass) && zero_norm.is_finite();
    LipschitzReport { samples: sampler.count, entries, zero_norm, pass }
}

fn zero_quintuple_norm<C: Coefficients + ?Sized>(coeffs: &C, horizon: f64) -> f64 {
    let lay = coeffs.layout();
    let zero = vec![0.0; lay.total()];
    let v = lay.view(&zero);
    let nodes = 64;
    (0..=nodes)
        .map(|i| {
            let t = horizon * i as f64 / nodes as f64;
            let a = super::assemble_a(coeffs, t, &v);
            let w = if i == 0 || i == nodes { 0.5 } else { 1.0 };
            w * (sq(&a.rt_f) + sq(&a.r_b) + sq(&a.rt_g) + sq(&a.r_sigma) + coeffs.marks().weighted_norm_sq(&a.r_phi, lay.m))
        })
        .sum::<f64>()
        * horizon
        / nodes as f64
}

/// Outcome of the hypothesis validation for the existence theorem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditionVerdict {
    pub valid: bool,
    pub violations: Vec<String>,
    pub variant: Option<Variant>,
}

impl PreconditionVerdict {
    pub fn into_result(self) -> Result<Variant> {
        match (self.valid, self.variant) {
            (true, Some(v)) => Ok(v),
            _ => Err(Error::Precondition(self.violations.join("; "))),
        }
    }
}

/// Check the declared constants against the existence theorem's hypotheses
/// and pick the continuation family.
pub fn validate_theorem_preconditions<C: Coefficients + ?Sized>(coeffs: &C) -> PreconditionVerdict {
    let dims = coeffs.dims();
    let cp = coeffs.coupling();
    let p = cp.monotone;
    let lip = cp.lipschitz;
    let (n, m) = (dims.n, dims.m);
    let mut v = Vec::new();
    let nonneg = [("θ1", p.theta1), ("θ2", p.theta2), ("β1", p.beta1), ("β2", p.beta2)];
    for (name, x) in nonneg {
        if !(x >= 0.0) {
            v.push(format!("{name}≥0 fails"));
        }
    }
    if !(p.theta1 + p.theta2 > 0.0) {
        v.push("θ1+θ2>0 fails".into());
    }
    if !(p.beta1 + p.beta2 > 0.0) {
        v.push("β1+β2>0 fails".into());
    }
    if !(p.theta1 + p.beta2 > 0.0) {
        v.push("θ1+β2>0 fails".into());
    }
    if !(p.theta2 + p.beta1 > 0.0) {
        v.push("θ2+β1>0 fails".into());
    }
    if m > n {
        if !(p.theta1 > 0.0) {
            v.push("θ1>0 (m>n) fails".into());
        }
        if !(p.beta1 > 0.0) {
            v.push("β1>0 (m>n) fails".into());
        }
    }
    if n > m {
        if !(p.theta2 > 0.0) {
            v.push("θ2>0 (n>m) fails".into());
        }
        if !(p.beta2 > 0.0) {
            v.push("β2>0 (n>m) fails".into());
        }
    }
    if !(lip.c > 0.0) {
        v.push("c>0 fails".into());
    }
    if !(lip.gamma > 0.0 && lip.gamma < 1.0) {
        v.push("0<γ<1 fails".into());
    }
    if m > n {
        if !(lip.gamma_prime > 0.0 && lip.gamma_prime < 1.0) {
            v.push("0<γ′<1 (m>n) fails".into());
        }
    } else if !(lip.gamma_prime > 0.0) {
        v.push("γ′>0 fails".into());
    } else if lip.gamma_prime > lip.gamma / 2.0 {
        v.push("γ′>γ/2 (m≤n): γ′≤γ/2 fails".into());
    }
    let variant = if m > n {
        Some(Variant::ForwardFirst)
    } else if m < n {
        Some(Variant::BackwardFirst)
    } else if p.theta1 > 0.0 && p.beta1 > 0.0 {
        Some(Variant::ForwardFirst)
    } else if p.theta2 > 0.0 && p.beta2 > 0.0 {
        Some(Variant::BackwardFirst)
    } else {
        v.push("m=n needs θ1,β1>0 or θ2,β2>0".into());
        None
    };
    if let Err(e) = rank_bounds(cp.r()) {
        v.push(e.to_string());
    }
    PreconditionVerdict { valid: v.is_empty(), violations: v, variant }
}

/// Extreme values of `|Rx|` (or `|R*x|` when `m<n`) on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankBounds {
    pub lower: f64,
    pub upper: f64,
}

pub fn rank_bounds(r: &DMatrix<f64>) -> Result<RankBounds> {
    let sv = r.clone().svd(false, false).singular_values;
    let upper = sv.max();
    let lower = sv.min();
    if r.nrows() == 0 || r.ncols() == 0 || !(lower > 1e-12 * upper.max(1.0)) {
        return Err(Error::RankDeficient(lower));
    }
    Ok(RankBounds { lower, upper })
}
