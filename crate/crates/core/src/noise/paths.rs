use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use super::grid::{Dims, MarkSpace, NoiseSources, TimeGrid};
use super::tree::{Driver, Side};
use super::NoiseModel;
use crate::error::{Error, Result};

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for one `(seed, path, step, component)` coordinate.
pub fn keyed_rng(seed: u64, path: u64, step: u64, component: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(splitmix(seed) ^ path) ^ step) ^ component);
    ChaCha8Rng::seed_from_u64(key)
}

/// Monte Carlo sample of the noise increments.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    dims: Dims,
    marks: MarkSpace,
    paths: usize,
    seed: u64,
    dw: Vec<f64>,
    db: Vec<f64>,
    dn: Vec<f64>,
}

/// Draw `paths` independent paths of `(ΔW, ΔB, ΔN)`.
pub fn sample_paths(grid: TimeGrid, dims: Dims, marks: &MarkSpace, paths: usize, seed: u64) -> Result<PathBundle> {
    PathBundle::sample(grid, dims, marks, paths, seed)
}

impl PathBundle {
    pub fn sample(grid: TimeGrid, dims: Dims, marks: &MarkSpace, paths: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        if paths == 0 {
            return Err(Error::Shape("path count must be ≥ 1".into()));
        }
        let (n, d, l, jn) = (grid.steps(), dims.d, dims.l, marks.count());
        let sqdt = grid.dt().sqrt();
        let poissons: Vec<Poisson<f64>> = marks
            .intensities()
            .iter()
            .map(|p| Poisson::new(p * grid.dt()).map_err(|e| Error::InvalidMarks(e.to_string())))
            .collect::<Result<_>>()?;
        let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let mut w = Vec::with_capacity(n * d);
                let mut b = Vec::with_capacity(n * l);
                let mut k = Vec::with_capacity(n * jn);
                for s in 0..n {
                    for c in 0..d {
                        let x: f64 = StandardNormal.sample(&mut keyed_rng(seed, p as u64, s as u64, c as u64));
                        w.push(sqdt * x);
                    }
                    for c in 0..l {
                        let x: f64 = StandardNormal.sample(&mut keyed_rng(seed, p as u64, s as u64, (d + c) as u64));
                        b.push(sqdt * x);
                    }
                    for (j, law) in poissons.iter().enumerate() {
                        k.push(law.sample(&mut keyed_rng(seed, p as u64, s as u64, (d + l + j) as u64)));
                    }
                }
                (w, b, k)
            })
            .collect();
        let mut dw = vec![0.0; n * paths * d];
        let mut db = vec![0.0; n * paths * l];
        let mut dn = vec![0.0; n * paths * jn];
        for (p, (w, b, k)) in rows.into_iter().enumerate() {
            for s in 0..n {
                dw[(s * paths + p) * d..(s * paths + p + 1) * d].copy_from_slice(&w[s * d..(s + 1) * d]);
                db[(s * paths + p) * l..(s * paths + p + 1) * l].copy_from_slice(&b[s * l..(s + 1) * l]);
                dn[(s * paths + p) * jn..(s * paths + p + 1) * jn].copy_from_slice(&k[s * jn..(s + 1) * jn]);
            }
        }
        Ok(Self { grid, dims, marks: marks.clone(), paths, seed, dw, db, dn })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn marks(&self) -> &MarkSpace {
        &self.marks
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dw(&self, step: usize, path: usize, c: usize) -> f64 {
        self.dw[(step * self.paths + path) * self.dims.d + c]
    }

    pub fn db(&self, step: usize, path: usize, c: usize) -> f64 {
        self.db[(step * self.paths + path) * self.dims.l + c]
    }

    pub fn jump_count(&self, step: usize, path: usize, j: usize) -> f64 {
        self.dn[(step * self.paths + path) * self.marks.count() + j]
    }

    /// `ΔN - Π_j Δt`.
    pub fn compensated_jump(&self, step: usize, path: usize, j: usize) -> f64 {
        self.jump_count(step, path, j) - self.marks.intensity(j) * self.grid.dt()
    }

    fn raw_increment(&self, step: usize, driver: Driver) -> Vec<f64> {
        (0..self.paths)
            .map(|p| match driver {
                Driver::W(c) => self.dw(step, p, c),
                Driver::B(c) => self.db(step, p, c),
                Driver::Jump(j) => self.compensated_jump(step, p, j),
            })
            .collect()
    }
}

/// Least-squares Monte Carlo model: conditional expectations are replaced by
/// regression on quadratic polynomials of the layer state
/// `(W_{t_i}, Ñ_{t_i}, B_T - B_{t_i})`. Approximate by construction.
#[derive(Debug, Clone)]
pub struct McModel {
    bundle: PathBundle,
    sources: NoiseSources,
    features: Vec<DMatrix<f64>>,
    gram_pinv: Vec<DMatrix<f64>>,
}

impl McModel {
    pub fn new(bundle: PathBundle, sources: NoiseSources) -> Result<Self> {
        let n = bundle.grid.steps();
        let mut features = Vec::with_capacity(n + 1);
        let mut gram_pinv = Vec::with_capacity(n + 1);
        for layer in 0..=n {
            let state = Self::state(&bundle, sources, layer);
            let q = state.ncols();
            let k = 1 + q + q * (q + 1) / 2;
            let mut phi = DMatrix::zeros(bundle.paths, k);
            for p in 0..bundle.paths {
                phi[(p, 0)] = 1.0;
                let mut col = 1;
                for a in 0..q {
                    phi[(p, col)] = state[(p, a)];
                    col += 1;
                }
                for a in 0..q {
                    for b in a..q {
                        phi[(p, col)] = state[(p, a)] * state[(p, b)];
                        col += 1;
                    }
                }
            }
            let gram = phi.transpose() * &phi;
            let scale = gram.diagonal().max().max(1.0);
            let pinv = gram
                .pseudo_inverse(1e-12 * scale)
                .map_err(|e| Error::LinearSolve(e.to_string()))?;
            features.push(phi);
            gram_pinv.push(pinv);
        }
        Ok(Self { bundle, sources, features, gram_pinv })
    }

    fn state(bundle: &PathBundle, sources: NoiseSources, layer: usize) -> DMatrix<f64> {
        let n = bundle.grid.steps();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if sources.w {
            for c in 0..bundle.dims.d {
                cols.push((0..bundle.paths).map(|p| (0..layer).map(|s| bundle.dw(s, p, c)).sum()).collect());
            }
        }
        if sources.jumps {
            for j in 0..bundle.marks.count() {
                cols.push((0..bundle.paths).map(|p| (0..layer).map(|s| bundle.compensated_jump(s, p, j)).sum()).collect());
            }
        }
        if sources.b {
            for c in 0..bundle.dims.l {
                cols.push((0..bundle.paths).map(|p| (layer..n).map(|s| bundle.db(s, p, c)).sum()).collect());
            }
        }
        DMatrix::from_fn(bundle.paths, cols.len(), |p, c| cols[c][p])
    }

    pub fn bundle(&self) -> &PathBundle {
        &self.bundle
    }

    fn active(&self, driver: Driver) -> bool {
        match driver {
            Driver::W(c) => self.sources.w && c < self.bundle.dims.d,
            Driver::B(c) => self.sources.b && c < self.bundle.dims.l,
            Driver::Jump(j) => self.sources.jumps && j < self.bundle.marks.count(),
        }
    }

    fn regress(&self, layer: usize, values: &[f64], dim: usize) -> Vec<f64> {
        let phi = &self.features[layer];
        let v = DMatrix::from_row_slice(self.bundle.paths, dim, values);
        let coef = &self.gram_pinv[layer] * (phi.transpose() * v);
        let fitted = phi * coef;
        let mut out = vec![0.0; values.len()];
        for p in 0..self.bundle.paths {
            for c in 0..dim {
                out[p * dim + c] = fitted[(p, c)];
            }
        }
        out
    }
}

impl NoiseModel for McModel {
    fn grid(&self) -> &TimeGrid {
        &self.bundle.grid
    }

    fn dims(&self) -> Dims {
        self.bundle.dims
    }

    fn marks(&self) -> &MarkSpace {
        &self.bundle.marks
    }

    fn layer_len(&self, _layer: usize) -> usize {
        self.bundle.paths
    }

    fn step_len(&self, _step: usize) -> usize {
        self.bundle.paths
    }

    fn layer_weights(&self, _layer: usize) -> Vec<f64> {
        vec![1.0 / self.bundle.paths as f64; self.bundle.paths]
    }

    fn lift(&self, _step: usize, _side: Side, values: &[f64], _dim: usize) -> Vec<f64> {
        values.to_vec()
    }

    fn project(&self, step: usize, side: Side, values: &[f64], dim: usize) -> Vec<f64> {
        let layer = match side {
            Side::Start => step,
            Side::End => step + 1,
        };
        self.regress(layer, values, dim)
    }

    fn increment(&self, step: usize, driver: Driver) -> Option<Vec<f64>> {
        self.active(driver).then(|| self.bundle.raw_increment(step, driver))
    }

    fn increment_variance(&self, _step: usize, driver: Driver) -> f64 {
        if !self.active(driver) {
            return 0.0;
        }
        match driver {
            Driver::Jump(j) => self.bundle.marks.intensity(j) * self.bundle.grid.dt(),
            _ => self.bundle.grid.dt(),
        }
    }

    fn driver_total(&self, layer: usize, driver: Driver) -> Option<Vec<f64>> {
        let n = self.bundle.grid.steps();
        let known = match driver {
            Driver::B(_) => layer == 0,
            _ => layer == n,
        };
        if !known {
            return None;
        }
        if !self.active(driver) {
            return Some(vec![0.0; self.bundle.paths]);
        }
        let mut total = vec![0.0; self.bundle.paths];
        for s in 0..n {
            for (t, v) in total.iter_mut().zip(self.bundle.raw_increment(s, driver)) {
                *t += v;
            }
        }
        Some(total)
    }

    fn path_count(&self) -> usize {
        self.bundle.paths
    }

    fn path_weights(&self) -> Vec<f64> {
        self.layer_weights(0)
    }

    fn expand(&self, _layer: usize, values: &[f64], _dim: usize) -> Vec<f64> {
        values.to_vec()
    }

    fn path_increment(&self, step: usize, driver: Driver) -> Vec<f64> {
        self.increment(step, driver).unwrap_or_else(|| vec![0.0; self.bundle.paths])
    }

    fn is_exact(&self) -> bool {
        false
    }
}
