//! Forward and backward Itô sums, compensated jump sums, time reversal,
//! backward-martingale tests and the expected Itô product formula, all
//! evaluated exactly on finite noise models.
//!
//! Processes are node-indexed: `values[i]` holds the value at grid node
//! `t_i` for every path (or leaf), row-major `path × dim`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{
    build_tree, conditional_expectation, keyed_rng, make_grid, Dims, Driver, InformationIndex, MarkSpace,
    NoiseSources, ScenarioTree, TimeGrid, TreeConfig,
};

/// A node-indexed vector process.
#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

impl Process {
    pub fn new(dim: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self { dim, values };
        p.paths()?;
        Ok(p)
    }

    pub fn constant(nodes: usize, paths: usize, value: &[f64]) -> Self {
        let row: Vec<f64> = (0..paths).flat_map(|_| value.iter().copied()).collect();
        Self { dim: value.len(), values: vec![row; nodes] }
    }

    fn paths(&self) -> Result<usize> {
        let len = self.values.first().map_or(0, Vec::len);
        if self.dim == 0 || len % self.dim != 0 || self.values.iter().any(|v| v.len() != len) {
            return Err(Error::Shape("process rows must all hold paths × dim values".into()));
        }
        Ok(len / self.dim)
    }

    pub fn path_count(&self) -> usize {
        self.values.first().map_or(0, |v| v.len() / self.dim.max(1))
    }
}

/// Which σ-algebra each value of an integrand is measurable with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measurability {
    /// `F_{t_i} = F^W_{t_i} ∨ F^B_{t_i,T} ∨ F^η_{t_i}`.
    Adapted,
    /// `F^B_{t_i,T}`.
    BackwardBrownian,
    /// `F^W_{t_i}`.
    ForwardBrownian,
    Unstamped,
}

impl Measurability {
    fn info(self, i: usize) -> Option<InformationIndex> {
        match self {
            Measurability::Adapted => Some(InformationIndex::at(i)),
            Measurability::BackwardBrownian => Some(InformationIndex::backward_brownian(i)),
            Measurability::ForwardBrownian => Some(InformationIndex::forward_brownian(i)),
            Measurability::Unstamped => None,
        }
    }
}

/// Matrix-valued integrand `h_i ∈ R^{rows×cols}`, row-major per path.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandProcess {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Vec<f64>>,
    pub stamp: Measurability,
}

impl IntegrandProcess {
    pub fn new(rows: usize, cols: usize, values: Vec<Vec<f64>>, stamp: Measurability) -> Result<Self> {
        Process::new(rows * cols, values.clone())?;
        Ok(Self { rows, cols, values, stamp })
    }

    pub fn from_process(p: Process, rows: usize, stamp: Measurability) -> Result<Self> {
        if rows == 0 || p.dim % rows != 0 {
            return Err(Error::Shape(format!("dimension {} is not a multiple of {rows}", p.dim)));
        }
        Ok(Self { rows, cols: p.dim / rows, values: p.values, stamp })
    }

    pub fn path_count(&self) -> usize {
        self.values.first().map_or(0, |v| v.len() / (self.rows * self.cols).max(1))
    }

    /// Check the stamp by conditional-expectation idempotence on leaf-indexed values.
    pub fn verify_measurability(&self, tree: &ScenarioTree) -> Result<f64> {
        let dim = self.rows * self.cols;
        let mut worst: f64 = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let Some(info) = self.stamp.info(i) else { continue };
            let proj = conditional_expectation(tree, v, dim, &info)?;
            let dev = proj.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(dev);
        }
        if worst > 1e-12 {
            return Err(Error::Measurability(format!("stamp {:?} violated by {worst:e}", self.stamp)));
        }
        Ok(worst)
    }
}

/// Evaluation point of the integrand inside each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Left,
    Right,
}

fn node_range(grid: &TimeGrid, a: f64, b: f64) -> Result<(usize, usize)> {
    let (ia, ib) = (grid.index_of(a)?, grid.index_of(b)?);
    if ia > ib {
        return Err(Error::OffGrid(format!("empty range [{a}, {b}]")));
    }
    Ok((ia, ib))
}

fn check_shapes(grid: &TimeGrid, h: &IntegrandProcess, x: &Process) -> Result<usize> {
    let nodes = grid.steps() + 1;
    if h.values.len() != nodes || x.values.len() != nodes {
        return Err(Error::Shape(format!("processes must have {nodes} nodes")));
    }
    if h.cols != x.dim {
        return Err(Error::Shape(format!("integrand has {} columns, driver has {} components", h.cols, x.dim)));
    }
    let paths = x.paths()?;
    if h.path_count() != paths {
        return Err(Error::Shape("integrand and driver disagree on path count".into()));
    }
    Ok(paths)
}

/// `Σ_{a ≤ i < b} h(t_e)·(X_{i+1} − X_i)` per path, with `e` the chosen endpoint.
pub fn stieltjes_sum(
    grid: &TimeGrid,
    h: &IntegrandProcess,
    x: &Process,
    a: f64,
    b: f64,
    endpoint: Endpoint,
) -> Result<Vec<f64>> {
    let paths = check_shapes(grid, h, x)?;
    let (ia, ib) = node_range(grid, a, b)?;
    let (rows, cols) = (h.rows, h.cols);
    let mut out = vec![0.0; paths * rows];
    for i in ia..ib {
        let hv = match endpoint {
            Endpoint::Left => &h.values[i],
            Endpoint::Right => &h.values[i + 1],
        };
        let (x0, x1) = (&x.values[i], &x.values[i + 1]);
        for p in 0..paths {
            for r in 0..rows {
                let mut acc = 0.0;
                for c in 0..cols {
                    acc += hv[(p * rows + r) * cols + c] * (x1[p * cols + c] - x0[p * cols + c]);
                }
                out[p * rows + r] += acc;
            }
        }
    }
    Ok(out)
}

/// Forward Itô sum (left endpoint) over `[a, b]`.
pub fn forward_integral(grid: &TimeGrid, h: &IntegrandProcess, w: &Process, a: f64, b: f64) -> Result<Vec<f64>> {
    stieltjes_sum(grid, h, w, a, b, Endpoint::Left)
}

/// Backward Itô sum (right endpoint) over `[a, b]`.
pub fn backward_integral(grid: &TimeGrid, h: &IntegrandProcess, b_path: &Process, a: f64, b: f64) -> Result<Vec<f64>> {
    stieltjes_sum(grid, h, b_path, a, b, Endpoint::Right)
}

/// `Σ_i Σ_j k_i(ρ_j)(ΔN_i(ρ_j) − Π_j Δt)` over `[a, b]`; `k` has one column
/// per mark and `counts` is the running count `N_t(ρ_j)`.
pub fn jump_integral(
    grid: &TimeGrid,
    k: &IntegrandProcess,
    counts: &Process,
    marks: &MarkSpace,
    a: f64,
    b: f64,
) -> Result<Vec<f64>> {
    let jn = marks.count();
    if k.cols != jn || (jn > 0 && counts.dim != jn) {
        return Err(Error::InvalidMarks(format!("integrand has {} marks, mark space has {jn}", k.cols)));
    }
    if jn == 0 {
        node_range(grid, a, b)?;
        return Ok(vec![0.0; k.path_count() * k.rows]);
    }
    let dt = grid.dt();
    let compensated: Vec<Vec<f64>> = {
        let mut run = counts.values[0].clone();
        let mut out = vec![run.clone()];
        for i in 0..grid.steps() {
            for (idx, v) in run.iter_mut().enumerate() {
                *v += counts.values[i + 1][idx] - counts.values[i][idx] - marks.intensity(idx % jn) * dt;
            }
            out.push(run.clone());
        }
        out
    };
    stieltjes_sum(grid, k, &Process { dim: jn, values: compensated }, a, b, Endpoint::Left)
}

/// `ȟ_s = h_{T−s}` on the same grid.
pub fn reverse_time(p: &Process) -> Process {
    Process { dim: p.dim, values: p.values.iter().rev().cloned().collect() }
}

pub fn reverse_integrand(h: &IntegrandProcess) -> IntegrandProcess {
    IntegrandProcess { values: h.values.iter().rev().cloned().collect(), ..h.clone() }
}

/// `B̌_s = B_{T−s} − B_T`.
pub fn reverse_driver(b: &Process) -> Process {
    let last = b.values.last().cloned().unwrap_or_default();
    Process {
        dim: b.dim,
        values: b.values.iter().rev().map(|v| v.iter().zip(&last).map(|(x, l)| x - l).collect()).collect(),
    }
}

/// Running values of the given drivers on every leaf, `X_0 = 0`.
pub fn driver_path(tree: &ScenarioTree, drivers: &[Driver]) -> Process {
    let leaves = tree.leaf_count();
    let comps: Vec<Vec<Vec<f64>>> = drivers.iter().map(|&d| tree.leaf_path(d)).collect();
    let values = (0..=tree.grid().steps())
        .map(|i| (0..leaves).flat_map(|leaf| comps.iter().map(move |c| c[i][leaf])).collect())
        .collect();
    Process { dim: drivers.len(), values }
}

/// Running raw jump counts `N_t(ρ_j)` on every leaf.
pub fn jump_count_path(tree: &ScenarioTree) -> Process {
    let jn = tree.marks().count();
    let leaves = tree.leaf_count();
    let nodes = tree.grid().steps() + 1;
    if jn == 0 {
        return Process { dim: 1, values: vec![vec![0.0; leaves]; nodes] };
    }
    let mut run = vec![0.0; leaves * jn];
    let mut values = vec![run.clone()];
    for s in 0..tree.grid().steps() {
        for j in 0..jn {
            for (leaf, c) in tree.leaf_jump_count(s, j).into_iter().enumerate() {
                run[leaf * jn + j] += c;
            }
        }
        values.push(run.clone());
    }
    Process { dim: jn, values }
}

/// Both sides of one time-reversal identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversalReport {
    pub t: f64,
    pub identities: Vec<IdentityCheck>,
    pub max_deviation: f64,
}

fn identity(name: &str, lhs: Vec<f64>, rhs: Vec<f64>) -> IdentityCheck {
    let deviation = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    IdentityCheck { name: name.into(), lhs, rhs, deviation }
}

/// Evaluate both sides of the constant-integrand identity and the four
/// reversal identities at node `t` on every path.
pub fn check_reversal_identities(grid: &TimeGrid, h: &IntegrandProcess, b: &Process, t: f64) -> Result<ReversalReport> {
    check_reversal_identities_with(grid, h, b, t, Endpoint::Right)
}

/// As [`check_reversal_identities`] with a chosen endpoint for the backward
/// sums; `Endpoint::Left` is the deliberately wrong convention.
pub fn check_reversal_identities_with(
    grid: &TimeGrid,
    h: &IntegrandProcess,
    b: &Process,
    t: f64,
    backward_endpoint: Endpoint,
) -> Result<ReversalReport> {
    let horizon = grid.horizon();
    let idx = grid.index_of(t)?;
    let t = grid.node(idx);
    let u = t;
    let rest = grid.node(grid.steps() - idx);
    let hr = reverse_integrand(h);
    let br = reverse_driver(b);
    let bwd = |a: f64, c: f64| stieltjes_sum(grid, h, b, a, c, backward_endpoint);
    let fwd_rev = |a: f64, c: f64| -> Result<Vec<f64>> {
        Ok(stieltjes_sum(grid, &hr, &br, a, c, Endpoint::Left)?.into_iter().map(|v| -v).collect())
    };
    let constant = IntegrandProcess {
        values: vec![h.values[0].clone(); h.values.len()],
        ..h.clone()
    };
    let identities = vec![
        identity(
            "constant",
            stieltjes_sum(grid, &constant, b, 0.0, horizon, backward_endpoint)?,
            stieltjes_sum(grid, &constant, b, 0.0, horizon, Endpoint::Left)?,
        ),
        identity("reversal_tail", bwd(t, horizon)?, fwd_rev(0.0, rest)?),
        identity("reversal_tail_u", bwd(rest, horizon)?, fwd_rev(0.0, u)?),
        identity("reversal_head", bwd(0.0, rest)?, fwd_rev(t, horizon)?),
        identity("reversal_head_u", bwd(0.0, u)?, fwd_rev(rest, horizon)?),
    ];
    let max_deviation = identities.iter().map(|c| c.deviation).fold(0.0, f64::max);
    Ok(ReversalReport { t, identities, max_deviation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleVerdict {
    pub is_martingale: bool,
    pub violation: f64,
}

/// Exact test of `E[M_t | F^B_{s,T}] = M_s` for every pair `t ≤ s` of grid
/// nodes; `m` is leaf-indexed.
pub fn is_backward_martingale(tree: &ScenarioTree, m: &Process) -> Result<MartingaleVerdict> {
    let n = tree.grid().steps();
    if m.values.len() != n + 1 || m.paths()? != tree.leaf_count() {
        return Err(Error::Shape("martingale candidate must be leaf-indexed on every node".into()));
    }
    let violation = (0..=n)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let info = InformationIndex::backward_brownian(s);
            let mut worst: f64 = 0.0;
            for t in 0..=s {
                let ce = conditional_expectation(tree, &m.values[t], m.dim, &info)?;
                let dev = ce.iter().zip(&m.values[s]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(dev);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(MartingaleVerdict { is_martingale: violation <= 1e-12, violation })
}

/// `M_{t_i} = ∫_{t_i}^T h ←dB` on every leaf.
pub fn backward_tail_process(grid: &TimeGrid, h: &IntegrandProcess, b: &Process) -> Result<Process> {
    let values = (0..=grid.steps())
        .map(|i| backward_integral(grid, h, b, grid.node(i), grid.horizon()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Process { dim: h.rows, values })
}

/// `α_t = α_0 + ∫β ds + ∫γ ←dB + ∫δ dW + ∫∫K Ñ(dρ,ds)` on the leaves of a
/// tree. Per-step arrays are leaf-indexed; `backward[i]` is `γ(t_{i+1})`
/// and the others are taken at `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemimartingaleSpec {
    pub dim: usize,
    pub initial: Vec<f64>,
    pub drift: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
    pub jump: Vec<Vec<f64>>,
}

impl SemimartingaleSpec {
    /// Deterministic, time-constant coefficients; `backward` is `dim×l`,
    /// `forward` is `dim×d`, `jump` is `dim×J` (column per mark).
    pub fn constant(
        tree: &ScenarioTree,
        initial: &[f64],
        drift: &[f64],
        backward: &[f64],
        forward: &[f64],
        jump: &[f64],
    ) -> Result<Self> {
        let dims = tree.dims();
        let dim = initial.len();
        let jn = tree.marks().count();
        for (name, v, len) in [
            ("drift", drift, dim),
            ("backward", backward, dim * dims.l),
            ("forward", forward, dim * dims.d),
            ("jump", jump, dim * jn),
        ] {
            if v.len() != len {
                return Err(Error::Shape(format!("{name} must have {len} entries")));
            }
        }
        let leaves = tree.leaf_count();
        let tile = |v: &[f64]| -> Vec<f64> { (0..leaves).flat_map(|_| v.iter().copied()).collect() };
        let n = tree.grid().steps();
        Ok(Self {
            dim,
            initial: tile(initial),
            drift: vec![tile(drift); n],
            backward: vec![tile(backward); n],
            forward: vec![tile(forward); n],
            jump: vec![tile(jump); n],
        })
    }

    fn shape_ok(&self, tree: &ScenarioTree) -> bool {
        let dims = tree.dims();
        let leaves = tree.leaf_count();
        let n = tree.grid().steps();
        let jn = tree.marks().count();
        self.initial.len() == leaves * self.dim
            && [
                (&self.drift, self.dim),
                (&self.backward, self.dim * dims.l),
                (&self.forward, self.dim * dims.d),
                (&self.jump, self.dim * jn),
            ]
            .iter()
            .all(|(v, w)| v.len() == n && v.iter().all(|x| x.len() == leaves * w))
    }
}

/// The six right-hand terms of the expected product formula at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItoProductReport {
    pub t: f64,
    pub dt: f64,
    pub lhs: f64,
    pub initial: f64,
    pub cross_left: f64,
    pub cross_right: f64,
    pub backward_bracket: f64,
    pub forward_bracket: f64,
    pub jump_bracket: f64,
    pub discrepancy: f64,
}

struct Increments {
    db: Vec<Vec<f64>>,
    dw: Vec<Vec<f64>>,
    dn: Vec<Vec<f64>>,
    has_b: Vec<bool>,
    has_w: Vec<bool>,
    has_n: Vec<bool>,
}

fn increments(tree: &ScenarioTree, step: usize) -> Increments {
    let dims = tree.dims();
    let jn = tree.marks().count();
    let get = |d: Driver| tree.leaf_increment(step, d);
    let present = |d: Driver| tree.is_forward_type(d).is_some();
    Increments {
        db: (0..dims.l).map(|c| get(Driver::B(c))).collect(),
        dw: (0..dims.d).map(|c| get(Driver::W(c))).collect(),
        dn: (0..jn).map(|j| get(Driver::Jump(j))).collect(),
        has_b: (0..dims.l).map(|c| present(Driver::B(c))).collect(),
        has_w: (0..dims.d).map(|c| present(Driver::W(c))).collect(),
        has_n: (0..jn).map(|j| present(Driver::Jump(j))).collect(),
    }
}

/// Per-leaf increment split into the part taken at the left endpoint
/// (drift, `dW`, `Ñ`) and the backward part `γ(t_{i+1})ΔB_i`.
fn split_increment(spec: &SemimartingaleSpec, step: usize, inc: &Increments, dt: f64, leaf: usize) -> (Vec<f64>, Vec<f64>) {
    let dim = spec.dim;
    let (l, d, jn) = (inc.db.len(), inc.dw.len(), inc.dn.len());
    let mut left = vec![0.0; dim];
    let mut back = vec![0.0; dim];
    for r in 0..dim {
        left[r] += spec.drift[step][leaf * dim + r] * dt;
        for c in 0..d {
            left[r] += spec.forward[step][(leaf * dim + r) * d + c] * inc.dw[c][leaf];
        }
        for j in 0..jn {
            left[r] += spec.jump[step][(leaf * dim + r) * jn + j] * inc.dn[j][leaf];
        }
        for c in 0..l {
            back[r] += spec.backward[step][(leaf * dim + r) * l + c] * inc.db[c][leaf];
        }
    }
    (left, back)
}

/// Evaluate every term of the expected product formula exactly on the tree.
///
/// Cross terms pair the other process at the left endpoint with the drift,
/// `dW` and `Ñ` parts and at the right endpoint with the backward part.
pub fn ito_product_check(
    a: &SemimartingaleSpec,
    b: &SemimartingaleSpec,
    tree: &ScenarioTree,
    t: f64,
) -> Result<ItoProductReport> {
    if a.dim != b.dim || !a.shape_ok(tree) || !b.shape_ok(tree) {
        return Err(Error::Shape("semimartingale specs do not match each other or the tree".into()));
    }
    let grid = tree.grid();
    let k = grid.index_of(t)?;
    let dt = grid.dt();
    let dim = a.dim;
    let dims = tree.dims();
    let jn = tree.marks().count();
    let w = tree.leaf_weights();
    let leaves = w.len();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let mut xa = a.initial.clone();
    let mut xb = b.initial.clone();
    let initial: f64 = (0..leaves).map(|p| w[p] * dot(&xa[p * dim..(p + 1) * dim], &xb[p * dim..(p + 1) * dim])).sum();
    let (mut cross_left, mut cross_right) = (0.0, 0.0);
    let (mut bb, mut fb, mut jb) = (0.0, 0.0, 0.0);
    for step in 0..k {
        let inc = increments(tree, step);
        for p in 0..leaves {
            let (la, ba) = split_increment(a, step, &inc, dt, p);
            let (lb, bbk) = split_increment(b, step, &inc, dt, p);
            let ya = &xa[p * dim..(p + 1) * dim];
            let yb = &xb[p * dim..(p + 1) * dim];
            let na: Vec<f64> = (0..dim).map(|r| ya[r] + la[r] + ba[r]).collect();
            let nb: Vec<f64> = (0..dim).map(|r| yb[r] + lb[r] + bbk[r]).collect();
            cross_left += w[p] * (dot(ya, &lb) + dot(&na, &bbk));
            cross_right += w[p] * (dot(&la, yb) + dot(&ba, &nb));
            for r in 0..dim {
                for c in 0..dims.l {
                    if inc.has_b[c] {
                        let i = (p * dim + r) * dims.l + c;
                        bb += w[p] * a.backward[step][i] * b.backward[step][i] * dt;
                    }
                }
                for c in 0..dims.d {
                    if inc.has_w[c] {
                        let i = (p * dim + r) * dims.d + c;
                        fb += w[p] * a.forward[step][i] * b.forward[step][i] * dt;
                    }
                }
                for j in 0..jn {
                    if inc.has_n[j] {
                        let i = (p * dim + r) * jn + j;
                        jb += w[p] * a.jump[step][i] * b.jump[step][i] * tree.marks().intensity(j) * dt;
                    }
                }
            }
            xa[p * dim..(p + 1) * dim].copy_from_slice(&na);
            xb[p * dim..(p + 1) * dim].copy_from_slice(&nb);
        }
    }
    let lhs: f64 = (0..leaves).map(|p| w[p] * dot(&xa[p * dim..(p + 1) * dim], &xb[p * dim..(p + 1) * dim])).sum();
    let backward_bracket = -bb;
    let rhs = initial + cross_left + cross_right + backward_bracket + fb + jb;
    Ok(ItoProductReport {
        t: grid.node(k),
        dt,
        lhs,
        initial,
        cross_left,
        cross_right,
        backward_bracket,
        forward_bracket: fb,
        jump_bracket: jb,
        discrepancy: lhs - rhs,
    })
}

/// Settings of the identity battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalculusSuiteConfig {
    pub seed: u64,
    /// Step counts of the reversal trees.
    pub sizes: Vec<usize>,
    /// Random trees per size.
    pub trials: usize,
    pub martingale_trials: usize,
    /// Step counts of the product-formula battery.
    pub product_sizes: Vec<usize>,
    pub jump_intensity: f64,
    /// Use a left-endpoint backward sum to confirm the harness detects it.
    pub wrong_endpoint: bool,
}

impl Default for CalculusSuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0xFBD5DE,
            sizes: vec![1, 2, 3, 4, 5, 6],
            trials: 50,
            martingale_trials: 20,
            product_sizes: vec![4, 8, 16],
            jump_intensity: 0.5,
            wrong_endpoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRow {
    pub case: String,
    pub steps: usize,
    pub dt: f64,
    pub discrepancy: f64,
    pub jump_bracket: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalculusSuiteReport {
    pub reversal_trees: usize,
    pub reversal_max_deviation: f64,
    pub martingale_trials: usize,
    pub martingale_max_violation: f64,
    pub anticipating_violation: f64,
    pub product: Vec<ProductRow>,
    pub pass: bool,
}

fn scalar_tree(steps: usize, marks: &[f64], sources: NoiseSources) -> Result<ScenarioTree> {
    let marks = MarkSpace::new(marks.to_vec())?;
    build_tree(make_grid(1.0, steps)?, Dims::scalar(), &marks, &TreeConfig::with_sources(sources))
}

/// Random integrand with `h_i` a function of the layer-`i` node (so `F_{t_i}`-adapted).
pub fn random_adapted_integrand(tree: &ScenarioTree, seed: u64, rows: usize, cols: usize) -> IntegrandProcess {
    let mut rng = keyed_rng(seed, 0, 0, 0);
    let dim = rows * cols;
    let values = (0..=tree.grid().steps())
        .map(|i| {
            let layer: Vec<f64> = (0..tree.layer_len(i) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            tree.expand_layer(i, &layer, dim)
        })
        .collect();
    IntegrandProcess { rows, cols, values, stamp: Measurability::Adapted }
}

/// Random integrand measurable with respect to the backward Brownian filtration.
pub fn random_backward_integrand(tree: &ScenarioTree, seed: u64) -> Result<IntegrandProcess> {
    let h = random_adapted_integrand(tree, seed, 1, 1);
    let values = h
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| conditional_expectation(tree, v, 1, &InformationIndex::backward_brownian(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(IntegrandProcess { values, stamp: Measurability::BackwardBrownian, ..h })
}

/// Run the reversal, backward-martingale and product-formula battery.
pub fn run_calculus_suite(cfg: &CalculusSuiteConfig) -> Result<CalculusSuiteReport> {
    let endpoint = if cfg.wrong_endpoint { Endpoint::Left } else { Endpoint::Right };
    let jobs: Vec<(usize, usize)> = cfg.sizes.iter().flat_map(|&n| (0..cfg.trials).map(move |s| (n, s))).collect();
    let reversal_max_deviation = jobs
        .par_iter()
        .map(|&(n, trial)| -> Result<f64> {
            let tree = scalar_tree(n, &[], NoiseSources::all())?;
            let seed = cfg.seed ^ ((n as u64) << 32) ^ trial as u64;
            let h = random_adapted_integrand(&tree, seed, 1, 1);
            let b = driver_path(&tree, &[Driver::B(0)]);
            let mut worst: f64 = 0.0;
            for i in 0..=n {
                let r = check_reversal_identities_with(tree.grid(), &h, &b, tree.grid().node(i), endpoint)?;
                worst = worst.max(r.max_deviation);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut martingale_max_violation: f64 = 0.0;
    for trial in 0..cfg.martingale_trials {
        let tree = scalar_tree(1 + trial % 3, &[], NoiseSources::all())?;
        let h = random_backward_integrand(&tree, cfg.seed.wrapping_add(1000 + trial as u64))?;
        let b = driver_path(&tree, &[Driver::B(0)]);
        let m = Process {
            dim: 1,
            values: (0..=tree.grid().steps())
                .map(|i| stieltjes_sum(tree.grid(), &h, &b, tree.grid().node(i), 1.0, endpoint))
                .collect::<Result<Vec<_>>>()?,
        };
        martingale_max_violation = martingale_max_violation.max(is_backward_martingale(&tree, &m)?.violation);
    }
    let anticipating_violation = {
        let tree = scalar_tree(3, &[], NoiseSources::all())?;
        let b = driver_path(&tree, &[Driver::B(0)]);
        let h = anticipating_integrand(&tree);
        let m = backward_tail_process(tree.grid(), &h, &b)?;
        is_backward_martingale(&tree, &m)?.violation
    };

    // A zero intensity means J = 0; the jump case then carries no jumps.
    let jump_marks = if cfg.jump_intensity > 0.0 { vec![cfg.jump_intensity] } else { vec![] };
    let mut product = Vec::new();
    for &n in &cfg.product_sizes {
        let cases: [(&str, NoiseSources, Vec<f64>); 3] = [
            ("deterministic", NoiseSources::none(), vec![]),
            ("backward_brownian", NoiseSources { w: false, b: true, jumps: false }, vec![]),
            ("compensated_jump", NoiseSources { w: false, b: false, jumps: true }, jump_marks.clone()),
        ];
        for (name, sources, marks) in cases {
            let tree = scalar_tree(n, &marks, sources)?;
            let jn = marks.len();
            let spec = match name {
                "deterministic" => SemimartingaleSpec::constant(&tree, &[1.0], &[1.0], &[0.0], &[0.0], &[])?,
                "backward_brownian" => SemimartingaleSpec::constant(&tree, &[0.0], &[0.0], &[1.0], &[0.0], &[])?,
                _ => SemimartingaleSpec::constant(&tree, &[0.0], &[0.0], &[0.0], &[0.0], &vec![1.0; jn])?,
            };
            let r = ito_product_check(&spec, &spec, &tree, 1.0)?;
            product.push(ProductRow {
                case: name.into(),
                steps: n,
                dt: r.dt,
                discrepancy: r.discrepancy,
                jump_bracket: r.jump_bracket,
            });
        }
    }
    let product_ok = product.iter().all(|r| r.discrepancy.abs() <= 2.0 * r.dt);
    let pass = reversal_max_deviation <= 1e-12
        && martingale_max_violation <= 1e-12
        && anticipating_violation > 1e-6
        && product_ok;
    Ok(CalculusSuiteReport {
        reversal_trees: jobs.len(),
        reversal_max_deviation,
        martingale_trials: cfg.martingale_trials,
        martingale_max_violation,
        anticipating_violation,
        product,
        pass,
    })
}

/// `h(t_{i+1}) = ΔB_i`: looks one step into the past of the backward filtration.
pub fn anticipating_integrand(tree: &ScenarioTree) -> IntegrandProcess {
    let n = tree.grid().steps();
    let leaves = tree.leaf_count();
    let mut values = vec![vec![0.0; leaves]];
    for s in 0..n {
        values.push(tree.leaf_increment(s, Driver::B(0)));
    }
    IntegrandProcess { rows: 1, cols: 1, values, stamp: Measurability::Unstamped }
}
