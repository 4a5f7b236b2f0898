//! Decoupled solves: one forward sweep and one backward sweep over a noise
//! model, the frozen forcing tuple, the level-`α` sweep map and the
//! pathwise residual of the discrete equations.
//!
//! Forward step `i`:
//! `y_{i+1} = y_i + b_i Δt + σ_i ΔW_i + Σ_j φ_i^j ΔÑ_i^j − z_{i+1} ΔB_i`,
//! solved as `y_{i+1} = E[X | F_{i+1}]`, `z_{i+1} = E[X ΔB_i | F_{i+1}] / Δt`.
//!
//! Backward step `i`:
//! `Y_i = E[Y_{i+1} − f_{i+1} Δt − g_{i+1} ΔB_i | F_i]` with `Z_i`, `k_i`
//! the projections on `ΔW_i` and `ΔÑ_i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{Coefficients, Layout, QuintupleRef};
use crate::continuation::Variant;
use crate::error::{Error, Result};
use crate::field::{widths, SolutionField};
use crate::noise::{Driver, NoiseModel, ScenarioTree, Side};

const PAR_THRESHOLD: usize = 2048;

/// Evaluate `body(node, out_chunk)` for every node of a layer.
pub(crate) fn map_nodes(len: usize, width: usize, body: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
    let mut out = vec![0.0; len * width];
    if width == 0 {
        return out;
    }
    if len * width >= PAR_THRESHOLD {
        out.par_chunks_mut(width).enumerate().for_each(|(i, c)| body(i, c));
    } else {
        out.chunks_mut(width).enumerate().for_each(|(i, c)| body(i, c));
    }
    out
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    if a != 0.0 {
        out.iter_mut().zip(x).for_each(|(o, v)| *o += a * v);
    }
}

fn scaled(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

/// Column `c` of a layer of row-major `rows×cols` matrices.
fn column(mat: &[f64], len: usize, rows: usize, cols: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * rows];
    for node in 0..len {
        for r in 0..rows {
            out[node * rows + r] = mat[node * rows * cols + r * cols + c];
        }
    }
    out
}

/// Block `j` of a layer of mark-major `J×rows` stacks.
fn block(stack: &[f64], len: usize, rows: usize, blocks: usize, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * rows];
    for node in 0..len {
        let s = node * rows * blocks + j * rows;
        out[node * rows..(node + 1) * rows].copy_from_slice(&stack[s..s + rows]);
    }
    out
}

fn from_columns(cols: &[Vec<f64>], len: usize, rows: usize) -> Vec<f64> {
    let nc = cols.len();
    let mut out = vec![0.0; len * rows * nc];
    for (c, col) in cols.iter().enumerate() {
        for node in 0..len {
            for r in 0..rows {
                out[node * rows * nc + r * nc + c] = col[node * rows + r];
            }
        }
    }
    out
}

fn from_blocks(blocks: &[Vec<f64>], len: usize, rows: usize) -> Vec<f64> {
    let nb = blocks.len();
    let mut out = vec![0.0; len * rows * nb];
    for (j, b) in blocks.iter().enumerate() {
        for node in 0..len {
            let s = node * rows * nb + j * rows;
            out[s..s + rows].copy_from_slice(&b[node * rows..(node + 1) * rows]);
        }
    }
    out
}

/// A term `sign · H · ΔD` added to the step quantity.
pub(crate) struct Load<'a> {
    pub driver: Driver,
    pub values: &'a [f64],
    pub sign: f64,
}

/// One step of either sweep. `base` and the loads live on the `from` side;
/// the result is the projection of `X = base + Σ sign·H·ΔD` onto the other
/// side, together with `E[X ΔD] / Var(ΔD)` for each driver in `project`.
pub(crate) fn engine_step<M: NoiseModel + ?Sized>(
    model: &M,
    step: usize,
    from: Side,
    base: &[f64],
    loads: &[Load],
    dim: usize,
    project: &[Driver],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let to = match from {
        Side::Start => Side::End,
        Side::End => Side::Start,
    };
    let target_len = model.layer_len(if to == Side::Start { step } else { step + 1 });
    let mut x = model.lift(step, from, base, dim);
    for load in loads {
        if let Some(inc) = model.increment(step, load.driver) {
            let lifted = model.lift(step, from, load.values, dim);
            for (s, d) in inc.iter().enumerate() {
                for c in 0..dim {
                    x[s * dim + c] += load.sign * lifted[s * dim + c] * d;
                }
            }
        }
    }
    let value = model.project(step, to, &x, dim);
    let coefs = project
        .iter()
        .map(|&drv| match model.increment(step, drv) {
            Some(inc) => {
                let var = model.increment_variance(step, drv);
                let xd: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * inc[i / dim.max(1)]).collect();
                let mut p = model.project(step, to, &xd, dim);
                p.iter_mut().for_each(|v| *v /= var);
                p
            }
            None => vec![0.0; target_len * dim],
        })
        .collect();
    (value, coefs)
}

/// Node-indexed forcing and boundary offsets of a decoupled system.
///
/// Layer arrays are row-major per node: `b` is `n`, `sigma` is `n×d`, `phi`
/// is mark-major `J×n`, `f` is `m`, `g` is `m×l`. `initial` lives on layer 0
/// (`n` per node) and `terminal` on layer `N` (`m` per node).
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenForcing {
    pub layout: Layout,
    pub b: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub terminal: Vec<f64>,
}

/// Deterministic forcing values broadcast to every node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantForcing {
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub phi: Vec<f64>,
    #[serde(default)]
    pub f: Vec<f64>,
    #[serde(default)]
    pub g: Vec<f64>,
    #[serde(default)]
    pub initial: Vec<f64>,
    #[serde(default)]
    pub terminal: Vec<f64>,
}

impl FrozenForcing {
    pub fn zeros<M: NoiseModel + ?Sized>(model: &M, layout: Layout) -> Self {
        let n = model.grid().steps();
        let alloc = |w: usize| (0..=n).map(|i| vec![0.0; model.layer_len(i) * w]).collect::<Vec<_>>();
        Self {
            layout,
            b: alloc(layout.n),
            sigma: alloc(layout.n * layout.d),
            phi: alloc(layout.n * layout.j),
            f: alloc(layout.m),
            g: alloc(layout.m * layout.l),
            initial: vec![0.0; model.layer_len(0) * layout.n],
            terminal: vec![0.0; model.layer_len(n) * layout.m],
        }
    }

    /// Broadcast constants; empty entries mean zero.
    pub fn constant<M: NoiseModel + ?Sized>(model: &M, layout: Layout, c: &ConstantForcing) -> Result<Self> {
        let mut out = Self::zeros(model, layout);
        let fill = |layers: &mut Vec<Vec<f64>>, v: &[f64], w: usize, name: &str| -> Result<()> {
            if v.is_empty() {
                return Ok(());
            }
            if v.len() != w {
                return Err(Error::Shape(format!("forcing {name} must have {w} entries")));
            }
            for layer in layers.iter_mut() {
                layer.chunks_mut(w).for_each(|ch| ch.copy_from_slice(v));
            }
            Ok(())
        };
        fill(&mut out.b, &c.b, layout.n, "b")?;
        fill(&mut out.sigma, &c.sigma, layout.n * layout.d, "sigma")?;
        fill(&mut out.phi, &c.phi, layout.n * layout.j, "phi")?;
        fill(&mut out.f, &c.f, layout.m, "f")?;
        fill(&mut out.g, &c.g, layout.m * layout.l, "g")?;
        let mut ini = vec![out.initial.clone()];
        fill(&mut ini, &c.initial, layout.n, "initial")?;
        out.initial = ini.pop().unwrap_or_default();
        let mut ter = vec![out.terminal.clone()];
        fill(&mut ter, &c.terminal, layout.m, "terminal")?;
        out.terminal = ter.pop().unwrap_or_default();
        Ok(out)
    }

    /// Build from leaf-indexed processes on a tree, rejecting any process
    /// that is not measurable with respect to its layer.
    pub fn from_leaves(tree: &ScenarioTree, layout: Layout, leaves: &LeafForcing) -> Result<Self> {
        let n = tree.grid().steps();
        let compress = |name: &str, proc: &[Vec<f64>], w: usize| -> Result<Vec<Vec<f64>>> {
            if proc.len() != n + 1 {
                return Err(Error::Shape(format!("forcing {name} needs {} layers", n + 1)));
            }
            proc.iter()
                .enumerate()
                .map(|(i, leaf)| compress_checked(tree, name, i, leaf, w))
                .collect()
        };
        Ok(Self {
            layout,
            b: compress("b", &leaves.b, layout.n)?,
            sigma: compress("sigma", &leaves.sigma, layout.n * layout.d)?,
            phi: compress("phi", &leaves.phi, layout.n * layout.j)?,
            f: compress("f", &leaves.f, layout.m)?,
            g: compress("g", &leaves.g, layout.m * layout.l)?,
            initial: compress_checked(tree, "initial", 0, &leaves.initial, layout.n)?,
            terminal: compress_checked(tree, "terminal", n, &leaves.terminal, layout.m)?,
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        let sum = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
        };
        Self {
            layout: self.layout,
            b: sum(&self.b, &other.b),
            sigma: sum(&self.sigma, &other.sigma),
            phi: sum(&self.phi, &other.phi),
            f: sum(&self.f, &other.f),
            g: sum(&self.g, &other.g),
            initial: self.initial.iter().zip(&other.initial).map(|(p, q)| p + q).collect(),
            terminal: self.terminal.iter().zip(&other.terminal).map(|(p, q)| p + q).collect(),
        }
    }
}

/// Leaf-indexed forcing processes, one array per layer (`leaves × width`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeafForcing {
    pub b: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub terminal: Vec<f64>,
}

fn compress_checked(tree: &ScenarioTree, name: &str, layer: usize, leaf: &[f64], w: usize) -> Result<Vec<f64>> {
    if leaf.len() != tree.leaf_count() * w {
        return Err(Error::Shape(format!("forcing {name} layer {layer} must have {} entries", tree.leaf_count() * w)));
    }
    let layer_vals = tree.compress_layer(layer, leaf, w);
    let back = tree.expand_layer(layer, &layer_vals, w);
    let dev = back.iter().zip(leaf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = leaf.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if dev > 1e-12 * scale {
        return Err(Error::Measurability(format!(
            "forcing {name} at layer {layer} is not adapted (deviation {dev:e})"
        )));
    }
    Ok(layer_vals)
}

/// `Y`, `Z`, `k` on layers `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardComponent {
    pub big_y: Vec<Vec<f64>>,
    pub big_z: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
}

/// `y`, `z` on layers `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardComponent {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

/// Backward sweep with drift `f` (right endpoint), loadings `g` on
/// `load_drivers` and projections on `project_drivers`. Returns `(Y, coefs)`
/// with the coefficients on layers `0..N-1`, extended to layer `N`.
fn backward_sweep<M: NoiseModel + ?Sized>(
    model: &M,
    dim: usize,
    terminal: Vec<f64>,
    f: impl Fn(usize) -> Vec<f64>,
    g: impl Fn(usize) -> Vec<Vec<f64>>,
    load_drivers: &[Driver],
    project_drivers: &[Driver],
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = model.grid().steps();
    let dt = model.grid().dt();
    let mut big_y = vec![Vec::new(); n + 1];
    let mut coefs: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n + 1]; project_drivers.len()];
    big_y[n] = terminal;
    for i in (0..n).rev() {
        let fi = f(i + 1);
        let mut base = big_y[i + 1].clone();
        axpy(&mut base, -dt, &fi);
        let gs = g(i + 1);
        let loads: Vec<Load> =
            load_drivers.iter().zip(&gs).map(|(&driver, v)| Load { driver, values: v, sign: -1.0 }).collect();
        let (v, cs) = engine_step(model, i, Side::End, &base, &loads, dim, project_drivers);
        big_y[i] = v;
        for (slot, c) in coefs.iter_mut().zip(cs) {
            slot[i] = c;
        }
    }
    for slot in coefs.iter_mut() {
        let lifted = model.lift(n - 1, Side::Start, &slot[n - 1], dim);
        slot[n] = model.project(n - 1, Side::End, &lifted, dim);
    }
    (big_y, coefs)
}

/// Forward sweep with drift `b` (left endpoint), loadings on `load_drivers`
/// and projections on `project_drivers`. Coefficients land on layers `1..N`,
/// extended to layer 0.
fn forward_sweep<M: NoiseModel + ?Sized>(
    model: &M,
    dim: usize,
    initial: Vec<f64>,
    b: impl Fn(usize) -> Vec<f64>,
    h: impl Fn(usize) -> Vec<Vec<f64>>,
    load_drivers: &[Driver],
    project_drivers: &[Driver],
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = model.grid().steps();
    let dt = model.grid().dt();
    let mut y = vec![Vec::new(); n + 1];
    let mut coefs: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); n + 1]; project_drivers.len()];
    y[0] = initial;
    for i in 0..n {
        let mut base = y[i].clone();
        axpy(&mut base, dt, &b(i));
        let hs = h(i);
        let loads: Vec<Load> =
            load_drivers.iter().zip(&hs).map(|(&driver, v)| Load { driver, values: v, sign: 1.0 }).collect();
        let (v, cs) = engine_step(model, i, Side::Start, &base, &loads, dim, project_drivers);
        y[i + 1] = v;
        for (slot, c) in coefs.iter_mut().zip(cs) {
            slot[i + 1] = c;
        }
    }
    for slot in coefs.iter_mut() {
        let lifted = model.lift(0, Side::End, &slot[1], dim);
        slot[0] = model.project(0, Side::Start, &lifted, dim);
    }
    (y, coefs)
}

fn w_drivers(d: usize) -> impl Iterator<Item = Driver> {
    (0..d).map(Driver::W)
}

fn b_drivers(l: usize) -> impl Iterator<Item = Driver> {
    (0..l).map(Driver::B)
}

fn jump_drivers(j: usize) -> impl Iterator<Item = Driver> {
    (0..j).map(Driver::Jump)
}

/// Backward equation with given drift `f`, loadings `g` on `←dB` and
/// terminal value, all taken from `forcing`.
pub fn solve_backward_component<M: NoiseModel + ?Sized>(model: &M, forcing: &FrozenForcing) -> Result<BackwardComponent> {
    let lay = forcing.layout;
    check_forcing(model, forcing)?;
    Ok(backward_core(model, lay, forcing.terminal.clone(), |i| forcing.f[i].clone(), |i| forcing.g[i].clone()))
}

fn backward_core<M: NoiseModel + ?Sized>(
    model: &M,
    lay: Layout,
    terminal: Vec<f64>,
    f: impl Fn(usize) -> Vec<f64>,
    g: impl Fn(usize) -> Vec<f64>,
) -> BackwardComponent {
    let n = model.grid().steps();
    let loads: Vec<Driver> = b_drivers(lay.l).collect();
    let ws: Vec<Driver> = w_drivers(lay.d).collect();
    let js: Vec<Driver> = jump_drivers(lay.j).collect();
    let project: Vec<Driver> = ws.iter().chain(&js).copied().collect();
    let g_col = |i: usize| {
        let gi = g(i);
        (0..lay.l).map(|c| column(&gi, model.layer_len(i), lay.m, lay.l, c)).collect()
    };
    let (big_y, coefs) = backward_sweep(model, lay.m, terminal, f, g_col, &loads, &project);
    let big_z = (0..=n).map(|i| from_columns(&coefs[..lay.d].iter().map(|c| c[i].clone()).collect::<Vec<_>>(), model.layer_len(i), lay.m)).collect();
    let k = (0..=n)
        .map(|i| from_blocks(&coefs[lay.d..].iter().map(|c| c[i].clone()).collect::<Vec<_>>(), model.layer_len(i), lay.m))
        .collect();
    BackwardComponent { big_y, big_z, k }
}

/// Forward doubly stochastic equation with given drift, diffusion, jump
/// loading and initial value, all taken from `forcing`.
pub fn solve_forward_component<M: NoiseModel + ?Sized>(model: &M, forcing: &FrozenForcing) -> Result<ForwardComponent> {
    check_forcing(model, forcing)?;
    let lay = forcing.layout;
    Ok(forward_core(
        model,
        lay,
        forcing.initial.clone(),
        |i| forcing.b[i].clone(),
        |i| forcing.sigma[i].clone(),
        |i| forcing.phi[i].clone(),
    ))
}

fn forward_core<M: NoiseModel + ?Sized>(
    model: &M,
    lay: Layout,
    initial: Vec<f64>,
    b: impl Fn(usize) -> Vec<f64>,
    sigma: impl Fn(usize) -> Vec<f64>,
    phi: impl Fn(usize) -> Vec<f64>,
) -> ForwardComponent {
    let n = model.grid().steps();
    let loads: Vec<Driver> = w_drivers(lay.d).chain(jump_drivers(lay.j)).collect();
    let project: Vec<Driver> = b_drivers(lay.l).collect();
    let h = |i: usize| {
        let len = model.layer_len(i);
        let (sg, ph) = (sigma(i), phi(i));
        (0..lay.d)
            .map(|c| column(&sg, len, lay.n, lay.d, c))
            .chain((0..lay.j).map(|j| block(&ph, len, lay.n, lay.j, j)))
            .collect()
    };
    let (y, coefs) = forward_sweep(model, lay.n, initial, b, h, &loads, &project);
    let z = (0..=n).map(|i| from_columns(&coefs.iter().map(|c| c[i].clone()).collect::<Vec<_>>(), model.layer_len(i), lay.n)).collect();
    ForwardComponent { y, z }
}

/// Map layer-indexed values of `tree` onto the reversed tree (layer `i` goes
/// to layer `N − i`).
pub fn to_reversed(tree: &ScenarioTree, layers: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let n = tree.grid().steps();
    let mut out = vec![Vec::new(); n + 1];
    for (i, vals) in layers.iter().enumerate() {
        let mut r = vec![0.0; vals.len()];
        for idx in 0..vals.len() / dim.max(1) {
            let j = tree.reversed_node(i, idx);
            r[j * dim..(j + 1) * dim].copy_from_slice(&vals[idx * dim..(idx + 1) * dim]);
        }
        out[n - i] = r;
    }
    out
}

/// The forward equation solved as a backward equation on the reversed tree.
/// Agrees with [`solve_forward_component`] to rounding.
pub fn solve_forward_via_reversal(tree: &ScenarioTree, forcing: &FrozenForcing) -> Result<ForwardComponent> {
    check_forcing(tree, forcing)?;
    if tree.is_reversed() {
        return Err(Error::Unsupported("expected a tree in the original orientation".into()));
    }
    let lay = forcing.layout;
    let n = tree.grid().steps();
    let rev = tree.reversed();
    let neg_b: Vec<Vec<f64>> = forcing.b.iter().map(|v| scaled(-1.0, v)).collect();
    let f = to_reversed(tree, &neg_b, lay.n);
    let sigma = to_reversed(tree, &forcing.sigma, lay.n * lay.d);
    let phi = to_reversed(tree, &forcing.phi, lay.n * lay.j);
    let mut init = vec![Vec::new(); n + 1];
    init[0] = forcing.initial.clone();
    let terminal = to_reversed(tree, &init, lay.n).swap_remove(n);

    // On the reversed tree W and jumps are backward-type, B is forward-type.
    let loads: Vec<Driver> = b_drivers(lay.d).chain(jump_drivers(lay.j)).collect();
    let project: Vec<Driver> = w_drivers(lay.l).collect();
    let g = |i: usize| {
        let len = rev.layer_len(i);
        (0..lay.d)
            .map(|c| column(&sigma[i], len, lay.n, lay.d, c))
            .chain((0..lay.j).map(|j| block(&phi[i], len, lay.n, lay.j, j)))
            .collect()
    };
    let (big_y, coefs) = backward_sweep(&rev, lay.n, terminal, |i| f[i].clone(), g, &loads, &project);
    let z_rev: Vec<Vec<f64>> = (0..=n)
        .map(|i| scaled(-1.0, &from_columns(&coefs.iter().map(|c| c[i].clone()).collect::<Vec<_>>(), rev.layer_len(i), lay.n)))
        .collect();
    Ok(ForwardComponent { y: to_reversed(&rev, &big_y, lay.n), z: to_reversed(&rev, &z_rev, lay.n * lay.l) })
}

fn check_forcing<M: NoiseModel + ?Sized>(model: &M, forcing: &FrozenForcing) -> Result<()> {
    let n = model.grid().steps();
    let lay = forcing.layout;
    let md = model.dims();
    if md.n != lay.n || md.m != lay.m || md.d != lay.d || md.l != lay.l || model.marks().count() != lay.j {
        return Err(Error::Shape("forcing layout does not match the noise model".into()));
    }
    for (name, layers, w) in [
        ("b", &forcing.b, lay.n),
        ("sigma", &forcing.sigma, lay.n * lay.d),
        ("phi", &forcing.phi, lay.n * lay.j),
        ("f", &forcing.f, lay.m),
        ("g", &forcing.g, lay.m * lay.l),
    ] {
        if layers.len() != n + 1 || layers.iter().enumerate().any(|(i, v)| v.len() != model.layer_len(i) * w) {
            return Err(Error::Shape(format!("forcing {name} has the wrong shape")));
        }
    }
    if forcing.initial.len() != model.layer_len(0) * lay.n || forcing.terminal.len() != model.layer_len(n) * lay.m {
        return Err(Error::Shape("boundary offsets have the wrong shape".into()));
    }
    Ok(())
}

/// Borrowed components of one layer, possibly drawn from different fields.
#[derive(Clone, Copy)]
pub(crate) struct LayerArgs<'a> {
    pub y: &'a [f64],
    pub big_y: &'a [f64],
    pub z: &'a [f64],
    pub big_z: &'a [f64],
    pub k: &'a [f64],
}

impl<'a> LayerArgs<'a> {
    pub fn of(u: &'a SolutionField, i: usize) -> Self {
        Self { y: &u.y[i], big_y: &u.big_y[i], z: &u.z[i], big_z: &u.big_z[i], k: &u.k[i] }
    }

    pub fn node(&self, lay: Layout, i: usize) -> QuintupleRef<'a> {
        let [a, b, c, d, e] = widths(lay);
        QuintupleRef {
            y: &self.y[i * a..(i + 1) * a],
            big_y: &self.big_y[i * b..(i + 1) * b],
            z: &self.z[i * c..(i + 1) * c],
            big_z: &self.big_z[i * d..(i + 1) * d],
            k: &self.k[i * e..(i + 1) * e],
        }
    }
}

/// Noise totals read by the boundary maps.
pub(crate) struct BoundaryNoise {
    pub b_total: Vec<f64>,
    pub w_total: Vec<f64>,
    pub jump_total: Vec<f64>,
    len0: usize,
    len_n: usize,
}

impl BoundaryNoise {
    pub fn new<M: NoiseModel + ?Sized>(model: &M, lay: Layout) -> Self {
        let n = model.grid().steps();
        let gather = |layer: usize, drivers: Vec<Driver>| {
            let len = model.layer_len(layer);
            let cols: Vec<Vec<f64>> =
                drivers.iter().map(|&d| model.driver_total(layer, d).unwrap_or_else(|| vec![0.0; len])).collect();
            from_columns(&cols, len, 1)
        };
        Self {
            b_total: gather(0, b_drivers(lay.l).collect()),
            w_total: gather(n, w_drivers(lay.d).collect()),
            jump_total: gather(n, jump_drivers(lay.j).collect()),
            len0: model.layer_len(0),
            len_n: model.layer_len(n),
        }
    }

    pub fn psi<C: Coefficients + ?Sized>(&self, c: &C, lay: Layout, big_y0: &[f64]) -> Vec<f64> {
        map_nodes(self.len0, lay.n, |i, o| {
            c.psi(&big_y0[i * lay.m..(i + 1) * lay.m], &self.b_total[i * lay.l..(i + 1) * lay.l], o)
        })
    }

    pub fn h<C: Coefficients + ?Sized>(&self, c: &C, lay: Layout, y_n: &[f64]) -> Vec<f64> {
        map_nodes(self.len_n, lay.m, |i, o| {
            c.h(
                &y_n[i * lay.n..(i + 1) * lay.n],
                &self.w_total[i * lay.d..(i + 1) * lay.d],
                &self.jump_total[i * lay.j..(i + 1) * lay.j],
                o,
            )
        })
    }
}

pub(crate) fn eval_b<C: Coefficients + ?Sized>(c: &C, t: f64, args: LayerArgs, len: usize) -> Vec<f64> {
    let lay = c.layout();
    map_nodes(len, lay.n, |i, o| c.b(t, &args.node(lay, i), o))
}

pub(crate) fn eval_sigma<C: Coefficients + ?Sized>(c: &C, t: f64, args: LayerArgs, len: usize) -> Vec<f64> {
    let lay = c.layout();
    map_nodes(len, lay.n * lay.d, |i, o| c.sigma(t, &args.node(lay, i), o))
}

pub(crate) fn eval_phi<C: Coefficients + ?Sized>(c: &C, t: f64, args: LayerArgs, len: usize) -> Vec<f64> {
    let lay = c.layout();
    map_nodes(len, lay.n * lay.j, |i, o| {
        let q = args.node(lay, i);
        for j in 0..lay.j {
            c.phi(t, &q, j, &mut o[j * lay.n..(j + 1) * lay.n]);
        }
    })
}

pub(crate) fn eval_f<C: Coefficients + ?Sized>(c: &C, t: f64, args: LayerArgs, len: usize) -> Vec<f64> {
    let lay = c.layout();
    map_nodes(len, lay.m, |i, o| c.f(t, &args.node(lay, i), o))
}

pub(crate) fn eval_g<C: Coefficients + ?Sized>(c: &C, t: f64, args: LayerArgs, len: usize) -> Vec<f64> {
    let lay = c.layout();
    map_nodes(len, lay.m * lay.l, |i, o| c.g(t, &args.node(lay, i), o))
}

/// `R x` per node, `x` being `n×cols`.
pub(crate) fn r_layer<C: Coefficients + ?Sized>(c: &C, x: &[f64], cols: usize) -> Vec<f64> {
    let lay = c.layout();
    let len = if lay.n * cols == 0 { 0 } else { x.len() / (lay.n * cols) };
    map_nodes(len, lay.m * cols, |i, o| c.coupling().r_mul(&x[i * lay.n * cols..(i + 1) * lay.n * cols], cols, o))
}

/// `R* x` per node, `x` being `m×cols`; with `blocks > 1` the input is a
/// mark-major stack of `blocks` vectors of length `m`.
pub(crate) fn rt_layer<C: Coefficients + ?Sized>(c: &C, x: &[f64], cols: usize, blocks: usize) -> Vec<f64> {
    let lay = c.layout();
    let w_in = lay.m * cols * blocks;
    let len = if w_in == 0 { 0 } else { x.len() / w_in };
    map_nodes(len, lay.n * cols * blocks, |i, o| {
        for j in 0..blocks {
            let src = &x[i * w_in + j * lay.m * cols..i * w_in + (j + 1) * lay.m * cols];
            c.coupling().rt_mul(src, cols, &mut o[j * lay.n * cols..(j + 1) * lay.n * cols]);
        }
    })
}

/// The level-`α` system of the parametrized family with forcing `forcing`.
///
/// [`LevelSystem::apply`] is the sequential-freezing sweep: with
/// [`Variant::ForwardFirst`] the forward equation is solved with its
/// coefficients at `x` and the backward equation then sees the new `(y, z)`;
/// with [`Variant::BackwardFirst`] the roles are swapped. Its fixed points
/// are the solutions of the level system.
pub struct LevelSystem<'a, C: Coefficients + ?Sized> {
    pub coeffs: &'a C,
    pub alpha: f64,
    pub variant: Variant,
    pub forcing: &'a FrozenForcing,
}

impl<C: Coefficients + ?Sized> LevelSystem<'_, C> {
    fn sign(&self) -> f64 {
        self.coeffs.coupling().orientation.sign()
    }

    pub fn apply<M: NoiseModel + ?Sized>(&self, model: &M, x: &SolutionField) -> Result<SolutionField> {
        let lay = self.coeffs.layout();
        check_forcing(model, self.forcing)?;
        if x.layout != lay || x.steps() != model.grid().steps() {
            return Err(Error::Shape("field does not match the system".into()));
        }
        let bn = BoundaryNoise::new(model, lay);
        Ok(match self.variant {
            Variant::ForwardFirst => self.apply_forward_first(model, x, &bn),
            Variant::BackwardFirst => self.apply_backward_first(model, x, &bn),
        })
    }

    fn apply_forward_first<M: NoiseModel + ?Sized>(&self, model: &M, x: &SolutionField, bn: &BoundaryNoise) -> SolutionField {
        let (c, a, fc) = (self.coeffs, self.alpha, self.forcing);
        let lay = c.layout();
        let grid = model.grid();
        let n = grid.steps();
        let anchor = self.sign() * (1.0 - a) * c.coupling().monotone.theta1;

        let mut y0 = scaled(a, &bn.psi(c, lay, &x.big_y[0]));
        axpy(&mut y0, 1.0, &fc.initial);
        let coef = |i: usize, which: u8| {
            let len = model.layer_len(i);
            let args = LayerArgs::of(x, i);
            let (mut v, forcing) = match which {
                0 => (eval_b(c, grid.node(i), args, len), &fc.b[i]),
                1 => (eval_sigma(c, grid.node(i), args, len), &fc.sigma[i]),
                _ => (eval_phi(c, grid.node(i), args, len), &fc.phi[i]),
            };
            v.iter_mut().for_each(|e| *e *= a);
            axpy(&mut v, 1.0, forcing);
            v
        };
        let fwd = forward_core(model, lay, y0, |i| coef(i, 0), |i| coef(i, 1), |i| coef(i, 2));

        let mix = |i: usize| LayerArgs { y: &fwd.y[i], big_y: &x.big_y[i], z: &fwd.z[i], big_z: &x.big_z[i], k: &x.k[i] };
        let f = |i: usize| {
            let mut v = scaled(a, &eval_f(c, grid.node(i), mix(i), model.layer_len(i)));
            axpy(&mut v, -anchor, &r_layer(c, &fwd.y[i], 1));
            axpy(&mut v, 1.0, &fc.f[i]);
            v
        };
        let g = |i: usize| {
            let mut v = scaled(a, &eval_g(c, grid.node(i), mix(i), model.layer_len(i)));
            axpy(&mut v, -anchor, &r_layer(c, &fwd.z[i], lay.l));
            axpy(&mut v, 1.0, &fc.g[i]);
            v
        };
        let mut yn = scaled(a, &bn.h(c, lay, &fwd.y[n]));
        axpy(&mut yn, anchor, &r_layer(c, &fwd.y[n], 1));
        axpy(&mut yn, 1.0, &fc.terminal);
        let bwd = backward_core(model, lay, yn, f, g);
        SolutionField { layout: lay, y: fwd.y, big_y: bwd.big_y, z: fwd.z, big_z: bwd.big_z, k: bwd.k }
    }

    fn apply_backward_first<M: NoiseModel + ?Sized>(&self, model: &M, x: &SolutionField, bn: &BoundaryNoise) -> SolutionField {
        let (c, a, fc) = (self.coeffs, self.alpha, self.forcing);
        let lay = c.layout();
        let grid = model.grid();
        let n = grid.steps();
        let anchor = self.sign() * (1.0 - a) * c.coupling().monotone.theta2;

        let mut yn = scaled(a, &bn.h(c, lay, &x.y[n]));
        axpy(&mut yn, 1.0, &fc.terminal);
        let f = |i: usize| {
            let mut v = scaled(a, &eval_f(c, grid.node(i), LayerArgs::of(x, i), model.layer_len(i)));
            axpy(&mut v, 1.0, &fc.f[i]);
            v
        };
        let g = |i: usize| {
            let mut v = scaled(a, &eval_g(c, grid.node(i), LayerArgs::of(x, i), model.layer_len(i)));
            axpy(&mut v, 1.0, &fc.g[i]);
            v
        };
        let bwd = backward_core(model, lay, yn, f, g);

        let mix = |i: usize| LayerArgs { y: &x.y[i], big_y: &bwd.big_y[i], z: &x.z[i], big_z: &bwd.big_z[i], k: &bwd.k[i] };
        let coef = |i: usize, which: u8| {
            let len = model.layer_len(i);
            let (mut v, anch, forcing) = match which {
                0 => (eval_b(c, grid.node(i), mix(i), len), rt_layer(c, &bwd.big_y[i], 1, 1), &fc.b[i]),
                1 => (eval_sigma(c, grid.node(i), mix(i), len), rt_layer(c, &bwd.big_z[i], lay.d, 1), &fc.sigma[i]),
                _ => (eval_phi(c, grid.node(i), mix(i), len), rt_layer(c, &bwd.k[i], 1, lay.j), &fc.phi[i]),
            };
            v.iter_mut().for_each(|e| *e *= a);
            axpy(&mut v, -anchor, &anch);
            axpy(&mut v, 1.0, forcing);
            v
        };
        let mut y0 = scaled(a, &bn.psi(c, lay, &bwd.big_y[0]));
        axpy(&mut y0, -self.sign() * (1.0 - a), &rt_layer(c, &bwd.big_y[0], 1, 1));
        axpy(&mut y0, 1.0, &fc.initial);
        let fwd = forward_core(model, lay, y0, |i| coef(i, 0), |i| coef(i, 1), |i| coef(i, 2));
        SolutionField { layout: lay, y: fwd.y, big_y: bwd.big_y, z: fwd.z, big_z: bwd.big_z, k: bwd.k }
    }

    /// Every coefficient of the level system evaluated at `u` itself.
    fn full_coefficients<M: NoiseModel + ?Sized>(&self, model: &M, u: &SolutionField) -> FullCoefficients {
        let (c, a, fc) = (self.coeffs, self.alpha, self.forcing);
        let lay = c.layout();
        let grid = model.grid();
        let n = grid.steps();
        let s = self.sign();
        let bn = BoundaryNoise::new(model, lay);
        let (a1, a2) = match self.variant {
            Variant::ForwardFirst => (s * (1.0 - a) * c.coupling().monotone.theta1, 0.0),
            Variant::BackwardFirst => (0.0, s * (1.0 - a) * c.coupling().monotone.theta2),
        };
        let mut out = FullCoefficients::default();
        for i in 0..=n {
            let len = model.layer_len(i);
            let t = grid.node(i);
            let args = LayerArgs::of(u, i);
            let mut b = scaled(a, &eval_b(c, t, args, len));
            axpy(&mut b, -a2, &rt_layer(c, &u.big_y[i], 1, 1));
            axpy(&mut b, 1.0, &fc.b[i]);
            let mut sg = scaled(a, &eval_sigma(c, t, args, len));
            axpy(&mut sg, -a2, &rt_layer(c, &u.big_z[i], lay.d, 1));
            axpy(&mut sg, 1.0, &fc.sigma[i]);
            let mut ph = scaled(a, &eval_phi(c, t, args, len));
            axpy(&mut ph, -a2, &rt_layer(c, &u.k[i], 1, lay.j));
            axpy(&mut ph, 1.0, &fc.phi[i]);
            let mut f = scaled(a, &eval_f(c, t, args, len));
            axpy(&mut f, -a1, &r_layer(c, &u.y[i], 1));
            axpy(&mut f, 1.0, &fc.f[i]);
            let mut g = scaled(a, &eval_g(c, t, args, len));
            axpy(&mut g, -a1, &r_layer(c, &u.z[i], lay.l));
            axpy(&mut g, 1.0, &fc.g[i]);
            out.b.push(b);
            out.sigma.push(sg);
            out.phi.push(ph);
            out.f.push(f);
            out.g.push(g);
        }
        let mut y0 = scaled(a, &bn.psi(c, lay, &u.big_y[0]));
        if self.variant == Variant::BackwardFirst {
            axpy(&mut y0, -s * (1.0 - a), &rt_layer(c, &u.big_y[0], 1, 1));
        }
        axpy(&mut y0, 1.0, &fc.initial);
        let mut yn = scaled(a, &bn.h(c, lay, &u.y[n]));
        axpy(&mut yn, a1, &r_layer(c, &u.y[n], 1));
        axpy(&mut yn, 1.0, &fc.terminal);
        out.initial = y0;
        out.terminal = yn;
        out
    }

    /// Plug `u` into the discrete integral equations and boundary conditions.
    pub fn residual<M: NoiseModel + ?Sized>(&self, model: &M, u: &SolutionField) -> Result<ResidualReport> {
        let lay = self.coeffs.layout();
        check_forcing(model, self.forcing)?;
        if u.layout != lay || u.steps() != model.grid().steps() {
            return Err(Error::Shape("field does not match the system".into()));
        }
        let fcs = self.full_coefficients(model, u);
        Ok(pathwise_residual(model, lay, u, &fcs))
    }
}

#[derive(Default)]
struct FullCoefficients {
    b: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    f: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    initial: Vec<f64>,
    terminal: Vec<f64>,
}

/// Maximum pathwise violation of each equation and boundary condition, plus
/// `Σ Δt E|r_k|²` for the two equations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualReport {
    pub forward_max: f64,
    pub backward_max: f64,
    pub initial_max: f64,
    pub terminal_max: f64,
    pub forward_h2: f64,
    pub backward_h2: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.forward_max.max(self.backward_max).max(self.initial_max).max(self.terminal_max)
    }
}

fn pathwise_residual<M: NoiseModel + ?Sized>(model: &M, lay: Layout, u: &SolutionField, c: &FullCoefficients) -> ResidualReport {
    let n = model.grid().steps();
    let dt = model.grid().dt();
    let p = model.path_count();
    let w = model.path_weights();
    let ex = |layer: usize, v: &[f64], dim: usize| model.expand(layer, v, dim);
    let incs = |i: usize, drv: Driver| model.path_increment(i, drv);
    let mut rep = ResidualReport::default();

    // Forward: y_k − y_0 − Σ_{i<k} increments.
    let mut acc = ex(0, &u.y[0], lay.n);
    for i in 0..n {
        let b = ex(i, &c.b[i], lay.n);
        let sg = ex(i, &c.sigma[i], lay.n * lay.d);
        let ph = ex(i, &c.phi[i], lay.n * lay.j);
        let z = ex(i + 1, &u.z[i + 1], lay.n * lay.l);
        let dw: Vec<Vec<f64>> = (0..lay.d).map(|k| incs(i, Driver::W(k))).collect();
        let db: Vec<Vec<f64>> = (0..lay.l).map(|k| incs(i, Driver::B(k))).collect();
        let dn: Vec<Vec<f64>> = (0..lay.j).map(|k| incs(i, Driver::Jump(k))).collect();
        for q in 0..p {
            for a in 0..lay.n {
                let mut v = b[q * lay.n + a] * dt;
                for k in 0..lay.d {
                    v += sg[q * lay.n * lay.d + a * lay.d + k] * dw[k][q];
                }
                for k in 0..lay.j {
                    v += ph[q * lay.n * lay.j + k * lay.n + a] * dn[k][q];
                }
                for k in 0..lay.l {
                    v -= z[q * lay.n * lay.l + a * lay.l + k] * db[k][q];
                }
                acc[q * lay.n + a] += v;
            }
        }
        let y = ex(i + 1, &u.y[i + 1], lay.n);
        let mut sq = 0.0;
        for q in 0..p {
            for a in 0..lay.n {
                let r = y[q * lay.n + a] - acc[q * lay.n + a];
                rep.forward_max = rep.forward_max.max(r.abs());
                sq += w[q] * r * r;
            }
        }
        rep.forward_h2 += dt * sq;
    }

    // Backward: Y_k − Y_N + Σ_{i≥k} increments.
    let mut acc = ex(n, &u.big_y[n], lay.m);
    for i in (0..n).rev() {
        let f = ex(i + 1, &c.f[i + 1], lay.m);
        let g = ex(i + 1, &c.g[i + 1], lay.m * lay.l);
        let bz = ex(i, &u.big_z[i], lay.m * lay.d);
        let kk = ex(i, &u.k[i], lay.m * lay.j);
        let dw: Vec<Vec<f64>> = (0..lay.d).map(|k| incs(i, Driver::W(k))).collect();
        let db: Vec<Vec<f64>> = (0..lay.l).map(|k| incs(i, Driver::B(k))).collect();
        let dn: Vec<Vec<f64>> = (0..lay.j).map(|k| incs(i, Driver::Jump(k))).collect();
        for q in 0..p {
            for a in 0..lay.m {
                let mut v = f[q * lay.m + a] * dt;
                for k in 0..lay.l {
                    v += g[q * lay.m * lay.l + a * lay.l + k] * db[k][q];
                }
                for k in 0..lay.d {
                    v += bz[q * lay.m * lay.d + a * lay.d + k] * dw[k][q];
                }
                for k in 0..lay.j {
                    v += kk[q * lay.m * lay.j + k * lay.m + a] * dn[k][q];
                }
                acc[q * lay.m + a] -= v;
            }
        }
        let yy = ex(i, &u.big_y[i], lay.m);
        let mut sq = 0.0;
        for q in 0..p {
            for a in 0..lay.m {
                let r = yy[q * lay.m + a] - acc[q * lay.m + a];
                rep.backward_max = rep.backward_max.max(r.abs());
                sq += w[q] * r * r;
            }
        }
        rep.backward_h2 += dt * sq;
    }

    rep.initial_max = u.y[0].iter().zip(&c.initial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    rep.terminal_max = u.big_y[n].iter().zip(&c.terminal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    rep
}

/// The decoupled `α = 0` system: one application of the level map, which
/// does not depend on its argument at `α = 0`.
pub fn solve_alpha0<M: NoiseModel + ?Sized, C: Coefficients + ?Sized>(
    model: &M,
    coeffs: &C,
    variant: Variant,
    forcing: &FrozenForcing,
) -> Result<SolutionField> {
    let sys = LevelSystem { coeffs, alpha: 0.0, variant, forcing };
    sys.apply(model, &SolutionField::zeros(model, coeffs.layout()))
}

/// Forcing that turns the level-`α0` system into the level-`α0+δ` one when
/// frozen at `vbar`.
pub fn delta_forcing<M: NoiseModel + ?Sized, C: Coefficients + ?Sized>(
    model: &M,
    coeffs: &C,
    variant: Variant,
    delta: f64,
    vbar: &SolutionField,
) -> FrozenForcing {
    let lay = coeffs.layout();
    let grid = model.grid();
    let n = grid.steps();
    let s = coeffs.coupling().orientation.sign();
    let mono = coeffs.coupling().monotone;
    let bn = BoundaryNoise::new(model, lay);
    let (a1, a2) = match variant {
        Variant::ForwardFirst => (s * mono.theta1, 0.0),
        Variant::BackwardFirst => (0.0, s * mono.theta2),
    };
    let mut out = FrozenForcing::zeros(model, lay);
    for i in 0..=n {
        let len = model.layer_len(i);
        let t = grid.node(i);
        let args = LayerArgs::of(vbar, i);
        let mut b = eval_b(coeffs, t, args, len);
        axpy(&mut b, a2, &rt_layer(coeffs, &vbar.big_y[i], 1, 1));
        let mut sg = eval_sigma(coeffs, t, args, len);
        axpy(&mut sg, a2, &rt_layer(coeffs, &vbar.big_z[i], lay.d, 1));
        let mut ph = eval_phi(coeffs, t, args, len);
        axpy(&mut ph, a2, &rt_layer(coeffs, &vbar.k[i], 1, lay.j));
        let mut f = eval_f(coeffs, t, args, len);
        axpy(&mut f, a1, &r_layer(coeffs, &vbar.y[i], 1));
        let mut g = eval_g(coeffs, t, args, len);
        axpy(&mut g, a1, &r_layer(coeffs, &vbar.z[i], lay.l));
        out.b[i] = scaled(delta, &b);
        out.sigma[i] = scaled(delta, &sg);
        out.phi[i] = scaled(delta, &ph);
        out.f[i] = scaled(delta, &f);
        out.g[i] = scaled(delta, &g);
    }
    let mut ini = bn.psi(coeffs, lay, &vbar.big_y[0]);
    if variant == Variant::BackwardFirst {
        axpy(&mut ini, s, &rt_layer(coeffs, &vbar.big_y[0], 1, 1));
    }
    let mut ter = bn.h(coeffs, lay, &vbar.y[n]);
    axpy(&mut ter, -a1, &r_layer(coeffs, &vbar.y[n], 1));
    out.initial = scaled(delta, &ini);
    out.terminal = scaled(delta, &ter);
    out
}
