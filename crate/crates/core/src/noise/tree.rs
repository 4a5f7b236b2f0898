use serde::{Deserialize, Serialize};

use super::grid::{Dims, MarkSpace, NoiseSources, TimeGrid};
use crate::error::{Error, Result};

/// A scalar noise coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Driver {
    W(usize),
    B(usize),
    Jump(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Law {
    Rademacher,
    Bernoulli(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Component {
    pub driver: Driver,
    pub law: Law,
    pub sign: f64,
}

impl Component {
    fn prob(&self, bit: usize) -> f64 {
        match self.law {
            Law::Rademacher => 0.5,
            Law::Bernoulli(p) => {
                if bit == 1 {
                    p
                } else {
                    1.0 - p
                }
            }
        }
    }

    fn value(&self, bit: usize, dt: f64) -> f64 {
        let v = match self.law {
            Law::Rademacher => {
                if bit == 1 {
                    dt.sqrt()
                } else {
                    -dt.sqrt()
                }
            }
            Law::Bernoulli(p) => bit as f64 - p,
        };
        self.sign * v
    }

    fn variance(&self, dt: f64) -> f64 {
        match self.law {
            Law::Rademacher => dt,
            Law::Bernoulli(p) => p * (1.0 - p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    #[serde(default = "default_cap")]
    pub node_cap: u64,
    #[serde(default)]
    pub sources: NoiseSources,
}

fn default_cap() -> u64 {
    1_000_000
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { node_cap: default_cap(), sources: NoiseSources::all() }
    }
}

impl TreeConfig {
    pub fn with_sources(sources: NoiseSources) -> Self {
        Self { sources, ..Self::default() }
    }
}

/// Which side of step `i` a layer sits on: layer `i` or layer `i+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Start,
    End,
}

/// Finite noise model with exact conditional expectations.
///
/// A node of layer `i` is identified by the forward-type symbols of steps
/// `0..i` and the backward-type symbols of steps `i..N`, which is exactly the
/// information carried by `F_{t_i}`. Step space `i` additionally carries the
/// forward symbol of step `i`; it is the smallest space holding both layer `i`
/// and layer `i+1`. Leaves carry every symbol.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    grid: TimeGrid,
    dims: Dims,
    marks: MarkSpace,
    sources: NoiseSources,
    forward: Vec<Component>,
    backward: Vec<Component>,
    fwd_prob: Vec<f64>,
    bwd_prob: Vec<f64>,
    fwd_pow: Vec<usize>,
    bwd_pow: Vec<usize>,
    reversed: bool,
}

/// Shorthand for [`ScenarioTree::build`].
pub fn build_tree(grid: TimeGrid, dims: Dims, marks: &MarkSpace, config: &TreeConfig) -> Result<ScenarioTree> {
    ScenarioTree::build(grid, dims, marks, config)
}

fn symbol_probs(comps: &[Component]) -> Vec<f64> {
    (0..1usize << comps.len())
        .map(|s| comps.iter().enumerate().map(|(c, comp)| comp.prob((s >> c) & 1)).product())
        .collect()
}

fn powers(base: usize, count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(count + 1);
    let mut acc = 1usize;
    for _ in 0..=count {
        out.push(acc);
        acc = acc.saturating_mul(base);
    }
    out
}

fn reverse_digits(mut x: usize, base: usize, digits: usize) -> usize {
    let mut out = 0;
    for _ in 0..digits {
        out = out * base + x % base;
        x /= base;
    }
    out
}

impl ScenarioTree {
    pub fn build(grid: TimeGrid, dims: Dims, marks: &MarkSpace, config: &TreeConfig) -> Result<Self> {
        dims.validate()?;
        let dt = grid.dt();
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        if config.sources.w {
            forward.extend((0..dims.d).map(|c| Component { driver: Driver::W(c), law: Law::Rademacher, sign: 1.0 }));
        }
        if config.sources.jumps {
            for j in 0..marks.count() {
                let p = marks.intensity(j) * dt;
                if p >= 1.0 {
                    return Err(Error::MarkIntensityTooLarge { mark: j, product: p });
                }
                forward.push(Component { driver: Driver::Jump(j), law: Law::Bernoulli(p), sign: 1.0 });
            }
        }
        if config.sources.b {
            backward.extend((0..dims.l).map(|c| Component { driver: Driver::B(c), law: Law::Rademacher, sign: 1.0 }));
        }
        let per_step = 1u128 << (forward.len() + backward.len());
        let mut leaves = 1u128;
        for _ in 0..grid.steps() {
            leaves = leaves.saturating_mul(per_step);
            if leaves > config.node_cap as u128 {
                return Err(Error::TreeTooLarge { nodes: leaves, cap: config.node_cap });
            }
        }
        Ok(Self::assemble(grid, dims, marks.clone(), config.sources, forward, backward, false))
    }

    fn assemble(
        grid: TimeGrid,
        dims: Dims,
        marks: MarkSpace,
        sources: NoiseSources,
        forward: Vec<Component>,
        backward: Vec<Component>,
        reversed: bool,
    ) -> Self {
        let n = grid.steps();
        Self {
            fwd_prob: symbol_probs(&forward),
            bwd_prob: symbol_probs(&backward),
            fwd_pow: powers(1 << forward.len(), n + 1),
            bwd_pow: powers(1 << backward.len(), n + 1),
            grid,
            dims,
            marks,
            sources,
            forward,
            backward,
            reversed,
        }
    }

    /// The time-reversed model: step `s` becomes step `N-1-s`, `W` and `B`
    /// swap roles with increments negated (`B̌_s = B_{T-s} - B_T`), and jump
    /// indicators become backward-type with negated increments.
    pub fn reversed(&self) -> Self {
        let flip = |c: &Component, to_w: bool| Component {
            driver: match c.driver {
                Driver::W(i) if !to_w => Driver::B(i),
                Driver::B(i) if to_w => Driver::W(i),
                other => other,
            },
            law: c.law,
            sign: -c.sign,
        };
        let forward = self.backward.iter().map(|c| flip(c, true)).collect();
        let backward = self.forward.iter().map(|c| flip(c, false)).collect();
        let dims = Dims { n: self.dims.m, m: self.dims.n, d: self.dims.l, l: self.dims.d };
        let sources = NoiseSources { w: self.sources.b, b: self.sources.w, jumps: self.sources.jumps };
        Self::assemble(self.grid, dims, self.marks.clone(), sources, forward, backward, !self.reversed)
    }

    /// Index in layer `N - layer` of the reversed tree of node `idx` of `layer`.
    pub fn reversed_node(&self, layer: usize, idx: usize) -> usize {
        let n = self.grid.steps();
        let bs = self.bwd_pow[n - layer];
        let (p, q) = (idx / bs, idx % bs);
        let fa = self.fwd_alphabet();
        let ba = self.bwd_alphabet();
        reverse_digits(q, ba, n - layer) * self.fwd_pow[layer] + reverse_digits(p, fa, layer)
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
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

    pub fn sources(&self) -> NoiseSources {
        self.sources
    }

    pub fn fwd_alphabet(&self) -> usize {
        1 << self.forward.len()
    }

    pub fn bwd_alphabet(&self) -> usize {
        1 << self.backward.len()
    }

    pub fn layer_len(&self, layer: usize) -> usize {
        self.fwd_pow[layer] * self.bwd_pow[self.grid.steps() - layer]
    }

    pub fn step_len(&self, step: usize) -> usize {
        self.fwd_pow[step + 1] * self.bwd_pow[self.grid.steps() - step]
    }

    pub fn leaf_count(&self) -> usize {
        let n = self.grid.steps();
        self.fwd_pow[n] * self.bwd_pow[n]
    }

    /// Layer-`step` node containing step-space node `s`.
    #[inline]
    pub fn start_index(&self, step: usize, s: usize) -> usize {
        let bs = self.bwd_pow[self.grid.steps() - step];
        (s / bs) / self.fwd_alphabet() * bs + s % bs
    }

    /// Layer-`step+1` node containing step-space node `s`.
    #[inline]
    pub fn end_index(&self, step: usize, s: usize) -> usize {
        let k = self.grid.steps() - step;
        let bs = self.bwd_pow[k];
        (s / bs) * self.bwd_pow[k - 1] + (s % bs) % self.bwd_pow[k - 1]
    }

    #[inline]
    fn fwd_symbol(&self, step: usize, s: usize) -> usize {
        (s / self.bwd_pow[self.grid.steps() - step]) % self.fwd_alphabet()
    }

    #[inline]
    fn bwd_symbol(&self, step: usize, s: usize) -> usize {
        let k = self.grid.steps() - step;
        (s % self.bwd_pow[k]) / self.bwd_pow[k - 1]
    }

    fn locate(&self, driver: Driver) -> Option<(bool, usize)> {
        if let Some(c) = self.forward.iter().position(|c| c.driver == driver) {
            return Some((true, c));
        }
        self.backward.iter().position(|c| c.driver == driver).map(|c| (false, c))
    }

    /// Whether the driver is present and forward-type (known in layers after its step).
    pub fn is_forward_type(&self, driver: Driver) -> Option<bool> {
        self.locate(driver).map(|(f, _)| f)
    }

    /// Increment of `driver` over step `step`, indexed by step-space node.
    /// `None` when the source is switched off.
    pub fn step_increment(&self, step: usize, driver: Driver) -> Option<Vec<f64>> {
        let (fwd, c) = self.locate(driver)?;
        let dt = self.grid.dt();
        let comp = if fwd { self.forward[c] } else { self.backward[c] };
        Some(
            (0..self.step_len(step))
                .map(|s| {
                    let sym = if fwd { self.fwd_symbol(step, s) } else { self.bwd_symbol(step, s) };
                    comp.value((sym >> c) & 1, dt)
                })
                .collect(),
        )
    }

    pub fn increment_variance(&self, driver: Driver) -> f64 {
        match self.locate(driver) {
            Some((true, c)) => self.forward[c].variance(self.grid.dt()),
            Some((false, c)) => self.backward[c].variance(self.grid.dt()),
            None => 0.0,
        }
    }

    /// Copy layer values into step space `step`.
    pub fn lift(&self, step: usize, side: Side, values: &[f64], dim: usize) -> Vec<f64> {
        let len = self.step_len(step);
        let mut out = vec![0.0; len * dim];
        for s in 0..len {
            let node = match side {
                Side::Start => self.start_index(step, s),
                Side::End => self.end_index(step, s),
            };
            out[s * dim..(s + 1) * dim].copy_from_slice(&values[node * dim..(node + 1) * dim]);
        }
        out
    }

    /// Exact conditional expectation from step space onto one of its layers.
    pub fn project(&self, step: usize, side: Side, values: &[f64], dim: usize) -> Vec<f64> {
        let layer = match side {
            Side::Start => step,
            Side::End => step + 1,
        };
        let mut out = vec![0.0; self.layer_len(layer) * dim];
        for s in 0..self.step_len(step) {
            let (node, p) = match side {
                Side::Start => (self.start_index(step, s), self.fwd_prob[self.fwd_symbol(step, s)]),
                Side::End => (self.end_index(step, s), self.bwd_prob[self.bwd_symbol(step, s)]),
            };
            for c in 0..dim {
                out[node * dim + c] += p * values[s * dim + c];
            }
        }
        out
    }

    fn prefix_probs(&self, digits: usize) -> Vec<f64> {
        let mut pp = vec![1.0];
        for _ in 0..digits {
            pp = pp.iter().flat_map(|&a| self.fwd_prob.iter().map(move |&p| a * p)).collect();
        }
        pp
    }

    fn suffix_probs(&self, digits: usize) -> Vec<f64> {
        let mut qq = vec![1.0];
        for _ in 0..digits {
            qq = self.bwd_prob.iter().flat_map(|&p| qq.iter().map(move |&a| a * p)).collect();
        }
        qq
    }

    /// Probability of each node of a layer.
    pub fn layer_weights(&self, layer: usize) -> Vec<f64> {
        let pp = self.prefix_probs(layer);
        let qq = self.suffix_probs(self.grid.steps() - layer);
        pp.iter().flat_map(|&a| qq.iter().map(move |&b| a * b)).collect()
    }

    pub fn leaf_weights(&self) -> Vec<f64> {
        self.layer_weights_full()
    }

    fn layer_weights_full(&self) -> Vec<f64> {
        let n = self.grid.steps();
        let pp = self.prefix_probs(n);
        let qq = self.suffix_probs(n);
        pp.iter().flat_map(|&a| qq.iter().map(move |&b| a * b)).collect()
    }

    /// Layer node containing a leaf.
    #[inline]
    pub fn leaf_to_layer(&self, layer: usize, leaf: usize) -> usize {
        let n = self.grid.steps();
        let (p, q) = (leaf / self.bwd_pow[n], leaf % self.bwd_pow[n]);
        (p / self.fwd_pow[n - layer]) * self.bwd_pow[n - layer] + q % self.bwd_pow[n - layer]
    }

    pub fn expand_layer(&self, layer: usize, values: &[f64], dim: usize) -> Vec<f64> {
        let leaves = self.leaf_count();
        let mut out = vec![0.0; leaves * dim];
        for leaf in 0..leaves {
            let node = self.leaf_to_layer(layer, leaf);
            out[leaf * dim..(leaf + 1) * dim].copy_from_slice(&values[node * dim..(node + 1) * dim]);
        }
        out
    }

    /// Conditional expectation of leaf values onto a layer, stored per node.
    pub fn compress_layer(&self, layer: usize, leaf_values: &[f64], dim: usize) -> Vec<f64> {
        let w = self.leaf_weights();
        let len = self.layer_len(layer);
        let mut acc = vec![0.0; len * dim];
        let mut mass = vec![0.0; len];
        for (leaf, &p) in w.iter().enumerate() {
            let node = self.leaf_to_layer(layer, leaf);
            mass[node] += p;
            for c in 0..dim {
                acc[node * dim + c] += p * leaf_values[leaf * dim + c];
            }
        }
        for node in 0..len {
            for c in 0..dim {
                acc[node * dim + c] /= mass[node];
            }
        }
        acc
    }

    fn leaf_bit(&self, leaf: usize, step: usize, fwd: bool, c: usize) -> usize {
        let n = self.grid.steps();
        let sym = if fwd {
            (leaf / self.bwd_pow[n] / self.fwd_pow[n - 1 - step]) % self.fwd_alphabet()
        } else {
            (leaf % self.bwd_pow[n] / self.bwd_pow[n - 1 - step]) % self.bwd_alphabet()
        };
        (sym >> c) & 1
    }

    /// Increment of `driver` over `step` on every leaf (zeros when switched off).
    pub fn leaf_increment(&self, step: usize, driver: Driver) -> Vec<f64> {
        let leaves = self.leaf_count();
        match self.locate(driver) {
            None => vec![0.0; leaves],
            Some((fwd, c)) => {
                let comp = if fwd { self.forward[c] } else { self.backward[c] };
                let dt = self.grid.dt();
                (0..leaves).map(|leaf| comp.value(self.leaf_bit(leaf, step, fwd, c), dt)).collect()
            }
        }
    }

    /// Raw (uncompensated) jump indicator of mark `j` over `step` on every leaf.
    pub fn leaf_jump_count(&self, step: usize, j: usize) -> Vec<f64> {
        let leaves = self.leaf_count();
        match self.locate(Driver::Jump(j)) {
            None => vec![0.0; leaves],
            Some((fwd, c)) => (0..leaves).map(|leaf| self.leaf_bit(leaf, step, fwd, c) as f64).collect(),
        }
    }

    /// Running value of a driver, `X_{t_i}` with `X_0 = 0`, on every leaf for `i = 0..=N`.
    pub fn leaf_path(&self, driver: Driver) -> Vec<Vec<f64>> {
        let n = self.grid.steps();
        let mut out = vec![vec![0.0; self.leaf_count()]];
        for s in 0..n {
            let inc = self.leaf_increment(s, driver);
            let next: Vec<f64> = out[s].iter().zip(&inc).map(|(a, b)| a + b).collect();
            out.push(next);
        }
        out
    }

    /// Total increment of a driver over `[0, T]` stored on `layer`, when that
    /// layer knows every symbol of the driver; zeros when the source is off.
    pub fn driver_total(&self, layer: usize, driver: Driver) -> Option<Vec<f64>> {
        let n = self.grid.steps();
        let len = self.layer_len(layer);
        let Some((fwd, c)) = self.locate(driver) else {
            return Some(vec![0.0; len]);
        };
        if (fwd && layer != n) || (!fwd && layer != 0) {
            return None;
        }
        let comp = if fwd { self.forward[c] } else { self.backward[c] };
        let (alpha, pow) = if fwd { (self.fwd_alphabet(), &self.fwd_pow) } else { (self.bwd_alphabet(), &self.bwd_pow) };
        let dt = self.grid.dt();
        Some(
            (0..len)
                .map(|idx| (0..n).map(|s| comp.value(((idx / pow[n - 1 - s]) % alpha >> c) & 1, dt)).sum())
                .collect(),
        )
    }

    fn leaf_key(&self, leaf: usize, info: &InformationIndex) -> u64 {
        let mut key = 0u64;
        for s in 0..self.grid.steps() {
            for (c, comp) in self.forward.iter().enumerate() {
                if info.knows(comp.driver, s) {
                    key = key * 2 + self.leaf_bit(leaf, s, true, c) as u64;
                }
            }
            for (c, comp) in self.backward.iter().enumerate() {
                if info.knows(comp.driver, s) {
                    key = key * 2 + self.leaf_bit(leaf, s, false, c) as u64;
                }
            }
        }
        key
    }
}

/// Information available to a conditional expectation, stated per driver in
/// the original time orientation: `W` symbols of steps `< w_before`, jump
/// symbols of steps `< jumps_before`, `B` symbols of steps `≥ b_from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InformationIndex {
    pub w_before: usize,
    pub jumps_before: usize,
    pub b_from: usize,
}

impl InformationIndex {
    /// `F_{t_i} = F^W_{t_i} ∨ F^B_{t_i,T} ∨ F^η_{t_i}`.
    pub fn at(step: usize) -> Self {
        Self { w_before: step, jumps_before: step, b_from: step }
    }

    /// `F^B_{t_s,T}` alone.
    pub fn backward_brownian(step: usize) -> Self {
        Self { w_before: 0, jumps_before: 0, b_from: step }
    }

    /// `F^W_{t_i}` alone.
    pub fn forward_brownian(step: usize) -> Self {
        Self { w_before: step, jumps_before: 0, b_from: usize::MAX }
    }

    pub fn trivial() -> Self {
        Self { w_before: 0, jumps_before: 0, b_from: usize::MAX }
    }

    pub fn knows(&self, driver: Driver, step: usize) -> bool {
        match driver {
            Driver::W(_) => step < self.w_before,
            Driver::Jump(_) => step < self.jumps_before,
            Driver::B(_) => step >= self.b_from,
        }
    }
}

/// `E[X | info]` for leaf-indexed `X` (row-major `leaf × dim`), returned per leaf.
pub fn conditional_expectation(tree: &ScenarioTree, x: &[f64], dim: usize, info: &InformationIndex) -> Result<Vec<f64>> {
    let leaves = tree.leaf_count();
    if x.len() != leaves * dim {
        return Err(Error::Shape(format!("expected {} leaf values, got {}", leaves * dim, x.len())));
    }
    let w = tree.leaf_weights();
    let keys: Vec<u64> = (0..leaves).map(|leaf| tree.leaf_key(leaf, info)).collect();
    let mut sums = std::collections::HashMap::<u64, (f64, Vec<f64>)>::new();
    for leaf in 0..leaves {
        let entry = sums.entry(keys[leaf]).or_insert_with(|| (0.0, vec![0.0; dim]));
        entry.0 += w[leaf];
        for c in 0..dim {
            entry.1[c] += w[leaf] * x[leaf * dim + c];
        }
    }
    let mut out = vec![0.0; leaves * dim];
    for leaf in 0..leaves {
        let (mass, acc) = &sums[&keys[leaf]];
        for c in 0..dim {
            out[leaf * dim + c] = acc[c] / mass;
        }
    }
    Ok(out)
}

/// Atoms of the σ-field described by `info`: a dense block id per leaf.
pub fn information_atoms(tree: &ScenarioTree, info: &InformationIndex) -> Vec<usize> {
    let mut ids = std::collections::HashMap::<u64, usize>::new();
    (0..tree.leaf_count())
        .map(|leaf| {
            let next = ids.len();
            *ids.entry(tree.leaf_key(leaf, info)).or_insert(next)
        })
        .collect()
}

/// Same as [`conditional_expectation`] for values stored on a layer.
pub fn conditional_expectation_layer(
    tree: &ScenarioTree,
    layer: usize,
    values: &[f64],
    dim: usize,
    info: &InformationIndex,
) -> Result<Vec<f64>> {
    if layer > tree.grid().steps() || values.len() != tree.layer_len(layer) * dim {
        return Err(Error::Shape(format!("values do not match layer {layer}")));
    }
    conditional_expectation(tree, &tree.expand_layer(layer, values, dim), dim, info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::grid::make_grid;

    fn tree(n: usize, marks: &[f64]) -> ScenarioTree {
        let marks = MarkSpace::new(marks.to_vec()).unwrap();
        build_tree(make_grid(1.0, n).unwrap(), Dims::scalar(), &marks, &TreeConfig::default()).unwrap()
    }

    #[test]
    fn leaf_count_and_probability() {
        let t = tree(2, &[]);
        assert_eq!(t.leaf_count(), 16);
        assert!(t.leaf_weights().iter().all(|&w| (w - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn jump_probability() {
        let marks = MarkSpace::new(vec![0.5]).unwrap();
        let grid = make_grid(1.0, 4).unwrap();
        let cfg = TreeConfig::with_sources(NoiseSources { w: false, b: false, jumps: true });
        let t = build_tree(grid, Dims::scalar(), &marks, &cfg).unwrap();
        let w = t.layer_weights(1);
        assert_eq!(w.len(), 2);
        assert!((w[1] - 0.125).abs() < 1e-15);
        let big = MarkSpace::new(vec![5.0]).unwrap();
        let err = build_tree(grid, Dims::scalar(), &big, &TreeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MarkIntensityTooLarge { .. }));
    }

    #[test]
    fn cap_enforced() {
        let grid = make_grid(1.0, 12).unwrap();
        let err = build_tree(grid, Dims::scalar(), &MarkSpace::empty(), &TreeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::TreeTooLarge { .. }));
    }

    #[test]
    fn projection_is_weighted_mean() {
        let t = tree(2, &[0.5]);
        for step in 0..2 {
            let ones = vec![1.0; t.layer_len(step)];
            let lifted = t.lift(step, Side::Start, &ones, 1);
            assert!(t.project(step, Side::End, &lifted, 1).iter().all(|v| (v - 1.0).abs() < 1e-15));
            let dw = t.step_increment(step, Driver::W(0)).unwrap();
            assert!(t.project(step, Side::Start, &dw, 1).iter().all(|v| v.abs() < 1e-15));
            let db = t.step_increment(step, Driver::B(0)).unwrap();
            assert!(t.project(step, Side::End, &db, 1).iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn suffix_sum_is_known() {
        let t = tree(3, &[]);
        let path = t.leaf_path(Driver::B(0));
        let i = 1;
        let suffix: Vec<f64> = path[3].iter().zip(&path[i]).map(|(a, b)| a - b).collect();
        let e = conditional_expectation(&t, &suffix, 1, &InformationIndex::at(i)).unwrap();
        for (a, b) in e.iter().zip(&suffix) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn reversal_is_an_involution() {
        let t = tree(3, &[0.5]);
        let rr = t.reversed().reversed();
        for s in 0..3 {
            assert_eq!(t.step_increment(s, Driver::B(0)), rr.step_increment(s, Driver::B(0)));
            assert_eq!(t.step_increment(s, Driver::Jump(0)), rr.step_increment(s, Driver::Jump(0)));
        }
        let r = t.reversed();
        for layer in 0..=3 {
            let mut seen = vec![false; t.layer_len(layer)];
            for idx in 0..t.layer_len(layer) {
                let j = t.reversed_node(layer, idx);
                assert!(!seen[j]);
                seen[j] = true;
                assert_eq!(r.reversed_node(3 - layer, j), idx);
            }
        }
    }
}
