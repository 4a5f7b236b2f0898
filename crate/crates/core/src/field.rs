//! Node-indexed quintuples `(y, Y, z, Z, k)` on a noise model and the norms
//! used by the solvers.
//!
//! Every component is stored on layers `0..=N`. `z_{i+1}` comes out of the
//! forward step `i` and sits on layer `i+1`; `Z_i` and `k_i` come out of the
//! backward step `i` and sit on layer `i`. The two missing ends are filled
//! by projection: `z_0 = E[z_1 | F_0]`, `Z_N = E[Z_{N-1} | F_N]` and
//! likewise for `k_N`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coefficients::{Layout, QuintupleRef};
use crate::error::{Error, Result};
use crate::noise::{keyed_rng, NoiseModel};

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub layout: Layout,
    pub y: Vec<Vec<f64>>,
    pub big_y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub big_z: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
}

/// Block widths per node, in storage order.
pub(crate) fn widths(lay: Layout) -> [usize; 5] {
    [lay.n, lay.m, lay.z_len(), lay.big_z_len(), lay.k_len()]
}

impl SolutionField {
    pub fn zeros<M: NoiseModel + ?Sized>(model: &M, layout: Layout) -> Self {
        let n = model.grid().steps();
        let alloc = |w: usize| (0..=n).map(|i| vec![0.0; model.layer_len(i) * w]).collect::<Vec<_>>();
        let [a, b, c, d, e] = widths(layout);
        Self { layout, y: alloc(a), big_y: alloc(b), z: alloc(c), big_z: alloc(d), k: alloc(e) }
    }

    /// Independent standard normal entries scaled by `scale`; adapted by
    /// construction since every entry belongs to one layer node.
    pub fn random<M: NoiseModel + ?Sized>(model: &M, layout: Layout, seed: u64, scale: f64) -> Self {
        let mut f = Self::zeros(model, layout);
        for (b, block) in f.blocks_mut().into_iter().enumerate() {
            for (i, layer) in block.iter_mut().enumerate() {
                let mut rng = keyed_rng(seed, b as u64, i as u64, 0x5eed);
                layer.iter_mut().for_each(|v| *v = scale * rng.sample::<f64, _>(StandardNormal));
            }
        }
        f
    }

    pub fn steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn blocks(&self) -> [&Vec<Vec<f64>>; 5] {
        [&self.y, &self.big_y, &self.z, &self.big_z, &self.k]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<Vec<f64>>; 5] {
        [&mut self.y, &mut self.big_y, &mut self.z, &mut self.big_z, &mut self.k]
    }

    /// Quintuple at one node of a layer.
    pub fn node(&self, layer: usize, node: usize) -> QuintupleRef<'_> {
        let [a, b, c, d, e] = widths(self.layout);
        QuintupleRef {
            y: &self.y[layer][node * a..(node + 1) * a],
            big_y: &self.big_y[layer][node * b..(node + 1) * b],
            z: &self.z[layer][node * c..(node + 1) * c],
            big_z: &self.big_z[layer][node * d..(node + 1) * d],
            k: &self.k[layer][node * e..(node + 1) * e],
        }
    }

    pub fn flat_len(&self) -> usize {
        self.blocks().iter().map(|b| b.iter().map(Vec::len).sum::<usize>()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for b in self.blocks() {
            for layer in b {
                out.extend_from_slice(layer);
            }
        }
        out
    }

    /// Overwrite the entries from a vector produced by [`Self::to_flat`].
    pub fn set_flat(&mut self, x: &[f64]) {
        let mut off = 0;
        for b in self.blocks_mut() {
            for layer in b.iter_mut() {
                let len = layer.len();
                layer.copy_from_slice(&x[off..off + len]);
                off += len;
            }
        }
    }

    pub fn with_flat(&self, x: &[f64]) -> Self {
        let mut f = self.clone();
        f.set_flat(x);
        f
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.layout == other.layout
            && self.blocks().iter().zip(other.blocks()).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.len() == y.len())
            })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Shape("fields live on different models".into()));
        }
        let x: Vec<f64> = self.to_flat().iter().zip(other.to_flat()).map(|(a, b)| a - b).collect();
        Ok(self.with_flat(&x))
    }

    /// `E[v]` of a block on a layer.
    pub fn layer_mean<M: NoiseModel + ?Sized>(model: &M, values: &[f64], layer: usize, dim: usize) -> Vec<f64> {
        let w = model.layer_weights(layer);
        let mut out = vec![0.0; dim];
        for (node, p) in w.iter().enumerate() {
            for c in 0..dim {
                out[c] += p * values[node * dim + c];
            }
        }
        out
    }

    /// `E|v|²` of a block on a layer (the jump block weighted by `Π`).
    pub fn layer_sq<M: NoiseModel + ?Sized>(&self, model: &M, block: usize, layer: usize) -> f64 {
        let w = model.layer_weights(layer);
        let vals = &self.blocks()[block][layer];
        let width = widths(self.layout)[block];
        let marks = model.marks();
        w.iter()
            .enumerate()
            .map(|(node, p)| {
                let v = &vals[node * width..(node + 1) * width];
                p * if block == 4 {
                    marks.weighted_norm_sq(v, self.layout.m)
                } else {
                    v.iter().map(|a| a * a).sum::<f64>()
                }
            })
            .sum()
    }

    /// `E[y_0]` and `E[Y_0]`.
    pub fn initial_means<M: NoiseModel + ?Sized>(&self, model: &M) -> (Vec<f64>, Vec<f64>) {
        (
            Self::layer_mean(model, &self.y[0], 0, self.layout.n),
            Self::layer_mean(model, &self.big_y[0], 0, self.layout.m),
        )
    }
}

/// `Σ_{i<N} Δt E[|y_i|² + |Y_i|² + ‖z_{i+1}‖² + ‖Z_i‖² + |||k_i|||²]`.
pub fn h2_norm<M: NoiseModel + ?Sized>(model: &M, u: &SolutionField) -> f64 {
    let n = u.steps();
    let dt = model.grid().dt();
    (0..n)
        .map(|i| {
            dt * (u.layer_sq(model, 0, i)
                + u.layer_sq(model, 1, i)
                + u.layer_sq(model, 2, i + 1)
                + u.layer_sq(model, 3, i)
                + u.layer_sq(model, 4, i))
        })
        .sum()
}

pub fn h2_distance<M: NoiseModel + ?Sized>(model: &M, u: &SolutionField, v: &SolutionField) -> Result<f64> {
    Ok(h2_norm(model, &u.sub(v)?))
}

/// `E∫|υ̂|² ds + E|ŷ_T|² + E|Ŷ_0|²` with `υ̂ = u − v`.
pub fn composite_distance<M: NoiseModel + ?Sized>(model: &M, u: &SolutionField, v: &SolutionField) -> Result<f64> {
    let d = u.sub(v)?;
    Ok(h2_norm(model, &d) + d.layer_sq(model, 0, d.steps()) + d.layer_sq(model, 1, 0))
}

/// Summary statistics of a solved field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub y0: Vec<f64>,
    pub big_y0: Vec<f64>,
    pub y_terminal_mean: Vec<f64>,
    pub big_y_terminal_mean: Vec<f64>,
    pub y_terminal_sq: f64,
    pub big_y_terminal_sq: f64,
    pub h2_norm: f64,
}

pub fn summarize<M: NoiseModel + ?Sized>(model: &M, u: &SolutionField) -> FieldSummary {
    let n = u.steps();
    let (y0, big_y0) = u.initial_means(model);
    FieldSummary {
        y0,
        big_y0,
        y_terminal_mean: SolutionField::layer_mean(model, &u.y[n], n, u.layout.n),
        big_y_terminal_mean: SolutionField::layer_mean(model, &u.big_y[n], n, u.layout.m),
        y_terminal_sq: u.layer_sq(model, 0, n),
        big_y_terminal_sq: u.layer_sq(model, 1, n),
        h2_norm: h2_norm(model, u),
    }
}
