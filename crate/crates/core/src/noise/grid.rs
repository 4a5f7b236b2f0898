use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::NonPositiveHorizon(horizon));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node `t_i`; the last node is exactly `T`.
    pub fn node(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Index of a time that lies on the grid, within a relative slack.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt();
        let i = x.round();
        if i < 0.0 || i > self.steps as f64 || (x - i).abs() > 1e-9 {
            return Err(Error::OffGrid(format!("t = {t} is not a node of the grid")));
        }
        Ok(i as usize)
    }
}

/// Shorthand for [`TimeGrid::new`].
pub fn make_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// Finite mark set with per-mark intensities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkSpace {
    intensities: Vec<f64>,
}

impl MarkSpace {
    pub fn new(intensities: Vec<f64>) -> Result<Self> {
        for (j, &p) in intensities.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::InvalidMarks(format!("intensity of mark {j} must be positive, got {p}")));
            }
        }
        Ok(Self { intensities })
    }

    pub fn empty() -> Self {
        Self { intensities: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.intensities.len()
    }

    pub fn intensity(&self, j: usize) -> f64 {
        self.intensities[j]
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// `Σ_j Π_j |k_j|²` for a mark-major block of `count()` vectors in `R^dim`.
    pub fn weighted_norm_sq(&self, k: &[f64], dim: usize) -> f64 {
        self.intensities
            .iter()
            .enumerate()
            .map(|(j, p)| p * k[j * dim..(j + 1) * dim].iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// State and noise dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub l: usize,
}

impl Dims {
    pub fn new(n: usize, m: usize, d: usize, l: usize) -> Result<Self> {
        let dims = Self { n, m, d, l };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 || self.l == 0 {
            return Err(Error::InvalidDims(format!("all of n, m, d, l must be ≥ 1, got {self:?}")));
        }
        Ok(())
    }

    pub fn scalar() -> Self {
        Self { n: 1, m: 1, d: 1, l: 1 }
    }
}

/// Which noise sources the discrete model carries. Switching a source off
/// gives the deterministic (or partially deterministic) reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSources {
    #[serde(default = "yes")]
    pub w: bool,
    #[serde(default = "yes")]
    pub b: bool,
    #[serde(default = "yes")]
    pub jumps: bool,
}

fn yes() -> bool {
    true
}

impl Default for NoiseSources {
    fn default() -> Self {
        Self::all()
    }
}

impl NoiseSources {
    pub fn all() -> Self {
        Self { w: true, b: true, jumps: true }
    }

    pub fn none() -> Self {
        Self { w: false, b: false, jumps: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes() {
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(make_grid(2.0, 1).unwrap().nodes(), vec![0.0, 2.0]);
        assert_eq!(make_grid(1.0, 0), Err(Error::EmptyGrid));
        assert!(make_grid(-1.0, 3).is_err());
    }

    #[test]
    fn last_node_is_horizon() {
        let g = make_grid(0.3, 7).unwrap();
        assert_eq!(g.node(7), 0.3);
        assert_eq!(g.index_of(0.3).unwrap(), 7);
        assert!(g.index_of(0.01).is_err());
    }

    #[test]
    fn mark_norm() {
        let marks = MarkSpace::new(vec![0.5, 2.0]).unwrap();
        assert_eq!(marks.weighted_norm_sq(&[1.0, 2.0], 1), 0.5 + 8.0);
        assert!(MarkSpace::new(vec![0.0]).is_err());
    }
}
