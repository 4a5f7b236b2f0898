//! Time grids, mark spaces and the two discrete noise models: the exact
//! scenario tree and the Monte Carlo path bundle.

mod grid;
mod paths;
mod tree;

pub use grid::{make_grid, Dims, MarkSpace, NoiseSources, TimeGrid};
pub use paths::{keyed_rng, sample_paths, McModel, PathBundle};
pub use tree::{
    build_tree, conditional_expectation, conditional_expectation_layer, information_atoms, Driver, InformationIndex, ScenarioTree, Side,
    TreeConfig,
};

/// The operations the solvers need from a discrete noise model.
///
/// Values live on layers `0..=N` (one per grid node) and on step spaces
/// `0..N`; step space `i` refines both layer `i` and layer `i+1`. All arrays
/// are row-major `node × dim`.
pub trait NoiseModel: Sync {
    fn grid(&self) -> &TimeGrid;
    fn dims(&self) -> Dims;
    fn marks(&self) -> &MarkSpace;
    fn layer_len(&self, layer: usize) -> usize;
    fn step_len(&self, step: usize) -> usize;
    /// Probability of each node of a layer.
    fn layer_weights(&self, layer: usize) -> Vec<f64>;
    fn lift(&self, step: usize, side: Side, values: &[f64], dim: usize) -> Vec<f64>;
    /// Conditional expectation from step space onto a layer.
    fn project(&self, step: usize, side: Side, values: &[f64], dim: usize) -> Vec<f64>;
    /// Step-space increment of a driver; `None` when that source is off.
    fn increment(&self, step: usize, driver: Driver) -> Option<Vec<f64>>;
    fn increment_variance(&self, step: usize, driver: Driver) -> f64;
    /// `X_T - X_0` on a layer that knows it (`B` on layer 0, `W` and jumps on layer `N`).
    fn driver_total(&self, layer: usize, driver: Driver) -> Option<Vec<f64>>;
    /// Number of elementary outcomes (leaves or paths).
    fn path_count(&self) -> usize;
    fn path_weights(&self) -> Vec<f64>;
    fn expand(&self, layer: usize, values: &[f64], dim: usize) -> Vec<f64>;
    fn path_increment(&self, step: usize, driver: Driver) -> Vec<f64>;
    /// Whether conditional expectations are exact.
    fn is_exact(&self) -> bool;
}

impl NoiseModel for ScenarioTree {
    fn grid(&self) -> &TimeGrid {
        ScenarioTree::grid(self)
    }

    fn dims(&self) -> Dims {
        ScenarioTree::dims(self)
    }

    fn marks(&self) -> &MarkSpace {
        ScenarioTree::marks(self)
    }

    fn layer_len(&self, layer: usize) -> usize {
        ScenarioTree::layer_len(self, layer)
    }

    fn step_len(&self, step: usize) -> usize {
        ScenarioTree::step_len(self, step)
    }

    fn layer_weights(&self, layer: usize) -> Vec<f64> {
        ScenarioTree::layer_weights(self, layer)
    }

    fn lift(&self, step: usize, side: Side, values: &[f64], dim: usize) -> Vec<f64> {
        ScenarioTree::lift(self, step, side, values, dim)
    }

    fn project(&self, step: usize, side: Side, values: &[f64], dim: usize) -> Vec<f64> {
        ScenarioTree::project(self, step, side, values, dim)
    }

    fn increment(&self, step: usize, driver: Driver) -> Option<Vec<f64>> {
        self.step_increment(step, driver)
    }

    fn increment_variance(&self, _step: usize, driver: Driver) -> f64 {
        ScenarioTree::increment_variance(self, driver)
    }

    fn driver_total(&self, layer: usize, driver: Driver) -> Option<Vec<f64>> {
        ScenarioTree::driver_total(self, layer, driver)
    }

    fn path_count(&self) -> usize {
        self.leaf_count()
    }

    fn path_weights(&self) -> Vec<f64> {
        self.leaf_weights()
    }

    fn expand(&self, layer: usize, values: &[f64], dim: usize) -> Vec<f64> {
        self.expand_layer(layer, values, dim)
    }

    fn path_increment(&self, step: usize, driver: Driver) -> Vec<f64> {
        self.leaf_increment(step, driver)
    }

    fn is_exact(&self) -> bool {
        true
    }
}
