//! JSON problem configuration and the objects it builds.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coefficients::{
    AffineFamily, AffineMap, CoefficientSet, Coupling, Layout, LipschitzConstants, Loadings, MonotoneParams,
    Orientation,
};
use crate::continuation::ContinuationConfig;
use crate::error::{Error, Result};
use crate::noise::{make_grid, Dims, MarkSpace, McModel, NoiseModel, NoiseSources, PathBundle, ScenarioTree, TreeConfig};
use crate::verification::LinearBvpSpec;

pub const DEFAULT_SEED: u64 = 0xFBD5DE;
pub const SEED_ENV: &str = "FBDSDEJ_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: usize,
}

/// `M x + c` with `M` as row-major nested arrays; a missing offset is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
}

impl MapSpec {
    fn build(spec: &Option<MapSpec>, name: &str, rows: usize, cols: usize) -> Result<AffineMap> {
        match spec {
            None => Ok(AffineMap::zeros(rows, cols)),
            Some(s) => {
                let map = AffineMap::from_rows(&s.matrix, s.offset.clone(), cols)
                    .map_err(|e| Error::Config(format!("family.{name}: {e}")))?;
                if map.rows != rows {
                    return Err(Error::Config(format!("family.{name}: expected {rows} rows, got {}", map.rows)));
                }
                Ok(map)
            }
        }
    }
}

fn unit() -> MonotoneParams {
    MonotoneParams { theta1: 1.0, theta2: 1.0, beta1: 1.0, beta2: 1.0 }
}

/// Coefficient family. Affine maps act on `(y, Y, z, Z, k)` packed in that
/// order (`z`, `Z` row-major, `k` mark-major); `psi` acts on `Y`, `h` on `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Zero {
        #[serde(default = "unit")]
        declared: MonotoneParams,
    },
    CanonicalMonotone {
        theta1: f64,
        theta2: f64,
        beta1: f64,
        beta2: f64,
        psi0: Vec<f64>,
        phi0: Vec<f64>,
        #[serde(default)]
        loadings: Loadings,
    },
    SignFlipped {
        theta1: f64,
        theta2: f64,
        beta1: f64,
        beta2: f64,
        psi0: Vec<f64>,
        phi0: Vec<f64>,
        #[serde(default)]
        loadings: Loadings,
    },
    GeneralAffine {
        declared: MonotoneParams,
        #[serde(default)]
        b: Option<MapSpec>,
        #[serde(default)]
        sigma: Option<MapSpec>,
        #[serde(default)]
        phi: Option<MapSpec>,
        #[serde(default)]
        phi_scale: Option<Vec<f64>>,
        #[serde(default)]
        f: Option<MapSpec>,
        #[serde(default)]
        g: Option<MapSpec>,
        #[serde(default)]
        psi: Option<MapSpec>,
        #[serde(default)]
        h: Option<MapSpec>,
        #[serde(default)]
        loadings: Loadings,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Tree,
    Mc,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(Backend::Tree),
            "mc" => Ok(Backend::Mc),
            other => Err(Error::Config(format!("backend must be tree or mc, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self { samples: 10_000, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dims: Dims,
    /// Intensities `Π_j` of the finite mark space.
    #[serde(default)]
    pub marks: Vec<f64>,
    pub grid: GridSpec,
    pub family: FamilySpec,
    /// `R` as `m` rows of `n` entries.
    pub r: Vec<Vec<f64>>,
    #[serde(default)]
    pub constants: LipschitzConstants,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default)]
    pub noise: NoiseSources,
    #[serde(default)]
    pub tree_node_cap: Option<u64>,
    #[serde(default)]
    pub continuation: ContinuationConfig,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_paths")]
    pub mc_paths: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub checks: CheckSpec,
}

fn default_paths() -> usize {
    4096
}

/// A built noise model of either backend.
pub enum Model {
    Tree(ScenarioTree),
    Mc(McModel),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn NoiseModel {
        match self {
            Model::Tree(t) => t,
            Model::Mc(m) => m,
        }
    }
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Flag, then environment, then config file, then the built-in default.
    pub fn resolve_seed(&self, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(v) = env.map(str::trim).filter(|v| !v.is_empty()) {
            return parse_seed(v).ok_or_else(|| Error::Config(format!("{SEED_ENV}: not a u64: {v:?}")));
        }
        Ok(self.seed.unwrap_or(DEFAULT_SEED))
    }

    pub fn mark_space(&self) -> Result<MarkSpace> {
        MarkSpace::new(self.marks.clone()).map_err(|e| Error::Config(format!("marks: {e}")))
    }

    pub fn layout(&self) -> Result<Layout> {
        Ok(Layout::new(self.dims, &self.mark_space()?))
    }

    fn monotone(&self) -> MonotoneParams {
        match &self.family {
            FamilySpec::Zero { declared } | FamilySpec::GeneralAffine { declared, .. } => *declared,
            FamilySpec::CanonicalMonotone { theta1, theta2, beta1, beta2, .. }
            | FamilySpec::SignFlipped { theta1, theta2, beta1, beta2, .. } => {
                MonotoneParams { theta1: *theta1, theta2: *theta2, beta1: *beta1, beta2: *beta2 }
            }
        }
    }

    pub fn coupling(&self) -> Result<Coupling> {
        let (m, n) = (self.dims.m, self.dims.n);
        if self.r.len() != m || self.r.iter().any(|row| row.len() != n) {
            return Err(Error::Config(format!("r: expected {m} rows of {n} entries")));
        }
        let r = DMatrix::from_row_slice(m, n, &self.r.concat());
        Ok(Coupling::new(r, self.monotone(), self.constants, self.orientation))
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        self.dims.validate()?;
        let marks = self.mark_space()?;
        let cp = self.coupling()?;
        let lay = Layout::new(self.dims, &marks);
        let set = match &self.family {
            FamilySpec::Zero { .. } => CoefficientSet::zero(self.dims, marks, cp),
            FamilySpec::CanonicalMonotone { psi0, phi0, loadings, .. } => {
                CoefficientSet::canonical(self.dims, marks, cp, psi0.clone(), phi0.clone(), loadings.clone())
            }
            FamilySpec::SignFlipped { psi0, phi0, loadings, .. } => {
                CoefficientSet::sign_flipped(self.dims, marks, cp, psi0.clone(), phi0.clone(), loadings.clone())
            }
            FamilySpec::GeneralAffine { b, sigma, phi, phi_scale, f, g, psi, h, loadings, .. } => {
                let q = lay.total();
                let fam = AffineFamily {
                    b: MapSpec::build(b, "b", lay.n, q)?,
                    sigma: MapSpec::build(sigma, "sigma", lay.n * lay.d, q)?,
                    phi: MapSpec::build(phi, "phi", lay.n, q)?,
                    phi_scale: phi_scale.clone().unwrap_or_else(|| vec![1.0; lay.j]),
                    f: MapSpec::build(f, "f", lay.m, q)?,
                    g: MapSpec::build(g, "g", lay.m * lay.l, q)?,
                    psi: MapSpec::build(psi, "psi", lay.n, lay.m)?,
                    h: MapSpec::build(h, "h", lay.m, lay.n)?,
                    loadings: loadings.clone(),
                };
                CoefficientSet::affine(self.dims, marks, cp, fam)
            }
        };
        set.map_err(|e| match e {
            Error::Shape(msg) => Error::Config(format!("family: {msg}")),
            other => other,
        })
    }

    /// Same problem on a grid with `steps` steps.
    pub fn with_steps(&self, steps: usize) -> Self {
        let mut c = self.clone();
        c.grid.steps = steps;
        c
    }

    pub fn tree(&self) -> Result<ScenarioTree> {
        let grid = make_grid(self.grid.horizon, self.grid.steps)?;
        let mut tc = TreeConfig::with_sources(self.noise);
        if let Some(cap) = self.tree_node_cap {
            tc.node_cap = cap;
        }
        ScenarioTree::build(grid, self.dims, &self.mark_space()?, &tc)
    }

    pub fn model(&self, backend: Backend, seed: u64) -> Result<Model> {
        match backend {
            Backend::Tree => Ok(Model::Tree(self.tree()?)),
            Backend::Mc => {
                let grid = make_grid(self.grid.horizon, self.grid.steps)?;
                let bundle = PathBundle::sample(grid, self.dims, &self.mark_space()?, self.mc_paths, seed)?;
                Ok(Model::Mc(McModel::new(bundle, self.noise)?))
            }
        }
    }

    /// The closed-form reduction, when the problem is the scalar canonical
    /// family with `R = 1` and no boundary loadings.
    pub fn linear_oracle(&self) -> Option<LinearBvpSpec> {
        let scalar = self.dims.n == 1 && self.dims.m == 1 && self.r == vec![vec![1.0]];
        match &self.family {
            FamilySpec::CanonicalMonotone { theta1, theta2, beta1, beta2, psi0, phi0, loadings }
                if scalar && self.orientation == Orientation::Standard =>
            {
                let quiet = |v: &[f64]| v.iter().all(|x| *x == 0.0);
                (quiet(&loadings.psi_b) && quiet(&loadings.h_w) && quiet(&loadings.h_jump)).then_some(LinearBvpSpec {
                    theta1: *theta1,
                    theta2: *theta2,
                    beta1: *beta1,
                    beta2: *beta2,
                    psi0: psi0[0],
                    phi0: phi0[0],
                    horizon: self.grid.horizon,
                })
            }
            _ => None,
        }
    }
}

pub fn parse_seed(text: &str) -> Option<u64> {
    let t = text.trim();
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => t.parse().ok(),
    }
}

/// The linear scalar problem with solution `e^{−t}`, on `steps` steps.
pub fn exp_decay_config(steps: usize, noise: NoiseSources, marks: Vec<f64>) -> ProblemConfig {
    let s = LinearBvpSpec::exp_decay();
    ProblemConfig {
        dims: Dims::scalar(),
        marks,
        grid: GridSpec { horizon: s.horizon, steps },
        family: FamilySpec::CanonicalMonotone {
            theta1: s.theta1,
            theta2: s.theta2,
            beta1: s.beta1,
            beta2: s.beta2,
            psi0: vec![s.psi0],
            phi0: vec![s.phi0],
            loadings: Loadings::default(),
        },
        r: vec![vec![1.0]],
        constants: LipschitzConstants::default(),
        orientation: Orientation::Standard,
        noise,
        tree_node_cap: None,
        continuation: ContinuationConfig::default(),
        backend: Backend::Tree,
        mc_paths: default_paths(),
        seed: None,
        checks: CheckSpec::default(),
    }
}
