//! The continuation (homotopy) solver in the parameter `α ∈ [0,1]`.
//!
//! Level `α = 0` is decoupled. From a solved level `α0` the next level
//! `α0 + δ` is reached by Picard iteration of the map `I_{α0+δ}`: freeze the
//! `δ`-part of the coefficients at the previous iterate and solve the
//! level-`α0` system with that forcing. Fixed points of `I_{α0+δ}` solve
//! level `α0 + δ`.

use serde::{Deserialize, Serialize};

use crate::coefficients::{validate_theorem_preconditions, Coefficients};
use crate::decoupled::{delta_forcing, solve_alpha0, FrozenForcing, LevelSystem, ResidualReport};
use crate::error::{Error, Result};
use crate::field::{composite_distance, SolutionField};
use crate::krylov::{gmres, GmresConfig};
use crate::noise::NoiseModel;

/// Which parametrized family the continuation runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Forward equation solved first; anchors on `θ1 R y`, `θ1 R z` (used when `m > n`).
    ForwardFirst,
    /// Backward equation solved first; anchors on `θ2 R* Y`, `θ2 R* Z`, `θ2 R* k` (used when `m < n`).
    BackwardFirst,
}

/// How one application of the Picard map is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PicardScheme {
    /// Solve the level-`α0` system with the frozen `δ`-forcing exactly.
    #[default]
    Exact,
    /// One sweep of the level-`α0+δ` map, relaxed by `damping`.
    Flattened { damping: f64 },
}

/// Newton–GMRES settings for the inner level solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    /// Stop once `max|Φ(x) − x| ≤ tol · max(1, max|x|)`.
    pub tol: f64,
    pub max_newton: usize,
    pub gmres: GmresConfig,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_newton: 30, gmres: GmresConfig::default() }
    }
}

/// Where the Picard iteration of each level starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartPolicy {
    /// The solution of the previous level.
    #[default]
    Warm,
    /// An independent random field per level.
    Random { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    pub initial_delta: f64,
    pub adaptive: bool,
    pub min_delta: f64,
    /// Composite distance between successive iterates that ends a level.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Consecutive growing distances that count as "no contraction".
    pub growth_window: usize,
    pub scheme: PicardScheme,
    pub inner: InnerConfig,
    pub variant: Option<Variant>,
    pub start: StartPolicy,
    /// Run even when the declared constants fail the theorem's hypotheses.
    pub force: bool,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            initial_delta: 1.0,
            adaptive: true,
            min_delta: 2f64.powi(-20),
            tolerance: 1e-16,
            max_iterations: 200,
            growth_window: 3,
            scheme: PicardScheme::Exact,
            inner: InnerConfig::default(),
            variant: None,
            start: StartPolicy::Warm,
            force: false,
        }
    }
}

/// Distances below this are treated as converged noise when forming ratios.
const RATIO_FLOOR: f64 = 1e-28;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub alpha_from: f64,
    pub delta: f64,
    pub iterations: usize,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub accepted: bool,
    pub failure: Option<String>,
    pub newton_steps: usize,
    pub gmres_iterations: usize,
}

impl LevelReport {
    pub fn alpha_to(&self) -> f64 {
        self.alpha_from + self.delta
    }

    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub variant: Variant,
    pub scheme: PicardScheme,
    pub levels: Vec<LevelReport>,
    pub rejected: Vec<LevelReport>,
    pub final_alpha: f64,
    pub final_distance: f64,
    pub residual: ResidualReport,
}

impl ConvergenceReport {
    pub fn levels_used(&self) -> usize {
        self.levels.len()
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().chain(&self.rejected).map(|l| l.iterations).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    pub field: SolutionField,
    pub report: ConvergenceReport,
}

/// Contraction behaviour read off a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSummary {
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub per_level: Vec<(f64, f64)>,
    /// Every level converged in a single iteration, so no ratio exists.
    pub immediate: bool,
}

pub fn measure_contraction(report: &ConvergenceReport) -> ContractionSummary {
    let all: Vec<f64> = report.levels.iter().flat_map(|l| l.ratios.iter().copied()).collect();
    let per_level = report.levels.iter().filter_map(|l| l.max_ratio().map(|r| (l.delta, r))).collect();
    ContractionSummary {
        max_ratio: all.iter().copied().fold(0.0, f64::max),
        mean_ratio: if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 },
        per_level,
        immediate: all.is_empty(),
    }
}

/// Pick the family from the dimensions and the declared constants.
pub fn choose_variant<C: Coefficients + ?Sized>(coeffs: &C) -> Result<Variant> {
    validate_theorem_preconditions(coeffs).into_result()
}

/// Solve `x = Φ(x)` for the level system by matrix-free Newton–GMRES,
/// starting from `init`. Returns the fixed point, Newton steps and GMRES
/// iterations used.
pub fn solve_level<M: NoiseModel + ?Sized, C: Coefficients + ?Sized>(
    model: &M,
    sys: &LevelSystem<C>,
    init: &SolutionField,
    cfg: &InnerConfig,
) -> Result<(SolutionField, usize, usize)> {
    if sys.alpha == 0.0 {
        return Ok((sys.apply(model, init)?, 0, 0));
    }
    let affine = sys.coeffs.is_affine();
    let mut x = init.to_flat();
    let mut fx = sys.apply(model, init)?;
    let mut gm_total = 0;
    for step in 0..cfg.max_newton {
        let fxf = fx.to_flat();
        let r: Vec<f64> = fxf.iter().zip(&x).map(|(a, b)| a - b).collect();
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !rn.is_finite() {
            return Err(Error::NoConvergence("level solve produced non-finite values".into()));
        }
        if rn <= cfg.tol * scale {
            return Ok((fx, step, gm_total));
        }
        let mut failure = None;
        let out = gmres(
            |v| {
                let vn = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
                if vn == 0.0 {
                    return vec![0.0; v.len()];
                }
                let eps = if affine { 1.0 / vn } else { 1e-7 * scale / vn };
                let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
                match sys.apply(model, &init.with_flat(&xp)) {
                    Ok(f) => {
                        let ff = f.to_flat();
                        v.iter().zip(ff.iter().zip(&fxf)).map(|(vi, (p, q))| vi - (p - q) / eps).collect()
                    }
                    Err(e) => {
                        failure = Some(e);
                        vec![0.0; v.len()]
                    }
                }
            },
            &r,
            &cfg.gmres,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        gm_total += out.iterations;
        x.iter_mut().zip(&out.x).for_each(|(a, b)| *a += b);
        fx = sys.apply(model, &init.with_flat(&x))?;
    }
    let fxf = fx.to_flat();
    let rn = fxf.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Err(Error::NoConvergence(format!("level solve at α={} stopped with residual {rn:e}", sys.alpha)))
}

/// One application of `I_{α0+δ}` to `vbar`.
pub fn picard_map<M: NoiseModel + ?Sized, C: Coefficients + ?Sized>(
    model: &M,
    coeffs: &C,
    variant: Variant,
    scheme: PicardScheme,
    inner: &InnerConfig,
    alpha0: f64,
    delta: f64,
    vbar: &SolutionField,
) -> Result<(SolutionField, usize, usize)> {
    let zero = FrozenForcing::zeros(model, coeffs.layout());
    match scheme {
        PicardScheme::Exact => {
            let forcing = delta_forcing(model, coeffs, variant, delta, vbar);
            let sys = LevelSystem { coeffs, alpha: alpha0, variant, forcing: &forcing };
            solve_level(model, &sys, vbar, inner)
        }
        PicardScheme::Flattened { damping } => {
            let sys = LevelSystem { coeffs, alpha: alpha0 + delta, variant, forcing: &zero };
            let next = sys.apply(model, vbar)?;
            let mixed: Vec<f64> =
                vbar.to_flat().iter().zip(next.to_flat()).map(|(a, b)| (1.0 - damping) * a + damping * b).collect();
            Ok((vbar.with_flat(&mixed), 0, 0))
        }
    }
}

/// Picard iteration of one level from `start`. Returns the report and, when
/// accepted, the converged field.
#[allow(clippy::too_many_arguments)]
pub fn picard_level<M: NoiseModel + ?Sized, C: Coefficients + ?Sized>(
    model: &M,
    coeffs: &C,
    variant: Variant,
    cfg: &ContinuationConfig,
    alpha0: f64,
    delta: f64,
    start: &SolutionField,
) -> Result<(LevelReport, Option<SolutionField>)> {
    let mut rep = LevelReport {
        alpha_from: alpha0,
        delta,
        iterations: 0,
        distances: Vec::new(),
        ratios: Vec::new(),
        accepted: false,
        failure: None,
        newton_steps: 0,
        gmres_iterations: 0,
    };
    let mut prev = start.clone();
    let mut growth = 0;
    for _ in 0..cfg.max_iterations {
        let (next, nw, gm) = match picard_map(model, coeffs, variant, cfg.scheme, &cfg.inner, alpha0, delta, &prev) {
            Ok(v) => v,
            Err(Error::NoConvergence(msg)) => {
                rep.failure = Some(msg);
                return Ok((rep, None));
            }
            Err(e) => return Err(e),
        };
        rep.iterations += 1;
        rep.newton_steps += nw;
        rep.gmres_iterations += gm;
        let d = composite_distance(model, &next, &prev)?;
        if let Some(&last) = rep.distances.last() {
            if last > RATIO_FLOOR && d > RATIO_FLOOR {
                let ratio = d / last;
                rep.ratios.push(ratio);
                growth = if ratio > 1.0 { growth + 1 } else { 0 };
            }
        }
        rep.distances.push(d);
        prev = next;
        if !d.is_finite() {
            rep.failure = Some("distance is not finite".into());
            return Ok((rep, None));
        }
        if d <= cfg.tolerance {
            rep.accepted = true;
            return Ok((rep, Some(prev)));
        }
        if growth >= cfg.growth_window {
            rep.failure = Some(Error::NoContraction { alpha: alpha0, delta }.to_string());
            return Ok((rep, None));
        }
    }
    rep.failure = Some(Error::MaxIterations { alpha: alpha0, iterations: cfg.max_iterations }.to_string());
    Ok((rep, None))
}

/// Run the continuation from `α = 0` to `α = 1` for the target system
/// (zero forcing).
pub fn continuation_solve<M: NoiseModel + ?Sized, C: Coefficients + ?Sized>(
    model: &M,
    coeffs: &C,
    cfg: &ContinuationConfig,
) -> Result<ContinuationOutcome> {
    let verdict = validate_theorem_preconditions(coeffs);
    if !verdict.valid && !cfg.force {
        verdict.clone().into_result()?;
    }
    let variant = match (cfg.variant, verdict.variant) {
        (Some(v), _) | (None, Some(v)) => v,
        (None, None) => return Err(Error::Precondition("no continuation family applies".into())),
    };
    let md = model.dims();
    let cd = coeffs.dims();
    if md != cd || model.marks().count() != coeffs.marks().count() {
        return Err(Error::Shape("coefficients and noise model disagree on dimensions".into()));
    }
    if !model.is_exact() {
        let anchors_read_z = variant == Variant::ForwardFirst && coeffs.coupling().monotone.theta1 != 0.0;
        if coeffs.reads_z() || anchors_read_z {
            return Err(Error::Unsupported(
                "the Monte Carlo backend cannot represent z; use the tree backend for this problem".into(),
            ));
        }
    }
    if !(cfg.initial_delta > 0.0 && cfg.initial_delta <= 1.0) {
        return Err(Error::Config("initial_delta must lie in (0, 1]".into()));
    }
    let lay = coeffs.layout();
    let zero = FrozenForcing::zeros(model, lay);
    let mut u = solve_alpha0(model, coeffs, variant, &zero)?;
    let mut alpha = 0.0;
    let mut delta = cfg.initial_delta;
    let mut levels = Vec::new();
    let mut rejected = Vec::new();
    let mut final_distance = 0.0;
    let mut level_index = 0u64;
    while alpha < 1.0 {
        let step = delta.min(1.0 - alpha);
        let start = match cfg.start {
            StartPolicy::Warm => u.clone(),
            StartPolicy::Random { seed, scale } => {
                SolutionField::random(model, lay, seed.wrapping_add(level_index.wrapping_mul(0x9E37_79B9)), scale)
            }
        };
        level_index += 1;
        let (rep, field) = picard_level(model, coeffs, variant, cfg, alpha, step, &start)?;
        match field {
            Some(f) => {
                final_distance = rep.distances.last().copied().unwrap_or(0.0);
                levels.push(rep);
                u = f;
                alpha = if (alpha + step - 1.0).abs() < 1e-12 { 1.0 } else { alpha + step };
            }
            None => {
                let failure = rep.failure.clone().unwrap_or_default();
                rejected.push(rep);
                if !cfg.adaptive {
                    return Err(if failure.contains("no contraction") {
                        Error::NoContraction { alpha, delta: step }
                    } else {
                        Error::MaxIterations { alpha, iterations: cfg.max_iterations }
                    });
                }
                delta = step / 2.0;
                if delta < cfg.min_delta {
                    return Err(Error::ContinuationStalled { alpha, delta });
                }
            }
        }
    }
    let sys = LevelSystem { coeffs, alpha: 1.0, variant, forcing: &zero };
    let residual = sys.residual(model, &u)?;
    Ok(ContinuationOutcome {
        field: u,
        report: ConvergenceReport {
            variant,
            scheme: cfg.scheme,
            levels,
            rejected,
            final_alpha: alpha,
            final_distance,
            residual,
        },
    })
}
