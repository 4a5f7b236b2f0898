//! Run documents, exit codes and atomic output.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calculus::{run_calculus_suite, CalculusSuiteConfig, CalculusSuiteReport};
use crate::coefficients::{
    check_lipschitz, check_monotonicity, rank_bounds, validate_theorem_preconditions, LipschitzReport,
    MonotonicityReport, PreconditionVerdict, RankBounds, Sampler,
};
use crate::config::{Backend, ProblemConfig};
use crate::continuation::{
    continuation_solve, measure_contraction, ContinuationConfig, ContractionSummary, ConvergenceReport, Variant,
};
use crate::error::{Error, Result};
use crate::field::{summarize, FieldSummary, SolutionField};
use crate::noise::NoiseModel;
use crate::verification::{decay_study, uniqueness_probe, DecayStudy, UniquenessReport};

pub const SCHEMA: &str = "fbdsdej.run/1";

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    IoOrParse,
    Precondition,
    Stalled,
    CheckFailed,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::IoOrParse => 1,
            Status::Precondition => 2,
            Status::Stalled => 3,
            Status::CheckFailed => 4,
        }
    }

    pub fn of(err: &Error) -> Self {
        match err {
            Error::Precondition(_) | Error::RankDeficient(_) | Error::SingularBoundary => Status::Precondition,
            Error::NoContraction { .. }
            | Error::MaxIterations { .. }
            | Error::ContinuationStalled { .. }
            | Error::NoConvergence(_)
            | Error::LinearSolve(_)
            | Error::PossibleNonUniqueness { .. } => Status::Stalled,
            _ => Status::IoOrParse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// Document written by `solve`. Everything except `timing` is a function of
/// the config and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema: String,
    pub status: Status,
    pub message: Option<String>,
    pub seed: u64,
    pub backend: Backend,
    pub family: String,
    pub variant: Option<Variant>,
    pub summary: Option<FieldSummary>,
    pub report: Option<ConvergenceReport>,
    pub contraction: Option<ContractionSummary>,
    pub means: Option<LayerMeans>,
    pub checks: Option<CheckResult>,
    pub timing: Timing,
}

/// `E[y_i]` and `E[Y_i]` on every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMeans {
    pub y: Vec<Vec<f64>>,
    pub big_y: Vec<Vec<f64>>,
}

impl LayerMeans {
    pub fn of<M: NoiseModel + ?Sized>(model: &M, u: &SolutionField) -> Self {
        let layers = 0..=u.steps();
        Self {
            y: layers.clone().map(|i| SolutionField::layer_mean(model, &u.y[i], i, u.layout.n)).collect(),
            big_y: layers.map(|i| SolutionField::layer_mean(model, &u.big_y[i], i, u.layout.m)).collect(),
        }
    }
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// The document with `timing` zeroed, for byte comparison of runs.
    pub fn numeric_json(&self) -> String {
        let mut c = self.clone();
        c.timing = Timing { wall_seconds: 0.0 };
        c.to_json()
    }

    /// `level,iteration,distance,ratio` rows of the accepted levels.
    pub fn trace_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["level", "iteration", "distance", "ratio"]).map_err(io)?;
        if let Some(rep) = &self.report {
            for (lvl, l) in rep.levels.iter().enumerate() {
                for (it, d) in l.distances.iter().enumerate() {
                    let ratio = if it == 0 { String::new() } else { l.ratios.get(it - 1).map_or(String::new(), f64::to_string) };
                    w.write_record([lvl.to_string(), (it + 1).to_string(), d.to_string(), ratio]).map_err(io)?;
                }
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub monotonicity: MonotonicityReport,
    pub lipschitz: LipschitzReport,
    pub preconditions: PreconditionVerdict,
    pub rank: std::result::Result<RankBounds, String>,
    pub pass: bool,
}

/// Run every coefficient checker on the configured problem.
pub fn run_checks(cfg: &ProblemConfig, seed: u64) -> Result<CheckResult> {
    let coeffs = cfg.coefficients()?;
    let mut sampler = Sampler::gaussian(cfg.checks.samples, seed);
    sampler.horizon = cfg.grid.horizon;
    let monotonicity = check_monotonicity(&coeffs, &sampler, cfg.checks.tolerance);
    let lipschitz = check_lipschitz(&coeffs, &sampler);
    let preconditions = validate_theorem_preconditions(&coeffs);
    let rank = rank_bounds(&cfg.coupling()?.r().clone()).map_err(|e| e.to_string());
    let pass = monotonicity.pass && lipschitz.pass && preconditions.valid && rank.is_ok();
    Ok(CheckResult { monotonicity, lipschitz, preconditions, rank, pass })
}

fn solve_on<M: NoiseModel + ?Sized>(
    model: &M,
    cfg: &ProblemConfig,
    cont: &ContinuationConfig,
) -> Result<(SolutionField, ConvergenceReport)> {
    let coeffs = cfg.coefficients()?;
    let out = continuation_solve(model, &coeffs, cont)?;
    Ok((out.field, out.report))
}

/// Solve the configured problem. Errors in building the problem are
/// returned; solver failures become a document with a nonzero status.
pub fn run_solve(cfg: &ProblemConfig, seed: u64, backend: Backend) -> Result<(RunResult, Option<SolutionField>)> {
    let start = Instant::now();
    let coeffs = cfg.coefficients()?;
    let family = coeffs.family().name().to_string();
    let mut cont = cfg.continuation;
    if let crate::continuation::StartPolicy::Random { scale, .. } = cont.start {
        cont.start = crate::continuation::StartPolicy::Random { seed, scale };
    }
    let mut doc = RunResult {
        schema: SCHEMA.into(),
        status: Status::Ok,
        message: None,
        seed,
        backend,
        family,
        variant: None,
        summary: None,
        report: None,
        contraction: None,
        means: None,
        checks: None,
        timing: Timing { wall_seconds: 0.0 },
    };
    let model = match cfg.model(backend, seed) {
        Ok(m) => m,
        Err(e) => return fail(doc, e, start),
    };
    let solved = solve_on(model.as_dyn(), cfg, &cont);
    let field = match solved {
        Ok((field, report)) => {
            doc.variant = Some(report.variant);
            doc.summary = Some(summarize(model.as_dyn(), &field));
            doc.contraction = Some(measure_contraction(&report));
            doc.means = Some(LayerMeans::of(model.as_dyn(), &field));
            doc.report = Some(report);
            Some(field)
        }
        Err(e) => return fail(doc, e, start),
    };
    doc.timing.wall_seconds = start.elapsed().as_secs_f64();
    Ok((doc, field))
}

fn fail(mut doc: RunResult, err: Error, start: Instant) -> Result<(RunResult, Option<SolutionField>)> {
    match Status::of(&err) {
        Status::IoOrParse => Err(err),
        status => {
            doc.status = status;
            doc.message = Some(err.to_string());
            doc.timing.wall_seconds = start.elapsed().as_secs_f64();
            Ok((doc, None))
        }
    }
}

/// Which sweeps `study` runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub steps: Vec<usize>,
    pub deltas: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub max_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub levels: usize,
    pub iterations: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub schema: String,
    pub seed: u64,
    pub decay: Option<DecayStudy>,
    pub delta_sweep: Vec<DeltaRow>,
    pub uniqueness: Option<UniquenessReport>,
}

/// Fixed-step continuation at each `δ` with the measured Picard ratios.
pub fn delta_sweep<M: NoiseModel + ?Sized>(
    model: &M,
    cfg: &ProblemConfig,
    deltas: &[f64],
) -> Result<Vec<DeltaRow>> {
    let coeffs = cfg.coefficients()?;
    deltas
        .iter()
        .map(|&delta| {
            let cont = ContinuationConfig { initial_delta: delta, adaptive: false, ..cfg.continuation };
            Ok(match continuation_solve(model, &coeffs, &cont) {
                Ok(out) => {
                    let c = measure_contraction(&out.report);
                    DeltaRow {
                        delta,
                        max_ratio: (!c.immediate).then_some(c.max_ratio),
                        mean_ratio: (!c.immediate).then_some(c.mean_ratio),
                        levels: out.report.levels_used(),
                        iterations: out.report.total_iterations(),
                        failure: None,
                    }
                }
                Err(e) if Status::of(&e) == Status::Stalled => {
                    DeltaRow { delta, max_ratio: None, mean_ratio: None, levels: 0, iterations: 0, failure: Some(e.to_string()) }
                }
                Err(e) => return Err(e),
            })
        })
        .collect()
}

pub fn run_study(cfg: &ProblemConfig, seed: u64, backend: Backend, sweep: &SweepSpec) -> Result<StudyResult> {
    let decay = if sweep.steps.is_empty() {
        None
    } else {
        if backend != Backend::Tree {
            return Err(Error::Unsupported("the decay study runs on the tree backend".into()));
        }
        let oracle = cfg.linear_oracle();
        let build = |n: usize| {
            let c = cfg.with_steps(n);
            Ok((c.tree()?, c.coefficients()?))
        };
        Some(decay_study(build, &sweep.steps, &cfg.continuation, oracle.as_ref())?)
    };
    let (mut delta_rows, mut uniqueness) = (Vec::new(), None);
    if !sweep.deltas.is_empty() || sweep.trials >= 2 {
        let model = cfg.model(backend, seed)?;
        delta_rows = delta_sweep(model.as_dyn(), cfg, &sweep.deltas)?;
        if sweep.trials >= 2 {
            let coeffs = cfg.coefficients()?;
            uniqueness = Some(uniqueness_probe(model.as_dyn(), &coeffs, &cfg.continuation, sweep.trials, seed)?);
        }
    }
    Ok(StudyResult { schema: SCHEMA.into(), seed, decay, delta_sweep: delta_rows, uniqueness })
}

pub fn run_calculus(seed: u64, sizes: Option<Vec<usize>>, wrong_endpoint: bool, jumps: bool) -> Result<CalculusSuiteReport> {
    let mut cfg = CalculusSuiteConfig { seed, wrong_endpoint, ..CalculusSuiteConfig::default() };
    if let Some(s) = sizes {
        cfg.sizes = s;
    }
    if !jumps {
        cfg.jump_intensity = 0.0;
    }
    run_calculus_suite(&cfg)
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
