//! Configuration, subcommands and output formats of the `freeperiod` tool.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use freeperiod::action::ResidualReport;
use freeperiod::geometry::MetricChart;
use freeperiod::grid::{BoxDomain, Lattice};
use freeperiod::linking::{CycleMap, CycleSpec, FamilyCertificate, LinkingParams, DEFAULT_BLOCKS};
use freeperiod::potential::{max_grad_on_negative_set, HypothesisReport, Monomial, Polynomial, PotentialSpec};
use freeperiod::solver::{run_checks, solve, CriticalPointRecord, Problem, SolveOutcome, SolverConfig};
use freeperiod::verify::{check_table, orbit_csv, parse_orbit_csv, Certificates, TableCheck};
use freeperiod::Error;
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_SOLVE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

/// Certification thresholds for a solved or stored orbit.
pub mod thresholds {
    /// Relative to the largest `|grad U|` over the negative set.
    pub const EL_RESIDUAL: f64 = 1e-6;
    pub const ENERGY_IDENTITY: f64 = 1e-6;
    pub const SHOOTING_CLOSURE: f64 = 1e-4;
    pub const HAMILTONIAN_SPREAD: f64 = 1e-6;
    pub const MIN_U: f64 = -1e-6;
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Hypothesis(String),
    Solve(String),
    Verify(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Hypothesis(_) => EXIT_HYPOTHESIS,
            CliError::Solve(_) => EXIT_SOLVE,
            CliError::Verify(_) => EXIT_VERIFY,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Hypothesis(m) => write!(f, "hypothesis check failed: {m}"),
            CliError::Solve(m) => write!(f, "solve failed: {m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub problem: ProblemSection,
    pub discretization: Discretization,
    pub linking: LinkingSection,
    pub solver: SolverConfig,
    pub homology: HomologySection,
    pub output: OutputSection,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSection::default(),
            discretization: Discretization::default(),
            linking: LinkingSection::default(),
            solver: SolverConfig::default(),
            homology: HomologySection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    /// Checked against the potential when given.
    pub dimension: Option<usize>,
    pub potential: PotentialConfig,
    /// Energy level `E`; builtins fall back to their own default.
    pub energy: Option<f64>,
    pub metric: MetricConfig,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            dimension: None,
            potential: PotentialConfig::default(),
            energy: None,
            metric: MetricConfig::Euclidean,
        }
    }
}

/// Either `{"builtin": name}` or `{"polynomial": {"2,0": 0.5, ...}}`, the
/// latter giving `V` with exponent tuples as keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial: Option<BTreeMap<String, f64>>,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            builtin: Some("harmonic2d".into()),
            params: BTreeMap::new(),
            polynomial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricConfig {
    Euclidean,
    FlatTorus { periods: Vec<f64> },
    /// `g = e^{2φ}` with `φ` a polynomial in the same key format.
    Conformal2d { phi: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Discretization {
    pub modes: usize,
    pub samples: usize,
    pub orbit_samples: usize,
    pub shooting_rtol: f64,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            modes: 32,
            samples: 256,
            orbit_samples: 512,
            shooting_rtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CycleConfig {
    Builtin,
    Segment { a: Vec<f64>, b: Vec<f64> },
    Disk { centre: Vec<f64>, radius: f64 },
    Polyline { points: Vec<Vec<f64>> },
    Mesh { n1: usize, n2: usize, points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkingSection {
    pub cycle: CycleConfig,
    /// Radius of the seeding perturbation; derived from the grid when absent.
    pub rho: Option<f64>,
    /// Cycle parameter nodes per axis.
    pub n_s: Option<usize>,
    /// σ-nodes of the three family blocks.
    pub blocks: [usize; 3],
}

impl Default for LinkingSection {
    fn default() -> Self {
        Self {
            cycle: CycleConfig::Builtin,
            rho: None,
            n_s: None,
            blocks: DEFAULT_BLOCKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BboxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomologySection {
    /// Sampling box; builtins and tori supply their own when absent.
    pub bbox: Option<BboxConfig>,
    pub grid_n: usize,
    pub delta: Option<f64>,
}

impl Default for HomologySection {
    fn default() -> Self {
        Self {
            bbox: None,
            grid_n: 256,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub orbit_csv: PathBuf,
    pub summary_json: PathBuf,
    pub family_dump: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            orbit_csv: "orbit.csv".into(),
            summary_json: "summary.json".into(),
            family_dump: None,
        }
    }
}

/// Parses `"2,0,1"` into exponents.
fn exponents(key: &str) -> CliResult<Vec<u32>> {
    key.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|_| usage(format!("bad monomial key '{key}'"))))
        .collect()
}

fn polynomial(map: &BTreeMap<String, f64>, dim: Option<usize>) -> CliResult<Polynomial> {
    let mut terms = Vec::with_capacity(map.len());
    for (k, &c) in map {
        terms.push(Monomial {
            exponents: exponents(k)?,
            coeff: c,
        });
    }
    let n = match (terms.first(), dim) {
        (Some(t), _) => t.exponents.len(),
        (None, Some(d)) => d,
        (None, None) => return Err(usage("empty polynomial needs problem.dimension")),
    };
    Polynomial::new(n, terms).map_err(usage)
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn builtin(name: &str) -> Self {
        let mut cfg = Self::default();
        cfg.problem.potential.builtin = Some(name.to_string());
        cfg
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn potential(&self) -> CliResult<PotentialSpec> {
        let p = &self.problem.potential;
        let spec = match (&p.builtin, &p.polynomial) {
            (Some(name), None) => {
                if let Some(k) = p.params.keys().next() {
                    return Err(usage(format!("builtin potential '{name}' takes no parameter '{k}'")));
                }
                PotentialSpec::builtin(name, self.problem.energy).map_err(usage)?
            }
            (None, Some(map)) => {
                let v = polynomial(map, self.problem.dimension)?;
                PotentialSpec::polynomial(v, self.problem.energy.unwrap_or(0.0))
            }
            _ => return Err(usage("problem.potential needs exactly one of 'builtin' or 'polynomial'")),
        };
        if let Some(d) = self.problem.dimension {
            if d != spec.dim() {
                return Err(usage(format!("problem.dimension {d} does not match the potential ({})", spec.dim())));
            }
        }
        Ok(spec)
    }

    pub fn chart(&self, dim: usize) -> CliResult<MetricChart> {
        let chart = match &self.problem.metric {
            MetricConfig::Euclidean => MetricChart::euclidean(dim),
            MetricConfig::FlatTorus { periods } => MetricChart::flat_torus(periods.clone()).map_err(usage)?,
            MetricConfig::Conformal2d { phi } => {
                let phi = polynomial(phi, Some(2))?;
                if phi.dim() != 2 {
                    return Err(usage("conformal2d.phi must be a polynomial in two variables"));
                }
                MetricChart::conformal2d(Arc::new(phi))
            }
        };
        if chart.dimension() != dim {
            return Err(usage("metric dimension does not match the potential"));
        }
        Ok(chart)
    }

    pub fn bbox(&self, spec: &PotentialSpec, chart: &MetricChart) -> CliResult<BoxDomain> {
        if let Some(b) = &self.homology.bbox {
            return BoxDomain::new(b.lo.clone(), b.hi.clone()).map_err(usage);
        }
        if let Some(p) = chart.torus_periods() {
            return BoxDomain::new(vec![0.0; p.len()], p.to_vec()).map_err(usage);
        }
        match spec.builtin_tag.as_deref() {
            Some("harmonic2d") => Ok(BoxDomain::cube(2, 2.0)),
            Some("well1d") => Ok(BoxDomain::cube(1, 2.0)),
            Some("annulus2d") => Ok(BoxDomain::cube(2, 3.0)),
            _ => Err(usage("homology.bbox is required for this potential")),
        }
    }

    fn cycle(&self) -> CliResult<Option<CycleSpec>> {
        let map = match &self.linking.cycle {
            CycleConfig::Builtin => return Ok(None),
            CycleConfig::Segment { a, b } => CycleMap::Segment { a: a.clone(), b: b.clone() },
            CycleConfig::Disk { centre, radius } => CycleMap::Disk {
                centre: centre.clone(),
                radius: *radius,
            },
            CycleConfig::Polyline { points } => CycleMap::Polyline { points: points.clone() },
            CycleConfig::Mesh { n1, n2, points } => CycleMap::Mesh {
                n1: *n1,
                n2: *n2,
                points: points.clone(),
            },
        };
        CycleSpec::new(map).map(Some).map_err(usage)
    }

    /// Resolves the configuration into a solver problem.
    pub fn problem(&self) -> CliResult<Problem> {
        let spec = self.potential()?;
        let chart = self.chart(spec.dim())?;
        let bbox = self.bbox(&spec, &chart)?;
        if bbox.dim() != spec.dim() {
            return Err(usage("homology.bbox dimension does not match the potential"));
        }
        let mut p = Problem::new(spec, chart, bbox);
        p.grid_n = self.homology.grid_n;
        p.delta = self.homology.delta;
        p.cycle = self.cycle()?;
        p.rho = self.linking.rho;
        p.n_s = self.linking.n_s;
        p.blocks = self.linking.blocks;
        p.modes = self.discretization.modes;
        p.samples = self.discretization.samples;
        p.orbit_samples = self.discretization.orbit_samples;
        p.shooting_rtol = self.discretization.shooting_rtol;
        self.solver.validate().map_err(usage)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub passed: bool,
    pub hypotheses: HypothesisReport,
    pub linking: Option<LinkingParams>,
}

/// Runs the hypothesis checks. The report is returned also when a check
/// fails; the caller maps `passed` to the exit code.
pub fn cmd_check(cfg: &ProblemConfig) -> CliResult<CheckReport> {
    let problem = cfg.problem()?;
    let (hypotheses, linking) = run_checks(&problem).map_err(|e| CliError::Hypothesis(e.to_string()))?;
    Ok(CheckReport {
        passed: hypotheses.all_pass(),
        hypotheses,
        linking,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Parameters {
    pub delta: f64,
    pub r: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub barrier_floor: f64,
    pub k1: f64,
    pub k2: f64,
    pub rho: f64,
    pub eps0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Iterations {
    pub minimax_sweeps: usize,
    pub minimax_converged: bool,
    pub minimax_grad_norm: f64,
    pub newton: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub eps: f64,
    pub tau: f64,
    pub c: f64,
    pub grad_norm: f64,
    pub newton_iters: usize,
    pub residuals: ResidualReport,
}

impl From<&CriticalPointRecord> for StageSummary {
    fn from(r: &CriticalPointRecord) -> Self {
        Self {
            eps: r.eps,
            tau: r.tau,
            c: r.value,
            grad_norm: r.grad_norm,
            newton_iters: r.newton_iters,
            residuals: r.residuals,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub solve_seconds: f64,
}

/// Machine-readable result of `solve`. Everything except `timing` is a
/// deterministic function of the configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    #[serde(rename = "T")]
    pub period: f64,
    pub tau: f64,
    pub c: f64,
    pub eps_final: f64,
    pub certified: bool,
    pub certificates: Certificates,
    pub el_resid_bound: f64,
    pub parameters: Parameters,
    pub family: FamilyCertificate,
    pub frozen_unchanged: bool,
    pub iterations: Iterations,
    pub stages: Vec<StageSummary>,
    pub hypotheses: HypothesisReport,
    pub seed: Option<u64>,
    pub config: ProblemConfig,
    pub timing: Timing,
}

impl Summary {
    /// The summary without its timing key.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("summary serializes");
        v.as_object_mut().unwrap().remove("timing");
        serde_json::to_string_pretty(&v).unwrap()
    }
}

/// Largest `|grad U|` over the negative set, sampled on the homology grid.
pub fn grad_scale(problem: &Problem) -> CliResult<f64> {
    let n = problem.grid_n.min(128);
    let lat = Lattice::uniform(problem.bbox.clone(), n).map_err(usage)?;
    Ok(max_grad_on_negative_set(&problem.spec, &problem.chart, &lat))
}

fn certify(c: &Certificates, grad_scale: f64) -> Vec<String> {
    let mut bad = Vec::new();
    if !(c.el_resid_sup <= thresholds::EL_RESIDUAL * grad_scale) {
        bad.push(format!("el_resid_sup {:.3e}", c.el_resid_sup));
    }
    if !(c.energy_ident_sup <= thresholds::ENERGY_IDENTITY) {
        bad.push(format!("energy_ident_sup {:.3e}", c.energy_ident_sup));
    }
    match c.shooting_closure {
        Some(s) if s <= thresholds::SHOOTING_CLOSURE => {}
        s => bad.push(format!("shooting closure {s:?}")),
    }
    if !(c.min_u >= thresholds::MIN_U) {
        bad.push(format!("min U {:.3e}", c.min_u));
    }
    bad
}

fn summarize(out: &SolveOutcome, cfg: &ProblemConfig, scale: f64, seed: Option<u64>, secs: f64) -> Summary {
    let cert = &out.orbit.certificates;
    Summary {
        period: out.orbit.period,
        tau: out.record.tau,
        c: out.record.value,
        eps_final: out.record.eps,
        certified: certify(cert, scale).is_empty(),
        certificates: cert.clone(),
        el_resid_bound: thresholds::EL_RESIDUAL * scale,
        parameters: Parameters {
            delta: out.params.delta,
            r: out.params.r,
            tau0: out.params.tau0,
            tau1: out.params.tau1,
            barrier_floor: out.params.barrier_floor,
            k1: out.family_certificate.k1,
            k2: out.family_certificate.k2,
            rho: out.rho,
            eps0: out.eps0,
        },
        family: out.family_certificate.clone(),
        frozen_unchanged: out.frozen_unchanged,
        iterations: Iterations {
            minimax_sweeps: out.deform.sweeps,
            minimax_converged: out.deform.converged,
            minimax_grad_norm: out.deform.grad_norm,
            newton: out.stages.iter().map(|s| s.newton_iters).collect(),
        },
        stages: out.stages.iter().map(StageSummary::from).collect(),
        hypotheses: out.report.clone(),
        seed,
        config: cfg.clone(),
        timing: Timing { solve_seconds: secs },
    }
}

#[derive(Serialize)]
struct FamilyNode<'a> {
    s: usize,
    sigma: usize,
    frozen: bool,
    tau: f64,
    coeffs: &'a [f64],
}

fn family_json(out: &SolveOutcome) -> String {
    let f = &out.family;
    let nodes: Vec<FamilyNode> = (0..f.nodes.len())
        .map(|i| {
            let (s, sigma) = f.split(i);
            FamilyNode {
                s,
                sigma,
                frozen: f.frozen[i],
                tau: f.nodes[i].tau,
                coeffs: &f.nodes[i].x.coeffs,
            }
        })
        .collect();
    serde_json::to_string(&nodes).unwrap()
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn solve_error(e: Error) -> CliError {
    match &e {
        Error::Stage { stage: "checks", .. } => CliError::Hypothesis(e.to_string()),
        _ => CliError::Solve(e.to_string()),
    }
}

/// Runs the full pipeline and writes the orbit CSV, the summary JSON and,
/// when configured, the family dump.
pub fn cmd_solve(cfg: &ProblemConfig, seed: Option<u64>) -> CliResult<Summary> {
    let problem = cfg.problem()?;
    let start = Instant::now();
    let out = solve(&problem, &cfg.solver, false).map_err(solve_error)?;
    let secs = start.elapsed().as_secs_f64();
    let scale = grad_scale(&problem)?;
    let summary = summarize(&out, cfg, scale, seed, secs);
    write(&cfg.output.orbit_csv, &orbit_csv(&out.orbit))?;
    write(&cfg.output.summary_json, &serde_json::to_string_pretty(&summary).unwrap())?;
    if let Some(p) = &cfg.output.family_dump {
        write(p, &family_json(&out))?;
    }
    let bad = certify(&out.orbit.certificates, scale);
    if !bad.is_empty() {
        return Err(CliError::Solve(format!("orbit not certified: {}", bad.join(", "))));
    }
    Ok(summary)
}

/// Re-integrates a stored orbit and checks closure, energy and the
/// allowed region.
pub fn cmd_verify(cfg: &ProblemConfig, orbit: &Path) -> CliResult<TableCheck> {
    let problem = cfg.problem()?;
    let text = std::fs::read_to_string(orbit).map_err(|e| usage(format!("cannot read {}: {e}", orbit.display())))?;
    let table = parse_orbit_csv(&text).map_err(|e| CliError::Verify(e.to_string()))?;
    let check = check_table(&table, &problem.spec, &problem.chart, problem.shooting_rtol)
        .map_err(|e| CliError::Verify(e.to_string()))?;
    let mut bad = Vec::new();
    if !(check.closure <= thresholds::SHOOTING_CLOSURE) {
        bad.push(format!("closure {:.3e}", check.closure));
    }
    if !(check.deviation <= thresholds::SHOOTING_CLOSURE) {
        bad.push(format!("deviation {:.3e}", check.deviation));
    }
    if !(check.h_spread <= thresholds::HAMILTONIAN_SPREAD) {
        bad.push(format!("H spread {:.3e}", check.h_spread));
    }
    if !(check.min_u >= thresholds::MIN_U) {
        bad.push(format!("min U {:.3e}", check.min_u));
    }
    if bad.is_empty() {
        Ok(check)
    } else {
        Err(CliError::Verify(bad.join(", ")))
    }
}
