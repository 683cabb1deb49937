//! Batch front end: JSON configuration in, trajectory CSV and JSON report out.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::monotone::{
    check_hypotheses, iterate_extremal, EvolutionProblem, Impulse, MildSolver, MonotoneConfig,
};
use crate::operators::{FractionalOrder, Generator, OperatorBounds};
use crate::problems::{
    build_heat1d, default_quasi_pair, find_quasi_pair, scalar_limits, scalar_oracle,
    Heat1DScenario, HeatImpulse, QuasiPair, ScalarLinearScenario, X0Profile,
};
use crate::quadrature::{weighted_norm, PcTrajectory};
use crate::specfun::DEFAULT_DENSITY_NODES;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_FALSIFIED: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    VerifyPair,
    CheckHypotheses,
    ConvergenceStudy,
}

#[derive(Debug, Parser)]
#[command(
    name = "hilfer",
    version,
    about = "Impulsive Hilfer evolution equations: mild solutions and monotone iteration"
)]
pub struct Args {
    /// JSON run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the mode given in the configuration
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Exit with status 3 when a hypothesis check is falsified
    #[arg(long)]
    pub strict: bool,
    /// Seed for Monte-Carlo hypothesis sampling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nodes per impulse subinterval
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Record wall-clock times in the report (makes reports non-reproducible)
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Scalar {
        a: f64,
        #[serde(default)]
        c: f64,
        x0: f64,
    },
    Heat1d {
        n_interior: usize,
        #[serde(default = "one")]
        length: f64,
        #[serde(default)]
        f: f64,
        #[serde(default)]
        alpha: f64,
        #[serde(default)]
        beta: f64,
        x0: X0Profile,
    },
    Custom {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        symmetric: bool,
        x0: Vec<f64>,
        #[serde(default)]
        f: Option<Vec<f64>>,
        #[serde(default)]
        alpha: f64,
        #[serde(default)]
        beta: f64,
    },
}

/// Impulse at `time` with φ(y, z) = kappa·y⁺/(1 + y⁺) + jump componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSpec {
    pub time: f64,
    #[serde(default)]
    pub jump: f64,
    #[serde(default)]
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotoneSpec {
    #[serde(rename = "C", default)]
    pub c: f64,
    #[serde(rename = "L", default)]
    pub l: f64,
    #[serde(rename = "L1", default)]
    pub l1: f64,
    #[serde(rename = "M_k", default)]
    pub m_k: Option<Vec<f64>>,
    #[serde(rename = "C_star", default)]
    pub c_star: Option<f64>,
    #[serde(rename = "L_star", default)]
    pub l_star: Option<f64>,
}

impl Default for MonotoneSpec {
    fn default() -> Self {
        Self {
            c: 0.0,
            l: 0.0,
            l1: 0.0,
            m_k: None,
            c_star: None,
            l_star: None,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_grid_n() -> usize {
    crate::quadrature::DEFAULT_NODES_PER_SEGMENT
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}
fn default_samples() -> usize {
    200
}
fn default_grids() -> Vec<usize> {
    vec![64, 128, 256, 512]
}
fn default_density() -> usize {
    DEFAULT_DENSITY_NODES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub mu: f64,
    pub nu: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default)]
    pub impulses: Vec<ImpulseSpec>,
    #[serde(default)]
    pub monotone: MonotoneSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub order_tol: Option<f64>,
    /// Weighted height of the upper quasi solution; chosen automatically
    /// by doubling when absent.
    #[serde(default)]
    pub bound_scale: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// M*; estimated from the semigroup when absent.
    #[serde(default)]
    pub m_star: Option<f64>,
    #[serde(default = "one")]
    pub n_tilde: f64,
    #[serde(default = "default_grids")]
    pub convergence_grids: Vec<usize>,
    #[serde(default = "default_density")]
    pub density_nodes: usize,
    #[serde(default)]
    pub mode: Option<Mode>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn order(&self) -> Result<FractionalOrder> {
        FractionalOrder::new(self.mu, self.nu).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn monotone_config(&self) -> MonotoneConfig {
        let mut cfg = MonotoneConfig::new(
            self.monotone.c,
            self.monotone.l,
            self.monotone.l1,
            self.monotone
                .m_k
                .clone()
                .unwrap_or_else(|| vec![0.0; self.impulses.len()]),
        );
        cfg.tol = self.tol;
        cfg.max_iter = self.max_iter;
        cfg.order_tol = self.order_tol;
        cfg.c_star = self.monotone.c_star;
        cfg.l_star = self.monotone.l_star;
        cfg.nodes_per_segment = self.grid_n;
        cfg.density_nodes = self.density_nodes;
        cfg
    }

    pub fn scalar_scenario(&self) -> Result<ScalarLinearScenario> {
        match &self.problem {
            ProblemSpec::Scalar { a, c, x0 } => {
                let mut sc = ScalarLinearScenario::new(*a, *c, *x0, self.order()?, self.horizon);
                for imp in &self.impulses {
                    if imp.kappa != 0.0 {
                        return Err(Error::Config(
                            "impulses.kappa: scalar problems take constant jumps only".into(),
                        ));
                    }
                    sc = sc.with_impulse(imp.time, imp.jump);
                }
                Ok(sc)
            }
            _ => Err(Error::Config(
                "problem.kind: this mode needs a scalar problem".into(),
            )),
        }
    }

    pub fn build_problem(&self) -> Result<EvolutionProblem> {
        let order = self.order()?;
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "T: must be positive, got {}",
                self.horizon
            )));
        }
        match &self.problem {
            ProblemSpec::Scalar { .. } => self.scalar_scenario()?.problem(),
            ProblemSpec::Heat1d {
                n_interior,
                length,
                f,
                alpha,
                beta,
                x0,
            } => build_heat1d(&Heat1DScenario {
                n_interior: *n_interior,
                length: *length,
                order,
                horizon: self.horizon,
                f: *f,
                alpha: *alpha,
                beta: *beta,
                impulses: self
                    .impulses
                    .iter()
                    .map(|i| HeatImpulse {
                        time: i.time,
                        kappa: i.kappa,
                        constant: i.jump,
                    })
                    .collect(),
                x0: x0.clone(),
            }),
            ProblemSpec::Custom {
                matrix,
                symmetric,
                x0,
                f,
                alpha,
                beta,
            } => {
                let n = matrix.len();
                if n == 0 || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(
                        "problem.matrix: must be a nonempty square matrix".into(),
                    ));
                }
                if x0.len() != n {
                    return Err(Error::Config(format!(
                        "problem.x0: expected {n} entries, found {}",
                        x0.len()
                    )));
                }
                let f = f.clone().unwrap_or_else(|| vec![0.0; n]);
                if f.len() != n {
                    return Err(Error::Config(format!(
                        "problem.f: expected {n} entries, found {}",
                        f.len()
                    )));
                }
                let a = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
                let gen = Generator::new(a, *symmetric)
                    .map_err(|e| Error::Config(format!("problem.matrix: {e}")))?;
                let (alpha, beta) = (*alpha, *beta);
                let has_g = alpha != 0.0 || beta != 0.0 || f.iter().any(|v| *v != 0.0);
                let g: Option<crate::monotone::Nonlinearity> = has_g.then(|| {
                    Arc::new(move |_: f64, y: &[f64], z: &[f64]| {
                        y.iter()
                            .zip(z)
                            .zip(&f)
                            .map(|((y, z), f)| f + alpha * y - beta * z)
                            .collect()
                    }) as _
                });
                let mut prev = 0.0;
                let mut impulses = Vec::new();
                for imp in &self.impulses {
                    if !(imp.time > prev && imp.time < self.horizon) {
                        return Err(Error::Config(format!(
                            "impulses: times must increase strictly inside (0, T); offending t = {}",
                            imp.time
                        )));
                    }
                    prev = imp.time;
                    let (kappa, jump) = (imp.kappa, imp.jump);
                    impulses.push(Impulse {
                        time: imp.time,
                        phi: Arc::new(move |y: &[f64], _: &[f64]| {
                            y.iter()
                                .map(|v| {
                                    let p = v.max(0.0);
                                    kappa * p / (1.0 + p) + jump
                                })
                                .collect()
                        }),
                    });
                }
                Ok(EvolutionProblem {
                    gen,
                    order,
                    horizon: self.horizon,
                    x0: DVector::from_vec(x0.clone()),
                    g,
                    impulses,
                })
            }
        }
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// CSV with one row per grid node after t = 0: t, subinterval index,
/// weight (t - t_k)^{1-λ}, then raw values of y_min and z_max.
pub fn trajectory_csv(y: &PcTrajectory, z: &PcTrajectory) -> String {
    let grid = y.grid();
    let dim = y.dim();
    let mut out = String::from("t,k,weight");
    for i in 0..dim {
        let _ = write!(out, ",y_min_{i}");
    }
    for i in 0..dim {
        let _ = write!(out, ",z_max_{i}");
    }
    out.push('\n');
    for n in 1..grid.len() {
        let _ = write!(
            out,
            "{},{},{}",
            fmt_f(grid.nodes()[n]),
            grid.segment_of(n),
            fmt_f(grid.weight(n))
        );
        for v in y.raw_at(n).into_iter().chain(z.raw_at(n)) {
            out.push(',');
            out.push_str(&fmt_f(v));
        }
        out.push('\n');
    }
    out
}

struct Outcome {
    report: serde_json::Map<String, Value>,
    files: Vec<(PathBuf, String)>,
    code: u8,
}

impl Outcome {
    fn new() -> Self {
        Self {
            report: serde_json::Map::new(),
            files: Vec::new(),
            code: EXIT_OK,
        }
    }

    fn set(&mut self, key: &str, v: Value) {
        self.report.insert(key.to_string(), v);
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn numerical_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidGrid(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn obtain_pair(cfg: &RunConfig, solver: &MildSolver) -> Result<(QuasiPair, f64)> {
    match cfg.bound_scale {
        Some(s) => Ok((default_quasi_pair(solver, s)?, s)),
        None => find_quasi_pair(solver, 0.125, 60),
    }
}

fn m_star_for(cfg: &RunConfig, solver: &MildSolver) -> Result<f64> {
    match cfg.m_star {
        Some(m) => Ok(m),
        None => solver.estimated_m_star(),
    }
}

fn run_solve(cfg: &RunConfig, out_dir: &Path, o: &mut Outcome, counters: &mut Value) -> Result<()> {
    let problem = cfg.build_problem()?;
    let solver = MildSolver::new(&problem, &cfg.monotone_config())?;
    o.set("warnings", to_value(&solver.warnings()));
    let (pair, scale) = obtain_pair(cfg, &solver)?;
    o.set(
        "quasi_pair",
        json!({ "bound_scale": scale, "report": to_value(&pair.report) }),
    );
    if !pair.report.pass {
        return Err(Error::Config(format!(
            "bound_scale: the pair (0, {scale}) is not a coupled quasi solution pair"
        )));
    }
    let m_star = m_star_for(cfg, &solver)?;
    let eta = solver.eta(m_star);
    o.set("eta", json!(eta));
    let result = iterate_extremal(&solver, &pair.y0, &pair.z0);
    let (y, z, report) = match result {
        Ok(v) => v,
        Err(Error::Diverged {
            streak,
            gap,
            report,
        }) => {
            o.set("iterations", json!(report.iterations));
            o.set("history", to_value(&report.history));
            o.set("violations", json!(report.violation_count));
            o.set("converged", json!(false));
            o.set("unique", json!(false));
            return Err(Error::Diverged {
                streak,
                gap,
                report,
            });
        }
        Err(e) => return Err(e),
    };
    let residual = solver
        .residual_fixed_point(&y)?
        .max(solver.residual_fixed_point(&z)?);
    o.set("iterations", json!(report.iterations));
    o.set("converged", json!(report.converged));
    o.set("unique", json!(report.unique));
    o.set("residual", json!(residual));
    o.set("violations", json!(report.violation_count));
    o.set("final_gap", json!(report.final_gap()));
    o.set("order_tol", json!(report.order_tol));
    o.set("history", to_value(&report.history));
    o.set(
        "weighted_norm",
        json!({ "y_min": weighted_norm(&y), "z_max": weighted_norm(&z) }),
    );
    counters["nodes"] = json!(solver.grid().len());
    counters["g_evaluations"] = json!(solver.evaluations());
    o.files
        .push((out_dir.join("trajectory.csv"), trajectory_csv(&y, &z)));
    Ok(())
}

fn run_verify_pair(cfg: &RunConfig, o: &mut Outcome, strict: bool) -> Result<()> {
    let problem = cfg.build_problem()?;
    let solver = MildSolver::new(&problem, &cfg.monotone_config())?;
    o.set("warnings", to_value(&solver.warnings()));
    let scale = cfg.bound_scale.unwrap_or(1.0);
    let pair = default_quasi_pair(&solver, scale)?;
    o.set(
        "quasi_pair",
        json!({ "bound_scale": scale, "report": to_value(&pair.report) }),
    );
    if strict && !pair.report.pass {
        o.code = EXIT_FALSIFIED;
    }
    Ok(())
}

fn run_check(cfg: &RunConfig, seed: u64, o: &mut Outcome, strict: bool) -> Result<()> {
    let problem = cfg.build_problem()?;
    let solver = MildSolver::new(&problem, &cfg.monotone_config())?;
    o.set("warnings", to_value(&solver.warnings()));
    let (pair, scale) = obtain_pair(cfg, &solver)?;
    o.set(
        "quasi_pair",
        json!({ "bound_scale": scale, "report": to_value(&pair.report) }),
    );
    let m_star = m_star_for(cfg, &solver)?;
    let bounds = OperatorBounds {
        m_star,
        n_tilde: cfg.n_tilde,
    };
    let rep = check_hypotheses(&solver, bounds, &pair.y0, &pair.z0, cfg.samples, seed)?;
    o.set("eta", json!(rep.eta));
    o.set("hypotheses", to_value(&rep));
    if strict && (rep.falsified || !pair.report.pass) {
        o.code = EXIT_FALSIFIED;
    }
    Ok(())
}

fn run_convergence(
    cfg: &RunConfig,
    out_dir: &Path,
    o: &mut Outcome,
    counters: &mut Value,
) -> Result<()> {
    let sc = cfg.scalar_scenario()?;
    let problem = sc.problem()?;
    let mut csv = String::from("nodes_per_segment,nodes,max_abs_error,max_weighted_error,ratio\n");
    let mut rows = Vec::new();
    let mut prev: Option<f64> = None;
    let mut evals = 0;
    for &n in &cfg.convergence_grids {
        let mut mc = cfg.monotone_config();
        mc.nodes_per_segment = n;
        let solver = MildSolver::new(&problem, &mc)?;
        let grid = solver.grid().clone();
        let mut x = PcTrajectory::zeros(grid.clone(), 1);
        for _ in 0..cfg.max_iter {
            let next = solver.apply_g(&x, &x)?;
            let step = weighted_norm(&next.sub(&x)?);
            x = next;
            if step <= cfg.tol {
                break;
            }
        }
        evals += solver.evaluations();
        let mut abs_err = 0.0_f64;
        let mut w_err = 0.0_f64;
        for k in 1..grid.len() {
            match grid.impulse_indices().iter().position(|&i| i == k) {
                Some(j) => {
                    let (left, _) = scalar_limits(&sc, j + 1)?;
                    w_err = w_err.max((x.weighted_at(k)[0] - left).abs());
                }
                None => {
                    let e = (x.raw_at(k)[0] - scalar_oracle(&sc, grid.nodes()[k])?).abs();
                    abs_err = abs_err.max(e);
                    w_err = w_err.max(grid.weight(k) * e);
                }
            }
        }
        let ratio = prev.map(|p| p / abs_err);
        prev = Some(abs_err);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            n,
            grid.len(),
            fmt_f(abs_err),
            fmt_f(w_err),
            ratio.map(fmt_f).unwrap_or_default()
        );
        rows.push(json!({
            "nodes_per_segment": n,
            "nodes": grid.len(),
            "max_abs_error": abs_err,
            "max_weighted_error": w_err,
            "ratio": ratio,
        }));
    }
    counters["g_evaluations"] = json!(evals);
    o.set("convergence", Value::Array(rows));
    o.files.push((out_dir.join("convergence.csv"), csv));
    Ok(())
}

/// Runs one configuration; returns the process exit status.
pub fn run(args: &Args) -> u8 {
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return EXIT_CONFIG;
        }
    };
    let mut cfg = match RunConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(n) = args.grid_n {
        cfg.grid_n = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.mode {
        cfg.mode = Some(m);
    }
    let mode = cfg.mode.unwrap_or(Mode::Solve);
    cfg.mode = Some(mode);
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return EXIT_CONFIG;
    }

    let started = Instant::now();
    let mut o = Outcome::new();
    o.set("mode", to_value(&mode));
    o.set("config", to_value(&cfg));
    let mut counters = json!({ "nodes": Value::Null, "g_evaluations": 0 });
    let result = match mode {
        Mode::Solve => run_solve(&cfg, &args.out, &mut o, &mut counters),
        Mode::VerifyPair => run_verify_pair(&cfg, &mut o, args.strict),
        Mode::CheckHypotheses => run_check(&cfg, cfg.seed, &mut o, args.strict),
        Mode::ConvergenceStudy => run_convergence(&cfg, &args.out, &mut o, &mut counters),
    };
    for key in [
        "eta",
        "iterations",
        "converged",
        "unique",
        "residual",
        "violations",
    ] {
        o.report.entry(key.to_string()).or_insert(Value::Null);
    }
    counters["wall_seconds"] = if args.timings {
        json!(started.elapsed().as_secs_f64())
    } else {
        Value::Null
    };
    o.set("timings", counters);
    if let Err(e) = &result {
        eprintln!("error: {e}");
        o.set("error", json!(e.to_string()));
        o.code = numerical_code(e);
    }
    let report = serde_json::to_string_pretty(&Value::Object(o.report)).unwrap_or_default() + "\n";
    o.files.push((args.out.join("report.json"), report));
    for (path, contents) in &o.files {
        if let Err(e) = write_atomic(path, contents) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    }
    o.code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_scalar_config() {
        let cfg = RunConfig::from_json(
            r#"{"problem": {"kind": "scalar", "a": 1.0, "x0": 1.0}, "mu": 0.6, "nu": 1.0, "T": 1.0}"#,
        )
        .unwrap();
        assert_eq!(cfg.grid_n, 512);
        assert_eq!(cfg.monotone, MonotoneSpec::default());
        assert!(cfg.build_problem().is_ok());
    }

    #[test]
    fn bad_nu_names_the_field() {
        let cfg = RunConfig::from_json(
            r#"{"problem": {"kind": "scalar", "a": 1.0, "x0": 1.0}, "mu": 0.6, "nu": 1.5, "T": 1.0}"#,
        )
        .unwrap();
        let msg = cfg.build_problem().unwrap_err().to_string();
        assert!(msg.contains("nu"), "{msg}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(
            r#"{"problem": {"kind": "scalar", "a": 1.0, "x0": 1.0}, "mu": 0.6, "nu": 1.0, "T": 1.0, "tolerance": 1}"#
        )
        .is_err());
    }

    #[test]
    fn custom_problem_builds() {
        let cfg = RunConfig::from_json(
            r#"{"problem": {"kind": "custom", "matrix": [[2, -1], [0, 1]], "x0": [1, 0.5], "f": [1, 1], "beta": 0.1},
                "mu": 0.5, "nu": 0.5, "T": 1.0, "impulses": [{"time": 0.5, "jump": 0.2}]}"#,
        )
        .unwrap();
        let p = cfg.build_problem().unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.impulses.len(), 1);
        assert_eq!(
            (p.impulses[0].phi)(&[1.0, 1.0], &[0.0, 0.0]),
            vec![0.2, 0.2]
        );
    }
}
