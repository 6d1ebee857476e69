//! Sweeps over methods and update frequencies with CSV output.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use lazy_newton::instance::Instance;
use lazy_newton::linalg::NormContext;
use lazy_newton::methods::{run, Method, SolverConfig};
use lazy_newton::oracles::{
    HessianSource, LogSumExpProblem, Objective, ProblemOracle, QuadraticProblem, ScalarLoss,
    SeparableNorm, SeparableProblem, UniformStream,
};
use lazy_newton::trace::{IterationRecord, Status, Trace};

pub const CSV_HEADER: &str =
    "k,phase,retry,method,m,M_used,f,grad_dual_norm,xi,step_r,lambda,n_f,n_grad,n_hess,work_units,wall_ns";

pub const SUMMARY_HEADER: &str = "method,m,status,iterations,hessian_updates,n_f,n_grad,n_hess,work_units,wall_ns,final_grad_norm,theoretical_work,error";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Solver(#[from] lazy_newton::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    LogSumExp,
    Separable,
    Quadratic,
}

impl FromStr for ProblemKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        match s {
            "logsumexp" => Ok(Self::LogSumExp),
            "separable" => Ok(Self::Separable),
            "quadratic" => Ok(Self::Quadratic),
            other => Err(BenchError::Config(format!("unknown problem `{other}`"))),
        }
    }
}

/// An entry of the `m` sweep; `Dim` stands for the problem dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MValue {
    Int(usize),
    Dim,
}

impl MValue {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            Self::Int(m) => m,
            Self::Dim => d,
        }
    }
}

impl FromStr for MValue {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        if s == "d" {
            return Ok(Self::Dim);
        }
        match s.parse::<usize>() {
            Ok(m) if m >= 1 => Ok(Self::Int(m)),
            _ => Err(BenchError::Config(format!(
                "m must be a positive integer or `d`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    pub n: usize,
    pub d: usize,
    pub mu: f64,
    /// `None` picks `1e-6 · trace(AᵀA)/d`.
    pub delta: Option<f64>,
    pub seed: u64,
    /// Loss for separable problems.
    pub loss: ScalarLoss,
    pub methods: Vec<Method>,
    pub m_values: Vec<MValue>,
    pub eps: f64,
    pub max_iters: usize,
    /// `M` for the fixed methods.
    pub reg: Option<f64>,
    /// `M₀` for the adaptive methods.
    pub reg0: Option<f64>,
    pub hessian: HessianSource,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            problem: ProblemKind::LogSumExp,
            n: 50,
            d: 20,
            mu: 0.05,
            delta: None,
            seed: 42,
            loss: ScalarLoss::Logistic,
            methods: vec![Method::GradReg],
            m_values: vec![MValue::Int(1), MValue::Int(5), MValue::Dim],
            eps: 1e-9,
            max_iters: 10_000,
            reg: None,
            reg0: None,
            hessian: HessianSource::Analytic,
            out: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n == 0 || self.d == 0 {
            return Err(BenchError::Config("n and d must be positive".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(BenchError::Config("eps must be positive".into()));
        }
        if self.mu.is_nan() || self.mu <= 0.0 {
            return Err(BenchError::Config("mu must be positive".into()));
        }
        if self.methods.is_empty() || self.m_values.is_empty() {
            return Err(BenchError::Config(
                "at least one method and one m are required".into(),
            ));
        }
        if self.m_values.contains(&MValue::Int(0)) {
            return Err(BenchError::Config("m must be at least 1".into()));
        }
        Ok(())
    }

    /// Concrete phase lengths, with `d` substituted and duplicates removed.
    pub fn resolved_m(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for m in &self.m_values {
            let m = m.resolve(self.d);
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out
    }

    pub fn build_instance(&self) -> Instance {
        match self.problem {
            ProblemKind::LogSumExp => Instance::LogSumExp(LogSumExpProblem::generate(
                self.n, self.d, self.mu, self.delta, self.seed,
            )),
            ProblemKind::Separable => {
                let a = UniformStream::new(self.seed).matrix(self.n, self.d);
                let delta = self
                    .delta
                    .unwrap_or_else(|| lazy_newton::oracles::default_delta(&a));
                Instance::Separable(SeparableProblem::generate(
                    self.n,
                    self.d,
                    self.loss,
                    SeparableNorm::Gram { delta },
                    self.seed,
                ))
            }
            ProblemKind::Quadratic => {
                Instance::Quadratic(QuadraticProblem::generate(self.d, self.seed))
            }
        }
    }

    /// Starting point: the origin, except for separable problems whose loss
    /// is stationary there, which start from a small seeded perturbation.
    pub fn starting_point(&self) -> DVector<f64> {
        match self.problem {
            ProblemKind::Separable if !self.loss.is_convex() => {
                UniformStream::new(self.seed.wrapping_add(1)).vector(self.d) * 0.1
            }
            _ => DVector::zeros(self.d),
        }
    }
}

/// `√m + d/√m`, the relative total cost of a phase length `m` when a Hessian
/// costs `d` gradients.
pub fn theoretical_work(m: usize, d: usize) -> f64 {
    let s = (m as f64).sqrt();
    s + d as f64 / s
}

/// The `m` in `1..=max_m` minimizing [`theoretical_work`], first on ties.
pub fn theoretical_optimum(d: usize, max_m: usize) -> usize {
    (1..=max_m)
        .min_by(|&a, &b| theoretical_work(a, d).total_cmp(&theoretical_work(b, d)))
        .unwrap_or(1)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub method: Method,
    pub m: usize,
    pub result: Result<Trace, lazy_newton::Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub m: usize,
    pub status: String,
    pub iterations: usize,
    pub hessian_updates: usize,
    pub n_f: usize,
    pub n_grad: usize,
    pub n_hess: usize,
    pub work_units: usize,
    pub wall_ns: u64,
    pub final_grad_norm: f64,
    pub theoretical_work: f64,
    pub error: Option<String>,
}

impl SummaryRow {
    fn new(outcome: &RunOutcome, d: usize) -> Self {
        let mut row = Self {
            method: outcome.method,
            m: outcome.m,
            status: "error".into(),
            iterations: 0,
            hessian_updates: 0,
            n_f: 0,
            n_grad: 0,
            n_hess: 0,
            work_units: 0,
            wall_ns: 0,
            final_grad_norm: f64::NAN,
            theoretical_work: theoretical_work(outcome.m, d),
            error: None,
        };
        match &outcome.result {
            Ok(trace) => {
                row.status = match trace.status {
                    Status::Converged => "converged",
                    Status::MaxIterations => "max-iterations",
                }
                .into();
                row.iterations = trace.iterations();
                row.hessian_updates = trace.hessian_updates();
                row.n_f = trace.counts.n_f;
                row.n_grad = trace.counts.n_grad;
                row.n_hess = trace.counts.n_hess;
                row.work_units = trace.work_units();
                row.wall_ns = trace.records.last().map_or(0, |r| r.wall_ns);
                row.final_grad_norm = trace.final_grad_norm();
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    }
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub instance: Instance,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(|r| r.result.is_err())
    }

    pub fn row(&self, method: Method, m: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.m == m)
    }
}

/// Runs every `(method, m)` pair on the instance described by `spec`.
///
/// Runs execute on the current rayon pool, each with its own oracle and
/// counters. Solver errors are kept per run; only invalid specs and I/O
/// failures abort. When `spec.out` is set, one CSV per run plus
/// `summary.csv` and `instance.txt` are written there.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, BenchError> {
    spec.validate()?;
    let instance = spec.build_instance();
    let problem: Arc<dyn Objective> = instance.objective();
    let ctx = NormContext::new(problem.norm_matrix())?;
    let x0 = spec.starting_point();

    let pairs: Vec<(Method, usize)> = spec
        .methods
        .iter()
        .flat_map(|&method| spec.resolved_m().into_iter().map(move |m| (method, m)))
        .collect();

    let runs: Vec<RunOutcome> = pairs
        .into_par_iter()
        .map(|(method, m)| {
            let oracle = ProblemOracle::new(Arc::clone(&problem)).with_hessian_source(spec.hessian);
            let mut cfg = SolverConfig::new(method, m)
                .with_eps(spec.eps)
                .with_max_iters(spec.max_iters);
            let reg = if method.is_adaptive() {
                spec.reg0
            } else {
                spec.reg
            };
            if let Some(r) = reg {
                cfg = cfg.with_reg(r);
            }
            RunOutcome {
                method,
                m,
                result: run(&oracle, &ctx, &cfg, &x0),
            }
        })
        .collect();

    let summary = runs.iter().map(|r| SummaryRow::new(r, spec.d)).collect();
    let report = ExperimentReport {
        instance,
        runs,
        summary,
    };
    if let Some(dir) = &spec.out {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

pub fn csv_file_name(method: Method, m: usize) -> String {
    format!("{}_m{m}.csv", method.name())
}

fn write_outputs(report: &ExperimentReport, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for run in &report.runs {
        if let Ok(trace) = &run.result {
            emit_csv(trace, &dir.join(csv_file_name(run.method, run.m)))?;
        }
    }
    let path = dir.join("summary.csv");
    fs::write(&path, summary_csv(&report.summary)).map_err(io_err(&path))?;
    let path = dir.join("instance.txt");
    fs::write(&path, report.instance.to_text()).map_err(io_err(&path))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the per-iteration rows of `trace` in the CSV schema.
pub fn write_csv<W: Write>(trace: &Trace, mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &trace.records {
        writeln!(w, "{}", csv_row(r, trace.method, trace.m))?;
    }
    w.flush()
}

fn csv_row(r: &IterationRecord, method: Method, m: usize) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.k,
        r.phase,
        u8::from(r.retry),
        method.name(),
        m,
        r.m_used,
        r.f,
        r.grad_dual_norm,
        opt(r.xi),
        r.step_r,
        opt(r.lambda),
        r.n_f,
        r.n_grad,
        r.n_hess,
        r.work_units,
        r.wall_ns
    )
}

pub fn emit_csv(trace: &Trace, path: &Path) -> Result<(), BenchError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_csv(trace, io::BufWriter::new(file)).map_err(io_err(path))
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.m,
            r.status,
            r.iterations,
            r.hessian_updates,
            r.n_f,
            r.n_grad,
            r.n_hess,
            r.work_units,
            r.wall_ns,
            r.final_grad_norm,
            r.theoretical_work,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    out
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub phase: usize,
    pub retry: bool,
    pub method: String,
    pub m: usize,
    pub m_used: f64,
    pub f: f64,
    pub grad_dual_norm: f64,
    pub xi: Option<f64>,
    pub step_r: f64,
    pub lambda: Option<f64>,
    pub n_f: usize,
    pub n_grad: usize,
    pub n_hess: usize,
    pub work_units: usize,
    pub wall_ns: u64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, BenchError> {
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(BenchError::Csv {
                line: 1,
                message: "unexpected header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let bad = |message: String| BenchError::Csv {
            line: line_no,
            message,
        };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 16 {
            return Err(bad(format!("expected 16 fields, found {}", cells.len())));
        }
        fn num<T: FromStr>(cell: &str, name: &str) -> Result<T, String> {
            cell.parse::<T>()
                .map_err(|_| format!("bad {name} `{cell}`"))
        }
        fn maybe(cell: &str, name: &str) -> Result<Option<f64>, String> {
            if cell.is_empty() {
                Ok(None)
            } else {
                num(cell, name).map(Some)
            }
        }
        let row = (|| -> Result<CsvRow, String> {
            Ok(CsvRow {
                k: num(cells[0], "k")?,
                phase: num(cells[1], "phase")?,
                retry: num::<u8>(cells[2], "retry")? != 0,
                method: cells[3].to_string(),
                m: num(cells[4], "m")?,
                m_used: num(cells[5], "M_used")?,
                f: num(cells[6], "f")?,
                grad_dual_norm: num(cells[7], "grad_dual_norm")?,
                xi: maybe(cells[8], "xi")?,
                step_r: num(cells[9], "step_r")?,
                lambda: maybe(cells[10], "lambda")?,
                n_f: num(cells[11], "n_f")?,
                n_grad: num(cells[12], "n_grad")?,
                n_hess: num(cells[13], "n_hess")?,
                work_units: num(cells[14], "work_units")?,
                wall_ns: num(cells[15], "wall_ns")?,
            })
        })()
        .map_err(bad)?;
        rows.push(row);
    }
    Ok(rows)
}
