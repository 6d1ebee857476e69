use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use lazy_newton::methods::Method;
use lazy_newton::oracles::{HessianSource, ScalarLoss};
use lazy_newton_bench::{run_experiment, summary_csv, ExperimentSpec, MValue, ProblemKind};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HessianArg {
    Analytic,
    Fd,
}

/// Run lazy Hessian Newton methods over a sweep of update frequencies.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// logsumexp, separable or quadratic
    #[arg(long, default_value = "logsumexp")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    d: usize,
    /// Smoothing parameter of log-sum-exp.
    #[arg(long, default_value_t = 0.05)]
    mu: f64,
    /// Norm perturbation; defaults to 1e-6·trace(AᵀA)/d.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Loss of the separable problem: square, double-well or logistic.
    #[arg(long, default_value = "logistic", value_parser = parse_loss)]
    loss: ScalarLoss,
    /// Repeatable: cubic, gradreg, adaptive-cubic, adaptive-gradreg.
    #[arg(long = "method", default_values = ["gradreg"])]
    methods: Vec<Method>,
    /// Repeatable phase length; an integer or `d`.
    #[arg(long = "m", default_values = ["1", "5", "d"])]
    m_values: Vec<MValue>,
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Regularization of the fixed methods (default 6mL or 3mL).
    #[arg(long = "M")]
    reg: Option<f64>,
    /// Initial regularization of the adaptive methods.
    #[arg(long = "M0")]
    reg0: Option<f64>,
    #[arg(long, value_enum, default_value = "analytic")]
    hessian: HessianArg,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn parse_loss(s: &str) -> Result<ScalarLoss, String> {
    ScalarLoss::from_name(s).ok_or_else(|| format!("unknown loss `{s}`"))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = ExperimentSpec {
        problem: args.problem,
        n: args.n,
        d: args.d,
        mu: args.mu,
        delta: args.delta,
        seed: args.seed,
        loss: args.loss,
        methods: args.methods,
        m_values: args.m_values,
        eps: args.eps,
        max_iters: args.max_iters,
        reg: args.reg,
        reg0: args.reg0,
        hessian: match args.hessian {
            HessianArg::Analytic => HessianSource::Analytic,
            HessianArg::Fd => HessianSource::FiniteDifference { step: None },
        },
        out: Some(args.out.clone()),
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("LAZY_NEWTON_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };

    match pool.install(|| run_experiment(&spec)) {
        Ok(report) => {
            print!("{}", summary_csv(&report.summary));
            for run in &report.runs {
                if let Err(e) = &run.result {
                    eprintln!("{} m={}: {e}", run.method, run.m);
                }
            }
            eprintln!("wrote {}", args.out.display());
            if report.any_failed() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
