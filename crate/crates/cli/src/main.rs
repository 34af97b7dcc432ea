use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sketchavg::calculus::{
    ihs_rate, lambda2_ridge_uncorrected_form, lambda2_star_newton, lambda2_star_ridge, predict_iterations,
    step_scalings, theta1, theta2, theta3, CalcError,
};
use sketchavg::experiment::runner::aggregate;
use sketchavg::experiment::verify::{run_suite, Suite, VerifyOptions};
use sketchavg::experiment::{format_sig12, run_experiment, write_outputs, ExperimentConfig};
use sketchavg::io::save_problem;
use sketchavg::problems::{generate_problem, GenOptions, ProblemKind};
use sketchavg::rng::RngStream;

const THREADS_ENV: &str = "SKETCHAVG_THREADS";

#[derive(Parser)]
#[command(name = "sketchavg", version, about = "Distributed sketched solvers with unbiased averaging")]
struct Cli {
    /// Worker threads for parallel trials and clusters; SKETCHAVG_THREADS
    /// takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write traces, aggregates and a summary.
    Run(RunArgs),
    /// Evaluate a closed-form quantity.
    Calc {
        #[command(subcommand)]
        what: Calc,
    },
    /// Generate a synthetic problem as SAMX files plus a manifest.
    Gen(GenArgs),
    /// Run a Monte Carlo verification suite (or `all`).
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides `output.trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides `output.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    kind: ProblemKind,
    n: usize,
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    /// Draw A with every singular value equal to `--sigma`.
    #[arg(long)]
    identical_sv: bool,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Barrier half-width.
    #[arg(long, default_value_t = 0.01)]
    bound: f64,
    /// Entry standard deviation of a Gaussian A.
    #[arg(long)]
    a_scale: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// moments, theta3, thm1, thm2, thm3, thm4 or all.
    suite: String,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Subcommand)]
enum Calc {
    Theta1 {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
    },
    Theta2 {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
    },
    /// Limit of the regularized inverse Gram at ratio d/m.
    Theta3 {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        lambda: f64,
    },
    Lambda2Ridge(Lambda2Args),
    Lambda2Newton(Lambda2Args),
    StepScalings {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
    },
    IhsRate {
        #[arg(long)]
        q: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
    },
    PredictIters {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
    },
}

#[derive(Args)]
struct Lambda2Args {
    #[arg(long)]
    lambda1: f64,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

/// Exit 2 for bad input or infeasible requests, 1 for failures while running.
enum Failure {
    Input(String),
    Runtime(String),
}

impl From<CalcError> for Failure {
    fn from(e: CalcError) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|()| match cli.cmd {
        Command::Run(a) => cmd_run(&a),
        Command::Calc { what } => cmd_calc(&what),
        Command::Gen(a) => cmd_gen(&a),
        Command::Verify(a) => cmd_verify(&a),
    });
    match result {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Failure::Input(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => flag,
    };
    let Some(n) = threads else {
        return Ok(());
    };
    if n == 0 {
        return Err(Failure::Input("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    eprintln!("using {n} worker threads");
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<ExitCode, Failure> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Failure::Input(format!("{}: {e}", a.config.display())))?;
    let at = |e: &dyn std::fmt::Display| Failure::Input(format!("{}: {e}", a.config.display()));
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| at(&e))?;
    if let Some(t) = a.trials {
        cfg.output.trials = t;
    }
    if let Some(s) = a.seed {
        cfg.output.master_seed = s;
    }
    cfg.validate().map_err(|e| at(&e))?;
    let out = run_experiment(&cfg).map_err(|e| {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    })?;
    write_outputs(&out, &a.out_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{:<40} {:>6} {:>14} {:>14}", "variant", "t", "cost_gap", "rel_x_err");
    for r in &out.results {
        if let Some(last) = aggregate(&r.reports).last() {
            println!(
                "{:<40} {:>6} {:>14.6e} {:>14.6e}",
                r.variant.label, last.t, last.cost_gap.0, last.rel_x_err.0
            );
        }
    }
    println!("wrote {}", a.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_calc(what: &Calc) -> Result<ExitCode, Failure> {
    let g = format_sig12;
    match *what {
        Calc::Theta1 { m, d } => println!("{}", g(theta1(m, d)?)),
        Calc::Theta2 { m, d } => println!("{}", g(theta2(m, d)?)),
        Calc::Theta3 { d, m, lambda } => {
            if m == 0 {
                return Err(Failure::Input("m must be at least 1".into()));
            }
            println!("{}", g(theta3(d as f64 / m as f64, lambda)?));
        }
        Calc::Lambda2Ridge(Lambda2Args { lambda1, d, m, sigma }) => {
            let star = lambda2_star_ridge(lambda1, d, m, sigma)?;
            let other = lambda2_ridge_uncorrected_form(lambda1, d, m, sigma)?;
            println!("{}", g(star));
            println!(
                "note: the uncorrected form lambda1 - (d/m)/(1 + lambda1/sigma^2) gives {}, which does not zero the bias",
                g(other)
            );
        }
        Calc::Lambda2Newton(Lambda2Args { lambda1, d, m, sigma }) => {
            println!("{}", g(lambda2_star_newton(lambda1, d, m, sigma)?))
        }
        Calc::StepScalings { m, d } => {
            let s = step_scalings(m, d)?;
            println!("alpha_unbiased {}", g(s.alpha_unbiased));
            println!("alpha_minvar {}", g(s.alpha_minvar));
        }
        Calc::IhsRate { q, m, d } => println!("{}", g(ihs_rate(q, m, d)?)),
        Calc::PredictIters { eps, q, m, d } => {
            let t = predict_iterations(eps, q, m, d)?;
            println!("{}", g(t));
            println!("note: {} iterations after rounding up", t.ceil());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(a: &GenArgs) -> Result<ExitCode, Failure> {
    let opts = GenOptions {
        identical_sv: a.identical_sv,
        sigma: a.sigma,
        lambda1: a.lambda1,
        bound: a.bound,
        a_scale: a.a_scale,
    };
    let mut rng = RngStream::new(a.seed, 0);
    let problem = generate_problem(a.kind, a.n, a.d, a.noise, &mut rng, &opts)
        .map_err(|e| Failure::Input(e.to_string()))?;
    let manifest = save_problem(&a.out_dir, &problem, a.noise, a.seed, &opts)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let show = |f: &str| Path::new(&a.out_dir).join(f).display().to_string();
    println!("{}", show(&manifest.a_file));
    println!("{}", show(&manifest.target_file));
    if let Some(x0) = &manifest.x0_file {
        println!("{}", show(x0));
    }
    println!("{}", show(sketchavg::io::MANIFEST_FILE));
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: &VerifyArgs) -> Result<ExitCode, Failure> {
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![a.suite.parse().map_err(Failure::Input)?]
    };
    if a.trials == Some(0) {
        return Err(Failure::Input("--trials must be at least 1".into()));
    }
    let opts = VerifyOptions {
        trials: a.trials,
        seed: a.seed,
    };
    let mut all_pass = true;
    for suite in suites {
        let report = run_suite(suite, &opts).map_err(|e| Failure::Runtime(format!("{suite}: {e}")))?;
        println!("== {suite} ==");
        print!("{}", report.table());
        println!("{suite}: {}", if report.pass() { "PASS" } else { "FAIL" });
        all_pass &= report.pass();
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
