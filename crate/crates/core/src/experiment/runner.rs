//! Executes an [`ExperimentConfig`]: one problem, every variant, every
//! trial; then aggregates in trial order.
//!
//! Trial `i` of every variant uses the cluster seed derived from
//! `(master_seed, i)`, so variants are compared on common random numbers.
//! Traces that stop early are padded with their final record when
//! aggregating (the iterate no longer moves).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::config::{Algorithm, ConfigError, ExperimentConfig, Metric, Variant};
use super::svg::{line_chart, Series};
use crate::calculus::{
    ihs_rate, lambda2_ridge_uncorrected_form, lambda2_star_ridge, predict_iterations, step_scalings, theta1,
    theta2,
};
use crate::io::IoError;
use crate::problems::{generate_problem, GeneratedProblem, ProblemError};
use crate::rng::RngStream;
use crate::solvers::{
    dist_ihs, dist_newton_sketch, dist_ridge_average, ClusterConfig, IhsOptions, NewtonOptions, Reference,
    SolverError, SolverReport, TraceRecord,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("variant {variant}, trial {trial}: {source}")]
    Solver {
        variant: String,
        trial: usize,
        #[source]
        source: SolverError,
    },
    #[error(transparent)]
    Reference(SolverError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl RunError {
    /// Bad configuration or an infeasible correction, as opposed to a
    /// failure while running.
    pub fn is_input_error(&self) -> bool {
        match self {
            RunError::Config(_) => true,
            RunError::Problem(ProblemError::Invalid(_) | ProblemError::Dimension(_)) => true,
            RunError::Solver { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

pub struct VariantResult {
    pub variant: Variant,
    /// One report per trial, in trial order.
    pub reports: Vec<SolverReport>,
}

pub struct RunOutput {
    pub config: ExperimentConfig,
    pub problem: GeneratedProblem,
    pub reference: Reference,
    pub sigma: Option<f64>,
    pub results: Vec<VariantResult>,
}

/// Cluster seed for a trial.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    RngStream::new(master_seed, 1).child(trial as u64).next_u64()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let pc = &cfg.problem;
    let mut rng = RngStream::new(cfg.output.master_seed, 0);
    let problem = generate_problem(pc.kind, pc.n, pc.d, pc.noise, &mut rng, &pc.gen_options())?;
    let p = &problem.model;
    let reference = Reference::new(p).map_err(RunError::Reference)?;
    let sigma = match cfg.solver.algorithm {
        Algorithm::RidgeAverage => Some(match cfg.solver.sigma {
            Some(s) => s,
            None => {
                let mode = cfg.solver.sigma_mode.unwrap_or(pc.kind.default_sigma_mode());
                p.sigma_heuristic(&vec![0.0; pc.d], mode)?
            }
        }),
        _ => None,
    };

    let mut results = Vec::new();
    for variant in cfg.variants()? {
        let run_trial = |trial: usize| -> Result<SolverReport, RunError> {
            let cluster = ClusterConfig::new(variant.sketches.clone(), trial_seed(cfg.output.master_seed, trial))
                .map(|c| c.with_execution(cfg.cluster.execution).with_partitioned(cfg.cluster.partitioned))
                .map_err(|source| RunError::Solver {
                    variant: variant.label.clone(),
                    trial,
                    source,
                })?;
            let report = match cfg.solver.algorithm {
                Algorithm::Ihs => {
                    let opts = IhsOptions {
                        iterations: cfg.solver.iterations,
                        mu: cfg.solver.mu,
                        eps: cfg.solver.eps,
                    };
                    dist_ihs(p, &cluster, &opts, &reference)
                }
                Algorithm::RidgeAverage => dist_ridge_average(
                    p,
                    &cluster,
                    variant.ridge_correction(),
                    sigma.expect("set for ridge-average"),
                    &reference,
                ),
                Algorithm::Newton => {
                    let mut opts = NewtonOptions {
                        correction: variant.newton_correction(),
                        sigma_mode: cfg.solver.sigma_mode,
                        max_iters: cfg.solver.iterations,
                        ..Default::default()
                    };
                    if let Some(step) = variant.step {
                        opts.steps = step.policy();
                    }
                    if let Some(eps) = cfg.solver.eps {
                        opts.eps = eps;
                    }
                    dist_newton_sketch(p, &cluster, &opts, &reference)
                }
            };
            report.map_err(|source| RunError::Solver {
                variant: variant.label.clone(),
                trial,
                source,
            })
        };
        let reports = map_trials(cfg.output.trials, &run_trial)?;
        results.push(VariantResult { variant, reports });
    }
    Ok(RunOutput {
        config: cfg.clone(),
        problem,
        reference,
        sigma,
        results,
    })
}

#[cfg(feature = "parallel")]
fn map_trials<F>(trials: usize, f: &F) -> Result<Vec<SolverReport>, RunError>
where
    F: Fn(usize) -> Result<SolverReport, RunError> + Sync,
{
    use rayon::prelude::*;
    (0..trials).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_trials<F>(trials: usize, f: &F) -> Result<Vec<SolverReport>, RunError>
where
    F: Fn(usize) -> Result<SolverReport, RunError>,
{
    (0..trials).map(f).collect()
}

/// Mean and standard error per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateRow {
    pub t: usize,
    pub cost_gap: (f64, f64),
    pub err_a_sq: (f64, f64),
    pub rel_x_err: (f64, f64),
    pub comm_scalars: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(reports: &[SolverReport]) -> Vec<AggregateRow> {
    let Some(longest) = reports.iter().max_by_key(|r| r.trace.records.len()) else {
        return Vec::new();
    };
    let at = |r: &SolverReport, i: usize| -> TraceRecord {
        let recs = &r.trace.records;
        recs[i.min(recs.len() - 1)]
    };
    (0..longest.trace.records.len())
        .map(|i| {
            let recs: Vec<TraceRecord> = reports.iter().map(|r| at(r, i)).collect();
            let col = |f: fn(&TraceRecord) -> f64| mean_se(&recs.iter().map(f).collect::<Vec<_>>());
            AggregateRow {
                t: longest.trace.records[i].t,
                cost_gap: col(|r| r.cost_gap),
                err_a_sq: col(|r| r.err_a_sq),
                rel_x_err: col(|r| r.rel_x_err),
                comm_scalars: col(|r| r.comm_scalars as f64).0,
            }
        })
        .collect()
}

pub const AGGREGATE_HEADER: &str =
    "variant,t,cost_gap_mean,cost_gap_se,errA_sq_mean,errA_sq_se,rel_x_err_mean,rel_x_err_se,comm_scalars_mean";

/// Aggregate CSV over all variants. Wall time is omitted so that the file
/// is a deterministic function of the config.
pub fn aggregate_csv(out: &RunOutput) -> String {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for r in &out.results {
        for row in aggregate(&r.reports) {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.variant.label,
                row.t,
                row.cost_gap.0,
                row.cost_gap.1,
                row.err_a_sq.0,
                row.err_a_sq.1,
                row.rel_x_err.0,
                row.rel_x_err.1,
                row.comm_scalars
            );
        }
    }
    s
}

fn opt(v: Result<f64, impl std::fmt::Display>) -> Value {
    match v {
        Ok(x) if x.is_finite() => json!(x),
        Ok(_) => Value::Null,
        Err(e) => json!({ "undefined": e.to_string() }),
    }
}

fn theory(out: &RunOutput, v: &Variant) -> Value {
    let cfg = &out.config;
    let d = cfg.problem.d;
    let q = v.q();
    let workers: Vec<Value> = v
        .sketches
        .iter()
        .map(|s| {
            let m = s.m;
            let mut w = json!({
                "m": m,
                "theta1": opt(theta1(m, d)),
                "theta2": opt(theta2(m, d)),
            });
            match cfg.solver.algorithm {
                Algorithm::RidgeAverage => {
                    let sigma = out.sigma.expect("ridge sigma");
                    let l1 = cfg.problem.lambda1;
                    w["lambda2_star"] = opt(lambda2_star_ridge(l1, d, m, sigma));
                    w["lambda2_uncorrected_form"] = opt(lambda2_ridge_uncorrected_form(l1, d, m, sigma));
                    w["lambda2_vanilla"] = json!(l1);
                }
                Algorithm::Newton | Algorithm::Ihs => {
                    if let Ok(s) = step_scalings(m, d) {
                        w["alpha_unbiased"] = json!(s.alpha_unbiased);
                        w["alpha_minvar"] = json!(s.alpha_minvar);
                    }
                }
            }
            w
        })
        .collect();
    let mut t = json!({ "workers": workers });
    if let Some(m) = v.sketches.first().map(|s| s.m).filter(|&m| v.sketches.iter().all(|s| s.m == m)) {
        if cfg.solver.algorithm == Algorithm::Ihs || v.step.is_some() {
            t["ihs_rate"] = opt(ihs_rate(q, m, d));
            if let Some(eps) = cfg.solver.eps.filter(|_| cfg.solver.algorithm == Algorithm::Ihs) {
                t["predict_iterations"] = opt(predict_iterations(eps, q, m, d));
            }
        }
    }
    t
}

fn observed(r: &VariantResult) -> Value {
    let agg = aggregate(&r.reports);
    let last = agg.last().copied();
    let mut o = json!({
        "trials": r.reports.len(),
        "final_cost_gap_mean": last.map(|l| l.cost_gap.0),
        "final_rel_x_err_mean": last.map(|l| l.rel_x_err.0),
        "final_errA_sq_mean": last.map(|l| l.err_a_sq.0),
        "corrections_trial0": r.reports.first().map(|rep| &rep.corrections),
        "warnings": r.reports.iter().map(|rep| rep.warnings.len()).sum::<usize>(),
    });
    let ratios: Vec<f64> = r
        .reports
        .iter()
        .filter(|rep| rep.trace.records.len() > 1 && rep.trace.records[0].err_a_sq > 0.0)
        .map(|rep| rep.trace.records[1].err_a_sq / rep.trace.records[0].err_a_sq)
        .collect();
    if !ratios.is_empty() {
        o["one_step_errA_ratio_mean"] = json!(mean_se(&ratios).0);
    }
    let iters: Vec<f64> = r
        .reports
        .iter()
        .filter_map(|rep| rep.observed_iterations.map(|i| i as f64))
        .collect();
    if !iters.is_empty() {
        o["iterations_mean"] = json!(mean_se(&iters).0);
        o["iterations_reached_fraction"] = json!(iters.len() as f64 / r.reports.len() as f64);
    }
    o
}

pub fn summary_json(out: &RunOutput) -> Value {
    let p = &out.problem.model;
    json!({
        "config": out.config,
        "problem": {
            "kind": p.kind(),
            "n": p.n(),
            "d": p.d(),
            "lambda1": p.lambda1(),
            "f_star": out.reference.f_star,
            "sigma": out.sigma,
        },
        "variants": out.results.iter().map(|r| json!({
            "label": r.variant.label,
            "q": r.variant.q(),
            "sketch": r.variant.sketches.first().map(|s| s.to_string()),
            "theory": theory(out, &r.variant),
            "observed": observed(r),
        })).collect::<Vec<_>>(),
    })
}

pub fn plot_svg(out: &RunOutput) -> String {
    let metric = out.config.output.plot_metric;
    let (name, pick): (&str, fn(&AggregateRow) -> f64) = match metric {
        Metric::CostGap => ("cost_gap", |r| r.cost_gap.0),
        Metric::ErrASq => ("errA_sq", |r| r.err_a_sq.0),
        Metric::RelXErr => ("rel_x_err", |r| r.rel_x_err.0),
    };
    let series: Vec<Series> = out
        .results
        .iter()
        .map(|r| Series {
            label: r.variant.label.clone(),
            points: aggregate(&r.reports).iter().map(|row| (row.t as f64, pick(row))).collect(),
        })
        .collect();
    let x_label = if out.config.solver.algorithm == Algorithm::RidgeAverage {
        "workers averaged"
    } else {
        "iteration"
    };
    line_chart(&format!("mean {name}"), x_label, name, &series, true)
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `traces/<variant>/trial_NNNN.csv`, `aggregate.csv`,
/// `summary.json`, `config.toml` and, if enabled, `plot.svg`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), IoError> {
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| IoError::Fs {
            path: p.to_path_buf(),
            source,
        })
    };
    mkdir(dir)?;
    for r in &out.results {
        let vdir = dir.join("traces").join(&r.variant.label);
        mkdir(&vdir)?;
        for (i, rep) in r.reports.iter().enumerate() {
            write(&vdir.join(format!("trial_{i:04}.csv")), &rep.trace.to_csv())?;
        }
    }
    write(&dir.join("aggregate.csv"), &aggregate_csv(out))?;
    let summary = serde_json::to_string_pretty(&summary_json(out)).expect("summary serializes");
    write(&dir.join("summary.json"), &(summary + "\n"))?;
    write(&dir.join("config.toml"), &out.config.to_toml())?;
    if out.config.output.svg {
        write(&dir.join("plot.svg"), &plot_svg(out))?;
    }
    Ok(())
}
