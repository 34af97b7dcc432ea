//! Distributed Newton sketch. Each worker sketches the Hessian square
//! root with a fresh sketch per iteration and returns an approximate
//! Newton direction; the master averages, picks the outer step, and
//! updates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    run_cluster_round, seconds_since, weighted_average, ClusterConfig, CorrectionRecord, ConvergenceTrace,
    Reference, SolverError, SolverReport,
};
use crate::calculus::{lambda2_star_newton, step_scalings};
use crate::linalg::{solve_symmetric, DenseVector};
use crate::problems::{ProblemModel, SigmaMode};
use crate::sketch::apply_sketch;

/// Step scaling αₛ for unregularized problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    /// 1/θ₁(mₖ).
    Unbiased,
    /// θ₁(mₖ)/θ₂(mₖ).
    MinVariance,
    Fixed(f64),
}

/// λ₂ choice for regularized problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NewtonCorrection {
    /// λ₂* from the zero-bias condition, with σ from the heuristic.
    BiasCorrected,
    /// λ₂ = λ₁, the problem's nominal regularization weight (half the
    /// Hessian's shift for barrier problems).
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub steps: StepPolicy,
    pub correction: NewtonCorrection,
    /// `None` uses the problem kind's default.
    pub sigma_mode: Option<SigmaMode>,
    /// Stop when the averaged decrement `−gᵀΔ̄/2` falls to `eps`.
    pub eps: f64,
    pub max_iters: usize,
    /// Backtracking factor and sufficient-decrease constant, used for the
    /// non-quadratic kinds.
    pub beta: f64,
    pub armijo_c: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            steps: StepPolicy::Unbiased,
            correction: NewtonCorrection::BiasCorrected,
            sigma_mode: None,
            eps: 1e-12,
            max_iters: 20,
            beta: 0.5,
            armijo_c: 1e-4,
        }
    }
}

/// Per-worker `(λ₂, αₛ)` at the current iterate.
fn worker_params(
    p: &ProblemModel,
    cluster: &ClusterConfig,
    opts: &NewtonOptions,
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Option<f64>), SolverError> {
    let d = p.d();
    let lambda = p.effective_lambda();
    let q = cluster.q();
    if lambda > 0.0 {
        let (l2, sigma) = match opts.correction {
            NewtonCorrection::Vanilla => (vec![p.lambda1(); q], None),
            NewtonCorrection::BiasCorrected => {
                let mode = opts.sigma_mode.unwrap_or(p.kind().default_sigma_mode());
                let sigma = p.sigma_heuristic(x, mode)?;
                let l2 = cluster
                    .workers
                    .iter()
                    .map(|w| lambda2_star_newton(lambda, d, w.m(), sigma))
                    .collect::<Result<Vec<_>, _>>()?;
                (l2, Some(sigma))
            }
        };
        let alpha = match opts.steps {
            StepPolicy::Fixed(a) => vec![a; q],
            _ => vec![1.0; q],
        };
        return Ok((l2, alpha, sigma));
    }
    let alpha = cluster
        .workers
        .iter()
        .enumerate()
        .map(|(index, w)| {
            let wrap = |e| SolverError::Worker {
                index,
                source: Box::new(SolverError::Calc(e)),
            };
            Ok(match opts.steps {
                StepPolicy::Unbiased => step_scalings(w.m(), d).map_err(wrap)?.alpha_unbiased,
                StepPolicy::MinVariance => step_scalings(w.m(), d).map_err(wrap)?.alpha_minvar,
                StepPolicy::Fixed(a) => a,
            })
        })
        .collect::<Result<Vec<_>, SolverError>>()?;
    Ok((vec![0.0; q], alpha, None))
}

pub fn dist_newton_sketch(
    p: &ProblemModel,
    cluster: &ClusterConfig,
    opts: &NewtonOptions,
    reference: &Reference,
) -> Result<SolverReport, SolverError> {
    let (n, d, q) = (p.n(), p.d(), cluster.q());
    let half_rows = match p.kind() {
        crate::problems::ProblemKind::Barrier => 2 * n,
        _ => n,
    };
    for w in &cluster.workers {
        w.sketch.validate_for(half_rows)?;
    }
    if !(opts.beta > 0.0 && opts.beta < 1.0) || !(opts.armijo_c > 0.0 && opts.armijo_c < 1.0) {
        return Err(SolverError::Config(format!(
            "line search needs 0 < beta < 1 and 0 < c < 1, got beta={}, c={}",
            opts.beta, opts.armijo_c
        )));
    }
    let quadratic = p.kind().is_quadratic();
    let rounds_per_iter: u64 = if cluster.partitioned { 2 } else { 1 };

    let mut x = DenseVector::zeros(d);
    let mut trace = ConvergenceTrace::default();
    let mut warnings = Vec::new();
    let mut corrections = Vec::new();
    let mut comm = 0u64;
    let mut alpha1 = 1.0;
    let mut observed = None;
    trace.records.push(reference.record(p, &x, 0, comm, 0.0)?);

    for t in 0..opts.max_iters {
        let start = Instant::now();
        let g = if cluster.partitioned {
            let parts = run_cluster_round(cluster, |k, _| Ok(p.partial_gradient(&x, cluster.row_block(k, n))?))?;
            let mut g = p.reg_gradient(&x);
            for part in &parts {
                g.axpy(1.0, part);
            }
            g
        } else {
            p.gradient(&x)?
        };
        let hf = p.hessian_factor(&x)?;
        let (lambda2, alpha, sigma) = worker_params(p, cluster, opts, &x)?;
        if t == 0 {
            corrections = cluster
                .workers
                .iter()
                .enumerate()
                .map(|(k, w)| CorrectionRecord {
                    worker: k,
                    m: w.m(),
                    lambda2: lambda2[k],
                    alpha: alpha[k],
                    sigma,
                })
                .collect();
        }
        let solved = run_cluster_round(cluster, |k, w| {
            let sh = apply_sketch(&w.sketch, &hf.half, &mut w.round_stream(t))?;
            let mut h = sh.gram();
            h.add_diagonal(lambda2[k]);
            Ok(solve_symmetric(&h, &g)?)
        })?;
        for (k, s) in solved.iter().enumerate() {
            if s.indefinite {
                warnings.push(format!("iteration {t}, worker {k}: sketched system indefinite; solved by pivoted LU"));
            }
        }
        let dirs: Vec<DenseVector> = solved.into_iter().map(|s| s.x.scaled(-1.0)).collect();
        let dir = weighted_average(&dirs, &alpha);
        comm += rounds_per_iter * (q * d) as u64;

        let slope = g.dot(&dir);
        let decrement = -slope / 2.0;
        if decrement.abs() <= opts.eps {
            observed = Some(t);
            trace.records.push(reference.record(p, &x, t + 1, comm, seconds_since(start))?);
            break;
        }
        if slope > 0.0 {
            warnings.push(format!("iteration {t}: averaged direction is not a descent direction; step rejected"));
            alpha1 *= 0.5;
            trace.records.push(reference.record(p, &x, t + 1, comm, seconds_since(start))?);
            continue;
        }
        if quadratic {
            x.axpy(alpha1, &dir);
        } else {
            let f = p.objective(&x)?;
            let mut step = alpha1;
            let mut accepted = false;
            for _ in 0..80 {
                let mut xn = x.clone();
                xn.axpy(step, &dir);
                if p.in_domain(&xn) && p.objective(&xn)? <= f + opts.armijo_c * step * slope {
                    x = xn;
                    accepted = true;
                    break;
                }
                step *= opts.beta;
            }
            if !accepted {
                warnings.push(format!("iteration {t}: line search found no decrease; step skipped"));
            }
        }
        trace.records.push(reference.record(p, &x, t + 1, comm, seconds_since(start))?);
    }
    Ok(SolverReport {
        x: x.into_vec(),
        trace,
        corrections,
        predicted_iterations: None,
        observed_iterations: observed,
        warnings,
    })
}
