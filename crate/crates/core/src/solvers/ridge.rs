//! One-shot distributed ridge regression: every worker sketches `[A | b]`
//! once, solves its regularized subproblem, and the master averages.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    run_cluster_round, seconds_since, ClusterConfig, CorrectionRecord, ConvergenceTrace, Reference,
    SolverError, SolverReport,
};
use crate::calculus::{lambda2_ridge_uncorrected_form, lambda2_star_ridge};
use crate::linalg::{solve_symmetric, DenseVector};
use crate::problems::{ProblemKind, ProblemModel};
use crate::sketch::apply_sketch;

/// How each worker picks its λ₂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RidgeCorrection {
    /// Root of the zero-bias condition.
    ZeroBias,
    /// `λ₁ − (d/m)/(1 + λ₁/σ²)`, kept for comparison.
    UncorrectedForm,
    /// λ₂ = λ₁.
    Vanilla,
}

pub fn ridge_lambda2(
    correction: RidgeCorrection,
    lambda1: f64,
    d: usize,
    m: usize,
    sigma: f64,
) -> Result<f64, SolverError> {
    Ok(match correction {
        RidgeCorrection::ZeroBias => lambda2_star_ridge(lambda1, d, m, sigma)?,
        RidgeCorrection::UncorrectedForm => lambda2_ridge_uncorrected_form(lambda1, d, m, sigma)?,
        RidgeCorrection::Vanilla => lambda1,
    })
}

/// Runs the averaging round. The trace has one record per prefix
/// `j = 1..=q`, scoring the average of the first `j` worker estimates;
/// `comm_scalars` counts the `j·d` numbers those workers sent.
pub fn dist_ridge_average(
    p: &ProblemModel,
    cluster: &ClusterConfig,
    correction: RidgeCorrection,
    sigma: f64,
    reference: &Reference,
) -> Result<SolverReport, SolverError> {
    if p.kind() != ProblemKind::Ridge && p.kind() != ProblemKind::Lstsq {
        return Err(SolverError::UnsupportedProblem {
            algorithm: "distributed ridge averaging",
            kind: p.kind(),
        });
    }
    let (n, d, q) = (p.n(), p.d(), cluster.q());
    let lambda1 = p.effective_lambda();
    let lambda2: Vec<f64> = cluster
        .workers
        .iter()
        .enumerate()
        .map(|(index, w)| {
            w.sketch.validate_for(n)?;
            ridge_lambda2(correction, lambda1, d, w.m(), sigma).map_err(|e| SolverError::Worker {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    let mut warnings = Vec::new();
    for (k, l2) in lambda2.iter().enumerate() {
        if *l2 < 0.0 {
            warnings.push(format!("worker {k}: lambda2 = {l2} is negative; sketched system may be indefinite"));
        }
    }

    let start = Instant::now();
    let ab = p.a().with_column(p.target())?;
    let solved = run_cluster_round(cluster, |k, w| {
        let sab = apply_sketch(&w.sketch, &ab, &mut w.round_stream(0))?;
        let (sa, sb) = sab.split_last_column();
        let mut h = sa.gram();
        h.add_diagonal(lambda2[k]);
        let rhs = sa.t_matvec(&sb);
        Ok(solve_symmetric(&h, &rhs)?)
    })?;
    let round_time = seconds_since(start);

    let mut trace = ConvergenceTrace::default();
    let mut sum = DenseVector::zeros(d);
    for (j, s) in solved.iter().enumerate() {
        if s.indefinite {
            warnings.push(format!("worker {j}: sketched system was indefinite; solved by pivoted LU"));
        }
        sum.axpy(1.0, &s.x);
        let avg = sum.scaled(1.0 / (j + 1) as f64);
        trace
            .records
            .push(reference.record(p, &avg, j + 1, ((j + 1) * d) as u64, round_time)?);
    }
    let x = sum.scaled(1.0 / q as f64);
    let corrections = cluster
        .workers
        .iter()
        .enumerate()
        .map(|(k, w)| CorrectionRecord {
            worker: k,
            m: w.m(),
            lambda2: lambda2[k],
            alpha: 1.0,
            sigma: Some(sigma),
        })
        .collect();
    Ok(SolverReport {
        x: x.into_vec(),
        trace,
        corrections,
        predicted_iterations: None,
        observed_iterations: None,
        warnings,
    })
}
