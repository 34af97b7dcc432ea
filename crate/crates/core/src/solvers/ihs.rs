//! Distributed iterative Hessian sketch for least squares.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    run_cluster_round, seconds_since, weighted_average, ClusterConfig, CorrectionRecord, ConvergenceTrace,
    Reference, SolverError, SolverReport,
};
use crate::calculus::{predict_iterations, theta1};
use crate::linalg::{solve_spd, DenseVector};
use crate::problems::{ProblemKind, ProblemModel};
use crate::sketch::apply_sketch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhsOptions {
    pub iterations: usize,
    /// Step size; `None` uses 1/θ₁(mₖ) for each worker.
    pub mu: Option<f64>,
    /// Stop once `‖A(x_t − x*)‖² ≤ eps·‖A(x₀ − x*)‖²`.
    pub eps: Option<f64>,
}

impl IhsOptions {
    pub fn fixed(iterations: usize) -> Self {
        Self {
            iterations,
            mu: None,
            eps: None,
        }
    }
}

pub fn dist_ihs(
    p: &ProblemModel,
    cluster: &ClusterConfig,
    opts: &IhsOptions,
    reference: &Reference,
) -> Result<SolverReport, SolverError> {
    if p.kind() != ProblemKind::Lstsq {
        return Err(SolverError::UnsupportedProblem {
            algorithm: "distributed IHS",
            kind: p.kind(),
        });
    }
    let (n, d, q) = (p.n(), p.d(), cluster.q());
    let steps: Vec<f64> = match opts.mu {
        Some(mu) => vec![mu; q],
        None => cluster
            .workers
            .iter()
            .map(|w| {
                theta1(w.m(), d)
                    .map(|t| 1.0 / t)
                    .map_err(|_| SolverError::StepUndefined { m: w.m(), d })
            })
            .collect::<Result<_, _>>()?,
    };
    for w in &cluster.workers {
        w.sketch.validate_for(n)?;
    }
    let corrections = cluster
        .workers
        .iter()
        .enumerate()
        .map(|(k, w)| CorrectionRecord {
            worker: k,
            m: w.m(),
            lambda2: 0.0,
            alpha: steps[k],
            sigma: None,
        })
        .collect();
    let predicted_iterations = match (opts.eps, cluster.common_m()) {
        (Some(eps), Some(m)) => predict_iterations(eps, q, m, d).ok(),
        _ => None,
    };

    let mut x = DenseVector::zeros(d);
    let mut trace = ConvergenceTrace::default();
    let mut comm = 0u64;
    let first = reference.record(p, &x, 0, comm, 0.0)?;
    let err0 = first.err_a_sq;
    trace.records.push(first);
    let mut observed = None;
    if let Some(eps) = opts.eps {
        if err0 == 0.0 || eps >= 1.0 {
            observed = Some(0);
        }
    }
    let a = p.a();
    for t in 0..opts.iterations {
        if observed.is_some() {
            break;
        }
        let start = Instant::now();
        let g = p.gradient(&x)?;
        let dirs = run_cluster_round(cluster, |_, w| {
            let sa = apply_sketch(&w.sketch, a, &mut w.round_stream(t))?;
            let gram = sa.gram();
            Ok(solve_spd(&gram, &g)?.scaled(-1.0))
        })?;
        let step = weighted_average(&dirs, &steps);
        x.axpy(1.0, &step);
        comm += (q * d) as u64;
        let rec = reference.record(p, &x, t + 1, comm, seconds_since(start))?;
        if let Some(eps) = opts.eps {
            if rec.err_a_sq <= eps * err0 {
                observed = Some(t + 1);
            }
        }
        trace.records.push(rec);
    }
    Ok(SolverReport {
        x: x.into_vec(),
        trace,
        corrections,
        predicted_iterations,
        observed_iterations: observed,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::ihs_rate;
    use crate::problems::{generate_problem, GenOptions};
    use crate::rng::RngStream;
    use crate::sketch::SketchSpec;
    use crate::solvers::Execution;

    fn problem(n: usize, d: usize, seed: u64) -> (ProblemModel, Reference) {
        let mut rng = RngStream::new(seed, 0);
        let p = generate_problem(ProblemKind::Lstsq, n, d, 0.5, &mut rng, &GenOptions::default())
            .unwrap()
            .model;
        let r = Reference::new(&p).unwrap();
        (p, r)
    }

    #[test]
    fn full_sampling_converges_in_one_step() {
        let (p, r) = problem(60, 6, 1);
        let c = ClusterConfig::uniform(1, SketchSpec::uniform(60), 2).unwrap();
        let opts = IhsOptions {
            iterations: 1,
            mu: Some(1.0),
            eps: None,
        };
        let rep = dist_ihs(&p, &c, &opts, &r).unwrap();
        let last = rep.trace.last().unwrap();
        assert!(last.rel_x_err < 1e-10);
        assert!(last.cost_gap.abs() < 1e-12);
    }

    #[test]
    fn communication_is_t_q_d() {
        let (p, r) = problem(200, 10, 3);
        let c = ClusterConfig::uniform(4, SketchSpec::gaussian(40), 5).unwrap();
        let rep = dist_ihs(&p, &c, &IhsOptions::fixed(7), &r).unwrap();
        assert_eq!(rep.trace.records.len(), 8);
        assert_eq!(rep.trace.last().unwrap().comm_scalars, 7 * 4 * 10);
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let (p, r) = problem(300, 12, 4);
        let c = ClusterConfig::uniform(5, SketchSpec::gaussian(50), 6).unwrap();
        let a = dist_ihs(&p, &c, &IhsOptions::fixed(3), &r).unwrap();
        let c = c.with_execution(Execution::Parallel);
        let b = dist_ihs(&p, &c, &IhsOptions::fixed(3), &r).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn undefined_default_step_is_reported() {
        let (p, r) = problem(100, 10, 5);
        let c = ClusterConfig::uniform(2, SketchSpec::gaussian(11), 1).unwrap();
        let err = dist_ihs(&p, &c, &IhsOptions::fixed(1), &r).unwrap_err();
        assert!(matches!(err, SolverError::StepUndefined { m: 11, d: 10 }));
    }

    #[test]
    fn rank_deficient_sketch_names_worker() {
        let (p, r) = problem(100, 10, 6);
        let specs = vec![SketchSpec::gaussian(40), SketchSpec::gaussian(5)];
        let c = ClusterConfig::new(specs, 1).unwrap();
        let opts = IhsOptions {
            iterations: 1,
            mu: Some(1.0),
            eps: None,
        };
        match dist_ihs(&p, &c, &opts, &r).unwrap_err() {
            SolverError::Worker { index, .. } => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_lstsq() {
        let mut rng = RngStream::new(1, 0);
        let opts = GenOptions {
            lambda1: 1.0,
            ..Default::default()
        };
        let p = generate_problem(ProblemKind::Ridge, 50, 5, 0.1, &mut rng, &opts).unwrap().model;
        let r = Reference::new(&p).unwrap();
        let c = ClusterConfig::uniform(1, SketchSpec::gaussian(20), 1).unwrap();
        assert!(dist_ihs(&p, &c, &IhsOptions::fixed(1), &r).is_err());
    }

    #[test]
    fn one_step_contraction_small_regime() {
        // Mean one-step ratio over many trials approaches (θ₂/θ₁² − 1)/q.
        let (p, r) = problem(300, 10, 7);
        let (m, q, trials) = (40, 4, 400);
        let mut sum = 0.0;
        for trial in 0..trials {
            let c = ClusterConfig::uniform(q, SketchSpec::gaussian(m), 1000 + trial).unwrap();
            let rep = dist_ihs(&p, &c, &IhsOptions::fixed(1), &r).unwrap();
            sum += rep.trace.records[1].err_a_sq / rep.trace.records[0].err_a_sq;
        }
        let want = ihs_rate(q, m, 10).unwrap();
        let got = sum / trials as f64;
        assert!((got / want - 1.0).abs() < 0.1, "{got} vs {want}");
    }
}
