//! Master/worker simulation and the three averaging algorithms.
//!
//! Workers run in-process. A round hands every worker the same read-only
//! inputs, collects outputs ordered by worker index, and fails fast on
//! the first (lowest-index) worker error. Averages are always summed in
//! index order, so serial and parallel execution agree bit for bit.

mod ihs;
mod newton;
mod ridge;
mod stats;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::CalcError;
use crate::linalg::{solve_spd, DenseVector, LinalgError};
use crate::problems::{ProblemError, ProblemKind, ProblemModel};
use crate::rng::RngStream;
use crate::sketch::{SketchError, SketchSpec};

pub use ihs::{dist_ihs, IhsOptions};
pub use newton::{dist_newton_sketch, NewtonCorrection, NewtonOptions, StepPolicy};
pub use ridge::{dist_ridge_average, ridge_lambda2, RidgeCorrection};
pub use stats::{
    ridge_estimator_stats, single_sketch_direction_stats, single_sketch_direction_stats_grid, DirectionStats,
    EstimatorStats,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("worker {index} failed: {source}")]
    Worker {
        index: usize,
        #[source]
        source: Box<SolverError>,
    },
    #[error("default step 1/theta1 needs m > d + 1 (got m={m}, d={d}); pass an explicit mu")]
    StepUndefined { m: usize, d: usize },
    #[error("normal equations are singular: {0}")]
    Rank(LinalgError),
    #[error("{algorithm} does not support {kind} problems")]
    UnsupportedProblem { algorithm: &'static str, kind: ProblemKind },
    #[error("direct solve did not converge after {iters} Newton steps (gradient norm {grad_norm:e})")]
    NoConvergence { iters: usize, grad_norm: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

impl SolverError {
    /// True for errors caused by the inputs (infeasible corrections, bad
    /// shapes, invalid configs) rather than by the run itself.
    pub fn is_input_error(&self) -> bool {
        match self {
            SolverError::Worker { source, .. } => source.is_input_error(),
            SolverError::StepUndefined { .. }
            | SolverError::UnsupportedProblem { .. }
            | SolverError::Config(_)
            | SolverError::Calc(_)
            | SolverError::Sketch(_) => true,
            SolverError::Problem(ProblemError::DomainViolation { .. }) => false,
            SolverError::Problem(_) => true,
            _ => false,
        }
    }
}

/// One worker: its sketch and its private random stream.
#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub sketch: SketchSpec,
    pub stream: RngStream,
}

impl WorkerConfig {
    pub fn m(&self) -> usize {
        self.sketch.m
    }

    /// Stream for round `t`: a function of the worker identity and `t`
    /// only, so rounds are reproducible in any execution order.
    pub fn round_stream(&self, t: usize) -> RngStream {
        self.stream.child(t as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Serial,
    Parallel,
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub workers: Vec<WorkerConfig>,
    pub master_seed: u64,
    pub execution: Execution,
    /// Data rows are split across workers, so the gradient needs its own
    /// communication round.
    pub partitioned: bool,
}

impl ClusterConfig {
    /// Worker `k` gets stream id `k + 1` under `master_seed`; id 0 is left
    /// for the master.
    pub fn new(sketches: Vec<SketchSpec>, master_seed: u64) -> Result<Self, SolverError> {
        if sketches.is_empty() {
            return Err(SolverError::Config("a cluster needs at least one worker".into()));
        }
        for s in &sketches {
            s.validate()?;
        }
        let workers = sketches
            .into_iter()
            .enumerate()
            .map(|(k, sketch)| WorkerConfig {
                sketch,
                stream: RngStream::new(master_seed, k as u64 + 1),
            })
            .collect();
        Ok(Self {
            workers,
            master_seed,
            execution: Execution::Serial,
            partitioned: false,
        })
    }

    pub fn uniform(q: usize, sketch: SketchSpec, master_seed: u64) -> Result<Self, SolverError> {
        Self::new(vec![sketch; q], master_seed)
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_partitioned(mut self, partitioned: bool) -> Self {
        self.partitioned = partitioned;
        self
    }

    pub fn q(&self) -> usize {
        self.workers.len()
    }

    pub fn m_list(&self) -> Vec<usize> {
        self.workers.iter().map(WorkerConfig::m).collect()
    }

    /// Common sketch size, if every worker uses the same one.
    pub fn common_m(&self) -> Option<usize> {
        let m = self.workers[0].m();
        self.workers.iter().all(|w| w.m() == m).then_some(m)
    }

    /// Row block owned by worker `k` when data is partitioned.
    pub fn row_block(&self, k: usize, n: usize) -> std::ops::Range<usize> {
        let q = self.q();
        (k * n / q)..((k + 1) * n / q)
    }
}

/// Runs `task` once per worker and returns outputs in worker order.
/// The first failing worker (by index) is reported; nothing is averaged
/// from a failed round.
pub fn run_cluster_round<T, F>(cluster: &ClusterConfig, task: F) -> Result<Vec<T>, SolverError>
where
    T: Send,
    F: Fn(usize, &WorkerConfig) -> Result<T, SolverError> + Sync,
{
    let results = map_workers(cluster, &task);
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| SolverError::Worker {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn map_workers<T, F>(cluster: &ClusterConfig, task: &F) -> Vec<Result<T, SolverError>>
where
    T: Send,
    F: Fn(usize, &WorkerConfig) -> Result<T, SolverError> + Sync,
{
    use rayon::prelude::*;
    match cluster.execution {
        Execution::Parallel => cluster.workers.par_iter().enumerate().map(|(k, w)| task(k, w)).collect(),
        Execution::Serial => cluster.workers.iter().enumerate().map(|(k, w)| task(k, w)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_workers<T, F>(cluster: &ClusterConfig, task: &F) -> Vec<Result<T, SolverError>>
where
    F: Fn(usize, &WorkerConfig) -> Result<T, SolverError>,
{
    cluster.workers.iter().enumerate().map(|(k, w)| task(k, w)).collect()
}

/// `(1/q) Σ wₖ vₖ`, summed in index order.
pub fn weighted_average(vs: &[DenseVector], weights: &[f64]) -> DenseVector {
    assert_eq!(vs.len(), weights.len());
    let mut out = DenseVector::zeros(vs[0].len());
    for (v, &w) in vs.iter().zip(weights) {
        out.axpy(w, v);
    }
    out.scale_in_place(1.0 / vs.len() as f64);
    out
}

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// `(f(x_t) − f*)/|f*|`, or the plain gap when `f* = 0`.
    pub cost_gap: f64,
    /// `‖A(x_t − x*)‖²`.
    pub err_a_sq: f64,
    /// `‖x_t − x*‖ / ‖x*‖`.
    pub rel_x_err: f64,
    pub comm_scalars: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub const CSV_HEADER: &'static str = "t,cost_gap,errA_sq,rel_x_err,comm_scalars,wall_time_s";

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{},{:e}\n",
                r.t, r.cost_gap, r.err_a_sq, r.rel_x_err, r.comm_scalars, r.wall_time
            ));
        }
        s
    }
}

/// Regularization and step actually used by one worker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub worker: usize,
    pub m: usize,
    pub lambda2: f64,
    pub alpha: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub x: Vec<f64>,
    pub trace: ConvergenceTrace,
    /// Per-worker values from the first round.
    pub corrections: Vec<CorrectionRecord>,
    pub predicted_iterations: Option<f64>,
    pub observed_iterations: Option<usize>,
    pub warnings: Vec<String>,
}

/// Optimum and optimal value used to score iterates.
#[derive(Debug, Clone)]
pub struct Reference {
    pub x_star: DenseVector,
    pub f_star: f64,
    a_x_star: DenseVector,
    x_star_norm: f64,
}

impl Reference {
    pub fn new(p: &ProblemModel) -> Result<Self, SolverError> {
        let x_star = solve_direct(p)?;
        Self::from_solution(p, x_star)
    }

    pub fn from_solution(p: &ProblemModel, x_star: DenseVector) -> Result<Self, SolverError> {
        let f_star = p.objective(&x_star)?;
        let a_x_star = p.a().matvec(&x_star);
        let x_star_norm = x_star.norm();
        Ok(Self {
            x_star,
            f_star,
            a_x_star,
            x_star_norm,
        })
    }

    pub fn record(
        &self,
        p: &ProblemModel,
        x: &[f64],
        t: usize,
        comm_scalars: u64,
        wall_time: f64,
    ) -> Result<TraceRecord, SolverError> {
        let f = p.objective(x)?;
        let denom = if self.f_star != 0.0 { self.f_star.abs() } else { 1.0 };
        let ax = p.a().matvec(x);
        let err_a_sq = ax.sub(&self.a_x_star).norm_sq();
        let dx = DenseVector::from(x.to_vec()).sub(&self.x_star).norm();
        let rel_x_err = if self.x_star_norm > 0.0 { dx / self.x_star_norm } else { dx };
        Ok(TraceRecord {
            t,
            cost_gap: (f - self.f_star) / denom,
            err_a_sq,
            rel_x_err,
            comm_scalars,
            wall_time,
        })
    }
}

/// Elapsed seconds since `start`.
pub(crate) fn seconds_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Exact optimum: normal equations for the quadratic kinds, damped
/// Newton with exact Hessians otherwise.
pub fn solve_direct(p: &ProblemModel) -> Result<DenseVector, SolverError> {
    let d = p.d();
    if p.kind().is_quadratic() {
        let mut h = p.a().gram();
        h.add_diagonal(p.effective_lambda());
        let rhs = p.a().t_matvec(p.target());
        return solve_spd(&h, &rhs).map_err(SolverError::Rank);
    }
    let mut x = DenseVector::zeros(d);
    let g0 = p.gradient(&x)?.norm();
    let tol = 1e-10 * (1.0 + g0);
    let max_iters = 200;
    for _ in 0..max_iters {
        let g = p.gradient(&x)?;
        if g.norm() <= tol {
            return Ok(x);
        }
        let hf = p.hessian_factor(&x)?;
        let mut h = hf.half.gram();
        h.add_diagonal(hf.reg_mult * p.lambda1());
        let dir = solve_spd(&h, &g).map_err(SolverError::Rank)?.scaled(-1.0);
        let slope = g.dot(&dir);
        let f = p.objective(&x)?;
        // Newton decrement at rounding level: f(x) − f* ≈ −slope/2 is below
        // what f can resolve, even if ill-conditioning keeps ‖g‖ above tol.
        if -0.5 * slope <= 1e-15 * (1.0 + f.abs()) {
            return Ok(x);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut xn = x.clone();
            xn.axpy(step, &dir);
            if p.in_domain(&xn) {
                let fnew = p.objective(&xn)?;
                if fnew <= f + 1e-4 * step * slope {
                    x = xn;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // No decrease representable in floating point: x is optimal to
            // working precision.
            return Ok(x);
        }
    }
    let grad_norm = p.gradient(&x)?.norm();
    if grad_norm <= 1e-8 * (1.0 + g0) {
        Ok(x)
    } else {
        Err(SolverError::NoConvergence {
            iters: max_iters,
            grad_norm,
        })
    }
}
