//! Monte Carlo verification suites. Each suite runs fixed-seed
//! simulations and compares observed quantities with their closed forms.
//!
//! The `*_study` functions return raw observations so callers can apply
//! their own tolerances; [`run_suite`] applies the standard ones.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::Serialize;

use crate::calculus::{
    ihs_rate, lambda2_star_ridge, predict_iterations, step_scalings, theta1, theta2, theta3,
};
use crate::linalg::{qr_thin, Cholesky, DenseMatrix, DenseVector};
use crate::problems::{generate_problem, GenOptions, ProblemKind, ProblemModel};
use crate::rng::RngStream;
use crate::sketch::{apply_sketch, SketchSpec};
use crate::solvers::{
    dist_ihs, dist_newton_sketch, dist_ridge_average, ridge_estimator_stats, single_sketch_direction_stats_grid,
    ClusterConfig, DirectionStats, EstimatorStats, IhsOptions, NewtonCorrection, NewtonOptions, Reference,
    RidgeCorrection, SolverError, StepPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Moments,
    Theta3,
    Thm1,
    Thm2,
    Thm3,
    Thm4,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Suite::Moments, Suite::Theta3, Suite::Thm1, Suite::Thm2, Suite::Thm3, Suite::Thm4];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Moments => "moments",
            Suite::Theta3 => "theta3",
            Suite::Thm1 => "thm1",
            Suite::Thm2 => "thm2",
            Suite::Thm3 => "thm3",
            Suite::Thm4 => "thm4",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?} (expected moments, theta3, thm1, thm2, thm3, thm4)"))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pass condition for one observed number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Limit {
    /// `|observed/target − 1| ≤ tol`.
    Rel { target: f64, tol: f64 },
    /// `|observed − target| ≤ tol`.
    Abs { target: f64, tol: f64 },
    AtMost(f64),
    AtLeast(f64),
    Below(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    /// Theory value shown next to the observation.
    pub predicted: f64,
    pub limit: Limit,
}

impl Check {
    pub fn new(name: impl Into<String>, observed: f64, predicted: f64, limit: Limit) -> Self {
        Self {
            name: name.into(),
            observed,
            predicted,
            limit,
        }
    }

    /// Distance outside the tolerance, in the limit's own units; zero or
    /// negative when passing.
    pub fn margin(&self) -> f64 {
        let o = self.observed;
        let m = match self.limit {
            Limit::Rel { target, tol } => (o / target - 1.0).abs() - tol,
            Limit::Abs { target, tol } => (o - target).abs() - tol,
            Limit::AtMost(x) => o - x,
            Limit::AtLeast(x) => x - o,
            Limit::Below(x) => o - x,
        };
        if m.is_nan() {
            f64::INFINITY
        } else {
            m
        }
    }

    pub fn pass(&self) -> bool {
        match self.limit {
            Limit::Below(_) => self.margin() < 0.0,
            _ => self.margin() <= 0.0,
        }
    }

    fn limit_text(&self) -> String {
        match self.limit {
            Limit::Rel { tol, .. } => format!("within {}% of predicted", tol * 100.0),
            Limit::Abs { target, tol } => format!("within {tol} of {target}"),
            Limit::AtMost(x) => format!("<= {x}"),
            Limit::AtLeast(x) => format!(">= {x}"),
            Limit::Below(x) => format!("< {x}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(Check::pass)
    }

    /// Observed and predicted columns, one row per check; failures carry
    /// the margin by which the tolerance was missed.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:width$}  {:>16}  {:>16}  result\n", "check", "observed", "predicted");
        for c in &self.checks {
            let status = if c.pass() {
                "PASS".to_string()
            } else {
                format!("FAIL (missed {} by {})", c.limit_text(), super::format_g(c.margin(), 4))
            };
            s.push_str(&format!(
                "{:width$}  {:>16}  {:>16}  {status}\n",
                c.name,
                super::format_g(c.observed, 8),
                super::format_g(c.predicted, 8)
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Overrides the suite's Monte Carlo trial count.
    pub trials: Option<usize>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { trials: None, seed: 2024 }
    }
}

#[cfg(feature = "parallel")]
fn map_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>, SolverError>
where
    T: Send,
    F: Fn(usize) -> Result<T, SolverError> + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>, SolverError>
where
    F: Fn(usize) -> Result<T, SolverError>,
{
    (0..n).map(f).collect()
}

/// Sums `f(i)` over `i in 0..trials` in index order.
fn sum_trials<F>(trials: usize, len: usize, f: F) -> Result<Vec<f64>, SolverError>
where
    F: Fn(usize) -> Result<Vec<f64>, SolverError> + Sync,
{
    const CHUNK: usize = 64;
    let mut acc = vec![0.0; len];
    let mut start = 0;
    while start < trials {
        let end = (start + CHUNK).min(trials);
        for v in map_indexed(end - start, |i| f(start + i))? {
            for (a, x) in acc.iter_mut().zip(&v) {
                *a += x;
            }
        }
        start = end;
    }
    Ok(acc)
}

/// Seed for trial `i` of an experiment tagged `tag`.
pub fn derive_seed(seed: u64, tag: u64, i: usize) -> u64 {
    RngStream::new(seed, tag).child(i as u64).next_u64()
}

fn orthonormal(n: usize, d: usize, rng: &mut RngStream) -> Result<DenseMatrix, SolverError> {
    Ok(qr_thin(&DenseMatrix::gaussian(n, d, 1.0, rng))?.0)
}

fn spd_inverse(g: &DenseMatrix) -> Result<DenseMatrix, SolverError> {
    let d = g.rows();
    let ch = Cholesky::factor(g)?;
    let mut inv = DenseMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e.fill(0.0);
        e[j] = 1.0;
        let col = ch.solve(&e);
        for i in 0..d {
            inv.set(i, j, col[i]);
        }
    }
    Ok(inv)
}

fn mean_matrix(sum: &[f64], d: usize, trials: usize) -> DenseMatrix {
    DenseMatrix::new(d, d, sum.iter().map(|v| v / trials as f64).collect()).expect("d x d")
}

/// Monte Carlo means of `W⁻¹` and `W⁻²` for `W = UᵀSᵀSU`, `U` an `n × d`
/// orthonormal basis and `S` Gaussian `m × n`.
pub fn inverse_gram_moments(
    n: usize,
    d: usize,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix), SolverError> {
    let u = orthonormal(n, d, &mut RngStream::new(seed, 0))?;
    let spec = SketchSpec::gaussian(m);
    let base = RngStream::new(seed, 1);
    let sum = sum_trials(trials, 2 * d * d, |i| {
        let su = apply_sketch(&spec, &u, &mut base.child(i as u64))?;
        let inv = spd_inverse(&su.gram())?;
        let sq = crate::linalg::matmul(&inv, &inv)?;
        let mut v = inv.as_slice().to_vec();
        v.extend_from_slice(sq.as_slice());
        Ok(v)
    })?;
    Ok((mean_matrix(&sum[..d * d], d, trials), mean_matrix(&sum[d * d..], d, trials)))
}

/// Monte Carlo means of `(UᵀSᵀSU + λI)⁻¹` for each λ, from shared sketches.
pub fn resolvent_means(
    n: usize,
    d: usize,
    m: usize,
    lambdas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<DenseMatrix>, SolverError> {
    let u = orthonormal(n, d, &mut RngStream::new(seed, 0))?;
    let spec = SketchSpec::gaussian(m);
    let base = RngStream::new(seed, 1);
    let sum = sum_trials(trials, lambdas.len() * d * d, |i| {
        let g = apply_sketch(&spec, &u, &mut base.child(i as u64))?.gram();
        let mut v = Vec::with_capacity(lambdas.len() * d * d);
        for &lam in lambdas {
            let mut gl = g.clone();
            gl.add_diagonal(lam);
            v.extend_from_slice(spd_inverse(&gl)?.as_slice());
        }
        Ok(v)
    })?;
    Ok(sum.chunks(d * d).map(|c| mean_matrix(c, d, trials)).collect())
}

/// `max |diag/target − 1|` and `max |off-diagonal|`.
pub fn identity_deviation(a: &DenseMatrix, target: f64) -> (f64, f64) {
    let (mut diag, mut off) = (0.0f64, 0.0f64);
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if i == j {
                diag = diag.max((a.get(i, j) / target - 1.0).abs());
            } else {
                off = off.max(a.get(i, j).abs());
            }
        }
    }
    (diag, off)
}

pub fn lstsq_problem(n: usize, d: usize, noise: f64, seed: u64) -> Result<(ProblemModel, Reference), SolverError> {
    let mut rng = RngStream::new(seed, 0);
    let p = generate_problem(ProblemKind::Lstsq, n, d, noise, &mut rng, &GenOptions::default())?.model;
    let r = Reference::new(&p)?;
    Ok((p, r))
}

/// Distributed IHS runs of fixed length with the default step 1/θ₁.
#[derive(Debug, Clone)]
pub struct IhsStudy {
    /// `‖Ae₁‖²/‖Ae₀‖²` per trial.
    pub one_step_ratios: Vec<f64>,
    /// First `t` with `‖Ae_t‖² ≤ eps‖Ae₀‖²`, per trial, if reached.
    pub first_passage: Vec<Option<usize>>,
    /// `mean_t ‖Ae_t‖²/‖Ae₀‖²` for `t = 0..=iterations`.
    pub mean_curve: Vec<f64>,
}

impl IhsStudy {
    pub fn mean_ratio(&self) -> f64 {
        self.one_step_ratios.iter().sum::<f64>() / self.one_step_ratios.len() as f64
    }

    /// Mean first-passage count; trials that never pass count as
    /// `iterations + 1`.
    pub fn mean_first_passage(&self) -> f64 {
        let cap = self.mean_curve.len();
        self.first_passage.iter().map(|t| t.unwrap_or(cap) as f64).sum::<f64>() / self.first_passage.len() as f64
    }

    /// First `t` at which the mean curve falls to `eps`.
    pub fn mean_curve_passage(&self, eps: f64) -> Option<usize> {
        self.mean_curve.iter().position(|&r| r <= eps)
    }
}

pub fn ihs_study(
    p: &ProblemModel,
    reference: &Reference,
    m: usize,
    q: usize,
    eps: f64,
    iterations: usize,
    trials: usize,
    seed: u64,
) -> Result<IhsStudy, SolverError> {
    let curves = map_indexed(trials, |i| {
        let c = ClusterConfig::uniform(q, SketchSpec::gaussian(m), derive_seed(seed, q as u64, i))?;
        let rep = dist_ihs(p, &c, &IhsOptions::fixed(iterations), reference)?;
        let e0 = rep.trace.records[0].err_a_sq;
        Ok(rep.trace.records.iter().map(|r| r.err_a_sq / e0).collect::<Vec<f64>>())
    })?;
    let mut mean_curve = vec![0.0; iterations + 1];
    for c in &curves {
        for (a, v) in mean_curve.iter_mut().zip(c) {
            *a += v / trials as f64;
        }
    }
    Ok(IhsStudy {
        one_step_ratios: curves.iter().map(|c| c[1]).collect(),
        first_passage: curves.iter().map(|c| c.iter().position(|&r| r <= eps)).collect(),
        mean_curve,
    })
}

/// Ridge problem with all singular values equal to `sigma` and a planted
/// noiseless target.
pub fn identical_sv_ridge(
    n: usize,
    d: usize,
    lambda1: f64,
    sigma: f64,
    noise: f64,
    seed: u64,
) -> Result<(ProblemModel, Reference), SolverError> {
    let opts = GenOptions {
        identical_sv: true,
        sigma,
        lambda1,
        ..Default::default()
    };
    let mut rng = RngStream::new(seed, 0);
    let p = generate_problem(ProblemKind::Ridge, n, d, noise, &mut rng, &opts)?.model;
    let r = Reference::new(&p)?;
    Ok((p, r))
}

/// Mean relative error of the averaged ridge estimate after `j = 1..=q`
/// workers, for each correction, on common sketches.
pub fn ridge_averaging_curves(
    p: &ProblemModel,
    reference: &Reference,
    m: usize,
    q: usize,
    sigma: f64,
    corrections: &[RidgeCorrection],
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SolverError> {
    corrections
        .iter()
        .map(|&corr| {
            let runs = map_indexed(trials, |i| {
                let c = ClusterConfig::uniform(q, SketchSpec::gaussian(m), derive_seed(seed, 7, i))?;
                let rep = dist_ridge_average(p, &c, corr, sigma, reference)?;
                Ok(rep.trace.records.iter().map(|r| r.rel_x_err).collect::<Vec<_>>())
            })?;
            let mut mean = vec![0.0; q];
            for r in &runs {
                for (a, v) in mean.iter_mut().zip(r) {
                    *a += v / trials as f64;
                }
            }
            Ok(mean)
        })
        .collect()
}

/// Single-sketch ridge statistics for every worker size, each with its own
/// zero-bias λ₂*(k).
pub fn heterogeneous_ridge_bias(
    p: &ProblemModel,
    reference: &Reference,
    m_list: &[usize],
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, EstimatorStats)>, SolverError> {
    m_list
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let l2 = lambda2_star_ridge(p.lambda1(), p.d(), m, sigma)?;
            let stats = ridge_estimator_stats(
                p.a(),
                p.target(),
                &reference.x_star,
                &SketchSpec::gaussian(m),
                l2,
                trials,
                derive_seed(seed, 9, k),
            )?;
            Ok((l2, stats))
        })
        .collect()
}

/// Direction statistics at `1/θ₁` followed by `f·θ₁/θ₂` for each factor,
/// for an `n × d` Gaussian Hessian square root and random gradient.
pub fn step_scaling_stats(
    n: usize,
    d: usize,
    m: usize,
    factors: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<DirectionStats>, SolverError> {
    let mut rng = RngStream::new(seed, 0);
    let h = DenseMatrix::gaussian(n, d, 1.0, &mut rng);
    let g = DenseVector::gaussian(d, 1.0, &mut rng);
    let s = step_scalings(m, d)?;
    let mut alphas = vec![s.alpha_unbiased];
    alphas.extend(factors.iter().map(|f| f * s.alpha_minvar));
    single_sketch_direction_stats_grid(&h, &g, &SketchSpec::gaussian(m), trials, &alphas, 0.0, 0.0, seed ^ 0x5eed)
}

/// Mean cost gap at iteration `iters` of the distributed Newton sketch on
/// a least-squares problem, for each step policy, on common sketches.
pub fn newton_policy_costs(
    p: &ProblemModel,
    reference: &Reference,
    m: usize,
    q: usize,
    iters: usize,
    policies: &[StepPolicy],
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>, SolverError> {
    policies
        .iter()
        .map(|&steps| {
            let gaps = map_indexed(trials, |i| {
                let c = ClusterConfig::uniform(q, SketchSpec::gaussian(m), derive_seed(seed, q as u64, i))?;
                let opts = NewtonOptions {
                    steps,
                    eps: 0.0,
                    max_iters: iters,
                    ..Default::default()
                };
                let rep = dist_newton_sketch(p, &c, &opts, reference)?;
                Ok(rep.trace.records[iters.min(rep.trace.records.len() - 1)].cost_gap)
            })?;
            Ok(gaps.iter().sum::<f64>() / trials as f64)
        })
        .collect()
}

/// Barrier instance of the bias-correction comparison.
pub fn barrier_problem(n: usize, d: usize, lambda1: f64, seed: u64) -> Result<(ProblemModel, Reference), SolverError> {
    let opts = GenOptions {
        lambda1,
        bound: 0.01,
        ..Default::default()
    };
    let mut rng = RngStream::new(seed, 0);
    let p = generate_problem(ProblemKind::Barrier, n, d, 0.0, &mut rng, &opts)?.model;
    let r = Reference::new(&p)?;
    Ok((p, r))
}

/// Mean cost gap per iteration `t = 0..=iters` for each correction mode,
/// on common sketches.
pub fn newton_correction_curves(
    p: &ProblemModel,
    reference: &Reference,
    sketch: SketchSpec,
    q: usize,
    iters: usize,
    corrections: &[NewtonCorrection],
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SolverError> {
    corrections
        .iter()
        .map(|&correction| {
            let runs = map_indexed(trials, |i| {
                let c = ClusterConfig::uniform(q, sketch, derive_seed(seed, 11, i))?;
                let opts = NewtonOptions {
                    correction,
                    eps: 0.0,
                    max_iters: iters,
                    ..Default::default()
                };
                let rep = dist_newton_sketch(p, &c, &opts, reference)?;
                Ok(rep.trace.records.iter().map(|r| r.cost_gap).collect::<Vec<_>>())
            })?;
            let mut mean = vec![0.0; iters + 1];
            for r in &runs {
                for (t, a) in mean.iter_mut().enumerate() {
                    *a += r[t.min(r.len() - 1)] / trials as f64;
                }
            }
            Ok(mean)
        })
        .collect()
}

fn trials_or(opts: &VerifyOptions, default: usize) -> usize {
    opts.trials.unwrap_or(default).max(2)
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport, SolverError> {
    let checks = match suite {
        Suite::Moments => suite_moments(opts)?,
        Suite::Theta3 => suite_theta3(opts)?,
        Suite::Thm1 => suite_thm1(opts)?,
        Suite::Thm2 => suite_thm2(opts)?,
        Suite::Thm3 => suite_thm3(opts)?,
        Suite::Thm4 => suite_thm4(opts)?,
    };
    Ok(SuiteReport { suite, checks })
}

fn suite_moments(opts: &VerifyOptions) -> Result<Vec<Check>, SolverError> {
    let (n, d, m) = (400, 5, 60);
    let (t1, t2) = (theta1(m, d)?, theta2(m, d)?);
    let (inv, sq) = inverse_gram_moments(n, d, m, trials_or(opts, 5000), opts.seed)?;
    let (d1, o1) = identity_deviation(&inv, t1);
    let (d2, o2) = identity_deviation(&sq, t2);
    let mean_diag = |a: &DenseMatrix| (0..d).map(|i| a.get(i, i)).sum::<f64>() / d as f64;
    Ok(vec![
        Check::new("mean diag E[W^-1] vs theta1", mean_diag(&inv), t1, Limit::Rel { target: t1, tol: 0.05 }),
        Check::new("max rel diag error, E[W^-1]", d1, 0.0, Limit::AtMost(0.05)),
        Check::new("max |offdiag|, E[W^-1]", o1, 0.0, Limit::AtMost(0.05)),
        Check::new("mean diag E[W^-2] vs theta2", mean_diag(&sq), t2, Limit::Rel { target: t2, tol: 0.05 }),
        Check::new("max rel diag error, E[W^-2]", d2, 0.0, Limit::AtMost(0.05)),
        Check::new("max |offdiag|, E[W^-2]", o2, 0.0, Limit::AtMost(0.05)),
    ])
}

fn suite_theta3(opts: &VerifyOptions) -> Result<Vec<Check>, SolverError> {
    let (n, d, m) = (4000, 20, 40);
    let lambdas = [0.1, 1.0, 10.0];
    let means = resolvent_means(n, d, m, &lambdas, trials_or(opts, 2000), opts.seed)?;
    let gamma = d as f64 / m as f64;
    let mut checks = Vec::new();
    for (lam, mean) in lambdas.iter().zip(&means) {
        let t3 = theta3(gamma, *lam)?;
        let (dev, _) = identity_deviation(mean, t3);
        let avg = (0..d).map(|i| mean.get(i, i)).sum::<f64>() / d as f64;
        checks.push(Check::new(format!("lambda={lam}: mean diag vs theta3"), avg, t3, Limit::Rel { target: t3, tol: 0.05 }));
        checks.push(Check::new(format!("lambda={lam}: max rel diag error"), dev, 0.0, Limit::AtMost(0.05)));
    }
    Ok(checks)
}

fn suite_thm1(opts: &VerifyOptions) -> Result<Vec<Check>, SolverError> {
    let (n, d, m, eps) = (1000, 50, 150, 1e-6);
    let trials = trials_or(opts, 200);
    let (p, r) = lstsq_problem(n, d, 0.5, opts.seed)?;
    let mut checks = Vec::new();
    for q in [1, 4, 8] {
        let rate = ihs_rate(q, m, d)?;
        let pred = predict_iterations(eps, q, m, d)?;
        let study = ihs_study(&p, &r, m, q, eps, pred.ceil() as usize + 4, trials, opts.seed)?;
        checks.push(Check::new(
            format!("q={q}: one-step errA ratio"),
            study.mean_ratio(),
            rate,
            Limit::Rel { target: rate, tol: 0.10 },
        ));
        checks.push(Check::new(
            format!("q={q}: mean iterations to eps=1e-6"),
            study.mean_first_passage(),
            pred.ceil(),
            Limit::Abs { target: pred.ceil(), tol: 1.0 },
        ));
    }
    Ok(checks)
}

fn suite_thm2(opts: &VerifyOptions) -> Result<Vec<Check>, SolverError> {
    let (n, d, m, l1, sigma) = (1000, 100, 20, 5.0, 1.0);
    let (p, r) = identical_sv_ridge(n, d, l1, sigma, 0.0, opts.seed)?;
    let reps = trials_or(opts, 5).min(5);
    let curves = ridge_averaging_curves(
        &p,
        &r,
        m,
        400,
        sigma,
        &[RidgeCorrection::ZeroBias, RidgeCorrection::Vanilla],
        reps,
        opts.seed,
    )?;
    let (zb, va) = (&curves[0], &curves[1]);
    let mut checks = vec![
        Check::new("q=100: zero-bias / vanilla error", zb[99] / va[99], 0.0, Limit::AtMost(0.2)),
        Check::new("vanilla error q=100 / q=400", va[99] / va[399], 1.0, Limit::Below(1.25)),
        Check::new("zero-bias error q=100 / q=400", zb[99] / zb[399], 2.0, Limit::AtLeast(1.5)),
    ];
    let (hd, hn) = (50, 400);
    let (hp, hr) = identical_sv_ridge(hn, hd, 1.0, sigma, 0.5, opts.seed + 1)?;
    let m_list = [2 * hd, 4 * hd, 8 * hd];
    for (k, (l2, s)) in heterogeneous_ridge_bias(&hp, &hr, &m_list, sigma, trials_or(opts, 3000), opts.seed)?
        .iter()
        .enumerate()
    {
        checks.push(Check::new(
            format!("worker {k} (m={}, lambda2*={}): bias / se", m_list[k], super::format_g(*l2, 4)),
            s.bias_norm / s.bias_se,
            0.0,
            Limit::AtMost(3.0),
        ));
    }
    Ok(checks)
}

fn suite_thm3(opts: &VerifyOptions) -> Result<Vec<Check>, SolverError> {
    let (d, m) = (200, 400);
    let factors = [0.8, 0.9, 1.0, 1.1, 1.2];
    let stats = step_scaling_stats(d, d, m, &factors, trials_or(opts, 5000), opts.seed)?;
    let unb = stats[0];
    let grid = &stats[1..];
    let best = grid[2].mean_sq_error;
    let others = grid
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != 2)
        .map(|(_, s)| s.mean_sq_error)
        .fold(f64::INFINITY, f64::min);
    let mut checks = vec![
        Check::new("alpha=1/theta1: bias / se", unb.bias_norm / unb.bias_se, 0.0, Limit::AtMost(3.0)),
        Check::new("min grid MSE / MSE at theta1/theta2", others / best, 1.0, Limit::AtLeast(1.0)),
    ];
    let (p, r) = lstsq_problem(1000, d, 1.0, opts.seed)?;
    let reps = trials_or(opts, 3).min(3);
    for q in [10, 2] {
        let c = newton_policy_costs(
            &p,
            &r,
            m,
            q,
            10,
            &[StepPolicy::Unbiased, StepPolicy::MinVariance],
            reps,
            opts.seed,
        )?;
        let ratio = c[0] / c[1];
        // Expected one-step contraction (αθ₁ − 1)² + α²(θ₂ − θ₁²)/q, compounded.
        let (s, t1, t2) = (step_scalings(m, d)?, theta1(m, d)?, theta2(m, d)?);
        let rate = |a: f64| (a * t1 - 1.0).powi(2) + a * a * (t2 - t1 * t1) / q as f64;
        let predicted = (rate(s.alpha_unbiased) / rate(s.alpha_minvar)).powi(10);
        let limit = if q == 10 { Limit::Below(1.0) } else { Limit::AtLeast(1.0) };
        checks.push(Check::new(format!("q={q}: cost unbiased / min-variance at t=10"), ratio, predicted, limit));
    }
    Ok(checks)
}

fn suite_thm4(opts: &VerifyOptions) -> Result<Vec<Check>, SolverError> {
    let (n, d, l1, m, q, iters) = (500, 200, 1000.0, 50, 10, 15);
    let (p, r) = barrier_problem(n, d, l1, opts.seed)?;
    let reps = trials_or(opts, 4).min(4);
    let mut checks = Vec::new();
    for sketch in [SketchSpec::gaussian(m), SketchSpec::sjlt(m, 10)] {
        let curves = newton_correction_curves(
            &p,
            &r,
            sketch,
            q,
            iters,
            &[NewtonCorrection::BiasCorrected, NewtonCorrection::Vanilla],
            reps,
            opts.seed,
        )?;
        let wins = (5..=iters).filter(|&t| curves[0][t] <= curves[1][t]).count();
        let total = iters - 4;
        checks.push(Check::new(
            format!("{sketch}: iterations 5..{iters} where corrected <= vanilla"),
            wins as f64,
            total as f64,
            Limit::AtLeast(total as f64),
        ));
        checks.push(Check::new(
            format!("{sketch}: final cost gap corrected / vanilla"),
            curves[0][iters] / curves[1][iters],
            0.0,
            Limit::AtMost(1.0),
        ));
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_margins() {
        assert!(Check::new("a", 1.04, 1.0, Limit::Rel { target: 1.0, tol: 0.05 }).pass());
        let c = Check::new("a", 1.2, 1.0, Limit::Rel { target: 1.0, tol: 0.05 });
        assert!(!c.pass());
        assert!((c.margin() - 0.15).abs() < 1e-12);
        assert!(!Check::new("b", 1.25, 0.0, Limit::Below(1.25)).pass());
        assert!(Check::new("b", 1.2, 0.0, Limit::Below(1.25)).pass());
        assert!(!Check::new("c", f64::NAN, 0.0, Limit::AtMost(1.0)).pass());
    }

    #[test]
    fn small_moment_study_is_close() {
        let (inv, _) = inverse_gram_moments(50, 3, 30, 800, 1).unwrap();
        let (dev, off) = identity_deviation(&inv, theta1(30, 3).unwrap());
        assert!(dev < 0.1 && off < 0.1, "{dev} {off}");
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("thm9".parse::<Suite>().is_err());
    }

    #[test]
    fn table_reports_margin_on_failure() {
        let r = SuiteReport {
            suite: Suite::Moments,
            checks: vec![Check::new("x", 2.0, 1.0, Limit::AtMost(1.5))],
        };
        assert!(!r.pass());
        assert!(r.table().contains("FAIL (missed <= 1.5 by 0.5)"), "{}", r.table());
    }
}
