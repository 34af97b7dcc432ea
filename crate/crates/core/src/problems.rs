//! Optimization problems consumed by the solvers: least squares, ridge,
//! ℓ₂-regularized logistic regression, and a log-barrier formulation of
//! `min ‖x − c‖² s.t. ‖Ax‖_∞ ≤ bound`.
//!
//! Each model exposes objective, gradient, and a Hessian square root
//! `half` with `H = halfᵀ·half + reg_mult·λ₁·I`. For the quadratic kinds
//! the objective carries a ½ so that `half = A` exactly:
//!
//! * lstsq:    ½‖Ax − b‖²
//! * ridge:    ½‖Ax − b‖² + (λ₁/2)‖x‖²
//! * logistic: Σ [log(1 + e^{aᵢᵀx}) − yᵢ aᵢᵀx] + (λ₁/2)‖x‖²
//! * barrier:  −Σ log(bound − aᵢᵀx) − Σ log(bound + aᵢᵀx) + λ₁‖x − c‖²

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    make_identical_singular_matrix, singular_values, DenseMatrix, DenseVector, LinalgError,
};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("domain violation: worst constraint margin {margin:e} (need ‖Ax‖_∞ < bound)")]
    DomainViolation { margin: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Lstsq,
    Ridge,
    Logistic,
    Barrier,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Lstsq => "lstsq",
            ProblemKind::Ridge => "ridge",
            ProblemKind::Logistic => "logistic",
            ProblemKind::Barrier => "barrier",
        }
    }

    /// Coefficient on λ₁I in the Hessian.
    pub fn reg_mult(self) -> f64 {
        match self {
            ProblemKind::Lstsq => 0.0,
            ProblemKind::Ridge | ProblemKind::Logistic => 1.0,
            ProblemKind::Barrier => 2.0,
        }
    }

    pub fn is_quadratic(self) -> bool {
        matches!(self, ProblemKind::Lstsq | ProblemKind::Ridge)
    }

    pub fn default_sigma_mode(self) -> SigmaMode {
        match self {
            ProblemKind::Lstsq | ProblemKind::Ridge => SigmaMode::MeanSv,
            ProblemKind::Logistic => SigmaMode::MeanDiag,
            ProblemKind::Barrier => SigmaMode::MinSv,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstsq" => Ok(ProblemKind::Lstsq),
            "ridge" => Ok(ProblemKind::Ridge),
            "logistic" => Ok(ProblemKind::Logistic),
            "barrier" => Ok(ProblemKind::Barrier),
            other => Err(ProblemError::Invalid(format!(
                "unknown problem kind {other:?} (expected lstsq, ridge, logistic, barrier)"
            ))),
        }
    }
}

/// How to pick σ for the bias-correction formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// Mean singular value of the Hessian square root.
    MeanSv,
    /// Mean of the row weights `w` in `half = diag(w)·A` (√(p(1−p)) for
    /// logistic, |1/margin| for barrier, 1 for the quadratic kinds).
    MeanDiag,
    /// Smallest singular value of the Hessian square root.
    MinSv,
}

/// `H = halfᵀ·half + reg_mult·λ₁·I`.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    pub half: DenseMatrix,
    pub reg_mult: f64,
    /// Row weights with `half = diag(weights)·A` (A stacked as `[A; −A]`
    /// for barrier).
    pub weights: DenseVector,
}

#[derive(Debug, Clone)]
pub struct ProblemModel {
    kind: ProblemKind,
    a: DenseMatrix,
    /// `b` (lstsq/ridge), `y` (logistic) or `c` (barrier).
    target: DenseVector,
    lambda1: f64,
    bound: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ProblemModel {
    pub fn least_squares(a: DenseMatrix, b: DenseVector) -> Result<Self, ProblemError> {
        Self::check_rows(&a, &b, "b")?;
        Ok(Self {
            kind: ProblemKind::Lstsq,
            a,
            target: b,
            lambda1: 0.0,
            bound: 0.0,
        })
    }

    pub fn ridge(a: DenseMatrix, b: DenseVector, lambda1: f64) -> Result<Self, ProblemError> {
        Self::check_rows(&a, &b, "b")?;
        Self::check_lambda(lambda1)?;
        Ok(Self {
            kind: ProblemKind::Ridge,
            a,
            target: b,
            lambda1,
            bound: 0.0,
        })
    }

    pub fn logistic(a: DenseMatrix, y: DenseVector, lambda1: f64) -> Result<Self, ProblemError> {
        Self::check_rows(&a, &y, "y")?;
        Self::check_lambda(lambda1)?;
        if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(ProblemError::Invalid(format!(
                "logistic labels must be 0 or 1, y[{i}] = {}",
                y[i]
            )));
        }
        Ok(Self {
            kind: ProblemKind::Logistic,
            a,
            target: y,
            lambda1,
            bound: 0.0,
        })
    }

    pub fn barrier(a: DenseMatrix, c: DenseVector, lambda1: f64, bound: f64) -> Result<Self, ProblemError> {
        if c.len() != a.cols() {
            return Err(ProblemError::Dimension(format!(
                "c has length {} but A has {} columns",
                c.len(),
                a.cols()
            )));
        }
        Self::check_lambda(lambda1)?;
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(ProblemError::Invalid(format!("barrier bound must be positive, got {bound}")));
        }
        Ok(Self {
            kind: ProblemKind::Barrier,
            a,
            target: c,
            lambda1,
            bound,
        })
    }

    fn check_rows(a: &DenseMatrix, v: &DenseVector, name: &str) -> Result<(), ProblemError> {
        if v.len() != a.rows() {
            return Err(ProblemError::Dimension(format!(
                "{name} has length {} but A has {} rows",
                v.len(),
                a.rows()
            )));
        }
        Ok(())
    }

    fn check_lambda(lambda1: f64) -> Result<(), ProblemError> {
        if !(lambda1 >= 0.0) || !lambda1.is_finite() {
            return Err(ProblemError::Invalid(format!("lambda1 must be non-negative, got {lambda1}")));
        }
        Ok(())
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn target(&self) -> &DenseVector {
        &self.target
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// Barrier half-width; 0 for other kinds.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    /// `reg_mult·λ₁`, the regularization actually present in the Hessian.
    pub fn effective_lambda(&self) -> f64 {
        self.kind.reg_mult() * self.lambda1
    }

    fn check_x(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.d() {
            return Err(ProblemError::Dimension(format!(
                "x has length {} but the problem has d = {}",
                x.len(),
                self.d()
            )));
        }
        Ok(())
    }

    /// `Ax`, plus the barrier domain check.
    fn predictions(&self, x: &[f64]) -> Result<DenseVector, ProblemError> {
        self.check_x(x)?;
        let z = self.a.matvec(x);
        if self.kind == ProblemKind::Barrier {
            let margin = self.bound - z.max_abs();
            if !(margin > 0.0) {
                return Err(ProblemError::DomainViolation { margin });
            }
        }
        Ok(z)
    }

    /// Whether `x` lies strictly inside the barrier domain (always true
    /// for the other kinds).
    pub fn in_domain(&self, x: &[f64]) -> bool {
        self.kind != ProblemKind::Barrier || self.bound - self.a.matvec(x).max_abs() > 0.0
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64, ProblemError> {
        let z = self.predictions(x)?;
        let xx = crate::linalg::dot(x, x);
        Ok(match self.kind {
            ProblemKind::Lstsq | ProblemKind::Ridge => {
                let r = z.sub(&self.target);
                0.5 * r.norm_sq() + 0.5 * self.lambda1 * xx
            }
            ProblemKind::Logistic => {
                let loss: f64 = z
                    .iter()
                    .zip(self.target.iter())
                    .map(|(&zi, &yi)| softplus(zi) - yi * zi)
                    .sum();
                loss + 0.5 * self.lambda1 * xx
            }
            ProblemKind::Barrier => {
                let lam = self.bound;
                let logs: f64 = z.iter().map(|&zi| (lam - zi).ln() + (lam + zi).ln()).sum();
                let dx = DenseVector::from(x.to_vec()).sub(&self.target);
                -logs + self.lambda1 * dx.norm_sq()
            }
        })
    }

    /// Per-row derivative of the data term with respect to `aᵢᵀx`.
    fn row_derivs(&self, z: &[f64], rows: Range<usize>) -> Vec<f64> {
        let lam = self.bound;
        rows.map(|i| {
            let zi = z[i];
            match self.kind {
                ProblemKind::Lstsq | ProblemKind::Ridge => zi - self.target[i],
                ProblemKind::Logistic => sigmoid(zi) - self.target[i],
                ProblemKind::Barrier => 1.0 / (lam - zi) - 1.0 / (lam + zi),
            }
        })
        .collect()
    }

    /// Gradient of the regularizer alone.
    pub fn reg_gradient(&self, x: &[f64]) -> DenseVector {
        match self.kind {
            ProblemKind::Barrier => {
                DenseVector::from(x.to_vec()).sub(&self.target).scaled(2.0 * self.lambda1)
            }
            _ => DenseVector::from(x.to_vec()).scaled(self.lambda1),
        }
    }

    /// Data-term gradient restricted to the rows in `rows`; summing over a
    /// partition of `0..n` and adding [`reg_gradient`](Self::reg_gradient)
    /// gives the full gradient.
    pub fn partial_gradient(&self, x: &[f64], rows: Range<usize>) -> Result<DenseVector, ProblemError> {
        if rows.end > self.n() || rows.start > rows.end {
            return Err(ProblemError::Dimension(format!(
                "row range {rows:?} outside 0..{}",
                self.n()
            )));
        }
        let z = self.predictions(x)?;
        let w = self.row_derivs(&z, rows.clone());
        let mut g = DenseVector::zeros(self.d());
        for (k, i) in rows.enumerate() {
            g.axpy(w[k], self.a.row(i));
        }
        Ok(g)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<DenseVector, ProblemError> {
        let z = self.predictions(x)?;
        let w = self.row_derivs(&z, 0..self.n());
        let mut g = self.a.t_matvec(&w);
        g.axpy(1.0, &self.reg_gradient(x));
        Ok(g)
    }

    pub fn hessian_factor(&self, x: &[f64]) -> Result<HessianFactor, ProblemError> {
        let z = self.predictions(x)?;
        let reg_mult = self.kind.reg_mult();
        Ok(match self.kind {
            ProblemKind::Lstsq | ProblemKind::Ridge => HessianFactor {
                half: self.a.clone(),
                reg_mult,
                weights: DenseVector::filled(self.n(), 1.0),
            },
            ProblemKind::Logistic => {
                let w: Vec<f64> = z
                    .iter()
                    .map(|&zi| {
                        let p = sigmoid(zi);
                        (p * (1.0 - p)).sqrt()
                    })
                    .collect();
                HessianFactor {
                    half: self.a.scale_rows(&w),
                    reg_mult,
                    weights: DenseVector::from(w),
                }
            }
            ProblemKind::Barrier => {
                // D = diag(1/(A_c x − bound)) with A_c = [A; −A]; both
                // halves of the diagonal are negative inside the domain.
                let lam = self.bound;
                let n = self.n();
                let mut w = Vec::with_capacity(2 * n);
                w.extend(z.iter().map(|&zi| 1.0 / (zi - lam)));
                w.extend(z.iter().map(|&zi| 1.0 / (-zi - lam)));
                let ac = self.a.vstack(&self.a.scaled(-1.0))?;
                HessianFactor {
                    half: ac.scale_rows(&w),
                    reg_mult,
                    weights: DenseVector::from(w),
                }
            }
        })
    }

    /// `H·v` computed through the Hessian factor.
    pub fn hessian_vec(&self, x: &[f64], v: &[f64]) -> Result<DenseVector, ProblemError> {
        self.check_x(v)?;
        let hf = self.hessian_factor(x)?;
        let mut out = hf.half.t_matvec(&hf.half.matvec(v));
        out.axpy(hf.reg_mult * self.lambda1, v);
        Ok(out)
    }

    pub fn sigma_heuristic(&self, x: &[f64], mode: SigmaMode) -> Result<f64, ProblemError> {
        let hf = self.hessian_factor(x)?;
        let s = match mode {
            SigmaMode::MeanSv => {
                let sv = singular_values(&hf.half)?;
                sv.iter().sum::<f64>() / sv.len() as f64
            }
            SigmaMode::MinSv => {
                let sv = singular_values(&hf.half)?;
                sv[sv.len() - 1]
            }
            SigmaMode::MeanDiag => hf.weights.iter().map(|w| w.abs()).sum::<f64>() / hf.weights.len() as f64,
        };
        if !(s > 0.0) || !s.is_finite() {
            return Err(ProblemError::Invalid(format!(
                "sigma heuristic {mode:?} produced {s}; the Hessian factor is rank deficient"
            )));
        }
        Ok(s)
    }
}

/// Generation knobs; `Default` gives the settings used by the shipped
/// experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenOptions {
    /// Draw `A` with all singular values equal to `sigma`.
    pub identical_sv: bool,
    pub sigma: f64,
    pub lambda1: f64,
    /// Barrier half-width.
    pub bound: f64,
    /// Entry standard deviation for Gaussian `A`; `None` picks `1/√n` for
    /// lstsq/ridge and 1 for logistic/barrier.
    pub a_scale: Option<f64>,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            identical_sv: false,
            sigma: 1.0,
            lambda1: 0.0,
            bound: 0.01,
            a_scale: None,
        }
    }
}

/// A generated problem together with its planted parameter.
#[derive(Debug, Clone)]
pub struct GeneratedProblem {
    pub model: ProblemModel,
    /// Unit-norm planted `x₀` (also `c` for barrier).
    pub x0: DenseVector,
}

pub fn generate_problem(
    kind: ProblemKind,
    n: usize,
    d: usize,
    noise: f64,
    rng: &mut RngStream,
    opts: &GenOptions,
) -> Result<GeneratedProblem, ProblemError> {
    if d == 0 || n < d {
        return Err(ProblemError::Invalid(format!("need n >= d >= 1, got n={n}, d={d}")));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(ProblemError::Invalid(format!("noise must be non-negative, got {noise}")));
    }
    let a = if opts.identical_sv {
        make_identical_singular_matrix(n, d, opts.sigma, rng)?
    } else {
        let std = opts.a_scale.unwrap_or(if kind.is_quadratic() {
            1.0 / (n as f64).sqrt()
        } else {
            1.0
        });
        DenseMatrix::gaussian(n, d, std, rng)
    };
    let mut x0 = DenseVector::gaussian(d, 1.0, rng);
    let norm = x0.norm();
    x0.scale_in_place(1.0 / norm);

    let model = match kind {
        ProblemKind::Lstsq | ProblemKind::Ridge => {
            let mut b = a.matvec(&x0);
            if noise > 0.0 {
                let eps = DenseVector::gaussian(n, noise, rng);
                b.axpy(1.0, &eps);
            }
            if kind == ProblemKind::Lstsq {
                ProblemModel::least_squares(a, b)?
            } else {
                ProblemModel::ridge(a, b, opts.lambda1)?
            }
        }
        ProblemKind::Logistic => {
            let z = a.matvec(&x0);
            let y: Vec<f64> = z
                .iter()
                .map(|&zi| if rng.uniform() < sigmoid(zi) { 1.0 } else { 0.0 })
                .collect();
            ProblemModel::logistic(a, DenseVector::from(y), opts.lambda1)?
        }
        ProblemKind::Barrier => ProblemModel::barrier(a, x0.clone(), opts.lambda1, opts.bound)?,
    };
    Ok(GeneratedProblem { model, x0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve_spd, t_matmul};
    use proptest::prelude::*;

    fn gen(kind: ProblemKind, n: usize, d: usize, seed: u64, opts: GenOptions) -> GeneratedProblem {
        let mut rng = RngStream::new(seed, 0);
        generate_problem(kind, n, d, 0.1, &mut rng, &opts).unwrap()
    }

    fn all_kinds(seed: u64) -> Vec<ProblemModel> {
        let ridge = GenOptions {
            lambda1: 0.7,
            ..Default::default()
        };
        let barrier = GenOptions {
            lambda1: 2.0,
            bound: 3.0,
            a_scale: Some(0.3),
            ..Default::default()
        };
        vec![
            gen(ProblemKind::Lstsq, 30, 6, seed, GenOptions::default()).model,
            gen(ProblemKind::Ridge, 30, 6, seed, ridge).model,
            gen(ProblemKind::Logistic, 30, 6, seed, ridge).model,
            gen(ProblemKind::Barrier, 30, 6, seed, barrier).model,
        ]
    }

    /// Random point inside the barrier domain (anything for other kinds).
    fn random_point(p: &ProblemModel, rng: &mut RngStream) -> DenseVector {
        let mut x = DenseVector::gaussian(p.d(), 1.0, rng);
        if p.kind() == ProblemKind::Barrier {
            let worst = p.a().matvec(&x).max_abs();
            x.scale_in_place(0.8 * p.bound() * rng.uniform() / worst);
        }
        x
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den.max(1e-12)
    }

    #[test]
    fn objective_examples() {
        let g = gen(ProblemKind::Lstsq, 40, 5, 1, GenOptions::default());
        let p = &g.model;
        let xstar = solve_spd(&p.a().gram(), &p.a().t_matvec(p.target())).unwrap();
        let direct = 0.5 * p.a().matvec(&xstar).sub(p.target()).norm_sq();
        assert!((p.objective(&xstar).unwrap() - direct).abs() < 1e-14);

        let l = gen(ProblemKind::Logistic, 50, 4, 2, GenOptions::default()).model;
        let f0 = l.objective(&[0.0; 4]).unwrap();
        assert!((f0 - 50.0 * 2f64.ln()).abs() < 1e-12);

        let b = ProblemModel::barrier(DenseMatrix::identity(1), DenseVector::zeros(1), 1.0, 1.0).unwrap();
        assert_eq!(b.objective(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_examples() {
        let g = gen(ProblemKind::Lstsq, 40, 5, 3, GenOptions::default());
        let p = &g.model;
        let aty = p.a().t_matvec(p.target());
        let xstar = solve_spd(&p.a().gram(), &aty).unwrap();
        assert!(p.gradient(&xstar).unwrap().norm() <= 1e-8 * aty.norm());

        let l = gen(ProblemKind::Logistic, 50, 4, 4, GenOptions::default()).model;
        let resid: Vec<f64> = l.target().iter().map(|y| 0.5 - y).collect();
        let want = l.a().t_matvec(&resid);
        assert!(rel_err(&l.gradient(&[0.0; 4]).unwrap(), &want) < 1e-14);
    }

    #[test]
    fn hessian_factor_examples() {
        let g = gen(ProblemKind::Lstsq, 20, 3, 5, GenOptions::default()).model;
        let hf = g.hessian_factor(&[0.3, 0.1, -0.2]).unwrap();
        assert_eq!(hf.half, *g.a());
        assert_eq!(hf.reg_mult, 0.0);

        let l = gen(ProblemKind::Logistic, 20, 3, 6, GenOptions::default()).model;
        let hf = l.hessian_factor(&[0.0; 3]).unwrap();
        assert!(hf.half.sub(&l.a().scaled(0.5)).unwrap().max_abs() < 1e-15);
        assert_eq!(hf.reg_mult, 1.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..5 {
            for p in all_kinds(seed) {
                let mut rng = RngStream::new(100 + seed, 1);
                for _ in 0..20 {
                    let x = random_point(&p, &mut rng);
                    let g = p.gradient(&x).unwrap();
                    let fd: Vec<f64> = (0..p.d())
                        .map(|j| {
                            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                            xp[j] += h;
                            xm[j] -= h;
                            (p.objective(&xp).unwrap() - p.objective(&xm).unwrap()) / (2.0 * h)
                        })
                        .collect();
                    let e = rel_err(&g, &fd);
                    assert!(e <= 1e-4, "{} gradient rel err {e}", p.kind());
                }
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        let h = 1e-5;
        for p in all_kinds(9) {
            let mut rng = RngStream::new(200, 2);
            for _ in 0..10 {
                let x = random_point(&p, &mut rng);
                let v = DenseVector::gaussian(p.d(), 1.0, &mut rng);
                let hv = p.hessian_vec(&x, &v).unwrap();
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.axpy(h, &v);
                xm.axpy(-h, &v);
                let fd = p.gradient(&xp).unwrap().sub(&p.gradient(&xm).unwrap()).scaled(0.5 / h);
                let e = rel_err(&hv, &fd);
                assert!(e <= 1e-4, "{} hessian rel err {e}", p.kind());

                // Against the analytic Hessian built row by row.
                let hf = p.hessian_factor(&x).unwrap();
                let mut full = t_matmul(&hf.half, &hf.half).unwrap();
                full.add_diagonal(hf.reg_mult * p.lambda1());
                let direct = full.matvec(&v);
                assert!(rel_err(&hv, &direct) < 1e-10);
            }
        }
    }

    #[test]
    fn barrier_domain_errors() {
        let p = ProblemModel::barrier(
            DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]),
            DenseVector::zeros(2),
            1.0,
            1.0,
        )
        .unwrap();
        assert!(p.gradient(&[0.9, 0.4]).is_ok());
        for x in [[1.0, 0.0], [0.0, 0.5], [0.0, -0.7]] {
            assert!(!p.in_domain(&x));
            assert!(matches!(p.gradient(&x), Err(ProblemError::DomainViolation { .. })));
            assert!(matches!(p.hessian_factor(&x), Err(ProblemError::DomainViolation { .. })));
            assert!(matches!(p.objective(&x), Err(ProblemError::DomainViolation { .. })));
        }
        match p.objective(&[0.0, 0.6]) {
            Err(ProblemError::DomainViolation { margin }) => assert!((margin + 0.2).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn convexity_spot_check() {
        for p in all_kinds(11) {
            let mut rng = RngStream::new(300, 3);
            for _ in 0..100 {
                let x1 = random_point(&p, &mut rng);
                let x2 = random_point(&p, &mut rng);
                let mid: Vec<f64> = x1.iter().zip(x2.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
                let lhs = p.objective(&mid).unwrap();
                let rhs = 0.5 * p.objective(&x1).unwrap() + 0.5 * p.objective(&x2).unwrap();
                assert!(lhs <= rhs + 1e-9, "{}", p.kind());
            }
        }
    }

    #[test]
    fn partial_gradients_sum_to_full() {
        for p in all_kinds(12) {
            let mut rng = RngStream::new(400, 0);
            let x = random_point(&p, &mut rng);
            let mut sum = p.reg_gradient(&x);
            for r in [0..7, 7..19, 19..30] {
                sum.axpy(1.0, &p.partial_gradient(&x, r).unwrap());
            }
            assert!(rel_err(&sum, &p.gradient(&x).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn sigma_heuristics() {
        let opts = GenOptions {
            identical_sv: true,
            sigma: 2.5,
            lambda1: 1.0,
            ..Default::default()
        };
        let p = gen(ProblemKind::Ridge, 60, 8, 13, opts).model;
        assert!((p.sigma_heuristic(&[0.0; 8], SigmaMode::MeanSv).unwrap() - 2.5).abs() < 1e-8);
        assert!((p.sigma_heuristic(&[0.0; 8], SigmaMode::MinSv).unwrap() - 2.5).abs() < 1e-8);

        let ortho = gen(ProblemKind::Ridge, 40, 5, 14, GenOptions { identical_sv: true, ..Default::default() });
        let y: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let l = ProblemModel::logistic(ortho.model.a().clone(), DenseVector::from(y), 1.0).unwrap();
        assert!((l.sigma_heuristic(&[0.0; 5], SigmaMode::MeanDiag).unwrap() - 0.5).abs() < 1e-15);

        let mut rng = RngStream::new(15, 0);
        let a = DenseMatrix::gaussian(200, 50, 1.0, &mut rng);
        let r = ProblemModel::ridge(a.clone(), DenseVector::zeros(200), 1.0).unwrap();
        let sv = singular_values(&a).unwrap();
        let mean = sv.iter().sum::<f64>() / 50.0;
        assert_eq!(r.sigma_heuristic(&[0.0; 50], SigmaMode::MeanSv).unwrap(), mean);
    }

    #[test]
    fn generation_examples() {
        let mut rng = RngStream::new(16, 0);
        let g = generate_problem(ProblemKind::Lstsq, 80, 10, 0.0, &mut rng, &GenOptions::default()).unwrap();
        let p = &g.model;
        let x = solve_spd(&p.a().gram(), &p.a().t_matvec(p.target())).unwrap();
        assert!(rel_err(&x, &g.x0) < 1e-8);
        assert!((g.x0.norm() - 1.0).abs() < 1e-14);

        let ident = gen(ProblemKind::Ridge, 100, 10, 17, GenOptions { identical_sv: true, ..Default::default() });
        let sv = singular_values(ident.model.a()).unwrap();
        assert!(sv.iter().all(|s| (s - 1.0).abs() < 1e-8));

        let again = gen(ProblemKind::Ridge, 100, 10, 17, GenOptions { identical_sv: true, ..Default::default() });
        assert_eq!(again.model.a(), ident.model.a());
        assert_eq!(again.model.target(), ident.model.target());

        assert!(generate_problem(ProblemKind::Lstsq, 5, 10, 0.0, &mut rng, &GenOptions::default()).is_err());
    }

    #[test]
    fn logistic_label_fraction() {
        let n = 4000;
        let g = gen(ProblemKind::Logistic, n, 5, 18, GenOptions::default());
        let z = g.model.a().matvec(&g.x0);
        let mean_p = z.iter().map(|&zi| sigmoid(zi)).sum::<f64>() / n as f64;
        let frac = g.model.target().iter().sum::<f64>() / n as f64;
        assert!((frac - mean_p).abs() <= 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn constructor_validation() {
        let a = DenseMatrix::zeros(3, 2);
        assert!(ProblemModel::least_squares(a.clone(), DenseVector::zeros(2)).is_err());
        assert!(ProblemModel::ridge(a.clone(), DenseVector::zeros(3), -1.0).is_err());
        assert!(ProblemModel::logistic(a.clone(), DenseVector::from(vec![0.0, 2.0, 1.0]), 1.0).is_err());
        assert!(ProblemModel::barrier(a.clone(), DenseVector::zeros(2), 1.0, 0.0).is_err());
        assert!(ProblemModel::barrier(a, DenseVector::zeros(3), 1.0, 1.0).is_err());
        assert_eq!("barrier".parse::<ProblemKind>().unwrap(), ProblemKind::Barrier);
        assert!("lasso".parse::<ProblemKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sigmoid_and_softplus_are_stable(z in -800.0f64..800.0) {
            let s = sigmoid(z);
            prop_assert!((0.0..=1.0).contains(&s));
            let sp = softplus(z);
            prop_assert!(sp.is_finite() && sp >= z.max(0.0) - 1e-12);
        }
    }
}
