//! Closed-form quantities for Gaussian-sketched estimators: inverse-Wishart
//! moments, the asymptotic resolvent scalar θ₃, zero-bias regularization
//! for ridge and regularized Newton, step scalings, and the IHS iteration
//! predictor.
//!
//! The bias-correction values are roots of the zero-bias conditions
//!
//! * ridge:  λ₁ − λ₂ θ₃(d/m, λ₂/σ²) (1 + λ₁/σ²) = 0
//! * newton: θ₃(d/m, λ₂/σ²) = 1 / (1 + λ₁/σ²)
//!
//! and every closed form below is checked against its condition in tests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalcError {
    #[error("moment undefined: needs m > d + {need}, got m={m}, d={d}")]
    MomentUndefined { m: usize, d: usize, need: usize },
    #[error("theta3 limit at lambda = 0 is undefined for gamma = {gamma} >= 1")]
    LimitUndefined { gamma: f64 },
    #[error("no unbiased lambda2 exists: m={m} <= d={d} needs lambda1 >= sigma^2 (d/m - 1) = {required}, got {lambda1}")]
    Infeasible {
        lambda1: f64,
        d: usize,
        m: usize,
        required: f64,
    },
    #[error("averaging insufficient for contraction: log q = {log_q} <= log(theta2/theta1^2 - 1) = {log_rate}")]
    NoContraction { log_q: f64, log_rate: f64 },
    #[error("worker {index}: {source}")]
    Worker {
        index: usize,
        #[source]
        source: Box<CalcError>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn require_moment(m: usize, d: usize, need: usize) -> Result<(), CalcError> {
    if m <= d + need {
        Err(CalcError::MomentUndefined { m, d, need })
    } else {
        Ok(())
    }
}

/// θ₁ = m / (m − d − 1), the mean of the inverse Wishart factor.
pub fn theta1(m: usize, d: usize) -> Result<f64, CalcError> {
    require_moment(m, d, 1)?;
    Ok(m as f64 / (m - d - 1) as f64)
}

/// θ₂ = m²(m − 1) / ((m − d)(m − d − 1)(m − d − 3)).
pub fn theta2(m: usize, d: usize) -> Result<f64, CalcError> {
    require_moment(m, d, 3)?;
    let (mf, k) = (m as f64, (m - d) as f64);
    // Factor by factor; m³ overflows integer ranges quickly.
    Ok((mf / k) * (mf / (k - 1.0)) * ((mf - 1.0) / (k - 3.0)))
}

/// θ₂/θ₁² − 1 = (m − 1)(m − d − 1) / ((m − d)(m − d − 3)) − 1.
pub fn theta_excess(m: usize, d: usize) -> Result<f64, CalcError> {
    require_moment(m, d, 3)?;
    let (mf, k) = (m as f64, (m - d) as f64);
    Ok(((mf - 1.0) / k) * ((k - 1.0) / (k - 3.0)) - 1.0)
}

/// Inverse-Wishart moment pair for sketch size `m` and dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub theta1: f64,
    pub theta2: f64,
    pub m: usize,
    pub d: usize,
}

impl MomentPair {
    pub fn new(m: usize, d: usize) -> Result<Self, CalcError> {
        Ok(Self {
            theta1: theta1(m, d)?,
            theta2: theta2(m, d)?,
            m,
            d,
        })
    }
}

/// `λ·θ₃(γ, λ)`, which stays finite at λ = 0 for every γ > 0.
pub fn lambda_theta3(gamma: f64, lam: f64) -> f64 {
    let b = gamma - 1.0 - lam;
    let c = 4.0 * lam * gamma;
    let root = (b * b + c).sqrt();
    if b > 0.0 {
        (b + root) / (2.0 * gamma)
    } else {
        // Rationalized form avoids cancellation when b < 0.
        2.0 * lam / (root - b)
    }
}

/// θ₃(γ, λ) with γ = d/m: the limiting scalar of
/// `E[(UᵀSᵀSU + λI)⁻¹]`.
pub fn theta3(gamma: f64, lam: f64) -> Result<f64, CalcError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(CalcError::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    if !(lam >= 0.0) || !lam.is_finite() {
        return Err(CalcError::InvalidArgument(format!("lambda must be non-negative, got {lam}")));
    }
    if lam == 0.0 {
        return if gamma < 1.0 {
            Ok(1.0 / (1.0 - gamma))
        } else {
            Err(CalcError::LimitUndefined { gamma })
        };
    }
    let b = gamma - 1.0 - lam;
    let root = (b * b + 4.0 * lam * gamma).sqrt();
    if b > 0.0 {
        Ok((b + root) / (2.0 * lam * gamma))
    } else {
        Ok(2.0 / (root - b))
    }
}

/// λ₁ − λ₂ θ₃(γ, λ₂/σ²)(1 + λ₁/σ²); zero exactly when λ₂ removes the
/// ridge estimator's bias.
pub fn zero_bias_residual_ridge(lambda1: f64, lambda2: f64, gamma: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let mu = lambda2 / s2;
    // λ₂ θ₃(γ, μ) = σ² · μ θ₃(γ, μ)
    lambda1 - s2 * lambda_theta3(gamma, mu) * (1.0 + lambda1 / s2)
}

/// Which zero-bias condition a correction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Ridge,
    Newton,
}

fn check_common(lambda1: f64, d: usize, m: usize, sigma: f64) -> Result<(), CalcError> {
    if d == 0 || m == 0 {
        return Err(CalcError::InvalidArgument(format!("d and m must be positive, got d={d}, m={m}")));
    }
    if !(lambda1 >= 0.0) || !lambda1.is_finite() {
        return Err(CalcError::InvalidArgument(format!("lambda1 must be non-negative, got {lambda1}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(CalcError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Whether a zero-bias λ₂ exists for the ridge estimator.
pub fn ridge_feasible(lambda1: f64, d: usize, m: usize, sigma: f64) -> bool {
    m > d || lambda1 >= sigma * sigma * (d as f64 / m as f64 - 1.0)
}

/// λ₂* = λ₁ (1 − (d/m) σ² / (σ² + λ₁)), the root of the ridge zero-bias
/// condition.
pub fn lambda2_star_ridge(lambda1: f64, d: usize, m: usize, sigma: f64) -> Result<f64, CalcError> {
    check_common(lambda1, d, m, sigma)?;
    if !ridge_feasible(lambda1, d, m, sigma) {
        return Err(CalcError::Infeasible {
            lambda1,
            d,
            m,
            required: sigma * sigma * (d as f64 / m as f64 - 1.0),
        });
    }
    let gamma = d as f64 / m as f64;
    let s2 = sigma * sigma;
    Ok(lambda1 * (1.0 - gamma * s2 / (s2 + lambda1)))
}

/// λ₁ − (d/m) / (1 + λ₁/σ²): the commonly quoted closed form, kept for
/// comparison. It does not zero the ridge bias condition (for λ₁ = 5,
/// d/m = 5, σ = 1 it gives 25/6 rather than the root 5/6).
pub fn lambda2_ridge_uncorrected_form(lambda1: f64, d: usize, m: usize, sigma: f64) -> Result<f64, CalcError> {
    check_common(lambda1, d, m, sigma)?;
    let gamma = d as f64 / m as f64;
    Ok(lambda1 - gamma / (1.0 + lambda1 / (sigma * sigma)))
}

/// λ₂* = (λ₁ + σ² d/m) / (1 + (d/m) / (1 + λ₁/σ²)), which makes the
/// regularized single-sketch Newton direction unbiased. Always feasible.
pub fn lambda2_star_newton(lambda1: f64, d: usize, m: usize, sigma: f64) -> Result<f64, CalcError> {
    check_common(lambda1, d, m, sigma)?;
    let gamma = d as f64 / m as f64;
    let s2 = sigma * sigma;
    Ok((lambda1 + s2 * gamma) / (1.0 + gamma / (1.0 + lambda1 / s2)))
}

/// Step-size scalings for the unregularized sketched Newton direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScaling {
    /// 1/θ₁: removes the bias of a single-sketch direction.
    pub alpha_unbiased: f64,
    /// θ₁/θ₂: minimizes the single-sketch error variance.
    pub alpha_minvar: f64,
    pub m: usize,
    pub d: usize,
}

pub fn step_scalings(m: usize, d: usize) -> Result<StepScaling, CalcError> {
    require_moment(m, d, 3)?;
    let (mf, k) = (m as f64, (m - d) as f64);
    Ok(StepScaling {
        alpha_unbiased: (k - 1.0) / mf,
        alpha_minvar: (k / mf) * ((k - 3.0) / (mf - 1.0)),
        m,
        d,
    })
}

/// Expected one-step contraction of ‖A(x − x*)‖² for distributed IHS
/// with step 1/θ₁: (θ₂/θ₁² − 1)/q.
pub fn ihs_rate(q: usize, m: usize, d: usize) -> Result<f64, CalcError> {
    if q == 0 {
        return Err(CalcError::InvalidArgument("q must be at least 1".into()));
    }
    Ok(theta_excess(m, d)? / q as f64)
}

/// Iterations T for the expected relative error to reach `eps`:
/// log(1/ε) / (log q − log(θ₂/θ₁² − 1)). Real-valued; callers round up.
pub fn predict_iterations(eps: f64, q: usize, m: usize, d: usize) -> Result<f64, CalcError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(CalcError::InvalidArgument(format!("eps must be in (0, 1], got {eps}")));
    }
    if q == 0 {
        return Err(CalcError::InvalidArgument("q must be at least 1".into()));
    }
    let log_q = (q as f64).ln();
    let log_rate = theta_excess(m, d)?.ln();
    let denom = log_q - log_rate;
    if !(denom > 0.0) {
        return Err(CalcError::NoContraction { log_q, log_rate });
    }
    Ok((1.0 / eps).ln() / denom)
}

/// Regularization chosen for one worker's sketched subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrection {
    pub lambda1: f64,
    pub lambda2_star: f64,
    pub sigma: f64,
    pub d: usize,
    pub m: usize,
    pub regime: Regime,
    /// Set when λ₂* < 0, in which case the sketched system may be
    /// indefinite.
    pub indefinite_risk: bool,
}

impl BiasCorrection {
    pub fn new(regime: Regime, lambda1: f64, d: usize, m: usize, sigma: f64) -> Result<Self, CalcError> {
        let lambda2_star = match regime {
            Regime::Ridge => lambda2_star_ridge(lambda1, d, m, sigma)?,
            Regime::Newton => lambda2_star_newton(lambda1, d, m, sigma)?,
        };
        Ok(Self {
            lambda1,
            lambda2_star,
            sigma,
            d,
            m,
            regime,
            indefinite_risk: lambda2_star < 0.0,
        })
    }

    /// Residual of this correction's zero-bias condition.
    pub fn residual(&self) -> f64 {
        let gamma = self.d as f64 / self.m as f64;
        match self.regime {
            Regime::Ridge => zero_bias_residual_ridge(self.lambda1, self.lambda2_star, gamma, self.sigma),
            Regime::Newton => {
                let s2 = self.sigma * self.sigma;
                let t = theta3(gamma, self.lambda2_star / s2).unwrap_or(f64::NAN);
                t - 1.0 / (1.0 + self.lambda1 / s2)
            }
        }
    }
}

/// Per-worker correction; `step` is filled for the Newton regime when the
/// problem is unregularized (λ₁ = 0) and the moments exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerCorrection {
    pub correction: BiasCorrection,
    pub step: Option<StepScaling>,
}

pub fn per_worker_corrections(
    lambda1: f64,
    d: usize,
    m_list: &[usize],
    sigma: f64,
    regime: Regime,
) -> Result<Vec<WorkerCorrection>, CalcError> {
    m_list
        .iter()
        .enumerate()
        .map(|(index, &m)| {
            let wrap = |e: CalcError| CalcError::Worker {
                index,
                source: Box::new(e),
            };
            let correction = BiasCorrection::new(regime, lambda1, d, m, sigma).map_err(wrap)?;
            let step = if regime == Regime::Newton && lambda1 == 0.0 {
                Some(step_scalings(m, d).map_err(wrap)?)
            } else {
                None
            };
            Ok(WorkerCorrection { correction, step })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn theta1_values() {
        assert_eq!(theta1(7, 5).unwrap(), 7.0);
        assert!(close(theta1(400, 200).unwrap(), 400.0 / 199.0, 1e-15));
        assert!(close(theta1(400, 200).unwrap(), 2.010050, 1e-6));
        let big = theta1(1_000_000_000, 200).unwrap();
        assert!((big - 1.0 - 2.01e-7).abs() < 1e-9);
        assert_eq!(theta1(201, 200).unwrap_err(), CalcError::MomentUndefined { m: 201, d: 200, need: 1 });
    }

    #[test]
    fn theta2_values() {
        let want = 400.0f64 * 400.0 * 399.0 / (200.0 * 199.0 * 197.0);
        assert!(close(theta2(400, 200).unwrap(), want, 1e-14));
        assert!(close(theta2(400, 200).unwrap(), 8.14224, 1e-6));
        assert!((theta2(1_000_000_000, 10).unwrap() - 1.0).abs() < 1e-6);
        assert!(matches!(theta2(203, 200), Err(CalcError::MomentUndefined { need: 3, .. })));
        assert!(theta2(204, 200).is_ok());
    }

    #[test]
    fn theta3_values() {
        assert!(close(theta3(1.0, 1.0).unwrap(), (5f64.sqrt() - 1.0) / 2.0, 1e-14));
        assert!(close(theta3(1.0, 1.0).unwrap(), 0.618034, 1e-6));
        for gamma in [0.1, 1.0, 5.0] {
            let t = theta3(gamma, 1e6).unwrap();
            assert!((t * 1e6 - 1.0).abs() < 0.01);
        }
        assert!((theta3(0.5, 1e-9).unwrap() - 2.0).abs() < 1e-6);
        assert_eq!(theta3(0.5, 0.0).unwrap(), 2.0);
        assert!(matches!(theta3(1.5, 0.0), Err(CalcError::LimitUndefined { .. })));
        assert!(theta3(0.0, 1.0).is_err());
        assert!(theta3(0.5, -1.0).is_err());
    }

    #[test]
    fn theta3_branches_agree_with_direct_formula() {
        for &(g, l) in &[(0.3, 0.7), (2.0, 0.1), (5.0, 5.0), (0.9, 3.0), (1.0, 1e-3)] {
            let b: f64 = -l + g - 1.0;
            let direct = (b + (b * b + 4.0 * l * g).sqrt()) / (2.0 * l * g);
            assert!(close(theta3(g, l).unwrap(), direct, 1e-12));
            assert!(close(lambda_theta3(g, l), l * direct, 1e-12));
        }
    }

    #[test]
    fn ridge_residual_examples() {
        assert!(zero_bias_residual_ridge(5.0, 5.0 / 6.0, 5.0, 1.0).abs() < 1e-10);
        assert!(zero_bias_residual_ridge(0.0, 1e-300, 0.5, 1.0).abs() < 1e-12);
        // Vanilla λ₂ = λ₁: 5 − 5·θ₃(5, 5)·6 with θ₃(5, 5) = 2/(√101 + 1).
        let vanilla = zero_bias_residual_ridge(5.0, 5.0, 5.0, 1.0);
        let want = 5.0 - 5.0 * (2.0 / (101f64.sqrt() + 1.0)) * 6.0;
        assert!(close(vanilla, want, 1e-14));
        assert!((vanilla + 0.42994).abs() < 1e-4);
    }

    #[test]
    fn lambda2_ridge_values() {
        assert!(close(lambda2_star_ridge(5.0, 100, 20, 1.0).unwrap(), 5.0 / 6.0, 1e-14));
        assert!(close(lambda2_star_ridge(5.0, 100, 20, 1.0).unwrap(), 0.833, 1e-3));
        assert!(close(lambda2_star_ridge(3.0, 1, 1_000_000_000, 1.0).unwrap(), 3.0, 1e-8));
        assert_eq!(lambda2_star_ridge(0.0, 10, 20, 1.0).unwrap(), 0.0);
        assert!(matches!(lambda2_star_ridge(1.0, 100, 20, 1.0), Err(CalcError::Infeasible { .. })));
        assert!(close(lambda2_ridge_uncorrected_form(5.0, 100, 20, 1.0).unwrap(), 25.0 / 6.0, 1e-14));
    }

    #[test]
    fn lambda2_newton_values() {
        // λ₁ = 1, σ = 1, d/m = 1/2.
        let l2 = lambda2_star_newton(1.0, 100, 200, 1.0).unwrap();
        assert!(close(l2, 1.2, 1e-14));
        assert!(close(theta3(0.5, l2).unwrap(), 0.5, 1e-14));
        assert!(close(lambda2_star_newton(2.0, 1, 1_000_000_000, 1.0).unwrap(), 2.0, 1e-8));
        let zero = lambda2_star_newton(0.0, 10, 40, 2.0).unwrap();
        assert!(close(zero, 4.0 * 0.25 / 1.25, 1e-14));
        assert!(zero >= 0.0);
    }

    #[test]
    fn step_scaling_values() {
        let s = step_scalings(400, 200).unwrap();
        assert!(close(s.alpha_unbiased, 0.4975, 1e-14));
        assert!(close(s.alpha_minvar, 200.0 * 197.0 / (400.0 * 399.0), 1e-14));
        assert!(close(s.alpha_minvar, 0.24687, 1e-4));
        let t = theta1(400, 200).unwrap() / theta2(400, 200).unwrap();
        assert!(close(s.alpha_minvar, t, 1e-13));
        let big = step_scalings(1_000_000_000, 3).unwrap();
        assert!((big.alpha_unbiased - 1.0).abs() < 1e-8 && (big.alpha_minvar - 1.0).abs() < 1e-8);
        assert!(step_scalings(203, 200).is_err());
    }

    #[test]
    fn ihs_rate_and_prediction() {
        let r1 = ihs_rate(1, 400, 200).unwrap();
        assert!(close(r1, 399.0 * 199.0 / (200.0 * 197.0) - 1.0, 1e-14));
        assert!(close(r1, 1.01527, 1e-5));
        assert!(close(ihs_rate(8, 400, 200).unwrap(), r1 / 8.0, 1e-15));
        assert!(close(ihs_rate(8, 400, 200).unwrap(), 0.126909, 1e-5));
        assert!(ihs_rate(1, 1_000_000_000, 5).unwrap() < 1e-7);

        let want = (1e6f64).ln() / (10f64.ln() - r1.ln());
        let t = predict_iterations(1e-6, 10, 400, 200).unwrap();
        assert!(close(t, want, 1e-14));
        assert!((t - 6.04).abs() < 0.01);
        assert_eq!(predict_iterations(1.0, 3, 400, 200).unwrap(), 0.0);
        // q = 1 with θ₂/θ₁² − 1 > 1 cannot contract.
        assert!(matches!(predict_iterations(1e-3, 1, 400, 200), Err(CalcError::NoContraction { .. })));
    }

    #[test]
    fn per_worker_examples() {
        let same = per_worker_corrections(5.0, 100, &[20, 20, 20], 1.0, Regime::Ridge).unwrap();
        assert!(same.windows(2).all(|w| w[0] == w[1]));

        let two = per_worker_corrections(5.0, 100, &[20, 50], 1.0, Regime::Ridge).unwrap();
        assert!(close(two[0].correction.lambda2_star, 5.0 / 6.0, 1e-14));
        assert!(close(two[1].correction.lambda2_star, 10.0 / 3.0, 1e-14));

        match per_worker_corrections(1.0, 100, &[200, 20], 1.0, Regime::Ridge) {
            Err(CalcError::Worker { index: 1, source }) => {
                assert!(matches!(*source, CalcError::Infeasible { .. }))
            }
            other => panic!("expected worker error, got {other:?}"),
        }

        let newton = per_worker_corrections(0.0, 10, &[20, 40], 1.0, Regime::Newton).unwrap();
        assert!(newton.iter().all(|w| w.step.is_some()));
    }

    #[test]
    fn remark_boundary_scan() {
        // θ₂/θ₁² − 1 < 1 for every m ≥ 2d + 7, d ∈ [1, 500].
        for d in 1..=500 {
            assert!(theta_excess(2 * d + 7, d).unwrap() < 1.0, "d={d}");
        }
        // At m = 2d the excess exceeds 1.
        assert!(theta_excess(10, 5).unwrap() > 1.0);
        assert!(theta_excess(40, 20).unwrap() > 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ridge_root(lambda1 in 0.0f64..50.0, d in 1usize..400, m in 1usize..400, sigma in 0.1f64..5.0) {
            prop_assume!(ridge_feasible(lambda1, d, m, sigma));
            let l2 = lambda2_star_ridge(lambda1, d, m, sigma).unwrap();
            prop_assert!(l2 >= 0.0);
            let r = zero_bias_residual_ridge(lambda1, l2, d as f64 / m as f64, sigma);
            prop_assert!(r.abs() <= 1e-10 * (1.0 + lambda1), "residual {}", r);
        }

        #[test]
        fn ridge_sign_tracks_feasibility(lambda1 in 0.0f64..50.0, d in 1usize..400, m in 1usize..400, sigma in 0.1f64..5.0) {
            let gamma = d as f64 / m as f64;
            let s2 = sigma * sigma;
            let raw = lambda1 * (1.0 - gamma * s2 / (s2 + lambda1));
            prop_assert_eq!(raw >= -1e-12 * (1.0 + lambda1), ridge_feasible(lambda1, d, m, sigma) || raw.abs() < 1e-9);
        }

        #[test]
        fn newton_condition(lambda1 in 0.0f64..50.0, d in 1usize..400, m in 1usize..400, sigma in 0.1f64..5.0) {
            let l2 = lambda2_star_newton(lambda1, d, m, sigma).unwrap();
            let s2 = sigma * sigma;
            let t = theta3(d as f64 / m as f64, l2 / s2).unwrap();
            prop_assert!((t - 1.0 / (1.0 + lambda1 / s2)).abs() <= 1e-10);
        }

        #[test]
        fn ridge_increasing_in_m(lambda1 in 0.1f64..50.0, d in 1usize..200, m in 1usize..400, sigma in 0.1f64..5.0) {
            prop_assume!(ridge_feasible(lambda1, d, m, sigma));
            let a = lambda2_star_ridge(lambda1, d, m, sigma).unwrap();
            let b = lambda2_star_ridge(lambda1, d, m + 1, sigma).unwrap();
            prop_assert!(b > a);
        }

        #[test]
        fn minvar_below_unbiased(d in 1usize..1000, extra in 4usize..2000) {
            let s = step_scalings(d + extra, d).unwrap();
            prop_assert!(0.0 < s.alpha_minvar && s.alpha_minvar < s.alpha_unbiased && s.alpha_unbiased < 1.0);
            let mp = MomentPair::new(d + extra, d).unwrap();
            prop_assert!(mp.theta1 > 1.0 && mp.theta2 > mp.theta1 * mp.theta1);
        }
    }

    #[test]
    fn newton_tends_to_lambda1() {
        for m in [1_000usize, 100_000, 10_000_000] {
            let l2 = lambda2_star_newton(3.0, 10, m, 1.0).unwrap();
            assert!((l2 - 3.0).abs() < 100.0 / m as f64);
        }
    }
}
