//! Single-sketch Monte Carlo statistics: bias and mean squared error of
//! one worker's estimate, the quantities the averaging results are about.
//!
//! For an error vector `r` sampled `N` times, `bias_norm = ‖mean r‖` and
//! `bias_se = √((mean ‖r‖² − ‖mean r‖²)/(N − 1))`, the RMS size of
//! `‖mean r‖` when the true mean is zero.

use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::linalg::{dot, solve_spd, solve_symmetric, DenseMatrix, DenseVector};
use crate::rng::RngStream;
use crate::sketch::{apply_sketch, SketchSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionStats {
    pub alpha: f64,
    /// `‖E[H^{1/2}(αΔ̂ − Δ*)]‖`.
    pub bias_norm: f64,
    pub bias_se: f64,
    /// `E‖H^{1/2}(αΔ̂ − Δ*)‖²`.
    pub mean_sq_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    /// `‖E[x̂] − x*‖`.
    pub bias_norm: f64,
    pub bias_se: f64,
    /// `bias_norm / ‖x*‖`.
    pub rel_bias: f64,
    /// `E‖x̂ − x*‖²`.
    pub mean_sq_error: f64,
    pub trials: usize,
}

/// Sums of per-trial outputs, in trial order.
struct Sums {
    vec: DenseVector,
    sq: f64,
    cross: f64,
}

const CHUNK: usize = 64;

/// Runs `trial(i)` for `i in 0..trials`, returning `(u, ⟨u,u⟩, ⟨u,v⟩)`,
/// and sums the results in trial order.
fn accumulate<F>(trials: usize, len: usize, trial: F) -> Result<Sums, SolverError>
where
    F: Fn(usize) -> Result<(DenseVector, f64), SolverError> + Sync,
{
    let mut sums = Sums {
        vec: DenseVector::zeros(len),
        sq: 0.0,
        cross: 0.0,
    };
    let mut start = 0;
    while start < trials {
        let end = (start + CHUNK).min(trials);
        let outs = map_trials(start..end, &trial)?;
        for (u, cross) in outs {
            sums.sq += u.norm_sq();
            sums.cross += cross;
            sums.vec.axpy(1.0, &u);
        }
        start = end;
    }
    Ok(sums)
}

#[cfg(feature = "parallel")]
fn map_trials<F>(range: std::ops::Range<usize>, trial: &F) -> Result<Vec<(DenseVector, f64)>, SolverError>
where
    F: Fn(usize) -> Result<(DenseVector, f64), SolverError> + Sync,
{
    use rayon::prelude::*;
    range.into_par_iter().map(trial).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_trials<F>(range: std::ops::Range<usize>, trial: &F) -> Result<Vec<(DenseVector, f64)>, SolverError>
where
    F: Fn(usize) -> Result<(DenseVector, f64), SolverError>,
{
    range.map(trial).collect()
}

fn check_trials(trials: usize) -> Result<(), SolverError> {
    if trials < 2 {
        return Err(SolverError::Config(format!("need at least 2 trials, got {trials}")));
    }
    Ok(())
}

/// Direction statistics for every step scaling in `alphas`, all from the
/// same sketches. The single-sketch direction is
/// `Δ̂ = −(H^{1/2}ᵀSᵀSH^{1/2} + λ₂I)⁻¹g` and the target is
/// `Δ* = −(H^{1/2}ᵀH^{1/2} + λ₁I)⁻¹g`.
#[allow(clippy::too_many_arguments)]
pub fn single_sketch_direction_stats_grid(
    h_half: &DenseMatrix,
    g: &[f64],
    sketch: &SketchSpec,
    trials: usize,
    alphas: &[f64],
    lambda1: f64,
    lambda2: f64,
    seed: u64,
) -> Result<Vec<DirectionStats>, SolverError> {
    check_trials(trials)?;
    sketch.validate_for(h_half.rows())?;
    let mut h = h_half.gram();
    h.add_diagonal(lambda1);
    let delta_star = solve_spd(&h, g)?.scaled(-1.0);
    let v = h_half.matvec(&delta_star);
    let base = RngStream::new(seed, 0);
    let sums = accumulate(trials, h_half.rows(), |i| {
        let sh = apply_sketch(sketch, h_half, &mut base.child(i as u64))?;
        let mut hs = sh.gram();
        hs.add_diagonal(lambda2);
        let dir = solve_symmetric(&hs, g)?.x.scaled(-1.0);
        let u = h_half.matvec(&dir);
        let cross = dot(&u, &v);
        Ok((u, cross))
    })?;
    let nt = trials as f64;
    let mean_u = sums.vec.scaled(1.0 / nt);
    let (uu, uv, vv) = (sums.sq / nt, sums.cross / nt, v.norm_sq());
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let mut mean_r = mean_u.scaled(alpha);
            mean_r.axpy(-1.0, &v);
            let bias_sq = mean_r.norm_sq();
            let mse = alpha * alpha * uu - 2.0 * alpha * uv + vv;
            DirectionStats {
                alpha,
                bias_norm: bias_sq.sqrt(),
                bias_se: ((mse - bias_sq).max(0.0) / (nt - 1.0)).sqrt(),
                mean_sq_error: mse,
                trials,
            }
        })
        .collect())
}

/// Gaussian-sketch direction statistics at a single step scaling.
#[allow(clippy::too_many_arguments)]
pub fn single_sketch_direction_stats(
    h_half: &DenseMatrix,
    g: &[f64],
    m: usize,
    trials: usize,
    alpha: f64,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
) -> Result<DirectionStats, SolverError> {
    let spec = SketchSpec::gaussian(m);
    Ok(single_sketch_direction_stats_grid(h_half, g, &spec, trials, &[alpha], lambda1, lambda2, seed)?[0])
}

/// Bias and error of one worker's sketched ridge estimate
/// `x̂ = (AᵀSᵀSA + λ₂I)⁻¹AᵀSᵀSb`, with `S` drawn fresh per trial and
/// applied jointly to `[A | b]`.
pub fn ridge_estimator_stats(
    a: &DenseMatrix,
    b: &[f64],
    x_star: &[f64],
    sketch: &SketchSpec,
    lambda2: f64,
    trials: usize,
    seed: u64,
) -> Result<EstimatorStats, SolverError> {
    check_trials(trials)?;
    let ab = a.with_column(b)?;
    sketch.validate_for(ab.rows())?;
    let base = RngStream::new(seed, 0);
    let sums = accumulate(trials, a.cols(), |i| {
        let sab = apply_sketch(sketch, &ab, &mut base.child(i as u64))?;
        let (sa, sb) = sab.split_last_column();
        let mut h = sa.gram();
        h.add_diagonal(lambda2);
        let x = solve_symmetric(&h, &sa.t_matvec(&sb))?.x;
        Ok((x.sub(x_star), 0.0))
    })?;
    let nt = trials as f64;
    let mean = sums.vec.scaled(1.0 / nt);
    let bias_sq = mean.norm_sq();
    let mse = sums.sq / nt;
    let xs = dot(x_star, x_star).sqrt();
    Ok(EstimatorStats {
        bias_norm: bias_sq.sqrt(),
        bias_se: ((mse - bias_sq).max(0.0) / (nt - 1.0)).sqrt(),
        rel_bias: bias_sq.sqrt() / xs,
        mean_sq_error: mse,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{lambda2_star_ridge, step_scalings};
    use crate::linalg::make_identical_singular_matrix;

    #[test]
    fn unbiased_scaling_small_case() {
        let (n, d, m) = (60, 10, 30);
        let mut rng = RngStream::new(1, 0);
        let h = DenseMatrix::gaussian(n, d, 1.0, &mut rng);
        let g = DenseVector::gaussian(d, 1.0, &mut rng);
        let s = step_scalings(m, d).unwrap();
        let stats = single_sketch_direction_stats_grid(
            &h,
            &g,
            &SketchSpec::gaussian(m),
            4000,
            &[s.alpha_unbiased, 1.0],
            0.0,
            0.0,
            7,
        )
        .unwrap();
        assert!(stats[0].bias_norm <= 3.0 * stats[0].bias_se, "{:?}", stats[0]);
        // α = 1 over-shoots by θ₁ − 1 = 10/19.
        assert!(stats[1].bias_norm > 10.0 * stats[1].bias_se);
    }

    #[test]
    fn grid_matches_single_calls() {
        let mut rng = RngStream::new(2, 0);
        let h = DenseMatrix::gaussian(40, 5, 1.0, &mut rng);
        let g = DenseVector::gaussian(5, 1.0, &mut rng);
        let grid =
            single_sketch_direction_stats_grid(&h, &g, &SketchSpec::gaussian(20), 50, &[0.5, 0.7], 0.1, 0.2, 3)
                .unwrap();
        let one = single_sketch_direction_stats(&h, &g, 20, 50, 0.7, 0.1, 0.2, 3).unwrap();
        assert!((grid[1].mean_sq_error - one.mean_sq_error).abs() < 1e-12);
        assert!((grid[1].bias_norm - one.bias_norm).abs() < 1e-12);
    }

    #[test]
    fn ridge_zero_bias_small_case() {
        let (n, d, m) = (300, 30, 60);
        let mut rng = RngStream::new(3, 0);
        let a = make_identical_singular_matrix(n, d, 1.0, &mut rng).unwrap();
        let b = DenseVector::gaussian(n, 1.0, &mut rng);
        let lambda1 = 2.0;
        let mut h = a.gram();
        h.add_diagonal(lambda1);
        let x_star = solve_spd(&h, &a.t_matvec(&b)).unwrap();
        let spec = SketchSpec::gaussian(m);
        let l2 = lambda2_star_ridge(lambda1, d, m, 1.0).unwrap();
        let zb = ridge_estimator_stats(&a, &b, &x_star, &spec, l2, 3000, 4).unwrap();
        let va = ridge_estimator_stats(&a, &b, &x_star, &spec, lambda1, 3000, 4).unwrap();
        assert!(zb.bias_norm < va.bias_norm / 3.0, "{zb:?} {va:?}");
    }
}
