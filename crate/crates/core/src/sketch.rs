//! Random sketching operators. Each one returns the sketched data `S·A`
//! directly and is scaled so that `E[SᵀS] = I_n`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matmul, DenseMatrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SketchError {
    #[error("sketch size m={m} exceeds the {n} available rows")]
    TooManyRows { m: usize, n: usize },
    #[error("sjlt needs 1 <= s <= m, got s={s}, m={m}")]
    BadSparsity { s: usize, m: usize },
    #[error("hybrid sketch needs m <= m2, got m={m}, m2={m2}")]
    HybridOrder { m: usize, m2: usize },
    #[error("sketch size must be at least 1")]
    ZeroRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerSketch {
    Gaussian,
    Sjlt { s: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchKind {
    Gaussian,
    Hadamard,
    Uniform,
    Sjlt { s: usize },
    /// Uniform sampling down to `m2` rows, then `inner` down to `m`.
    Hybrid { m2: usize, inner: InnerSketch },
}

impl SketchKind {
    pub fn name(&self) -> &'static str {
        match self {
            SketchKind::Gaussian => "gaussian",
            SketchKind::Hadamard => "hadamard",
            SketchKind::Uniform => "uniform",
            SketchKind::Sjlt { .. } => "sjlt",
            SketchKind::Hybrid { .. } => "hybrid",
        }
    }
}

/// Which sketch to draw and its output row count `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchSpec {
    pub kind: SketchKind,
    pub m: usize,
}

impl fmt::Display for SketchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SketchKind::Sjlt { s } => write!(f, "sjlt(m={}, s={s})", self.m),
            SketchKind::Hybrid { m2, inner } => match inner {
                InnerSketch::Gaussian => write!(f, "hybrid(m={}, m2={m2}, gaussian)", self.m),
                InnerSketch::Sjlt { s } => write!(f, "hybrid(m={}, m2={m2}, sjlt s={s})", self.m),
            },
            k => write!(f, "{}(m={})", k.name(), self.m),
        }
    }
}

impl SketchSpec {
    pub fn gaussian(m: usize) -> Self {
        Self {
            kind: SketchKind::Gaussian,
            m,
        }
    }

    pub fn hadamard(m: usize) -> Self {
        Self {
            kind: SketchKind::Hadamard,
            m,
        }
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            kind: SketchKind::Uniform,
            m,
        }
    }

    pub fn sjlt(m: usize, s: usize) -> Self {
        Self {
            kind: SketchKind::Sjlt { s },
            m,
        }
    }

    pub fn hybrid(m: usize, m2: usize, inner: InnerSketch) -> Self {
        Self {
            kind: SketchKind::Hybrid { m2, inner },
            m,
        }
    }

    /// Checks the parameters that do not depend on the data.
    pub fn validate(&self) -> Result<(), SketchError> {
        if self.m == 0 {
            return Err(SketchError::ZeroRows);
        }
        match self.kind {
            SketchKind::Sjlt { s } => check_sparsity(s, self.m),
            SketchKind::Hybrid { m2, inner } => {
                if self.m > m2 {
                    return Err(SketchError::HybridOrder { m: self.m, m2 });
                }
                if let InnerSketch::Sjlt { s } = inner {
                    check_sparsity(s, self.m)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Checks the parameters against a data matrix with `n` rows.
    pub fn validate_for(&self, n: usize) -> Result<(), SketchError> {
        self.validate()?;
        match self.kind {
            SketchKind::Uniform | SketchKind::Hadamard if self.m > n => {
                Err(SketchError::TooManyRows { m: self.m, n })
            }
            SketchKind::Hybrid { m2, .. } if m2 > n => Err(SketchError::TooManyRows { m: m2, n }),
            _ => Ok(()),
        }
    }
}

fn check_sparsity(s: usize, m: usize) -> Result<(), SketchError> {
    if s == 0 || s > m {
        Err(SketchError::BadSparsity { s, m })
    } else {
        Ok(())
    }
}

/// Draws a sketch of the given kind and returns `S·A` (m × cols).
pub fn apply_sketch(
    spec: &SketchSpec,
    a: &DenseMatrix,
    rng: &mut RngStream,
) -> Result<DenseMatrix, SketchError> {
    spec.validate_for(a.rows())?;
    let m = spec.m;
    match spec.kind {
        SketchKind::Gaussian => apply_gaussian(a, m, rng),
        SketchKind::Hadamard => apply_hadamard(a, m, rng),
        SketchKind::Uniform => apply_uniform(a, m, rng),
        SketchKind::Sjlt { s } => apply_sjlt(a, m, s, rng),
        SketchKind::Hybrid { m2, inner } => apply_hybrid(a, m, m2, inner, rng),
    }
}

/// Explicit `S` (m × n) for the same draw `apply_sketch` would make from
/// this RNG state. Test and debugging use only.
pub fn materialize(spec: &SketchSpec, n: usize, rng: &mut RngStream) -> Result<DenseMatrix, SketchError> {
    apply_sketch(spec, &DenseMatrix::identity(n), rng)
}

/// Gaussian sketch: entries i.i.d. N(0, 1/m).
pub fn apply_gaussian(a: &DenseMatrix, m: usize, rng: &mut RngStream) -> Result<DenseMatrix, SketchError> {
    if m == 0 {
        return Err(SketchError::ZeroRows);
    }
    let s = DenseMatrix::gaussian(m, a.rows(), 1.0 / (m as f64).sqrt(), rng);
    Ok(matmul(&s, a).expect("sketch shape matches data"))
}

/// Uniform row sampling without replacement, rows scaled by √(n/m).
pub fn apply_uniform(a: &DenseMatrix, m: usize, rng: &mut RngStream) -> Result<DenseMatrix, SketchError> {
    let n = a.rows();
    if m == 0 {
        return Err(SketchError::ZeroRows);
    }
    if m > n {
        return Err(SketchError::TooManyRows { m, n });
    }
    let idx = rng.sample_distinct(n, m);
    Ok(a.select_rows(&idx, (n as f64 / m as f64).sqrt()))
}

/// Randomized Hadamard sketch `S = P H D` with a fresh Rademacher `D`.
pub fn apply_hadamard(a: &DenseMatrix, m: usize, rng: &mut RngStream) -> Result<DenseMatrix, SketchError> {
    let n = a.rows();
    if m == 0 {
        return Err(SketchError::ZeroRows);
    }
    if m > n {
        return Err(SketchError::TooManyRows { m, n });
    }
    let signs: Vec<f64> = (0..n).map(|_| rng.rademacher()).collect();
    Ok(hadamard_with_signs(a, m, &signs, rng))
}

/// Hadamard sketch with caller-supplied diagonal signs. The input is
/// zero-padded to the next power of two `n_pad`, transformed with the
/// orthonormal Walsh–Hadamard matrix, and `m` of the `n_pad` rows are kept
/// with scale √(n_pad/m).
pub fn hadamard_with_signs(a: &DenseMatrix, m: usize, signs: &[f64], rng: &mut RngStream) -> DenseMatrix {
    let (n, d) = a.shape();
    assert_eq!(signs.len(), n);
    let n_pad = n.next_power_of_two();
    let mut buf = vec![0.0; n_pad * d];
    for i in 0..n {
        let sgn = signs[i];
        for (dst, src) in buf[i * d..(i + 1) * d].iter_mut().zip(a.row(i)) {
            *dst = sgn * src;
        }
    }
    fwht_rows(&mut buf, n_pad, d);
    let norm = 1.0 / (n_pad as f64).sqrt();
    let padded = DenseMatrix::from_raw(n_pad, d, buf);
    let idx = rng.sample_distinct(n_pad, m);
    padded.select_rows(&idx, norm * (n_pad as f64 / m as f64).sqrt())
}

/// Unnormalized fast Walsh–Hadamard transform along the row index of a
/// row-major `len × width` buffer; `len` must be a power of two.
pub fn fwht_rows(buf: &mut [f64], len: usize, width: usize) {
    debug_assert!(len.is_power_of_two());
    let mut h = 1;
    while h < len {
        for start in (0..len).step_by(2 * h) {
            for i in start..start + h {
                let (top, bottom) = buf.split_at_mut((i + h) * width);
                let x = &mut top[i * width..(i + 1) * width];
                let y = &mut bottom[..width];
                for (a, b) in x.iter_mut().zip(y.iter_mut()) {
                    let (u, v) = (*a, *b);
                    *a = u + v;
                    *b = u - v;
                }
            }
        }
        h *= 2;
    }
}

/// Sparse JL transform: every column of `S` has exactly `s` nonzeros
/// ±1/√s in distinct rows. Applied by streaming over the rows of `A`.
pub fn apply_sjlt(a: &DenseMatrix, m: usize, s: usize, rng: &mut RngStream) -> Result<DenseMatrix, SketchError> {
    check_sparsity(s, m)?;
    let (n, d) = a.shape();
    let mut out = DenseMatrix::zeros(m, d);
    let v = 1.0 / (s as f64).sqrt();
    for j in 0..n {
        let rows = rng.sample_distinct(m, s);
        let src = a.row(j);
        for r in rows {
            let w = rng.rademacher() * v;
            for (o, x) in out.row_mut(r).iter_mut().zip(src) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// Uniform sampling to `m2` rows followed by `inner` down to `m`.
pub fn apply_hybrid(
    a: &DenseMatrix,
    m: usize,
    m2: usize,
    inner: InnerSketch,
    rng: &mut RngStream,
) -> Result<DenseMatrix, SketchError> {
    if m > m2 {
        return Err(SketchError::HybridOrder { m, m2 });
    }
    let sampled = apply_uniform(a, m2, rng)?;
    match inner {
        InnerSketch::Gaussian => apply_gaussian(&sampled, m, rng),
        InnerSketch::Sjlt { s } => apply_sjlt(&sampled, m, s, rng),
    }
}
