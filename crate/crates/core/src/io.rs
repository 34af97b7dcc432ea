//! On-disk formats: SAMX binary matrices, headerless CSV matrices, and the
//! JSON manifest that makes a generated problem replayable.
//!
//! SAMX layout: the 4 magic bytes `SAMX`, rows and cols as little-endian
//! `u32`, then `rows·cols` little-endian `f64` in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{DenseMatrix, DenseVector};
use crate::problems::{GenOptions, GeneratedProblem, ProblemError, ProblemKind, ProblemModel};

const MAGIC: &[u8; 4] = b"SAMX";
const HEADER: usize = 12;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn encode_samx(a: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * a.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(a.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(a.cols() as u32).to_le_bytes());
    for v in a.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_samx`]; `path` only labels errors.
pub fn decode_samx(bytes: &[u8], path: &Path) -> Result<DenseMatrix, IoError> {
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(format_err(path, "not a SAMX file (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    let want = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| format_err(path, "header size overflows"))?;
    if bytes.len() - HEADER != want {
        return Err(format_err(
            path,
            format!("{rows}x{cols} header needs {want} payload bytes, found {}", bytes.len() - HEADER),
        ));
    }
    let data = bytes[HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseMatrix::new(rows, cols, data).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_samx(path: &Path, a: &DenseMatrix) -> Result<(), IoError> {
    if a.rows() > u32::MAX as usize || a.cols() > u32::MAX as usize {
        return Err(format_err(path, "matrix too large for a u32 header"));
    }
    fs::write(path, encode_samx(a)).map_err(fs_err(path))
}

pub fn read_samx(path: &Path) -> Result<DenseMatrix, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    decode_samx(&bytes, path)
}

/// A vector is stored as an `n × 1` matrix.
pub fn write_samx_vector(path: &Path, v: &[f64]) -> Result<(), IoError> {
    let m = DenseMatrix::new(v.len(), 1, v.to_vec()).map_err(|e| format_err(path, e.to_string()))?;
    write_samx(path, &m)
}

pub fn read_samx_vector(path: &Path) -> Result<DenseVector, IoError> {
    let m = read_samx(path)?;
    if m.cols() != 1 {
        return Err(format_err(path, format!("expected a column vector, found {} columns", m.cols())));
    }
    Ok(DenseVector::from(m.as_slice().to_vec()))
}

/// Headerless CSV, one matrix row per line, shortest round-trip floats.
pub fn to_csv(a: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..a.rows() {
        let line: Vec<String> = a.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str, path: &Path) -> Result<DenseMatrix, IoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", lineno + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(
                    path,
                    format!("line {}: {} fields, expected {}", lineno + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format_err(path, "empty CSV"));
    }
    Ok(DenseMatrix::from_rows(&rows))
}

pub fn write_csv(path: &Path, a: &DenseMatrix) -> Result<(), IoError> {
    fs::write(path, to_csv(a)).map_err(fs_err(path))
}

pub fn read_csv(path: &Path) -> Result<DenseMatrix, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    parse_csv(&text, path)
}

/// Everything needed to reload, or regenerate, a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemManifest {
    pub kind: ProblemKind,
    pub n: usize,
    pub d: usize,
    pub lambda1: f64,
    pub bound: f64,
    pub noise: f64,
    pub seed: u64,
    pub gen: GenOptions,
    /// File names relative to the manifest's directory.
    pub a_file: String,
    pub target_file: String,
    pub x0_file: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn target_name(kind: ProblemKind) -> &'static str {
    match kind {
        ProblemKind::Lstsq | ProblemKind::Ridge => "b",
        ProblemKind::Logistic => "y",
        ProblemKind::Barrier => "c",
    }
}

/// Writes `A.samx`, `{b,y,c}.samx`, `x0.samx` and `manifest.json` into `dir`.
pub fn save_problem(
    dir: &Path,
    problem: &GeneratedProblem,
    noise: f64,
    seed: u64,
    gen: &GenOptions,
) -> Result<ProblemManifest, IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let p = &problem.model;
    let manifest = ProblemManifest {
        kind: p.kind(),
        n: p.n(),
        d: p.d(),
        lambda1: p.lambda1(),
        bound: p.bound(),
        noise,
        seed,
        gen: *gen,
        a_file: "A.samx".into(),
        target_file: format!("{}.samx", target_name(p.kind())),
        x0_file: Some("x0.samx".into()),
    };
    write_samx(&dir.join(&manifest.a_file), p.a())?;
    write_samx_vector(&dir.join(&manifest.target_file), p.target())?;
    write_samx_vector(&dir.join("x0.samx"), &problem.x0)?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| IoError::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, json + "\n").map_err(fs_err(&path))?;
    Ok(manifest)
}

/// Reloads a problem saved by [`save_problem`], with its planted `x₀` if present.
pub fn load_problem(dir: &Path) -> Result<(ProblemManifest, ProblemModel, Option<DenseVector>), IoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
    let manifest: ProblemManifest = serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.clone(),
        source,
    })?;
    let a_path = dir.join(&manifest.a_file);
    let a = read_samx(&a_path)?;
    if (a.rows(), a.cols()) != (manifest.n, manifest.d) {
        return Err(format_err(
            &a_path,
            format!("matrix is {}x{}, manifest says {}x{}", a.rows(), a.cols(), manifest.n, manifest.d),
        ));
    }
    let t = read_samx_vector(&dir.join(&manifest.target_file))?;
    let model = match manifest.kind {
        ProblemKind::Lstsq => ProblemModel::least_squares(a, t)?,
        ProblemKind::Ridge => ProblemModel::ridge(a, t, manifest.lambda1)?,
        ProblemKind::Logistic => ProblemModel::logistic(a, t, manifest.lambda1)?,
        ProblemKind::Barrier => ProblemModel::barrier(a, t, manifest.lambda1, manifest.bound)?,
    };
    let x0 = match &manifest.x0_file {
        Some(f) => Some(read_samx_vector(&dir.join(f))?),
        None => None,
    };
    Ok((manifest, model, x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::generate_problem;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn samx_header_layout() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]]);
        let bytes = encode_samx(&a);
        assert_eq!(&bytes[..4], b"SAMX");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 6 * 8);
        assert_eq!(&bytes[12..20], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[52..60], &6.5f64.to_le_bytes());
    }

    #[test]
    fn samx_rejects_truncation_and_magic() {
        let a = DenseMatrix::identity(3);
        let mut bytes = encode_samx(&a);
        let p = Path::new("m.samx");
        bytes.pop();
        assert!(matches!(decode_samx(&bytes, p), Err(IoError::Format { .. })));
        bytes[0] = b'X';
        assert!(decode_samx(&bytes, p).is_err());
    }

    #[test]
    fn csv_reports_ragged_line() {
        let err = parse_csv("1,2\n3\n", Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn problem_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gen = GenOptions {
            lambda1: 0.5,
            ..Default::default()
        };
        let mut rng = RngStream::new(3, 0);
        let g = generate_problem(ProblemKind::Ridge, 40, 4, 0.1, &mut rng, &gen).unwrap();
        save_problem(dir.path(), &g, 0.1, 3, &gen).unwrap();
        let (m, p, x0) = load_problem(dir.path()).unwrap();
        assert_eq!(m.kind, ProblemKind::Ridge);
        assert_eq!(p.a().as_slice(), g.model.a().as_slice());
        assert_eq!(&p.target()[..], &g.model.target()[..]);
        assert_eq!(p.lambda1(), 0.5);
        assert_eq!(&x0.unwrap()[..], &g.x0[..]);
    }

    proptest! {
        #[test]
        fn samx_and_csv_round_trip(rows in 1usize..6, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = RngStream::new(seed, 0);
            let a = DenseMatrix::gaussian(rows, cols, 3.0, &mut rng);
            let p = Path::new("t");
            let bin = decode_samx(&encode_samx(&a), p).unwrap();
            let text = parse_csv(&to_csv(&a), p).unwrap();
            prop_assert_eq!(bin.as_slice(), a.as_slice());
            prop_assert_eq!(text.as_slice(), a.as_slice());
        }
    }
}
