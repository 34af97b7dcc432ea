//! TOML experiment configuration with sections `[problem]`, `[cluster]`,
//! `[solver]` and `[output]`.
//!
//! Fields marked as sweepable accept a single value or a list; the runner
//! takes the Cartesian product and runs every combination (a variant) on
//! the same problem with the same sketch seeds.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{lambda2_star_ridge, step_scalings, CalcError};
use crate::problems::{GenOptions, ProblemKind, SigmaMode};
use crate::sketch::{InnerSketch, SketchKind, SketchSpec};
use crate::solvers::{Execution, NewtonCorrection, RidgeCorrection, StepPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    /// TOML syntax or schema error; the message carries line and column.
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("variant {variant}: {source}")]
    Infeasible {
        variant: String,
        #[source]
        source: CalcError,
    },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        msg: msg.into(),
    }
}

/// A single value or a list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub cluster: ClusterSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub identical_sv: bool,
    /// Singular value used when `identical_sv` is set.
    #[serde(default = "one")]
    pub sv: f64,
    #[serde(default = "default_bound")]
    pub bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_scale: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_bound() -> f64 {
    0.01
}

impl ProblemSection {
    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            identical_sv: self.identical_sv,
            sigma: self.sv,
            lambda1: self.lambda1,
            bound: self.bound,
            a_scale: self.a_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchName {
    Gaussian,
    Hadamard,
    Uniform,
    Sjlt,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerName {
    Gaussian,
    Sjlt,
}

/// Sketch family without its row count; `m` comes from the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchConfig {
    pub kind: SketchName,
    /// Nonzeros per column (sjlt, or hybrid with an sjlt inner sketch).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    /// Intermediate row count for hybrid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<InnerName>,
}

impl SketchConfig {
    pub fn spec(&self, m: usize) -> Result<SketchSpec, ConfigError> {
        let need_s = |what| self.s.ok_or_else(|| invalid("cluster.sketch.s", format!("required for {what}")));
        let kind = match self.kind {
            SketchName::Gaussian => SketchKind::Gaussian,
            SketchName::Hadamard => SketchKind::Hadamard,
            SketchName::Uniform => SketchKind::Uniform,
            SketchName::Sjlt => SketchKind::Sjlt { s: need_s("sjlt")? },
            SketchName::Hybrid => {
                let m2 = self.m2.ok_or_else(|| invalid("cluster.sketch.m2", "required for hybrid"))?;
                let inner = match self.inner.unwrap_or(InnerName::Gaussian) {
                    InnerName::Gaussian => InnerSketch::Gaussian,
                    InnerName::Sjlt => InnerSketch::Sjlt {
                        s: need_s("an sjlt inner sketch")?,
                    },
                };
                SketchKind::Hybrid { m2, inner }
            }
        };
        let spec = SketchSpec { kind, m };
        spec.validate().map_err(|e| invalid("cluster.sketch", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    /// Worker count (sweepable). Ignored when `m_list` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<OneOrMany<usize>>,
    /// Common sketch size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Per-worker sketch sizes; sets `q = m_list.len()`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<usize>>,
    /// Sketch family (sweepable).
    pub sketch: OneOrMany<SketchConfig>,
    #[serde(default = "default_execution")]
    pub execution: Execution,
    #[serde(default)]
    pub partitioned: bool,
}

fn default_execution() -> Execution {
    Execution::Serial
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ihs,
    RidgeAverage,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionName {
    /// Zero-bias λ₂ (ridge root, or the Newton formula).
    ZeroBias,
    /// λ₂ = λ₁.
    Vanilla,
    /// `λ₁ − (d/m)/(1 + λ₁/σ²)`, ridge only.
    UncorrectedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepName {
    Unbiased,
    MinVariance,
}

/// A named step policy or a fixed scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepChoice {
    Named(StepName),
    Fixed(f64),
}

impl StepChoice {
    pub fn policy(self) -> StepPolicy {
        match self {
            StepChoice::Named(StepName::Unbiased) => StepPolicy::Unbiased,
            StepChoice::Named(StepName::MinVariance) => StepPolicy::MinVariance,
            StepChoice::Fixed(a) => StepPolicy::Fixed(a),
        }
    }
}

impl fmt::Display for StepChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepChoice::Named(StepName::Unbiased) => f.write_str("unbiased"),
            StepChoice::Named(StepName::MinVariance) => f.write_str("min-variance"),
            StepChoice::Fixed(a) => write!(f, "alpha={a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub algorithm: Algorithm,
    /// Sweepable; used by ridge-average and by newton on regularized problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<OneOrMany<CorrectionName>>,
    /// Sweepable; used by newton on unregularized problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<OneOrMany<StepChoice>>,
    /// σ for ridge-average corrections; overrides `sigma_mode` there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_mode: Option<SigmaMode>,
    /// IHS iterations or the Newton iteration cap.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// IHS: target ‖Ae‖² ratio. Newton: decrement tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// IHS step size; defaults to 1/θ₁ per worker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

fn default_iterations() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Emit `plot.svg` of the mean curve of `plot_metric`.
    #[serde(default = "yes")]
    pub svg: bool,
    #[serde(default = "default_metric")]
    pub plot_metric: Metric,
}

fn default_trials() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_metric() -> Metric {
    Metric::CostGap
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            master_seed: 0,
            svg: true,
            plot_metric: default_metric(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CostGap,
    #[serde(rename = "errA_sq")]
    ErrASq,
    RelXErr,
}

/// One fully resolved combination of the sweepable fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub sketches: Vec<SketchSpec>,
    pub correction: Option<CorrectionName>,
    pub step: Option<StepChoice>,
}

impl Variant {
    pub fn q(&self) -> usize {
        self.sketches.len()
    }

    pub fn ridge_correction(&self) -> RidgeCorrection {
        match self.correction.unwrap_or(CorrectionName::ZeroBias) {
            CorrectionName::ZeroBias => RidgeCorrection::ZeroBias,
            CorrectionName::Vanilla => RidgeCorrection::Vanilla,
            CorrectionName::UncorrectedForm => RidgeCorrection::UncorrectedForm,
        }
    }

    pub fn newton_correction(&self) -> NewtonCorrection {
        match self.correction {
            Some(CorrectionName::Vanilla) => NewtonCorrection::Vanilla,
            _ => NewtonCorrection::BiasCorrected,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn m_list(&self, q: usize) -> Result<Vec<usize>, ConfigError> {
        match (&self.cluster.m_list, self.cluster.m) {
            (Some(list), None) => Ok(list.clone()),
            (None, Some(m)) => Ok(vec![m; q]),
            (Some(_), Some(_)) => Err(invalid("cluster", "give either m or m_list, not both")),
            (None, None) => Err(invalid("cluster", "one of m or m_list is required")),
        }
    }

    fn q_values(&self) -> Result<Vec<usize>, ConfigError> {
        match (&self.cluster.m_list, &self.cluster.q) {
            (Some(list), None) => Ok(vec![list.len()]),
            (Some(list), Some(q)) => {
                if q.to_vec() != vec![list.len()] {
                    return Err(invalid("cluster.q", "must equal m_list length when both are given"));
                }
                Ok(vec![list.len()])
            }
            (None, Some(q)) => Ok(q.to_vec()),
            (None, None) => Ok(vec![1]),
        }
    }

    fn uses_correction(&self) -> bool {
        match self.solver.algorithm {
            Algorithm::RidgeAverage => true,
            Algorithm::Newton => self.problem.lambda1 > 0.0 && self.problem.kind != ProblemKind::Lstsq,
            Algorithm::Ihs => false,
        }
    }

    fn uses_step(&self) -> bool {
        self.solver.algorithm == Algorithm::Newton && !self.uses_correction()
    }

    /// Every variant, in sweep order: sketch, then q, then correction or step.
    pub fn variants(&self) -> Result<Vec<Variant>, ConfigError> {
        let corrections: Vec<Option<CorrectionName>> = match (&self.solver.correction, self.uses_correction()) {
            (Some(c), true) => c.to_vec().into_iter().map(Some).collect(),
            (None, true) => vec![Some(CorrectionName::ZeroBias)],
            _ => vec![None],
        };
        let steps: Vec<Option<StepChoice>> = match (&self.solver.step, self.uses_step()) {
            (Some(s), true) => s.to_vec().into_iter().map(Some).collect(),
            (None, true) => vec![Some(StepChoice::Named(StepName::Unbiased))],
            _ => vec![None],
        };
        let sketches = self.cluster.sketch.to_vec();
        let qs = self.q_values()?;
        let mut out = Vec::new();
        for sk in &sketches {
            for &q in &qs {
                let specs = self
                    .m_list(q)?
                    .into_iter()
                    .map(|m| sk.spec(m))
                    .collect::<Result<Vec<_>, _>>()?;
                for c in &corrections {
                    for s in &steps {
                        let mut label = format!("{}_q{q}", sketch_label(sk));
                        if let Some(c) = c {
                            label.push('_');
                            label.push_str(correction_label(*c));
                        }
                        if let Some(s) = s {
                            label.push('_');
                            label.push_str(&s.to_string());
                        }
                        out.push(Variant {
                            label,
                            sketches: specs.clone(),
                            correction: *c,
                            step: *s,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Checks shapes and every feasibility condition that does not need
    /// the generated data. σ-dependent checks that need data run again at
    /// solver start.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.problem;
        if p.d == 0 || p.n < p.d {
            return Err(invalid("problem", format!("need n >= d >= 1, got n={}, d={}", p.n, p.d)));
        }
        if !(p.lambda1 >= 0.0) {
            return Err(invalid("problem.lambda1", "must be non-negative"));
        }
        if !(p.noise >= 0.0) {
            return Err(invalid("problem.noise", "must be non-negative"));
        }
        if !(p.sv > 0.0) {
            return Err(invalid("problem.sv", "must be positive"));
        }
        if p.kind == ProblemKind::Barrier && !(p.bound > 0.0) {
            return Err(invalid("problem.bound", "must be positive"));
        }
        if matches!(p.kind, ProblemKind::Ridge | ProblemKind::Barrier) && p.lambda1 == 0.0 {
            return Err(invalid("problem.lambda1", format!("{} needs lambda1 > 0", p.kind)));
        }
        if self.output.trials == 0 {
            return Err(invalid("output.trials", "must be at least 1"));
        }
        if self.solver.iterations == 0 && self.solver.algorithm != Algorithm::RidgeAverage {
            return Err(invalid("solver.iterations", "must be at least 1"));
        }
        if let Some(s) = self.solver.sigma {
            if !(s > 0.0) {
                return Err(invalid("solver.sigma", "must be positive"));
            }
            if self.solver.algorithm != Algorithm::RidgeAverage {
                return Err(invalid("solver.sigma", "only ridge-average takes an explicit sigma; use sigma_mode"));
            }
        }
        if let Some(OneOrMany::Many(v)) = &self.cluster.q {
            if v.is_empty() {
                return Err(invalid("cluster.q", "empty list"));
            }
        }
        if self.q_values()?.contains(&0) {
            return Err(invalid("cluster.q", "must be at least 1"));
        }
        match self.solver.algorithm {
            Algorithm::Ihs if p.kind != ProblemKind::Lstsq => {
                return Err(invalid("solver.algorithm", "ihs needs problem.kind = \"lstsq\""));
            }
            Algorithm::RidgeAverage if !p.kind.is_quadratic() => {
                return Err(invalid("solver.algorithm", "ridge-average needs lstsq or ridge"));
            }
            _ => {}
        }
        let variants = self.variants()?;
        for v in &variants {
            for (k, spec) in v.sketches.iter().enumerate() {
                let rows = if p.kind == ProblemKind::Barrier { 2 * p.n } else { p.n };
                spec.validate_for(rows)
                    .map_err(|e| invalid("cluster", format!("variant {}, worker {k}: {e}", v.label)))?;
            }
            self.check_feasibility(v)?;
        }
        Ok(())
    }

    fn check_feasibility(&self, v: &Variant) -> Result<(), ConfigError> {
        let d = self.problem.d;
        let wrap = |index: usize, e: CalcError| ConfigError::Infeasible {
            variant: v.label.clone(),
            source: CalcError::Worker {
                index,
                source: Box::new(e),
            },
        };
        for (k, spec) in v.sketches.iter().enumerate() {
            let m = spec.m;
            match self.solver.algorithm {
                Algorithm::Ihs if self.solver.mu.is_none() => {
                    crate::calculus::theta1(m, d).map_err(|e| wrap(k, e))?;
                }
                Algorithm::RidgeAverage => {
                    // Feasibility only depends on σ when m <= d; the
                    // explicit σ is checked here, heuristics at run time.
                    if let (Some(sigma), Some(CorrectionName::ZeroBias)) = (self.solver.sigma, v.correction) {
                        lambda2_star_ridge(self.problem.lambda1, d, m, sigma).map_err(|e| wrap(k, e))?;
                    }
                }
                Algorithm::Newton => {
                    if let Some(StepChoice::Named(_)) = v.step {
                        step_scalings(m, d).map_err(|e| wrap(k, e))?;
                    }
                    if v.correction == Some(CorrectionName::UncorrectedForm) {
                        return Err(invalid("solver.correction", "uncorrected-form applies to ridge-average only"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn sketch_label(s: &SketchConfig) -> String {
    match s.kind {
        SketchName::Gaussian => "gaussian".into(),
        SketchName::Hadamard => "hadamard".into(),
        SketchName::Uniform => "uniform".into(),
        SketchName::Sjlt => format!("sjlt-s{}", s.s.unwrap_or(0)),
        SketchName::Hybrid => match s.inner.unwrap_or(InnerName::Gaussian) {
            InnerName::Gaussian => format!("hybrid-m2-{}-gaussian", s.m2.unwrap_or(0)),
            InnerName::Sjlt => format!("hybrid-m2-{}-sjlt-s{}", s.m2.unwrap_or(0), s.s.unwrap_or(0)),
        },
    }
}

fn correction_label(c: CorrectionName) -> &'static str {
    match c {
        CorrectionName::ZeroBias => "zero-bias",
        CorrectionName::Vanilla => "vanilla",
        CorrectionName::UncorrectedForm => "uncorrected-form",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG: &str = r#"
[problem]
kind = "ridge"
n = 1000
d = 100
lambda1 = 5.0
identical_sv = true

[cluster]
q = 400
m = 20
sketch = { kind = "gaussian" }

[solver]
algorithm = "ridge-average"
correction = ["zero-bias", "vanilla"]
sigma = 1.0

[output]
trials = 3
master_seed = 11
"#;

    #[test]
    fn parses_and_expands_variants() {
        let cfg = ExperimentConfig::from_toml(FIG).unwrap();
        let v = cfg.variants().unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].label, "gaussian_q400_zero-bias");
        assert_eq!(v[1].ridge_correction(), RidgeCorrection::Vanilla);
        assert_eq!(v[0].q(), 400);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(FIG).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_field_names_line() {
        let text = FIG.replace("lambda1 = 5.0", "lambda1 = 5.0\nlamda2 = 1.0");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("lamda2"), "{err}");
        assert!(err.contains("line 7"), "{err}");
    }

    #[test]
    fn infeasible_correction_is_rejected_before_running() {
        let text = FIG.replace("lambda1 = 5.0", "lambda1 = 1.0");
        match ExperimentConfig::from_toml(&text).unwrap_err() {
            ConfigError::Infeasible { source, .. } => assert!(source.to_string().contains("no unbiased lambda2")),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn step_sweep_mixes_names_and_numbers() {
        let text = r#"
[problem]
kind = "lstsq"
n = 200
d = 20
[cluster]
q = [2, 10]
m = 60
sketch = { kind = "gaussian" }
[solver]
algorithm = "newton"
step = ["unbiased", "min-variance", 0.5]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let v = cfg.variants().unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v[2].step, Some(StepChoice::Fixed(0.5)));
        assert_eq!(v[5].label, "gaussian_q10_alpha=0.5");
        assert_eq!(cfg, ExperimentConfig::from_toml(&cfg.to_toml()).unwrap());
    }

    #[test]
    fn ihs_rejects_undefined_default_step() {
        let text = r#"
[problem]
kind = "lstsq"
n = 200
d = 20
[cluster]
m = 21
sketch = { kind = "gaussian" }
[solver]
algorithm = "ihs"
"#;
        assert!(matches!(
            ExperimentConfig::from_toml(text).unwrap_err(),
            ConfigError::Infeasible { .. }
        ));
    }
}
