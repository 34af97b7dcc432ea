//! Browser bindings: closed-form quantities and small experiment runs,
//! each returned as a JSON string. Errors come back as `{"error": ...}`.

use serde_json::{json, Value};
use sketchavg::calculus::{
    ihs_rate, lambda2_ridge_uncorrected_form, lambda2_star_newton, lambda2_star_ridge, predict_iterations,
    step_scalings, theta1, theta2, CalcError,
};
use sketchavg::experiment::{aggregate_csv, run_experiment, summary_json, ExperimentConfig};
use wasm_bindgen::prelude::*;

fn field(r: Result<f64, CalcError>) -> Value {
    match r {
        Ok(v) if v.is_finite() => json!(v),
        Ok(_) => Value::Null,
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// Moments, step scalings and IHS predictions for one `(m, d, q, eps)`.
pub fn theory_value(m: usize, d: usize, q: usize, eps: f64) -> Value {
    let steps = step_scalings(m, d);
    json!({
        "m": m,
        "d": d,
        "q": q,
        "theta1": field(theta1(m, d)),
        "theta2": field(theta2(m, d)),
        "alpha_unbiased": field(steps.clone().map(|s| s.alpha_unbiased)),
        "alpha_minvar": field(steps.map(|s| s.alpha_minvar)),
        "ihs_rate": field(ihs_rate(q, m, d)),
        "predict_iterations": field(predict_iterations(eps, q, m, d)),
    })
}

/// λ₂ choices for `points` sketch sizes spaced evenly over `[m_min, m_max]`.
pub fn lambda2_sweep_value(lambda1: f64, sigma: f64, d: usize, m_min: usize, m_max: usize, points: usize) -> Value {
    if m_min == 0 || m_max < m_min || points == 0 {
        return json!({ "error": "need 1 <= m_min <= m_max and points >= 1" });
    }
    let span = (m_max - m_min) as f64;
    let mut ms: Vec<usize> = (0..points)
        .map(|i| {
            let f = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
            m_min + (f * span).round() as usize
        })
        .collect();
    ms.dedup();
    let rows: Vec<Value> = ms
        .into_iter()
        .map(|m| {
            json!({
                "m": m,
                "ridge": field(lambda2_star_ridge(lambda1, d, m, sigma)),
                "uncorrected": field(lambda2_ridge_uncorrected_form(lambda1, d, m, sigma)),
                "newton": field(lambda2_star_newton(lambda1, d, m, sigma)),
            })
        })
        .collect();
    json!({ "lambda1": lambda1, "sigma": sigma, "d": d, "rows": rows })
}

/// Runs a TOML experiment config; returns its summary and aggregate CSV.
pub fn run_value(config_toml: &str) -> Value {
    let cfg = match ExperimentConfig::from_toml(config_toml) {
        Ok(c) => c,
        Err(e) => return json!({ "error": e.to_string() }),
    };
    match run_experiment(&cfg) {
        Ok(out) => json!({ "summary": summary_json(&out), "aggregate_csv": aggregate_csv(&out) }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

#[wasm_bindgen]
pub fn theory(m: usize, d: usize, q: usize, eps: f64) -> String {
    theory_value(m, d, q, eps).to_string()
}

#[wasm_bindgen]
pub fn lambda2_sweep(lambda1: f64, sigma: f64, d: usize, m_min: usize, m_max: usize, points: usize) -> String {
    lambda2_sweep_value(lambda1, sigma, d, m_min, m_max, points).to_string()
}

#[wasm_bindgen]
pub fn run(config_toml: &str) -> String {
    run_value(config_toml).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theory_reports_errors_per_field() {
        let v = theory_value(202, 200, 10, 1e-6);
        assert!((v["theta1"].as_f64().unwrap() - 202.0).abs() < 1e-9);
        assert!(v["theta2"]["error"].is_string());
        let ok = theory_value(400, 200, 10, 1e-6);
        assert!((ok["predict_iterations"].as_f64().unwrap() - 6.0397).abs() < 1e-3);
    }

    #[test]
    fn sweep_marks_infeasible_ridge_points() {
        let v = lambda2_sweep_value(5.0, 1.0, 100, 10, 40, 4);
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0]["ridge"]["error"].is_string());
        let at20 = rows.iter().find(|r| r["m"] == 20).unwrap();
        assert!((at20["ridge"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!(rows.iter().all(|r| r["newton"].is_f64()));
    }

    #[test]
    fn run_small_config() {
        let v = run_value(
            r#"
[problem]
kind = "lstsq"
n = 60
d = 4
noise = 0.1
[cluster]
q = 2
m = 20
sketch = { kind = "gaussian" }
[solver]
algorithm = "ihs"
iterations = 3
"#,
        );
        assert!(v["aggregate_csv"].as_str().unwrap().starts_with("variant,t,"));
        assert!(run_value("nonsense = [").get("error").is_some());
    }
}
