//! JSON reports. Numbers carry 17 significant digits so doubles round-trip exactly;
//! complex numbers are `{re, im}` objects.

use qchern::chern::QuadOptions;
use qchern::config::Tolerances;
use qchern::verify::Check;
use qchern::zeta::{ResidueReport, ZetaOptions};
use num_complex::Complex64 as C;
use serde::Serialize;
use serde_json::{json, Map, Number, Value};
use std::fmt::Write;

#[derive(Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub stage: &'static str,
    pub message: String,
}

/// `x` with 17 significant digits (`1.2345678901234567e-3`).
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        // Normalizes −0 so identical results serialize identically.
        return "0".into();
    }
    format!("{x:.16e}")
}

pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(fmt17(x).parse::<Number>().expect("valid JSON number"))
    } else {
        Value::Null
    }
}

pub fn complex(c: C) -> Value {
    json!({ "re": num(c.re), "im": num(c.im) })
}

pub struct ReportFields<'a> {
    pub model: &'a str,
    pub eta: &'a str,
    pub r: Option<f64>,
    /// Value and self-convergence estimate.
    pub lhs: Option<(C, f64)>,
    pub residues: Option<&'a ResidueReport>,
    pub extrapolated_limit: Option<(C, f64)>,
    pub quad: &'a QuadOptions,
    pub zeta: &'a ZetaOptions,
    pub timing: Value,
}

fn tolerances_json(quad: &QuadOptions) -> Value {
    let t = Tolerances::default();
    json!({
        "quadrature_rel": num(quad.rel_tol),
        "finite_r": num(t.finite_r),
        "residue_floor": num(t.residue_floor),
        "toy_residue_rel": num(t.toy_residue_rel),
    })
}

pub fn report_document(f: ReportFields<'_>) -> Value {
    let mut m = Map::new();
    m.insert("model".into(), json!(f.model));
    m.insert("eta".into(), json!(f.eta));
    m.insert("R".into(), f.r.map_or(Value::Null, num));
    m.insert("lhs_integral".into(), f.lhs.map_or(Value::Null, |(v, _)| complex(v)));
    m.insert("lhs_error_estimate".into(), f.lhs.map_or(Value::Null, |(_, e)| num(e)));
    match f.residues {
        Some(rep) => {
            let list: Vec<Value> = rep
                .residues
                .iter()
                .map(|e| {
                    json!({
                        "z0_re": num(e.z0.re),
                        "z0_im": num(e.z0.im),
                        "residue_re": num(e.residue.re),
                        "residue_im": num(e.residue.im),
                        "provenance": e.provenance.as_str(),
                    })
                })
                .collect();
            // Summed in listed order so a reader recomputing it gets the same bits.
            let sum = rep.residues.iter().fold(C::new(0.0, 0.0), |acc, e| acc + e.residue);
            m.insert("residues".into(), Value::Array(list));
            m.insert("residue_sum".into(), complex(sum));
            m.insert("tail_bound".into(), num(rep.tail_bound));
            m.insert("zmax".into(), num(rep.zmax));
            m.insert("residue_radius".into(), num(rep.radius));
            m.insert("pole_collisions".into(), Value::Array(rep.collisions.iter().map(|c| complex(*c)).collect()));
        }
        None => {
            m.insert("residues".into(), Value::Null);
            m.insert("residue_sum".into(), Value::Null);
            m.insert("tail_bound".into(), Value::Null);
        }
    }
    m.insert(
        "extrapolated_limit".into(),
        f.extrapolated_limit.map_or(Value::Null, |(v, e)| json!({ "value": complex(v), "error_estimate": num(e) })),
    );
    m.insert("tolerances".into(), tolerances_json(f.quad));
    m.insert(
        "quadrature_levels".into(),
        json!({
            "current": f.quad.level,
            "base": f.zeta.base_level,
            "sphere": f.zeta.sphere_level,
            "contour": f.zeta.contour_level,
        }),
    );
    m.insert("timing".into(), f.timing);
    Value::Object(m)
}

pub fn check_json(c: &Check) -> Value {
    json!({
        "suite": c.suite.as_str(),
        "check": c.name,
        "measured": num(c.measured),
        "tolerance": num(c.tolerance),
        "bound": if c.lower_bound { "lower" } else { "upper" },
        "passed": c.passed,
        "note": c.note,
    })
}

pub fn verify_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.chars().count()).max().unwrap_or(0).min(90);
    let mut s = String::new();
    let _ = writeln!(s, "{:<6}  {:<7}  {:<width$}  {:>12}  {:>12}", "status", "suite", "check", "measured", "tolerance");
    for c in checks {
        let cmp = if c.lower_bound { "≥" } else { "≤" };
        let _ = writeln!(
            s,
            "{:<6}  {:<7}  {:<width$}  {:>12.4e}  {cmp}{:>11.4e}{}",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite.as_str(),
            c.name,
            c.measured,
            c.tolerance,
            c.note.as_ref().map(|n| format!("  ({n})")).unwrap_or_default(),
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(s, "{} checks, {failed} failed", checks.len());
    s
}

pub fn to_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}
