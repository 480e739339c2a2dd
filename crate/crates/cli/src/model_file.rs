//! TOML model files: a built-in model plus overrides.
//!
//! ```toml
//! [model]
//! name = "squashed-sphere"
//! base = "sphere-derham"     # built-in to start from
//! fiber_dim = 2              # optional, checked against the base
//! ranks = [2, 2]             # optional, checked against the base
//!
//! [metric]                   # de Rham models only: g = A² du² + B² dv²
//! b = "sin(phi)"
//! scale = "3/2"              # g ↦ λ² g
//! conformal = "cos(phi)/4"   # g ↦ e^{2f} g
//!
//! [theta]                    # connection on the base, one matrix per differential
//! dpsi = [["0", "-cos(phi)", "0", "0"], ...]
//!
//! [symbol]                   # the odd symbol L as a matrix in base and fiber coordinates
//! matrix = [["0", "xi1"], ["-xi1", "0"]]
//!
//! [eta.bump]                 # extra closed test form; keys are wedge products of differentials
//! terms = { "dphi^dpsi" = "sin(phi)*cos(phi)" }
//! exact = true
//!
//! [quadrature]
//! level = 1
//! rel_tol = 1e-6
//!
//! [zeta]
//! R = [1.0, 0.5, 0.25]
//! zmax = 20.0
//! ```

use qchern::chern::QuadOptions;
use qchern::exprkit::{parse, ScalarExpr};
use qchern::graded::{ChartFrame, FormElement, GradedElement, Matrix, Multiindex};
use qchern::models::{builtin, de_rham_surface, ModelKind, ModelSpec, TestForm};
use qchern::superconn::SuperconnectionLocal;
use qchern::zeta::{ZetaOptions, ZetaPath, DEFAULT_ZMAX};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot read model file: {0}")]
    Io(String),
    #[error("malformed model file: {0}")]
    Syntax(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid expression in {field}: {message}")]
    Expression { field: String, message: String },
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    model: RawModel,
    metric: Option<RawMetric>,
    theta: Option<BTreeMap<String, Vec<Vec<String>>>>,
    symbol: Option<RawSymbol>,
    #[serde(default)]
    eta: BTreeMap<String, RawEta>,
    quadrature: Option<RawQuadrature>,
    zeta: Option<RawZeta>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: Option<String>,
    base: String,
    fiber_dim: Option<usize>,
    ranks: Option<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetric {
    a: Option<String>,
    b: Option<String>,
    scale: Option<String>,
    conformal: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSymbol {
    matrix: Vec<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEta {
    terms: BTreeMap<String, String>,
    #[serde(default)]
    exact: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadrature {
    level: Option<u32>,
    rel_tol: Option<f64>,
    base_level: Option<u32>,
    sphere_level: Option<u32>,
    contour_level: Option<u32>,
    clearance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawZeta {
    #[serde(rename = "R")]
    r: Option<Vec<f64>>,
    zmax: Option<f64>,
    path: Option<String>,
}

/// A loaded model with its run settings.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: ModelSpec,
    pub quad: QuadOptions,
    pub zeta: ZetaOptions,
    pub radii: Option<Vec<f64>>,
    pub zmax: f64,
    pub path: Option<ZetaPath>,
}

impl LoadedModel {
    pub fn builtin(name: &str) -> Result<Self, ModelFileError> {
        let model = builtin(name).map_err(|_| ModelFileError::UnknownModel(name.to_string()))?;
        Ok(Self { model, quad: QuadOptions::default(), zeta: ZetaOptions::default(), radii: None, zmax: DEFAULT_ZMAX, path: None })
    }
}

fn expr(field: &str, s: &str) -> Result<ScalarExpr, ModelFileError> {
    parse(s).map(|e| e.simplify()).map_err(|e| ModelFileError::Expression { field: field.to_string(), message: e.to_string() })
}

fn matrix(field: &str, rows: &[Vec<String>], n: usize) -> Result<Matrix<ScalarExpr>, ModelFileError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ModelFileError::Dimension(format!("{field} must be {n}×{n}")));
    }
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, s)| expr(&format!("{field}[{i}][{j}]"), s)).collect())
        .collect::<Result<Vec<Vec<_>>, _>>()?;
    Matrix::from_rows(rows).map_err(|e| ModelFileError::Dimension(e.to_string()))
}

/// `"1"`, `"dphi"`, `"dphi^dpsi"` → multiindex on `frame`.
fn differential(frame: &Arc<ChartFrame>, key: &str) -> Result<Multiindex, ModelFileError> {
    if key.trim() == "1" {
        return Ok(Multiindex::EMPTY);
    }
    let mut idx = Vec::new();
    for part in key.split('^').map(str::trim) {
        let name = part.strip_prefix('d').unwrap_or(part);
        let i = frame.index_of(name).ok_or_else(|| ModelFileError::Dimension(format!("`{part}` is not a base differential")))?;
        if idx.contains(&i) {
            return Err(ModelFileError::Dimension(format!("repeated differential in `{key}`")));
        }
        idx.push(i);
    }
    idx.sort_unstable();
    Multiindex::new(&idx).map_err(|e| ModelFileError::Dimension(e.to_string()))
}

pub fn load(text: &str) -> Result<LoadedModel, ModelFileError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| ModelFileError::Syntax(e.to_string()))?;
    let mut out = LoadedModel::builtin(&raw.model.base)?;
    let mut m = out.model.clone();

    if let Some(g) = &raw.metric {
        let base = m.metric.clone().filter(|_| m.kind == ModelKind::DeRham).ok_or_else(|| {
            ModelFileError::Unsupported(format!("metric overrides apply to de Rham models, not `{}`", raw.model.base))
        })?;
        let mut metric = base;
        if let Some(a) = &g.a {
            metric.a = expr("metric.a", a)?;
        }
        if let Some(b) = &g.b {
            metric.b = expr("metric.b", b)?;
        }
        if let Some(l) = &g.scale {
            metric = metric.scaled(expr("metric.scale", l)?);
        }
        if let Some(f) = &g.conformal {
            metric = metric.conformal(&expr("metric.conformal", f)?);
        }
        let name = m.name.clone();
        m = de_rham_surface(&metric).map_err(|e| ModelFileError::Unsupported(e.to_string()))?;
        m.name = name;
    }

    let rank = m.sc.frame().rank();
    if let Some(theta) = &raw.theta {
        let mut terms = Vec::new();
        for (key, rows) in theta {
            let j = differential(&m.base_frame, key)?;
            if j.len() != 1 {
                return Err(ModelFileError::Dimension(format!("theta.{key} is not a single differential")));
            }
            terms.push((j, matrix(&format!("theta.{key}"), rows, rank)?));
        }
        let t = GradedElement::from_terms(&m.base_frame, terms).map_err(|e| ModelFileError::Dimension(e.to_string()))?;
        m = m.with_connection(&t).map_err(|e| ModelFileError::Unsupported(e.to_string()))?;
    }

    if let Some(sym) = &raw.symbol {
        let a = matrix("symbol.matrix", &sym.matrix, rank)?;
        let l = GradedElement::from_matrix(m.sc.frame(), Multiindex::EMPTY, a).map_err(|e| ModelFileError::Dimension(e.to_string()))?;
        m.sc = SuperconnectionLocal::new(m.sc.theta().clone(), l).map_err(|e| ModelFileError::Unsupported(e.to_string()))?;
        m.kind = ModelKind::Custom;
        m.bundle_curvature = None;
    }

    for (name, e) in &raw.eta {
        let mut terms = Vec::new();
        for (key, c) in &e.terms {
            terms.push((differential(&m.base_frame, key)?, expr(&format!("eta.{name}.{key}"), c)?));
        }
        let form = FormElement::from_terms(&m.base_frame, terms).map_err(|e| ModelFileError::Dimension(e.to_string()))?;
        let degree = form.degree().ok_or_else(|| ModelFileError::Dimension(format!("eta.{name} is not homogeneous")))?;
        m.forms.retain(|f| f.name != *name);
        m.forms.push(TestForm { name: name.clone(), form, degree, exact: e.exact });
    }

    if let Some(n) = raw.model.fiber_dim {
        if n != m.fiber_dim() {
            return Err(ModelFileError::Dimension(format!("fiber_dim = {n}, but `{}` has {}", raw.model.base, m.fiber_dim())));
        }
    }
    if let Some([p, q]) = raw.model.ranks {
        let f = m.sc.frame();
        if (p, q) != (f.p(), f.q()) {
            return Err(ModelFileError::Dimension(format!("ranks = [{p}, {q}], but `{}` has [{}, {}]", raw.model.base, f.p(), f.q())));
        }
    }
    if let Some(name) = raw.model.name {
        m.name = name;
    }

    if let Some(q) = raw.quadrature {
        out.quad.level = q.level.unwrap_or(out.quad.level);
        out.quad.rel_tol = q.rel_tol.unwrap_or(out.quad.rel_tol);
        out.zeta.base_level = q.base_level.unwrap_or(out.zeta.base_level);
        out.zeta.sphere_level = q.sphere_level.unwrap_or(out.zeta.sphere_level);
        out.zeta.contour_level = q.contour_level.unwrap_or(out.zeta.contour_level);
        out.zeta.clearance = q.clearance.unwrap_or(out.zeta.clearance);
    }
    if let Some(z) = raw.zeta {
        out.radii = z.r;
        out.zmax = z.zmax.unwrap_or(out.zmax);
        out.path = match z.path.as_deref() {
            None => None,
            Some("scalar") => Some(ZetaPath::Scalar),
            Some("contour") => Some(ZetaPath::Contour),
            Some(other) => return Err(ModelFileError::Syntax(format!("zeta.path must be `scalar` or `contour`, got `{other}`"))),
        };
    }
    out.model = m;
    Ok(out)
}
