//! Superconnections `∇ + L` on a cotangent-bundle chart.
//!
//! `θ` is the connection form of `∇` in a local frame (horizontal, even
//! endomorphisms); `L` is the odd, anti-selfadjoint symbol of form degree
//! zero, homogeneous of degree one in the fiber coordinates.

use crate::exprkit::{ExprError, ScalarExpr};
use crate::graded::{ChartFrame, ChartMap, CoordKind, FormElement, GradedElement, GradedError, Matrix, Multiindex, Parity};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Name of the radial coordinate in polar charts.
pub const RHO: &str = "rho";
/// Name of the angular coordinate on the unit circle (fiber dimension 2).
pub const XI: &str = "Xi";
/// Sign parameter `±1` parametrizing the unit sphere `S⁰` (fiber dimension 1).
pub const SIGN: &str = "sgn";
const HOMOGENEITY_PROBE: &str = "__hom_t";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuperconnError {
    #[error("{0} must be odd")]
    NotOdd(&'static str),
    #[error("connection form is not horizontal: {0}")]
    NonHorizontalTheta(String),
    #[error("symbol is not of form degree zero")]
    SymbolHasForms,
    #[error("symbol is not homogeneous of degree one in the fiber coordinates")]
    NotHomogeneous,
    #[error("symbol is not anti-selfadjoint at {point:?} (deviation {deviation:.3e})")]
    NotAntiSelfadjoint { point: Vec<(String, f64)>, deviation: f64 },
    #[error("curvature has ρ-power {0} outside {{0, 1, 2}} in the polar chart")]
    NonHomogeneousSymbol(i64),
    #[error("radial reconstruction is not exact")]
    InexactRadialSplit,
    #[error("unsupported fiber dimension {0} for polar charts")]
    UnsupportedFiberDim(usize),
    #[error("connection form refers to `{0}`, which is not a base coordinate")]
    BaseCoordinateViolation(String),
    #[error("coordinate name `{0}` is reserved")]
    ReservedName(String),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Clone, Debug)]
pub struct SuperconnectionLocal {
    frame: Arc<ChartFrame>,
    theta: GradedElement<ScalarExpr>,
    symbol: GradedElement<ScalarExpr>,
}

/// Seed used for the pointwise validity probes.
const PROBE_SEED: u64 = 0x5eed_c0de;
const PROBE_POINTS: usize = 20;

impl SuperconnectionLocal {
    /// Validates parity, horizontality, homogeneity and anti-selfadjointness.
    pub fn new(theta: GradedElement<ScalarExpr>, symbol: GradedElement<ScalarExpr>) -> Result<Self, SuperconnError> {
        let sc = Self::new_unchecked(theta, symbol)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Only checks that both pieces share a frame.
    pub fn new_unchecked(
        theta: GradedElement<ScalarExpr>,
        symbol: GradedElement<ScalarExpr>,
    ) -> Result<Self, SuperconnError> {
        if !ChartFrame::same(theta.frame(), symbol.frame()) {
            return Err(GradedError::ChartMismatch.into());
        }
        Ok(Self { frame: theta.frame().clone(), theta, symbol })
    }

    fn validate(&self) -> Result<(), SuperconnError> {
        let f = &self.frame;
        for name in [RHO, XI, SIGN] {
            if f.index_of(name).is_some() {
                return Err(SuperconnError::ReservedName(name.into()));
            }
        }
        if self.theta.parity() == Parity::Mixed || (!self.theta.is_zero() && self.theta.parity() != Parity::Odd) {
            return Err(SuperconnError::NotOdd("connection form"));
        }
        if self.symbol.parity() == Parity::Mixed || (!self.symbol.is_zero() && self.symbol.parity() != Parity::Odd) {
            return Err(SuperconnError::NotOdd("symbol"));
        }
        let hmask = f.mask_of(CoordKind::Horizontal);
        if let Some(j) = self.theta.terms().keys().find(|j| !j.is_subset_of(hmask)) {
            return Err(SuperconnError::NonHorizontalTheta(format!("component {}", f.name_multiindex(*j))));
        }
        if let Some(v) = f.vertical().into_iter().find(|v| self.theta.depends_on(v)) {
            return Err(SuperconnError::NonHorizontalTheta(format!("depends on `{v}`")));
        }
        if self.symbol.terms().keys().any(|j| !j.is_empty()) {
            return Err(SuperconnError::SymbolHasForms);
        }
        // L(x, tξ) = t L(x, ξ) as an identity in t.
        let t = ScalarExpr::var(HOMOGENEITY_PROBE);
        let scaled: BTreeMap<String, ScalarExpr> =
            f.vertical().iter().map(|v| (v.to_string(), t.clone() * ScalarExpr::var(v))).collect();
        let diff = self.symbol.substitute_all(&scaled).sub(&self.symbol.scale(&t))?;
        if !diff.is_zero() {
            return Err(SuperconnError::NotHomogeneous);
        }
        // Anti-selfadjointness at seeded random points.
        let coords: Vec<&str> = f.coords().iter().map(|s| s.as_str()).collect();
        let compiled = self.symbol.compile(&coords)?;
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        for _ in 0..PROBE_POINTS {
            let pt: Vec<f64> = coords.iter().map(|_| rng.gen_range(0.2..1.4)).collect();
            let vals: Vec<Complex64> = pt.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let a = compiled.eval(&vals).component(Multiindex::EMPTY);
            let dev = a.add(&a.conj_transpose()).max_abs();
            if dev > 1e-12 * (1.0 + a.max_abs()) {
                return Err(SuperconnError::NotAntiSelfadjoint {
                    point: coords.iter().map(|s| s.to_string()).zip(pt).collect(),
                    deviation: dev,
                });
            }
        }
        Ok(())
    }

    pub fn frame(&self) -> &Arc<ChartFrame> {
        &self.frame
    }

    pub fn theta(&self) -> &GradedElement<ScalarExpr> {
        &self.theta
    }

    pub fn symbol(&self) -> &GradedElement<ScalarExpr> {
        &self.symbol
    }

    pub fn fiber_dim(&self) -> usize {
        self.frame.vertical().len()
    }

    /// `θ + L`.
    pub fn total(&self) -> GradedElement<ScalarExpr> {
        self.theta.add(&self.symbol).expect("same frame")
    }

    /// `(∇ + L)² = d(θ + L) + (θ + L)²`.
    pub fn curvature(&self) -> GradedElement<ScalarExpr> {
        let a = self.total();
        a.exterior_d().add(&a.mul(&a).expect("same frame")).expect("same frame")
    }

    /// The same connection with symbol `t·L` (`t` may be symbolic).
    pub fn scale_symbol(&self, t: &ScalarExpr) -> Self {
        Self { frame: self.frame.clone(), theta: self.theta.clone(), symbol: self.symbol.scale(&t.simplify()) }
    }

    /// The same symbol with another connection form.
    pub fn with_theta(&self, theta: GradedElement<ScalarExpr>) -> Result<Self, SuperconnError> {
        Self::new(theta, self.symbol.clone())
    }
}

/// Free-function form of [`SuperconnectionLocal::curvature`].
pub fn curvature(sc: &SuperconnectionLocal) -> GradedElement<ScalarExpr> {
    sc.curvature()
}

/// Free-function form of [`SuperconnectionLocal::scale_symbol`].
pub fn scale_symbol(sc: &SuperconnectionLocal, t: &ScalarExpr) -> SuperconnectionLocal {
    sc.scale_symbol(t)
}

/// Lift a connection form written on the base chart to the total chart.
pub fn pullback_connection(
    theta_base: &GradedElement<ScalarExpr>,
    total: &Arc<ChartFrame>,
) -> Result<GradedElement<ScalarExpr>, SuperconnError> {
    let base = theta_base.frame();
    for c in base.coords() {
        match total.index_of(c) {
            Some(i) if total.kind(i) == CoordKind::Horizontal => {}
            _ => return Err(SuperconnError::BaseCoordinateViolation(c.clone())),
        }
    }
    for a in theta_base.terms().values() {
        for e in a.entries() {
            if let Some(v) = e.free_vars().into_iter().find(|v| base.index_of(v).is_none()) {
                return Err(SuperconnError::BaseCoordinateViolation(v));
            }
        }
    }
    Ok(theta_base.reframe(total)?)
}

/// The polar chart `ξ = ρ·ω` on the fiber, with `ω` on the unit sphere.
#[derive(Clone, Debug)]
pub struct PolarChart {
    pub map: ChartMap,
    pub fiber_dim: usize,
    /// `+1` when `(x, ρ, angles)` is positively oriented relative to `(x, ξ)`;
    /// for fiber dimension one the orientation is the parameter `sgn`.
    pub orientation: i32,
}

impl PolarChart {
    pub fn new(cartesian: &Arc<ChartFrame>) -> Result<Self, SuperconnError> {
        let h = cartesian.horizontal();
        let v = cartesian.vertical();
        for name in [RHO, XI, SIGN] {
            if cartesian.index_of(name).is_some() {
                return Err(SuperconnError::ReservedName(name.into()));
            }
        }
        let rho = ScalarExpr::var(RHO);
        let (polar, images) = match v.len() {
            1 => (
                ChartFrame::split(&h, &[RHO], cartesian.p(), cartesian.q())?,
                vec![(v[0].to_string(), ScalarExpr::var(SIGN) * rho)],
            ),
            2 => (
                ChartFrame::split(&h, &[RHO, XI], cartesian.p(), cartesian.q())?,
                vec![
                    (v[0].to_string(), rho.clone() * ScalarExpr::cos(ScalarExpr::var(XI))),
                    (v[1].to_string(), rho * ScalarExpr::sin(ScalarExpr::var(XI))),
                ],
            ),
            m => return Err(SuperconnError::UnsupportedFiberDim(m)),
        };
        let map = ChartMap::new(cartesian, &polar, &images.into_iter().collect())?;
        Ok(Self { map, fiber_dim: v.len(), orientation: 1 })
    }

    pub fn frame(&self) -> &Arc<ChartFrame> {
        self.map.target()
    }

    /// Coordinates of the unit sphere (`[Xi]` or none for `S⁰`).
    pub fn angular(&self) -> Vec<&'static str> {
        if self.fiber_dim == 2 {
            vec![XI]
        } else {
            vec![]
        }
    }

    /// Pull a graded element back, reducing `sgn² = 1`.
    pub fn pull_graded(&self, g: &GradedElement<ScalarExpr>) -> Result<GradedElement<ScalarExpr>, SuperconnError> {
        let out = self.map.pull_graded(g)?;
        Ok(if self.fiber_dim == 1 { out.map_coeffs(reduce_sign) } else { out })
    }

    /// Pull a form back, reducing `sgn² = 1`.
    pub fn pull_form(&self, f: &FormElement<ScalarExpr>) -> Result<FormElement<ScalarExpr>, SuperconnError> {
        let out = self.map.pull_form(f)?;
        Ok(if self.fiber_dim == 1 { out.map_coeffs(reduce_sign) } else { out })
    }

    /// Free parameters of the chart (`[sgn]` for fiber dimension one).
    pub fn parameters(&self) -> Vec<&'static str> {
        if self.fiber_dim == 1 {
            vec![SIGN]
        } else {
            vec![]
        }
    }
}

/// Rewrite `sgn^k` as `sgn^(k mod 2)`.
pub fn reduce_sign(e: &ScalarExpr) -> ScalarExpr {
    let Ok(parts) = e.collect_powers(SIGN) else { return e.simplify() };
    let terms = parts
        .into_iter()
        .map(|(k, c)| if k.rem_euclid(2) == 1 { c * ScalarExpr::var(SIGN) } else { c })
        .collect();
    ScalarExpr::sum(terms).simplify()
}

/// `F = ρ²G₂ + ρG₁ + G₀` in the polar chart, with `G_i` independent of `ρ`.
#[derive(Clone, Debug)]
pub struct RadialDecomposition {
    pub chart: PolarChart,
    pub g0: GradedElement<ScalarExpr>,
    pub g1: GradedElement<ScalarExpr>,
    pub g2: GradedElement<ScalarExpr>,
}

impl RadialDecomposition {
    pub fn frame(&self) -> &Arc<ChartFrame> {
        self.chart.frame()
    }

    /// `ρ²G₂ + ρG₁ + G₀` for a given (possibly symbolic) `ρ`.
    pub fn reassemble(&self, rho: &ScalarExpr) -> GradedElement<ScalarExpr> {
        let r2 = rho.clone() * rho.clone();
        self.g2.scale(&r2).add(&self.g1.scale(rho)).and_then(|s| s.add(&self.g0)).expect("same frame")
    }
}

pub fn radial_split(sc: &SuperconnectionLocal) -> Result<RadialDecomposition, SuperconnError> {
    let chart = PolarChart::new(sc.frame())?;
    let f = chart.pull_graded(&sc.curvature())?;
    let frame = chart.frame().clone();
    let n = frame.rank();
    let mut parts: [GradedElement<ScalarExpr>; 3] =
        [GradedElement::zero(&frame), GradedElement::zero(&frame), GradedElement::zero(&frame)];
    for (j, a) in f.terms() {
        let mut mats = [Matrix::zeros(n), Matrix::zeros(n), Matrix::zeros(n)];
        for r in 0..n {
            for c in 0..n {
                for (pow, coef) in a.get(r, c).collect_powers(RHO)? {
                    if !(0..=2).contains(&pow) {
                        return Err(SuperconnError::NonHomogeneousSymbol(pow));
                    }
                    mats[pow as usize].set(r, c, coef);
                }
            }
        }
        for (k, m) in mats.into_iter().enumerate() {
            parts[k].insert(*j, m)?;
        }
    }
    let [g0, g1, g2] = parts;
    let rd = RadialDecomposition { chart, g0, g1, g2 };
    if !rd.reassemble(&ScalarExpr::var(RHO)).sub(&f)?.is_zero() {
        return Err(SuperconnError::InexactRadialSplit);
    }
    Ok(rd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprkit::parse;

    fn mat(rows: &[&[&str]]) -> Matrix<ScalarExpr> {
        Matrix::from_rows(rows.iter().map(|r| r.iter().map(|s| parse(s).unwrap().simplify()).collect()).collect()).unwrap()
    }

    fn toy() -> SuperconnectionLocal {
        let f = ChartFrame::split(&["x"], &["xi"], 1, 1).unwrap();
        let l = GradedElement::from_matrix(&f, Multiindex::EMPTY, mat(&[&["0", "xi"], &["-xi", "0"]])).unwrap();
        SuperconnectionLocal::new(GradedElement::zero(&f), l).unwrap()
    }

    #[test]
    fn toy_curvature() {
        let sc = toy();
        let f = sc.curvature();
        assert_eq!(f.component(Multiindex::EMPTY), mat(&[&["-xi^2", "0"], &["0", "-xi^2"]]));
        assert_eq!(f.component(Multiindex::single(1)), mat(&[&["0", "1"], &["-1", "0"]]));
        assert_eq!(f.terms().len(), 2);
    }

    #[test]
    fn toy_radial_split() {
        let rd = radial_split(&toy()).unwrap();
        assert_eq!(rd.g2.component(Multiindex::EMPTY), mat(&[&["-1", "0"], &["0", "-1"]]));
        assert!(rd.g1.is_zero());
        let rho = rd.frame().index_of(RHO).unwrap();
        assert_eq!(rd.g0.component(Multiindex::single(rho)), mat(&[&["0", "sgn"], &["-sgn", "0"]]));
    }

    #[test]
    fn theta_symbol_cross_term_is_commutator() {
        // θ = dx⊗diag(a, b) and L = ξ·[[0, 1], [−1, 0]]: the dx-component of
        // (θ+L)² is dx⊗[A, B] with A = diag(a, b), B = [[0, ξ], [−ξ, 0]].
        let f = ChartFrame::split(&["x"], &["xi"], 1, 1).unwrap();
        let th = GradedElement::from_matrix(&f, Multiindex::single(0), mat(&[&["a", "0"], &["0", "b"]])).unwrap();
        let l = GradedElement::from_matrix(&f, Multiindex::EMPTY, mat(&[&["0", "xi"], &["-xi", "0"]])).unwrap();
        let sq = th.add(&l).unwrap();
        let sq = sq.mul(&sq).unwrap();
        let a = mat(&[&["a", "0"], &["0", "b"]]);
        let b = mat(&[&["0", "xi"], &["-xi", "0"]]);
        let comm = a.mul(&b).add(&b.mul(&a).neg());
        assert_eq!(sq.component(Multiindex::single(0)), comm);
    }

    #[test]
    fn rejects_invalid_superconnections() {
        let f = ChartFrame::split(&["x"], &["xi"], 1, 1).unwrap();
        let zero = GradedElement::zero(&f);
        let even = GradedElement::from_matrix(&f, Multiindex::EMPTY, mat(&[&["xi", "0"], &["0", "xi"]])).unwrap();
        assert!(matches!(SuperconnectionLocal::new(zero.clone(), even), Err(SuperconnError::NotOdd(_))));
        let quad = GradedElement::from_matrix(&f, Multiindex::EMPTY, mat(&[&["0", "xi^2"], &["-xi^2", "0"]])).unwrap();
        assert!(matches!(SuperconnectionLocal::new(zero.clone(), quad), Err(SuperconnError::NotHomogeneous)));
        let sym = GradedElement::from_matrix(&f, Multiindex::EMPTY, mat(&[&["0", "xi"], &["xi", "0"]])).unwrap();
        assert!(matches!(SuperconnectionLocal::new(zero.clone(), sym), Err(SuperconnError::NotAntiSelfadjoint { .. })));
        let l = toy().symbol().clone();
        let vert = GradedElement::from_matrix(&f, Multiindex::single(1), mat(&[&["1", "0"], &["0", "1"]])).unwrap();
        assert!(matches!(SuperconnectionLocal::new(vert, l), Err(SuperconnError::NonHorizontalTheta(_))));
    }

    #[test]
    fn connection_pullback_checks_coordinates() {
        let base = ChartFrame::split(&["x"], &[], 1, 1).unwrap();
        let total = ChartFrame::split(&["x"], &["xi"], 1, 1).unwrap();
        let th = GradedElement::from_matrix(&base, Multiindex::single(0), mat(&[&["cos(x)", "0"], &["0", "0"]])).unwrap();
        let lifted = pullback_connection(&th, &total).unwrap();
        assert_eq!(lifted.component(Multiindex::single(0)), mat(&[&["cos(x)", "0"], &["0", "0"]]));
        let bad = GradedElement::from_matrix(&base, Multiindex::single(0), mat(&[&["xi", "0"], &["0", "0"]])).unwrap();
        assert!(matches!(pullback_connection(&bad, &total), Err(SuperconnError::BaseCoordinateViolation(_))));
    }
}
