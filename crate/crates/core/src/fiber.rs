//! Numeric evaluation of superconnection curvature on the polar chart.
//!
//! The curvature splits as `F = ρ²G₂ + ρG₁ + G₀` with `G₂ = −A` of form
//! degree zero and `G₀, G₁` nilpotent.  Every quantity the chern and zeta
//! pipelines need is a sum over words in `G₀, G₁` (optionally interleaved with
//! a resolvent), integrated over base × unit-sphere nodes; the radial variable
//! is handled analytically or by a one-dimensional rule on top.

use crate::exprkit::{CompiledExpr, ScalarExpr};
use crate::graded::{CompiledGraded, CoordKind, FormElement, GradedElement, Multiindex};
use crate::quadrature::QuadratureRule;
use crate::superconn::{radial_split, RadialDecomposition, SuperconnError, SuperconnectionLocal, RHO};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FiberError {
    #[error("form-degree-zero part of the curvature is not a scalar matrix: {0}")]
    NoScalarSplit(String),
    #[error("test form must be horizontal: component {0}")]
    NonHorizontalForm(String),
    #[error(transparent)]
    Superconn(#[from] SuperconnError),
}

impl From<crate::graded::GradedError> for FiberError {
    fn from(e: crate::graded::GradedError) -> Self {
        FiberError::Superconn(e.into())
    }
}

impl From<crate::exprkit::ExprError> for FiberError {
    fn from(e: crate::exprkit::ExprError) -> Self {
        FiberError::Superconn(e.into())
    }
}

/// `(−1)^{#{(j, k) ∈ J × K : j > k}}` for disjoint bitmasks.
#[inline]
fn koszul_sign(j: u32, k: u32) -> bool {
    let mut inv = 0u32;
    let mut kk = k;
    while kk != 0 {
        let b = kk.trailing_zeros();
        inv += (j >> b).count_ones();
        kk &= kk - 1;
    }
    inv % 2 == 1
}

/// A dense numeric element of `Ω*(chart) ⊗ End(ℂ^{p|q})`, stored as a sparse
/// list of components keyed by form bitmask.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    r: usize,
    p: usize,
    comps: Vec<(u32, Vec<C>)>,
}

impl Dense {
    pub fn zero(r: usize, p: usize) -> Self {
        Self { r, p, comps: Vec::new() }
    }

    pub fn identity(r: usize, p: usize) -> Self {
        Self::scalar_matrix(r, p, ONE)
    }

    pub fn scalar_matrix(r: usize, p: usize, s: C) -> Self {
        let mut m = vec![ZERO; r * r];
        for i in 0..r {
            m[i * r + i] = s;
        }
        Self { r, p, comps: vec![(0, m)] }
    }

    /// Degree-zero element from a row-major matrix.
    pub fn from_matrix(r: usize, p: usize, m: Vec<C>) -> Self {
        Self { r, p, comps: vec![(0, m)] }
    }

    pub fn from_graded(g: &GradedElement<C>) -> Self {
        let r = g.frame().rank();
        let comps = g.terms().iter().map(|(j, a)| (j.0, a.entries().to_vec())).collect();
        Self { r, p: g.frame().p(), comps }
    }

    pub fn to_graded(&self, frame: &std::sync::Arc<crate::graded::ChartFrame>) -> GradedElement<C> {
        let terms = self
            .comps
            .iter()
            .map(|(j, m)| {
                (Multiindex(*j), crate::graded::Matrix::from_fn(self.r, |a, b| m[a * self.r + b]))
            })
            .collect();
        GradedElement::from_terms(frame, terms).expect("matching rank")
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    /// Dimension `p` of the even part.
    pub fn grading(&self) -> usize {
        self.p
    }

    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn component(&self, mask: u32) -> Option<&[C]> {
        self.comps.iter().find(|(j, _)| *j == mask).map(|(_, m)| m.as_slice())
    }

    pub fn masks(&self) -> impl Iterator<Item = u32> + '_ {
        self.comps.iter().map(|(j, _)| *j)
    }

    /// Supertrace of one component.
    pub fn str_at(&self, mask: u32) -> C {
        self.component(mask).map_or(ZERO, |m| {
            (0..self.r).fold(ZERO, |acc, i| if i < self.p { acc + m[i * self.r + i] } else { acc - m[i * self.r + i] })
        })
    }

    /// Koszul product keeping only results whose form part lies in `allowed`.
    pub fn mul(&self, o: &Self, allowed: u32) -> Self {
        let r = self.r;
        let p = self.p;
        let mut out: Vec<(u32, Vec<C>)> = Vec::new();
        for (j, a) in &self.comps {
            for (k, b) in &o.comps {
                if j & k != 0 {
                    continue;
                }
                let jk = j | k;
                if jk & !allowed != 0 {
                    continue;
                }
                let neg = koszul_sign(*j, *k);
                let flip = k.count_ones() % 2 == 1;
                let slot = match out.iter().position(|(m, _)| *m == jk) {
                    Some(i) => i,
                    None => {
                        out.push((jk, vec![ZERO; r * r]));
                        out.len() - 1
                    }
                };
                let acc = &mut out[slot].1;
                for i in 0..r {
                    for t in 0..r {
                        let mut av = a[i * r + t];
                        if av == ZERO {
                            continue;
                        }
                        if flip && ((i < p) != (t < p)) {
                            av = -av;
                        }
                        if neg {
                            av = -av;
                        }
                        let brow = &b[t * r..t * r + r];
                        let arow = &mut acc[i * r..i * r + r];
                        for (x, y) in arow.iter_mut().zip(brow) {
                            *x += av * y;
                        }
                    }
                }
            }
        }
        out.retain(|(_, m)| m.iter().any(|v| *v != ZERO));
        out.sort_by_key(|(m, _)| *m);
        Self { r, p, comps: out }
    }

    pub fn add_scaled(&mut self, o: &Self, s: C) {
        for (k, b) in &o.comps {
            match self.comps.iter_mut().find(|(m, _)| m == k) {
                Some((_, a)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y),
                None => self.comps.push((*k, b.iter().map(|y| s * y).collect())),
            }
        }
        self.comps.sort_by_key(|(m, _)| *m);
    }

    pub fn scaled(&self, s: C) -> Self {
        Self { r: self.r, p: self.p, comps: self.comps.iter().map(|(j, m)| (*j, m.iter().map(|v| s * v).collect())).collect() }
    }

    /// Components of positive form degree.
    pub fn positive_part(&self) -> Self {
        Self { r: self.r, p: self.p, comps: self.comps.iter().filter(|(j, _)| *j != 0).cloned().collect() }
    }

    /// The scalar `s` with degree-zero part `s·I`, if it is one.
    pub fn scalar_of_degree_zero(&self, tol: f64) -> Option<C> {
        let r = self.r;
        let Some(m) = self.component(0) else { return Some(ZERO) };
        let s = m[0];
        let scale = 1.0 + s.norm();
        for i in 0..r {
            for j in 0..r {
                let want = if i == j { s } else { ZERO };
                if (m[i * r + j] - want).norm() > tol * scale {
                    return None;
                }
            }
        }
        Some(s)
    }
}

/// `W[k][l]` = sum of all words with `k` factors, `l` of which are `g1`, each
/// factor right-multiplied by `right` when given: `Π (g_{iₐ} · right)`.
pub fn words(g0: &Dense, g1: &Dense, right: Option<&Dense>, kmax: usize, allowed: u32) -> Vec<Vec<Dense>> {
    let (r, p) = (g0.r, g0.p);
    let f0 = right.map_or_else(|| g0.clone(), |rr| g0.mul(rr, allowed));
    let f1 = right.map_or_else(|| g1.clone(), |rr| g1.mul(rr, allowed));
    let mut w: Vec<Vec<Dense>> = vec![vec![Dense::identity(r, p)]];
    for k in 1..=kmax {
        let mut row = Vec::with_capacity(k + 1);
        for l in 0..=k {
            let mut acc = Dense::zero(r, p);
            if l < k {
                acc.add_scaled(&w[k - 1][l].mul(&f0, allowed), ONE);
            }
            if l > 0 {
                acc.add_scaled(&w[k - 1][l - 1].mul(&f1, allowed), ONE);
            }
            row.push(acc);
        }
        let done = row.iter().all(|d| d.is_zero());
        w.push(row);
        if done {
            break;
        }
    }
    while w.len() <= kmax {
        w.push(vec![Dense::zero(r, p); w.len() + 1]);
    }
    w
}

/// A horizontal test form pulled to the polar chart, as the linear functional
/// `W ↦ coefficient of the top form in π*η ∧ tr_s W`.
#[derive(Clone, Debug)]
pub struct EtaFunctional {
    /// `(target mask T∖J, sign of dc_J ∧ dc_{T∖J}, coefficient index)`.
    terms: Vec<(u32, f64, usize)>,
    coeffs: CompiledExpr,
    pub degree: Option<usize>,
    pub allowed: u32,
}

impl EtaFunctional {
    /// `top` is the full multiindex to pair against (the volume form, or the
    /// boundary volume form).
    fn new(eta: &FormElement<ScalarExpr>, kernel: &PolarKernel, top: u32) -> Result<Self, FiberError> {
        let f = kernel.frame();
        let eta = eta.reframe(f)?;
        let hmask = f.mask_of(CoordKind::Horizontal).0;
        let mut terms = Vec::new();
        let mut exprs = Vec::new();
        let mut allowed = 0u32;
        for (j, c) in eta.terms() {
            if j.0 & !hmask != 0 {
                return Err(FiberError::NonHorizontalForm(f.name_multiindex(*j)));
            }
            if j.0 & !top != 0 {
                continue;
            }
            let target = top & !j.0;
            let sign = if koszul_sign(j.0, target) { -1.0 } else { 1.0 };
            terms.push((target, sign, exprs.len()));
            exprs.push(c.clone());
            allowed |= target;
        }
        let coeffs = CompiledExpr::compile_many(&exprs, &kernel.horizontal_refs())?;
        Ok(Self { terms, coeffs, degree: eta.degree(), allowed })
    }

    /// Coefficient values at a base point.
    pub fn coefficients(&self, x: &[C]) -> Vec<C> {
        let mut regs = Vec::new();
        let mut out = vec![ZERO; self.coeffs.n_outputs()];
        self.coeffs.eval_into(x, &mut regs, &mut out);
        out
    }

    pub fn apply(&self, coeffs: &[C], w: &Dense) -> C {
        self.apply_with(coeffs, |t| w.str_at(t))
    }

    /// Pairing against already supertraced data, given per form bitmask.
    pub fn apply_with(&self, coeffs: &[C], traced: impl Fn(u32) -> C) -> C {
        self.terms.iter().fold(ZERO, |acc, (t, s, i)| acc + coeffs[*i] * *s * traced(*t))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

/// One base × unit-sphere node: coordinate values for the compiled radial
/// pieces and the signed weight.
#[derive(Clone, Debug)]
pub struct SpatialNode {
    pub vals: Vec<C>,
    pub weight: f64,
}

/// Compiled radial decomposition.
#[derive(Clone, Debug)]
pub struct PolarKernel {
    pub rd: RadialDecomposition,
    vars: Vec<String>,
    n_h: usize,
    g: [CompiledGraded; 3],
    curvature: CompiledGraded,
    symbol: CompiledGraded,
    rank: usize,
    p: usize,
    top: u32,
    rho_bit: u32,
}

impl PolarKernel {
    pub fn new(sc: &SuperconnectionLocal) -> Result<Self, FiberError> {
        let rd = radial_split(sc)?;
        let frame = rd.frame().clone();
        let h: Vec<String> = frame.horizontal().iter().map(|s| s.to_string()).collect();
        let mut vars = h.clone();
        vars.extend(rd.chart.angular().iter().map(|s| s.to_string()));
        vars.extend(rd.chart.parameters().iter().map(|s| s.to_string()));
        let refs: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
        let g = [rd.g0.compile(&refs)?, rd.g1.compile(&refs)?, rd.g2.compile(&refs)?];
        let mut with_rho = refs.clone();
        with_rho.push(RHO);
        let curvature = rd.chart.pull_graded(&sc.curvature())?.compile(&with_rho)?;
        let symbol = rd.chart.pull_graded(sc.symbol())?.compile(&with_rho)?;
        let rho_bit = 1u32 << frame.index_of(RHO).expect("polar chart has rho");
        Ok(Self {
            n_h: h.len(),
            top: frame.top().0,
            rank: frame.rank(),
            p: frame.p(),
            rd,
            vars,
            g,
            curvature,
            symbol,
            rho_bit,
        })
    }

    pub fn frame(&self) -> &std::sync::Arc<crate::graded::ChartFrame> {
        self.rd.frame()
    }

    pub fn base_dim(&self) -> usize {
        self.n_h
    }

    pub fn fiber_dim(&self) -> usize {
        self.rd.chart.fiber_dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn top(&self) -> u32 {
        self.top
    }

    pub fn rho_bit(&self) -> u32 {
        self.rho_bit
    }

    /// Longest word that can still have nonzero form part.
    pub fn kmax(&self) -> usize {
        self.top.count_ones() as usize
    }

    fn horizontal_refs(&self) -> Vec<&str> {
        self.vars[..self.n_h].iter().map(|s| s.as_str()).collect()
    }

    /// Variable order of [`SpatialNode::vals`].
    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn eta(&self, eta: &FormElement<ScalarExpr>) -> Result<EtaFunctional, FiberError> {
        EtaFunctional::new(eta, self, self.top)
    }

    /// Pairing against the boundary volume form of `{ρ = R}`.
    pub fn eta_boundary(&self, eta: &FormElement<ScalarExpr>) -> Result<EtaFunctional, FiberError> {
        EtaFunctional::new(eta, self, self.top & !self.rho_bit)
    }

    /// Base × sphere nodes; for fiber dimension one the sphere node is the
    /// sign `±1`, which is also the orientation of `(x, ρ)` against `(x, ξ)`.
    pub fn nodes(&self, base: &QuadratureRule, sphere: &QuadratureRule) -> Vec<SpatialNode> {
        let mut out = Vec::with_capacity(base.len() * sphere.len());
        let one_dim = self.fiber_dim() == 1;
        for b in 0..base.len() {
            for s in 0..sphere.len() {
                let mut vals: Vec<C> = base.node(b).iter().map(|&x| C::new(x, 0.0)).collect();
                let mut weight = base.weight(b) * sphere.weight(s);
                let a = sphere.node(s)[0];
                vals.push(C::new(a, 0.0));
                if one_dim {
                    weight *= a;
                }
                out.push(SpatialNode { vals, weight });
            }
        }
        out
    }

    /// `[G₀, G₁, G₂]` at a node.
    pub fn pieces(&self, vals: &[C]) -> [Dense; 3] {
        [0, 1, 2].map(|i| Dense::from_graded(&self.g[i].eval(vals)))
    }

    /// The full polar curvature at `(node, ρ)`.
    pub fn curvature_at(&self, vals: &[C], rho: f64) -> Dense {
        let mut v = vals.to_vec();
        v.push(C::new(rho, 0.0));
        Dense::from_graded(&self.curvature.eval(&v))
    }

    /// The symbol `L` at `(node, ρ)`.
    pub fn symbol_at(&self, vals: &[C], rho: f64) -> Dense {
        let mut v = vals.to_vec();
        v.push(C::new(rho, 0.0));
        Dense::from_graded(&self.symbol.eval(&v))
    }

    /// `A = −G₂` as a row-major matrix, checking that `G₂` has form degree zero
    /// and that `G₀`, `G₁` have no degree-zero part.
    pub fn principal(&self, pieces: &[Dense; 3]) -> Result<Vec<C>, FiberError> {
        if pieces[2].masks().any(|m| m != 0) {
            return Err(FiberError::NoScalarSplit("ρ² part carries forms".into()));
        }
        if pieces[0].component(0).is_some() || pieces[1].component(0).is_some() {
            return Err(FiberError::NoScalarSplit("lower ρ-powers have a degree-zero part".into()));
        }
        let r = self.rank;
        Ok(pieces[2].component(0).map_or_else(|| vec![ZERO; r * r], |m| m.iter().map(|v| -v).collect()))
    }

    /// `c` with `G₂ = −c·I` at a node.
    pub fn scalar_principal(&self, pieces: &[Dense; 3]) -> Result<f64, FiberError> {
        let a = self.principal(pieces)?;
        let d = Dense::from_matrix(self.rank, self.p, a);
        match d.scalar_of_degree_zero(1e-12) {
            Some(c) if c.im.abs() <= 1e-12 * (1.0 + c.re.abs()) && c.re > 0.0 => Ok(c.re),
            Some(c) => Err(FiberError::NoScalarSplit(format!("principal scalar {c} is not positive"))),
            None => Err(FiberError::NoScalarSplit("ρ² part is not a multiple of the identity".into())),
        }
    }
}

/// `Σ_{k ≤ kmax} Nᵏ/k!` for nilpotent `N`.
pub fn exp_nilpotent(n: &Dense, kmax: usize, allowed: u32) -> Dense {
    let mut out = Dense::identity(n.r, n.p);
    let mut term = out.clone();
    for k in 1..=kmax {
        term = term.mul(n, allowed).scaled(C::new(1.0 / k as f64, 0.0));
        if term.is_zero() {
            break;
        }
        out.add_scaled(&term, ONE);
    }
    out
}

/// Word coefficients summed over nodes, grouped by the principal scalar `c`.
#[derive(Clone, Debug, Default)]
pub struct WordSums {
    /// `(c, coef[k][l])`, in order of first appearance.
    pub groups: Vec<(f64, Vec<Vec<C>>)>,
}

impl WordSums {
    fn add(&mut self, c: f64, coef: Vec<Vec<C>>) {
        let tol = 1e-12 * (1.0 + c.abs());
        match self.groups.iter_mut().find(|(g, _)| (g - c).abs() <= tol) {
            Some((_, acc)) => {
                for (ra, rb) in acc.iter_mut().zip(coef) {
                    for (a, b) in ra.iter_mut().zip(rb) {
                        *a += b;
                    }
                }
            }
            None => self.groups.push((c, coef)),
        }
    }

    /// The single principal scalar, if it is constant over all nodes.
    pub fn constant_c(&self) -> Option<f64> {
        match self.groups.as_slice() {
            [(c, _)] => Some(*c),
            [] => Some(1.0),
            _ => None,
        }
    }
}

const CHUNK: usize = 4096;

/// [`word_coefficients`] summed over `nodes` in fixed order.
pub fn aggregate_words(kernel: &PolarKernel, eta: &EtaFunctional, nodes: &[SpatialNode]) -> Result<WordSums, FiberError> {
    let mut sums = WordSums::default();
    for chunk in nodes.chunks(CHUNK) {
        let parts: Vec<Result<(f64, Vec<Vec<C>>), FiberError>> =
            chunk.par_iter().map(|n| word_coefficients(kernel, eta, n)).collect();
        for p in parts {
            let (c, coef) = p?;
            sums.add(c, coef);
        }
    }
    Ok(sums)
}

/// Maps `f` over nodes (in parallel) and sums the results in node order.
pub fn ordered_sum<T, F>(nodes: &[SpatialNode], zero: T, f: F, add: impl Fn(&mut T, T)) -> Result<T, FiberError>
where
    T: Send,
    F: Fn(&SpatialNode) -> Result<T, FiberError> + Sync,
{
    let parts: Vec<Result<T, FiberError>> = nodes.par_iter().map(&f).collect();
    let mut acc = zero;
    for p in parts {
        add(&mut acc, p?);
    }
    Ok(acc)
}

/// Per-node ρ-polynomial data for `π*η ∧ tr_s N^k` with `N = ρG₁ + G₀`:
/// `coef[k][l]` multiplies `ρ^l`.
pub fn word_coefficients(kernel: &PolarKernel, eta: &EtaFunctional, node: &SpatialNode) -> Result<(f64, Vec<Vec<C>>), FiberError> {
    let pieces = kernel.pieces(&node.vals);
    let c = kernel.scalar_principal(&pieces)?;
    let w = words(&pieces[0], &pieces[1], None, kernel.kmax(), eta.allowed);
    let x = eta.coefficients(&node.vals[..kernel.base_dim()]);
    let coef = w.iter().map(|row| row.iter().map(|d| eta.apply(&x, d) * node.weight).collect()).collect();
    Ok((c, coef))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprkit::parse;
    use crate::graded::{ChartFrame, Matrix};

    fn rand_dense(frame: &std::sync::Arc<ChartFrame>, seed: u64) -> GradedElement<C> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for m in 0..(1u32 << frame.dim()) {
            if rng.gen_bool(0.5) {
                let n = frame.rank();
                let v: Vec<C> = (0..n * n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                terms.push((Multiindex(m), Matrix::from_fn(n, |a, b| v[a * n + b])));
            }
        }
        GradedElement::from_terms(frame, terms).unwrap()
    }

    #[test]
    fn dense_product_matches_graded_product() {
        let f = ChartFrame::split(&["a", "b"], &["c"], 2, 1).unwrap();
        for seed in 0..10 {
            let x = rand_dense(&f, seed);
            let y = rand_dense(&f, seed + 100);
            let want = x.mul(&y).unwrap();
            let got = Dense::from_graded(&x).mul(&Dense::from_graded(&y), u32::MAX).to_graded(&f);
            let diff = want.sub(&got).unwrap();
            assert!(diff.terms().values().all(|m| m.max_abs() < 1e-12));
        }
    }

    #[test]
    fn words_expand_binomial_powers() {
        let f = ChartFrame::split(&["a", "b"], &["c"], 1, 1).unwrap();
        let g0 = rand_dense(&f, 7).degree_part(2);
        let g1 = rand_dense(&f, 8).degree_part(1);
        let (d0, d1) = (Dense::from_graded(&g0), Dense::from_graded(&g1));
        let w = words(&d0, &d1, None, 3, u32::MAX);
        // (ρG₁ + G₀)³ at ρ = 2 equals Σ_l 2^l W[3][l].
        let n = g0.add(&g1.scale(&C::new(2.0, 0.0))).unwrap();
        let cube = Dense::from_graded(&n.mul(&n).unwrap().mul(&n).unwrap());
        let mut acc = Dense::zero(2, 1);
        for l in 0..=3 {
            acc.add_scaled(&w[3][l], C::new(2f64.powi(l as i32), 0.0));
        }
        let diff = acc.to_graded(&f).sub(&cube.to_graded(&f)).unwrap();
        assert!(diff.terms().values().all(|m| m.max_abs() < 1e-12));
    }

    #[test]
    fn toy_kernel_pieces() {
        let fr = ChartFrame::split(&["x"], &["xi"], 1, 1).unwrap();
        let l = GradedElement::from_matrix(
            &fr,
            Multiindex::EMPTY,
            Matrix::from_rows(vec![vec![ScalarExpr::zero(), parse("xi").unwrap()], vec![parse("-xi").unwrap(), ScalarExpr::zero()]])
                .unwrap(),
        )
        .unwrap();
        let sc = SuperconnectionLocal::new(GradedElement::zero(&fr), l).unwrap();
        let k = PolarKernel::new(&sc).unwrap();
        assert_eq!(k.kmax(), 2);
        let base = QuadratureRule::trapezoid(1.0, 2);
        let sphere = crate::quadrature::sphere_rule(1, 1).unwrap();
        let nodes = k.nodes(&base, &sphere);
        assert_eq!(nodes.len(), 4);
        let p = k.pieces(&nodes[0].vals);
        assert_eq!(k.scalar_principal(&p).unwrap(), 1.0);
    }
}
