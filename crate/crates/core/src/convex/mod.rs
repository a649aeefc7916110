//! Convex analysis and maximal monotone laws.
//!
//! A [`MonotoneLaw`] is a pointwise flow rule `g: ℝᴺ → 2^ℝᴺ` with `0 ∈ g(0)`:
//! Norton-Hoff, a linear positive semi-definite map, or the subdifferential of
//! a [`ConvexFn`]. Around it sit the resolvent `(I + h g)⁻¹`, the numeric
//! Legendre-Fenchel conjugate, the Fitzpatrick function and a search for
//! coercivity constants `(α₁, α₂, m)`.

mod coercivity;
mod fitzpatrick;
pub(crate) mod optim;
mod resolvent;

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, DMat};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

pub use coercivity::{certify_coercivity, CertificateSearch, CoercivityCertificate, Refusal};
pub use fitzpatrick::{
    biconjugate, default_search_radius, fenchel_conjugate, fitzpatrick, fitzpatrick_gap, FITZPATRICK_TOL,
};
pub use resolvent::{resolvent, resolvent_metric};

/// Norton-Hoff flow rule `g(Σ) = [|Σ| − σ_y]₊^r Σ/|Σ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NortonHoffParams {
    pub yield_stress: f64,
    pub exponent: f64,
}

impl NortonHoffParams {
    pub fn new(yield_stress: f64, exponent: f64) -> Result<Self> {
        if !(yield_stress > 0.0) || !(exponent > 0.0) {
            return Err(Error::Config(format!(
                "Norton-Hoff needs yield_stress > 0 and exponent > 0 (got {yield_stress}, {exponent})"
            )));
        }
        Ok(Self {
            yield_stress,
            exponent,
        })
    }

    /// Radial magnitude `γ(ρ) = [ρ − σ_y]₊^r`.
    #[inline]
    pub fn magnitude(&self, rho: f64) -> f64 {
        let over = rho - self.yield_stress;
        if over <= 0.0 {
            0.0
        } else {
            over.powf(self.exponent)
        }
    }

    #[inline]
    fn magnitude_derivative(&self, rho: f64) -> f64 {
        let over = rho - self.yield_stress;
        if over <= 0.0 {
            0.0
        } else {
            self.exponent * over.powf(self.exponent - 1.0)
        }
    }
}

/// Families of proper convex functions on `ℝᴺ`.
#[derive(Clone)]
pub enum ConvexKind {
    /// `½ vᵀMv` with `M` symmetric positive semi-definite.
    Quadratic(DMat),
    /// `|v|^e / e` with `e > 1`.
    Power { exponent: f64 },
    /// `|v|`
    Norm,
    /// `Σᵢ (cosh vᵢ − 1)`
    CoshSum,
    /// Arbitrary evaluator; gradients by central differences.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for ConvexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvexKind::Quadratic(m) => f.debug_tuple("Quadratic").field(m).finish(),
            ConvexKind::Power { exponent } => f.debug_struct("Power").field("exponent", exponent).finish(),
            ConvexKind::Norm => f.write_str("Norm"),
            ConvexKind::CoshSum => f.write_str("CoshSum"),
            ConvexKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Proper lower semi-continuous convex function, `+∞` outside the ball of
/// `domain_radius`.
#[derive(Debug, Clone)]
pub struct ConvexFn {
    pub kind: ConvexKind,
    pub dim: usize,
    pub domain_radius: f64,
    pub smooth: bool,
}

impl ConvexFn {
    pub fn half_squared_norm(dim: usize) -> Self {
        Self::quadratic(DMat::identity(dim))
    }

    pub fn quadratic(m: DMat) -> Self {
        Self {
            dim: m.rows(),
            kind: ConvexKind::Quadratic(m),
            domain_radius: f64::INFINITY,
            smooth: true,
        }
    }

    pub fn power(dim: usize, exponent: f64) -> Result<Self> {
        if !(exponent > 1.0) {
            return Err(Error::Config(format!("power exponent must exceed 1, got {exponent}")));
        }
        Ok(Self {
            kind: ConvexKind::Power { exponent },
            dim,
            domain_radius: f64::INFINITY,
            smooth: true,
        })
    }

    pub fn norm(dim: usize) -> Self {
        Self {
            kind: ConvexKind::Norm,
            dim,
            domain_radius: f64::INFINITY,
            smooth: false,
        }
    }

    pub fn cosh_sum(dim: usize) -> Self {
        Self {
            kind: ConvexKind::CoshSum,
            dim,
            domain_radius: f64::INFINITY,
            smooth: true,
        }
    }

    pub fn custom(dim: usize, smooth: bool, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: ConvexKind::Custom(Arc::new(f)),
            dim,
            domain_radius: f64::INFINITY,
            smooth,
        }
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Self {
        self.domain_radius = radius;
        self
    }

    fn raw_value(&self, v: &[f64]) -> f64 {
        match &self.kind {
            ConvexKind::Quadratic(m) => 0.5 * m.quad_form(v),
            ConvexKind::Power { exponent } => norm(v).powf(*exponent) / exponent,
            ConvexKind::Norm => norm(v),
            ConvexKind::CoshSum => v.iter().map(|x| x.cosh() - 1.0).sum(),
            ConvexKind::Custom(f) => f(v),
        }
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        if norm(v) > self.domain_radius {
            f64::INFINITY
        } else {
            self.raw_value(v)
        }
    }

    /// A subgradient; at kinks the minimal-norm element.
    pub fn subgradient(&self, v: &[f64]) -> Vec<f64> {
        match &self.kind {
            ConvexKind::Quadratic(m) => m.sym_part().matvec(v),
            ConvexKind::Power { exponent } => {
                let n = norm(v);
                if n == 0.0 {
                    vec![0.0; v.len()]
                } else {
                    let s = n.powf(exponent - 2.0);
                    v.iter().map(|x| s * x).collect()
                }
            }
            ConvexKind::Norm => {
                let n = norm(v);
                if n == 0.0 {
                    vec![0.0; v.len()]
                } else {
                    v.iter().map(|x| x / n).collect()
                }
            }
            ConvexKind::CoshSum => v.iter().map(|x| x.sinh()).collect(),
            ConvexKind::Custom(_) => optim::numeric_gradient(&|x| self.raw_value(x), v),
        }
    }

    pub fn hessian(&self, v: &[f64]) -> DMat {
        let n = v.len();
        match &self.kind {
            ConvexKind::Quadratic(m) => m.sym_part(),
            ConvexKind::Power { exponent } => {
                let r = norm(v);
                if r == 0.0 {
                    return DMat::scalar(n, if *exponent < 2.0 { 1e12 } else if *exponent == 2.0 { 1.0 } else { 0.0 });
                }
                let s = r.powf(exponent - 2.0);
                DMat::from_fn(n, n, |i, j| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    s * (id + (exponent - 2.0) * v[i] * v[j] / (r * r))
                })
            }
            ConvexKind::Norm => {
                let r = norm(v).max(1e-300);
                DMat::from_fn(n, n, |i, j| {
                    let id = if i == j { 1.0 } else { 0.0 };
                    (id - v[i] * v[j] / (r * r)) / r
                })
            }
            ConvexKind::CoshSum => DMat::diag(&v.iter().map(|x| x.cosh()).collect::<Vec<_>>()),
            ConvexKind::Custom(_) => {
                let h = 1e-5 * (1.0 + norm(v));
                let mut m = DMat::zeros(n, n);
                let mut xp = v.to_vec();
                for j in 0..n {
                    xp[j] = v[j] + h;
                    let gp = self.subgradient(&xp);
                    xp[j] = v[j] - h;
                    let gm = self.subgradient(&xp);
                    xp[j] = v[j];
                    for i in 0..n {
                        m[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
                    }
                }
                m.sym_part()
            }
        }
    }
}

/// The flow rule of a [`MonotoneLaw`].
#[derive(Debug, Clone)]
pub enum LawKind {
    NortonHoff(NortonHoffParams),
    /// `g(v) = Mv`, `M` with positive semi-definite symmetric part.
    LinearPsd(DMat),
    Subdifferential(ConvexFn),
}

/// Pointwise maximal monotone map with growth exponents `1 < q ≤ 2 ≤ p`,
/// `1/p + 1/q = 1`.
#[derive(Debug, Clone)]
pub struct MonotoneLaw {
    pub kind: LawKind,
    pub dim: usize,
    pub p: f64,
    pub q: f64,
}

/// A value of `g(v)`: one selection and whether `g(v)` has other elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub value: Vec<f64>,
    pub multivalued: bool,
}

impl MonotoneLaw {
    /// Norton-Hoff law on `ℝᴺ`; default exponents `p = max(r + 1, 2)`.
    pub fn norton_hoff(dim: usize, yield_stress: f64, exponent: f64) -> Result<Self> {
        let params = NortonHoffParams::new(yield_stress, exponent)?;
        let p = (exponent + 1.0).max(2.0);
        Ok(Self {
            kind: LawKind::NortonHoff(params),
            dim,
            p,
            q: p / (p - 1.0),
        })
    }

    pub fn linear(m: DMat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Config("linear law needs a square matrix".into()));
        }
        let (lo, _) = m.min_max_eigen();
        if lo < -1e-12 * m.max_abs().max(1.0) {
            return Err(Error::Config(format!(
                "linear law is not monotone: symmetric part has eigenvalue {lo:e}"
            )));
        }
        Ok(Self {
            dim: m.rows(),
            kind: LawKind::LinearPsd(m),
            p: 2.0,
            q: 2.0,
        })
    }

    /// `g ≡ 0`, the elastic limit.
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: LawKind::LinearPsd(DMat::zeros(dim, dim)),
            dim,
            p: 2.0,
            q: 2.0,
        }
    }

    pub fn subdifferential(phi: ConvexFn) -> Self {
        Self {
            dim: phi.dim,
            kind: LawKind::Subdifferential(phi),
            p: 2.0,
            q: 2.0,
        }
    }

    /// Overrides the growth exponent `p` (and `q = p/(p−1)`).
    pub fn with_exponents(mut self, p: f64) -> Result<Self> {
        if !(p >= 2.0) || !p.is_finite() {
            return Err(Error::Config(format!("growth exponent p must satisfy 2 <= p < inf, got {p}")));
        }
        self.p = p;
        self.q = p / (p - 1.0);
        Ok(self)
    }

    /// True when `g` vanishes identically.
    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, LawKind::LinearPsd(m) if m.max_abs() == 0.0)
    }

    pub fn eval(&self, v: &[f64]) -> Selection {
        match &self.kind {
            LawKind::NortonHoff(nh) => {
                let r = norm(v);
                let gamma = nh.magnitude(r);
                let value = if gamma == 0.0 {
                    vec![0.0; v.len()]
                } else {
                    v.iter().map(|x| gamma * x / r).collect()
                };
                Selection {
                    value,
                    multivalued: false,
                }
            }
            LawKind::LinearPsd(m) => Selection {
                value: m.matvec(v),
                multivalued: false,
            },
            LawKind::Subdifferential(phi) => {
                let multivalued = !phi.smooth && matches!(phi.kind, ConvexKind::Norm) && norm(v) == 0.0;
                Selection {
                    value: phi.subgradient(v),
                    multivalued,
                }
            }
        }
    }

    /// Selection of `g(v)` as a plain vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.eval(v).value
    }

    /// Jacobian of the single-valued part of `g` (where differentiable).
    pub fn jacobian(&self, v: &[f64]) -> DMat {
        let n = v.len();
        match &self.kind {
            LawKind::NortonHoff(nh) => {
                let r = norm(v);
                if r <= nh.yield_stress {
                    return DMat::zeros(n, n);
                }
                let gamma = nh.magnitude(r);
                let dgamma = nh.magnitude_derivative(r);
                DMat::from_fn(n, n, |i, j| {
                    let e = v[i] * v[j] / (r * r);
                    let id = if i == j { 1.0 } else { 0.0 };
                    gamma / r * (id - e) + dgamma * e
                })
            }
            LawKind::LinearPsd(m) => m.clone(),
            LawKind::Subdifferential(phi) => phi.hessian(v),
        }
    }

    /// Convex potential `G` with `g = ∂G`, when `g` is cyclically monotone.
    pub fn potential(&self, v: &[f64]) -> Option<f64> {
        match &self.kind {
            LawKind::NortonHoff(nh) => {
                let over = norm(v) - nh.yield_stress;
                Some(if over <= 0.0 {
                    0.0
                } else {
                    over.powf(nh.exponent + 1.0) / (nh.exponent + 1.0)
                })
            }
            LawKind::LinearPsd(m) if m.asymmetry() <= 1e-14 * m.max_abs().max(1.0) => Some(0.5 * m.quad_form(v)),
            LawKind::LinearPsd(_) => None,
            LawKind::Subdifferential(phi) => Some(phi.value(v)),
        }
    }

    /// Distance from `w` to the selection `g(v)`; zero on graph points of
    /// single-valued laws. For `∂|·|` at the origin, the distance to the ball.
    pub fn graph_residual(&self, v: &[f64], w: &[f64]) -> f64 {
        if let LawKind::Subdifferential(phi) = &self.kind {
            if matches!(phi.kind, ConvexKind::Norm) && norm(v) == 0.0 {
                return (norm(w) - 1.0).max(0.0);
            }
        }
        let g = self.apply(v);
        norm(&crate::linalg::sub(w, &g))
    }
}

/// Smallest `⟨v₁* − v₂*, v₁ − v₂⟩` over `samples` random pairs in the ball of
/// `radius`; nonnegative up to rounding for monotone laws.
pub fn monotonicity_defect(law: &MonotoneLaw, radius: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = crate::rng::SplitMix64::new(seed);
    let mut a = vec![0.0; law.dim];
    let mut b = vec![0.0; law.dim];
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        rng.in_ball(radius, &mut a);
        rng.in_ball(radius, &mut b);
        let ga = law.apply(&a);
        let gb = law.apply(&b);
        let val: f64 = (0..law.dim).map(|i| (ga[i] - gb[i]) * (a[i] - b[i])).sum();
        worst = worst.min(val);
    }
    worst
}

/// A phase-wise law field: point `i` uses `laws[phase_of_point[i]]`.
#[derive(Debug, Clone)]
pub struct LawField<'a> {
    pub laws: &'a [MonotoneLaw],
    pub phase_of_point: &'a [usize],
}

impl LawField<'_> {
    pub fn len(&self) -> usize {
        self.phase_of_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase_of_point.is_empty()
    }

    fn dim(&self) -> usize {
        self.laws.first().map_or(0, |l| l.dim)
    }
}

/// Canonical extension: pointwise application of the law field to a vector
/// field stored with stride `N`.
pub fn canonical_apply(field: &LawField<'_>, v: &[f64]) -> Result<Vec<f64>> {
    let n = field.dim();
    if v.len() != field.len() * n {
        return Err(Error::GridMismatch {
            expected: field.len() * n,
            found: v.len(),
        });
    }
    let mut out = Vec::with_capacity(v.len());
    for (i, &phase) in field.phase_of_point.iter().enumerate() {
        out.extend(field.laws[phase].apply(&v[i * n..(i + 1) * n]));
    }
    Ok(out)
}

/// `Σᵢ wᵢ ⟨vᵢ, v*ᵢ⟩`
pub fn field_pairing(weights: &[f64], v: &[f64], v_star: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Ok(0.0);
    }
    let n = v.len() / weights.len();
    if v.len() != v_star.len() || v.len() != n * weights.len() {
        return Err(Error::GridMismatch {
            expected: v.len(),
            found: v_star.len(),
        });
    }
    Ok(weights
        .iter()
        .enumerate()
        .map(|(i, w)| w * dot(&v[i * n..(i + 1) * n], &v_star[i * n..(i + 1) * n]))
        .sum())
}

/// Phase-wise convex integrand.
#[derive(Debug, Clone)]
pub struct IntegrandField<'a> {
    pub phis: &'a [ConvexFn],
    pub phase_of_point: &'a [usize],
    pub weights: &'a [f64],
}

impl IntegrandField<'_> {
    fn check(&self, v: &[f64]) -> Result<usize> {
        let n = self.phis.first().map_or(0, |p| p.dim);
        if self.weights.len() != self.phase_of_point.len() || v.len() != n * self.phase_of_point.len() {
            return Err(Error::GridMismatch {
                expected: n * self.phase_of_point.len(),
                found: v.len(),
            });
        }
        Ok(n)
    }
}

/// `I_φ(v) = ∫ φ(x, v(x)) dx` by the field's quadrature weights.
pub fn integral_functional(field: &IntegrandField<'_>, v: &[f64]) -> Result<f64> {
    let n = field.check(v)?;
    Ok(field
        .phase_of_point
        .iter()
        .enumerate()
        .map(|(i, &ph)| field.weights[i] * field.phis[ph].value(&v[i * n..(i + 1) * n]))
        .sum())
}

/// `I_{φ*}(v*)` with the numeric conjugate at every point.
pub fn conjugate_integral_functional(
    field: &IntegrandField<'_>,
    v_star: &[f64],
    search_radius: f64,
) -> Result<f64> {
    let n = field.check(v_star)?;
    let mut total = 0.0;
    for (i, &ph) in field.phase_of_point.iter().enumerate() {
        total += field.weights[i] * fenchel_conjugate(&field.phis[ph], &v_star[i * n..(i + 1) * n], search_radius)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
