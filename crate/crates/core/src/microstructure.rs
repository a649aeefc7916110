//! Stationary ergodic coefficient fields from iid lattice cells.
//!
//! A [`Realization`] assigns every integer cell `k ∈ ℤᵈ` a phase drawn from
//! `hash_cell(seed, k)`. Evaluation at a physical point `x` on scale `η`
//! reads the cell containing `x / (η · cell_size)`, so it is pure and needs
//! no stored lattice. Shifting a realization by a lattice vector adds an
//! integer offset to every cell index.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::convex::MonotoneLaw;
use crate::error::{Error, Result};
use crate::linalg::DMat;
use crate::rng::{hash_cell, mix64, unit_f64};

/// Geometry of the random field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Every lattice cell carries an iid phase.
    CheckerboardIid,
    /// Phase depends on the first cell index only.
    Laminate1d,
    /// One random seed point per cell; a point takes the phase of the nearest seed.
    VoronoiSeeded,
}

/// Material data of one phase.
///
/// Tensors act on symmetric matrices in Mandel form, see [`crate::mandel`].
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub stiffness: DMat,
    pub hardening: DMat,
    pub law: MonotoneLaw,
    /// Smallest eigenvalue of the stiffness.
    pub alpha: f64,
    /// Largest eigenvalue of the stiffness.
    pub beta: f64,
}

impl CoefficientSet {
    /// Validates `stiffness` (SPD), `hardening` (PSD, `N × N` with `N` the
    /// law dimension) and stores the ellipticity bracket.
    pub fn new(stiffness: DMat, hardening: DMat, law: MonotoneLaw) -> Result<Self> {
        if !stiffness.is_square() || stiffness.asymmetry() > 1e-12 * stiffness.max_abs().max(1.0) {
            return Err(Error::Config("stiffness must be a symmetric square matrix".into()));
        }
        let (alpha, beta) = stiffness.min_max_eigen();
        if !(alpha > 0.0) {
            return Err(Error::Ellipticity(format!("stiffness is not positive definite (min eigenvalue {alpha:e})")));
        }
        if hardening.rows() != law.dim || !hardening.is_square() {
            return Err(Error::Config(format!(
                "hardening must be {n}x{n} to match the flow law",
                n = law.dim
            )));
        }
        if law.dim < stiffness.rows() {
            return Err(Error::Config(format!(
                "internal variables ({}) cannot be fewer than strain components ({})",
                law.dim,
                stiffness.rows()
            )));
        }
        let (lmin, _) = hardening.min_max_eigen();
        if hardening.asymmetry() > 1e-12 * hardening.max_abs().max(1.0) || lmin < -1e-12 {
            return Err(Error::Config(format!(
                "hardening must be symmetric positive semi-definite (min eigenvalue {lmin:e})"
            )));
        }
        Ok(Self {
            stiffness,
            hardening,
            law,
            alpha,
            beta,
        })
    }

    pub fn strain_dim(&self) -> usize {
        self.stiffness.rows()
    }

    /// `𝔸 = ℂ⁻¹`
    pub fn compliance(&self) -> DMat {
        self.stiffness.inverse().expect("stiffness is positive definite")
    }

    /// Re-checks `α|ξ|² ≤ ℂξ·ξ ≤ β|ξ|²` by eigenvalues.
    pub fn within_bracket(&self) -> bool {
        let (lo, hi) = self.stiffness.min_max_eigen();
        let tol = 1e-12 * self.beta;
        lo >= self.alpha - tol && hi <= self.beta + tol
    }
}

/// Recipe of a random field.
#[derive(Debug, Clone)]
pub struct FieldSpec {
    pub kind: FieldKind,
    /// Spatial dimension `d ∈ {1, 2, 3}`.
    pub dim: usize,
    pub cell_size: f64,
    pub phases: Vec<CoefficientSet>,
    pub probabilities: Vec<f64>,
    pub seed: u64,
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Config(format!("dimension must be 1, 2 or 3, got {}", self.dim)));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::Config(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        if self.phases.is_empty() {
            return Err(Error::Config("at least one phase is required".into()));
        }
        if self.phases.len() != self.probabilities.len() {
            return Err(Error::Config(format!(
                "{} phases but {} probabilities",
                self.phases.len(),
                self.probabilities.len()
            )));
        }
        if let Some(p) = self.probabilities.iter().find(|p| !(**p >= 0.0)) {
            return Err(Error::Config(format!("probabilities must be nonnegative, got {p}")));
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("probabilities sum to {sum}, expected 1")));
        }
        let s = crate::mandel::sym_dim(self.dim);
        if let Some(k) = self.phases.iter().position(|c| c.strain_dim() != s) {
            return Err(Error::Config(format!("phase {k} stiffness is not {s}x{s} for dimension {}", self.dim)));
        }
        let n = self.phases[0].law.dim;
        if self.phases.iter().any(|c| c.law.dim != n) {
            return Err(Error::Config("all phases need the same internal-variable dimension".into()));
        }
        Ok(())
    }

    /// `E[obs]` under the phase distribution.
    pub fn ensemble_mean(&self, observable: &dyn Fn(usize, &CoefficientSet) -> f64) -> f64 {
        self.phases
            .iter()
            .zip(&self.probabilities)
            .enumerate()
            .map(|(k, (c, p))| p * observable(k, c))
            .sum()
    }
}

/// One sample `ω` of the field together with its lattice shift.
#[derive(Debug, Clone)]
pub struct Realization {
    spec: Arc<FieldSpec>,
    seed: u64,
    offset: [i64; 3],
    cumulative: Arc<[f64]>,
}

/// Draws a realization; deterministic in `spec.seed`.
pub fn sample_realization(spec: &FieldSpec) -> Result<Realization> {
    spec.validate()?;
    let mut acc = 0.0;
    let cumulative: Vec<f64> = spec
        .probabilities
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    Ok(Realization {
        seed: spec.seed,
        spec: Arc::new(spec.clone()),
        offset: [0; 3],
        cumulative: cumulative.into(),
    })
}

impl Realization {
    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// The realization `τ_y ω` for an integer lattice vector `y`.
    pub fn shifted(&self, shift: [i64; 3]) -> Self {
        let mut out = self.clone();
        for (o, s) in out.offset.iter_mut().zip(shift) {
            *o += s;
        }
        out
    }

    /// Same spec, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        out.offset = [0; 3];
        out
    }

    fn categorical(&self, u: f64) -> usize {
        let last = self.cumulative.len() - 1;
        self.cumulative.iter().position(|&c| u < c).unwrap_or(last).min(last)
    }

    /// Phase stored at lattice cell `cell` (before kind-specific geometry).
    pub fn lattice_value(&self, cell: [i64; 3]) -> usize {
        if self.spec.phases.len() == 1 {
            return 0;
        }
        let mut key = [0i64; 3];
        for a in 0..self.spec.dim {
            key[a] = cell[a] + self.offset[a];
        }
        if self.spec.kind == FieldKind::Laminate1d {
            key[1] = 0;
            key[2] = 0;
        }
        self.categorical(unit_f64(hash_cell(self.seed, key)))
    }

    fn seed_point(&self, cell: [i64; 3], axis: usize) -> f64 {
        let mut key = [0i64; 3];
        for a in 0..self.spec.dim {
            key[a] = cell[a] + self.offset[a];
        }
        let h = hash_cell(self.seed ^ 0x7f4a_7c15_9e37_79b9, key);
        unit_f64(mix64(h.wrapping_add(axis as u64 + 1)))
    }

    /// Phase at a point `y` given in lattice units (`y = x / (η · cell_size)`).
    pub fn phase_at_lattice(&self, y: &[f64]) -> usize {
        let d = self.spec.dim;
        let mut cell = [0i64; 3];
        for a in 0..d {
            cell[a] = y[a].floor() as i64;
        }
        if self.spec.kind != FieldKind::VoronoiSeeded || self.spec.phases.len() == 1 {
            return self.lattice_value(cell);
        }
        let mut best = (f64::INFINITY, cell);
        let span = |a: usize| if a < d { -1..=1 } else { 0..=0 };
        for i in span(0) {
            for j in span(1) {
                for k in span(2) {
                    let c = [cell[0] + i, cell[1] + j, cell[2] + k];
                    let mut dist = 0.0;
                    for a in 0..d {
                        let p = c[a] as f64 + self.seed_point(c, a);
                        dist += (y[a] - p) * (y[a] - p);
                    }
                    // ties broken by the lexicographically smaller cell
                    if dist < best.0 || (dist == best.0 && c < best.1) {
                        best = (dist, c);
                    }
                }
            }
        }
        self.lattice_value(best.1)
    }

    /// Phase index at physical point `x` on scale `η`.
    pub fn phase_at(&self, x: &[f64], eta: f64) -> usize {
        let scale = eta * self.spec.cell_size;
        let mut y = [0.0; 3];
        for a in 0..self.spec.dim {
            y[a] = x[a] / scale;
        }
        self.phase_at_lattice(&y[..self.spec.dim])
    }
}

/// `x ↦ coefficients(τ_{x/η} ω)`.
pub fn evaluate_at<'a>(real: &'a Realization, x: &[f64], eta: f64) -> Result<&'a CoefficientSet> {
    if !(eta > 0.0) {
        return Err(Error::Precondition(format!("scale eta must be positive, got {eta}")));
    }
    if x.len() < real.dim() {
        return Err(Error::GridMismatch {
            expected: real.dim(),
            found: x.len(),
        });
    }
    Ok(&real.spec.phases[real.phase_at(x, eta)])
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn unit(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

/// Visits the midpoints of a uniform tensor grid of `box` with spacing at
/// most `spacing`, passing each point and its weight.
pub(crate) fn midpoint_grid(domain: &DomainBox, spacing: f64, mut visit: impl FnMut(&[f64], f64)) {
    let d = domain.lo.len();
    let counts: Vec<usize> = (0..d)
        .map(|a| (((domain.hi[a] - domain.lo[a]) / spacing) - 1e-9).ceil().max(1.0) as usize)
        .collect();
    let steps: Vec<f64> = (0..d).map(|a| (domain.hi[a] - domain.lo[a]) / counts[a] as f64).collect();
    let weight: f64 = steps.iter().product();
    let total: usize = counts.iter().product();
    let mut x = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        for a in 0..d {
            let i = rem % counts[a];
            rem /= counts[a];
            x[a] = domain.lo[a] + (i as f64 + 0.5) * steps[a];
        }
        visit(&x, weight);
    }
}

/// `(1/|A|) ∫_A obs(τ_{x/η} ω) dx` by midpoint quadrature with
/// `points_per_cell` points per cell edge.
pub fn ergodic_average(
    real: &Realization,
    observable: &dyn Fn(usize, &CoefficientSet) -> f64,
    domain: &DomainBox,
    eta: f64,
    points_per_cell: usize,
) -> Result<f64> {
    let spacing = if points_per_cell == 0 {
        f64::INFINITY
    } else {
        eta * real.spec.cell_size / points_per_cell as f64
    };
    ergodic_average_with_spacing(real, observable, domain, eta, spacing)
}

/// As [`ergodic_average`] with an explicit quadrature spacing; refuses
/// spacings coarser than one microstructure cell.
pub fn ergodic_average_with_spacing(
    real: &Realization,
    observable: &dyn Fn(usize, &CoefficientSet) -> f64,
    domain: &DomainBox,
    eta: f64,
    spacing: f64,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::Precondition(format!("scale eta must be positive, got {eta}")));
    }
    if domain.lo.len() != real.dim() || domain.hi.len() != real.dim() {
        return Err(Error::GridMismatch {
            expected: real.dim(),
            found: domain.lo.len(),
        });
    }
    let vol = domain.volume();
    if !(vol > 0.0) || !vol.is_finite() {
        return Err(Error::Precondition("domain must be a bounded box of positive volume".into()));
    }
    let cell_width = eta * real.spec.cell_size;
    if !(spacing <= cell_width * (1.0 + 1e-12)) {
        return Err(Error::Resolution { cell_width, spacing });
    }
    // phase observables are evaluated once per phase
    let values: Vec<f64> = real
        .spec
        .phases
        .iter()
        .enumerate()
        .map(|(k, c)| observable(k, c))
        .collect();
    let mut sum = 0.0;
    midpoint_grid(domain, spacing, |x, w| sum += w * values[real.phase_at(x, eta)]);
    Ok(sum / vol)
}

/// Outcome of [`stationarity_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub checked: usize,
    /// Indices of sample points where the shifted field disagrees.
    pub violations: Vec<usize>,
}

/// Compares `τ_y ω` at `x` with `ω` at `x + y·cell_size` (unit scale).
pub fn stationarity_check(real: &Realization, shift: &[f64], sample_points: &[Vec<f64>]) -> Result<StationarityReport> {
    let d = real.dim();
    if shift.len() != d {
        return Err(Error::GridMismatch {
            expected: d,
            found: shift.len(),
        });
    }
    let mut lattice = [0i64; 3];
    for a in 0..d {
        if shift[a].fract() != 0.0 || !shift[a].is_finite() {
            return Err(Error::Precondition(format!("shift {shift:?} is not a lattice vector")));
        }
        lattice[a] = shift[a] as i64;
    }
    let moved = real.shifted(lattice);
    let cs = real.spec.cell_size;
    let mut violations = Vec::new();
    for (i, x) in sample_points.iter().enumerate() {
        let xs: Vec<f64> = (0..d).map(|a| x[a] + shift[a] * cs).collect();
        if moved.phase_at(x, 1.0) != real.phase_at(&xs, 1.0) {
            violations.push(i);
        }
    }
    Ok(StationarityReport {
        checked: sample_points.len(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mandel::isotropic_stiffness;
    use crate::rng::SplitMix64;

    fn phase(d: usize, e: f64) -> CoefficientSet {
        let s = crate::mandel::sym_dim(d);
        CoefficientSet::new(
            isotropic_stiffness(d, e, e),
            DMat::zeros(s, s),
            MonotoneLaw::norton_hoff(s, 1.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn spec(kind: FieldKind, d: usize, probs: &[f64]) -> FieldSpec {
        FieldSpec {
            kind,
            dim: d,
            cell_size: 1.0,
            phases: probs.iter().enumerate().map(|(k, _)| phase(d, 1.0 + k as f64)).collect(),
            probabilities: probs.to_vec(),
            seed: 42,
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(sample_realization(&spec(FieldKind::CheckerboardIid, 2, &[0.5, 0.49])).is_err());
        assert!(sample_realization(&spec(FieldKind::CheckerboardIid, 2, &[1.2, -0.2])).is_err());
        let mut s = spec(FieldKind::CheckerboardIid, 2, &[1.0]);
        s.cell_size = 0.0;
        assert!(sample_realization(&s).is_err());
        assert!(CoefficientSet::new(DMat::diag(&[1.0, -1.0, 1.0]), DMat::zeros(3, 3), MonotoneLaw::zero(3)).is_err());
        assert!(CoefficientSet::new(DMat::identity(3), DMat::diag(&[1.0, -1.0, 1.0]), MonotoneLaw::zero(3)).is_err());
    }

    #[test]
    fn degenerate_distributions() {
        let one = sample_realization(&spec(FieldKind::CheckerboardIid, 2, &[1.0])).unwrap();
        let two = sample_realization(&spec(FieldKind::VoronoiSeeded, 2, &[1.0, 0.0])).unwrap();
        let mut rng = SplitMix64::new(1);
        for _ in 0..1000 {
            let x = [rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)];
            assert_eq!(one.phase_at(&x, 1.0), 0);
            assert_eq!(two.phase_at(&x, 1.0), 0);
        }
    }

    #[test]
    fn scale_covariance_and_laminate_lookup() {
        let r = sample_realization(&spec(FieldKind::CheckerboardIid, 2, &[0.5, 0.5])).unwrap();
        let mut rng = SplitMix64::new(2);
        for _ in 0..500 {
            let x = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            assert_eq!(r.phase_at(&x, 0.1), r.phase_at(&[x[0] / 2.0, x[1] / 2.0], 0.05));
        }
        let lam = sample_realization(&spec(FieldKind::Laminate1d, 2, &[0.5, 0.5])).unwrap();
        for i in -20..20 {
            let x = i as f64 + 0.5;
            let direct = lam.lattice_value([i, 0, 0]);
            assert_eq!(lam.phase_at(&[x, 0.3], 1.0), direct);
            assert_eq!(lam.phase_at(&[x, 17.9], 1.0), direct);
        }
        assert!(evaluate_at(&lam, &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn determinism() {
        let s = spec(FieldKind::VoronoiSeeded, 3, &[0.3, 0.3, 0.4]);
        let a = sample_realization(&s).unwrap();
        let b = sample_realization(&s).unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..500 {
            let x = [rng.uniform(-9.0, 9.0), rng.uniform(-9.0, 9.0), rng.uniform(-9.0, 9.0)];
            assert_eq!(a.phase_at(&x, 0.7), b.phase_at(&x, 0.7));
        }
    }

    #[test]
    fn stationarity_on_lattice_shifts() {
        let mut rng = SplitMix64::new(8);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)]).collect();
        for kind in [FieldKind::CheckerboardIid, FieldKind::Laminate1d, FieldKind::VoronoiSeeded] {
            let r = sample_realization(&spec(kind, 2, &[0.5, 0.5])).unwrap();
            assert!(stationarity_check(&r, &[0.0, 0.0], &pts).unwrap().violations.is_empty());
            for _ in 0..10 {
                let y = [(rng.next_u64() % 41) as f64 - 20.0, (rng.next_u64() % 41) as f64 - 20.0];
                let rep = stationarity_check(&r, &y, &pts).unwrap();
                assert_eq!(rep.checked, 300);
                assert!(rep.violations.is_empty(), "{kind:?} {y:?}");
            }
            assert!(matches!(stationarity_check(&r, &[0.5, 0.0], &pts), Err(Error::Precondition(_))));
        }
    }

    #[test]
    fn ergodic_average_constant_and_resolution() {
        let r = sample_realization(&spec(FieldKind::CheckerboardIid, 2, &[1.0])).unwrap();
        let avg = ergodic_average(&r, &|_, _| 3.25, &DomainBox::unit(2), 1.0 / 16.0, 2).unwrap();
        assert_eq!(avg, 3.25);
        let err = ergodic_average_with_spacing(&r, &|_, _| 1.0, &DomainBox::unit(2), 1.0 / 16.0, 0.1);
        assert!(matches!(err, Err(Error::Resolution { .. })));
    }

    #[test]
    fn coefficient_bracket_holds() {
        let s = spec(FieldKind::CheckerboardIid, 2, &[0.5, 0.5]);
        let r = sample_realization(&s).unwrap();
        for i in 0..20 {
            let c = evaluate_at(&r, &[i as f64 * 0.37, 1.3], 0.25).unwrap();
            assert!(c.within_bracket());
        }
    }
}
