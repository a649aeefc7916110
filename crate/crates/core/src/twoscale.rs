//! Empirical stochastic two-scale convergence.
//!
//! Test functions are separable, `φ(x, ω) = ψ(x) · g(ω)`, with `ψ` a
//! polynomial bump on the macroscopic box and `g` an observable of the
//! coefficient field near the origin. On scale `η` the oscillating test
//! function is `x ↦ ψ(x) g(τ_{x/η} ω)`.
//!
//! Limits are described by *local* profiles `u(x, k)` that depend on the
//! phase `k` at the origin. Their pairings need the joint law of the phase at
//! the origin and at a neighbouring cell, which is exact for lattice fields
//! and sampled for Voronoi fields.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::convex::ConvexFn;
use crate::error::{Error, Result};
use crate::fem::{nodal_to_quad, Grid};
use crate::microstructure::{sample_realization, DomainBox, FieldKind, FieldSpec, Realization};
use crate::rng::SplitMix64;
use crate::rothe::RotheTrajectory;

/// Tensor-product bump `Π_a (1 − ((x_a − c_a)/r_a)²)²₊`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl Bump {
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for ((xa, c), r) in x.iter().zip(&self.center).zip(&self.radius) {
            let t = (xa - c) / r;
            if t.abs() >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t * t;
            v *= s * s;
        }
        v
    }

    /// Support intersected with `domain`.
    fn support(&self, domain: &DomainBox) -> DomainBox {
        let lo = (0..self.center.len())
            .map(|a| (self.center[a] - self.radius[a]).max(domain.lo[a]))
            .collect();
        let hi = (0..self.center.len())
            .map(|a| (self.center[a] + self.radius[a]).min(domain.hi[a]))
            .collect();
        DomainBox { lo, hi }
    }
}

/// Observable families `g(ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableKind {
    Constant,
    /// `1[phase at origin = k]`.
    Indicator(usize),
    /// `tr ℂ / s` of the phase at the origin.
    MeanStiffness,
    /// `tr ℂ⁻¹ / s` of the phase at the origin.
    MeanCompliance,
    /// `1[phase one cell along `axis` = k]`.
    NeighborIndicator { axis: usize, phase: usize },
}

/// An observable with its per-phase table.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub kind: ObservableKind,
    table: Vec<f64>,
}

impl Observable {
    pub fn new(kind: ObservableKind, spec: &FieldSpec) -> Result<Self> {
        let k = spec.phases.len();
        let check = |p: usize| {
            if p < k {
                Ok(())
            } else {
                Err(Error::Config(format!("observable refers to phase {p}, field has {k}")))
            }
        };
        let table = match kind {
            ObservableKind::Constant => vec![1.0; k],
            ObservableKind::Indicator(p) => {
                check(p)?;
                (0..k).map(|j| if j == p { 1.0 } else { 0.0 }).collect()
            }
            ObservableKind::NeighborIndicator { axis, phase } => {
                check(phase)?;
                if axis >= spec.dim {
                    return Err(Error::Config(format!("neighbour axis {axis} exceeds dimension {}", spec.dim)));
                }
                (0..k).map(|j| if j == phase { 1.0 } else { 0.0 }).collect()
            }
            ObservableKind::MeanStiffness => spec
                .phases
                .iter()
                .map(|c| trace_mean(&c.stiffness))
                .collect(),
            ObservableKind::MeanCompliance => spec
                .phases
                .iter()
                .map(|c| trace_mean(&c.compliance()))
                .collect(),
        };
        Ok(Self { kind, table })
    }

    /// `g` from the phases at the origin and at the neighbouring cell.
    pub fn value(&self, origin: usize, neighbor: usize) -> f64 {
        match self.kind {
            ObservableKind::NeighborIndicator { .. } => self.table[neighbor],
            _ => self.table[origin],
        }
    }

    /// Axis of the neighbouring cell the observable reads, if any.
    pub fn neighbor_axis(&self) -> Option<usize> {
        match self.kind {
            ObservableKind::NeighborIndicator { axis, .. } => Some(axis),
            _ => None,
        }
    }

    /// `g(τ_y ω)` for `y` in lattice units.
    pub fn at_lattice(&self, real: &Realization, y: &[f64]) -> f64 {
        let origin = real.phase_at_lattice(y);
        match self.neighbor_axis() {
            None => self.table[origin],
            Some(axis) => {
                let mut yn = [0.0; 3];
                yn[..y.len()].copy_from_slice(y);
                yn[axis] += 1.0;
                self.table[real.phase_at_lattice(&yn[..y.len()])]
            }
        }
    }
}

fn trace_mean(m: &crate::linalg::DMat) -> f64 {
    (0..m.rows()).map(|i| m.row(i)[i]).sum::<f64>() / m.rows() as f64
}

/// Joint law `P(phase at 0 = i, phase at e_axis = j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLaw {
    pub phases: usize,
    pub probabilities: Vec<f64>,
}

/// Sample count for the Voronoi joint law.
const VORONOI_SAMPLES: usize = 1 << 16;

impl JointLaw {
    pub fn new(spec: &FieldSpec, axis: usize) -> Result<Self> {
        let k = spec.phases.len();
        let p = &spec.probabilities;
        let mut probabilities = vec![0.0; k * k];
        match spec.kind {
            FieldKind::CheckerboardIid => {
                for i in 0..k {
                    for j in 0..k {
                        probabilities[i * k + j] = p[i] * p[j];
                    }
                }
            }
            FieldKind::Laminate1d => {
                for i in 0..k {
                    if axis == 0 {
                        for j in 0..k {
                            probabilities[i * k + j] = p[i] * p[j];
                        }
                    } else {
                        probabilities[i * k + i] = p[i];
                    }
                }
            }
            FieldKind::VoronoiSeeded => {
                let real = sample_realization(spec)?;
                let mut rng = SplitMix64::new(spec.seed ^ 0x5eed_0f_a11);
                let d = spec.dim;
                let w = 1.0 / VORONOI_SAMPLES as f64;
                for _ in 0..VORONOI_SAMPLES {
                    let mut y = [0.0; 3];
                    for ya in y.iter_mut().take(d) {
                        *ya = rng.uniform(0.0, 4096.0);
                    }
                    let i = real.phase_at_lattice(&y[..d]);
                    y[axis] += 1.0;
                    let j = real.phase_at_lattice(&y[..d]);
                    probabilities[i * k + j] += w;
                }
            }
        }
        Ok(Self { phases: k, probabilities })
    }

    /// `E[h(phase at 0) · g]`.
    pub fn expectation(&self, obs: &Observable, h: &dyn Fn(usize) -> f64) -> f64 {
        let k = self.phases;
        let mut s = 0.0;
        for i in 0..k {
            let hi = h(i);
            for j in 0..k {
                let p = self.probabilities[i * k + j];
                if p != 0.0 {
                    s += p * hi * obs.value(i, j);
                }
            }
        }
        s
    }
}

/// One separable test function.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryEntry {
    pub id: usize,
    pub bump: Bump,
    pub observable: Observable,
}

impl DictionaryEntry {
    /// `ψ(x) g(τ_{x/η} ω)`.
    pub fn eval(&self, real: &Realization, x: &[f64], eta: f64) -> f64 {
        let scale = eta * real.spec().cell_size;
        let y: Vec<f64> = x.iter().map(|v| v / scale).collect();
        self.bump.value(x) * self.observable.at_lattice(real, &y)
    }
}

/// Countable, indexable dictionary of test functions on a box.
#[derive(Debug, Clone)]
pub struct TestFunctionDictionary {
    pub domain: DomainBox,
    pub entries: Vec<DictionaryEntry>,
}

/// Bump centres and radii as fractions of the box edge, per axis.
const BUMPS: [([f64; 3], [f64; 3]); 4] = [
    ([0.5, 0.5, 0.5], [0.5, 0.5, 0.5]),
    ([0.3, 0.3, 0.3], [0.25, 0.25, 0.25]),
    ([0.7, 0.7, 0.7], [0.25, 0.25, 0.25]),
    ([0.35, 0.65, 0.5], [0.3, 0.3, 0.3]),
];

impl TestFunctionDictionary {
    /// Four bumps times six observables: constant, the indicators of the
    /// first and last phase, mean stiffness, mean compliance and the
    /// first-phase indicator one cell along the first axis.
    pub fn standard(spec: &FieldSpec, domain: DomainBox) -> Result<Self> {
        let k = spec.phases.len();
        let kinds = [
            ObservableKind::Constant,
            ObservableKind::Indicator(0),
            ObservableKind::Indicator(k - 1),
            ObservableKind::MeanStiffness,
            ObservableKind::MeanCompliance,
            ObservableKind::NeighborIndicator { axis: 0, phase: 0 },
        ];
        let observables = kinds
            .iter()
            .map(|&kind| Observable::new(kind, spec))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(spec.dim, domain, &observables)
    }

    /// Every standard bump paired with every observable.
    pub fn from_parts(dim: usize, domain: DomainBox, observables: &[Observable]) -> Result<Self> {
        if domain.lo.len() != dim || domain.hi.len() != dim {
            return Err(Error::GridMismatch {
                expected: dim,
                found: domain.lo.len(),
            });
        }
        let mut entries = Vec::new();
        for (center, radius) in BUMPS.iter() {
            let bump = Bump {
                center: (0..dim)
                    .map(|a| domain.lo[a] + center[a] * (domain.hi[a] - domain.lo[a]))
                    .collect(),
                radius: (0..dim).map(|a| radius[a] * (domain.hi[a] - domain.lo[a])).collect(),
            };
            for obs in observables {
                entries.push(DictionaryEntry {
                    id: entries.len(),
                    bump: bump.clone(),
                    observable: obs.clone(),
                });
            }
        }
        Ok(Self { domain, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when some entry separates the two pairing vectors by more than `tol`.
    pub fn distinguishes(&self, a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).any(|(x, y)| (x - y).abs() > tol)
    }
}

/// `∫_Q u^η(x) ψ(x) g(τ_{x/η} ω) dx` per component, for a quadrature field.
pub fn pair(
    grid: &Grid,
    values: &[f64],
    ncomp: usize,
    entry: &DictionaryEntry,
    real: &Realization,
    eta: f64,
) -> Result<Vec<f64>> {
    if values.len() != grid.n_quad() * ncomp {
        return Err(Error::GridMismatch {
            expected: grid.n_quad() * ncomp,
            found: values.len(),
        });
    }
    if real.dim() != grid.dim() {
        return Err(Error::GridMismatch {
            expected: grid.dim(),
            found: real.dim(),
        });
    }
    let cell_size = real.spec().cell_size;
    grid.check_resolution(eta, cell_size)?;
    let d = grid.dim();
    let nq = grid.quad_per_element();
    let w = grid.quad_weight();
    let points = grid.quad_points();
    let scale = eta * cell_size;
    let mut out = vec![0.0; ncomp];
    for e in 0..grid.n_elements() {
        // elements resolve the microstructure, so g is read at the centre
        let c = grid.element_center(e);
        let y: Vec<f64> = c[..d].iter().map(|v| v / scale).collect();
        let g = entry.observable.at_lattice(real, &y);
        if g == 0.0 {
            continue;
        }
        for q in e * nq..(e + 1) * nq {
            let psi = entry.bump.value(&points[q][..d]);
            if psi == 0.0 {
                continue;
            }
            for k in 0..ncomp {
                out[k] += w * values[q * ncomp + k] * psi * g;
            }
        }
    }
    Ok(out)
}

/// [`pair`] for a nodal field.
pub fn pair_nodal(
    grid: &Grid,
    u: &[f64],
    ncomp: usize,
    entry: &DictionaryEntry,
    real: &Realization,
    eta: f64,
) -> Result<Vec<f64>> {
    if u.len() != grid.n_nodes() * ncomp {
        return Err(Error::GridMismatch {
            expected: grid.n_nodes() * ncomp,
            found: u.len(),
        });
    }
    pair(grid, &nodal_to_quad(grid, u, ncomp), ncomp, entry, real, eta)
}

/// Local two-scale limit profile `(x, phase at origin) ↦ u(x, ω)`.
pub type LocalProfile<'a> = &'a dyn Fn(&[f64], usize) -> Vec<f64>;

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Composite 3-point Gauss rule with `pieces` sub-intervals per axis.
fn integrate_box(domain: &DomainBox, pieces: usize, mut visit: impl FnMut(&[f64], f64)) {
    let d = domain.lo.len();
    let per_axis = pieces * 3;
    let total = per_axis.pow(d as u32);
    let widths: Vec<f64> = (0..d).map(|a| (domain.hi[a] - domain.lo[a]) / pieces as f64).collect();
    if widths.iter().any(|w| !(*w > 0.0)) {
        return;
    }
    let mut x = vec![0.0; d];
    for flat in 0..total {
        let mut rem = flat;
        let mut weight = 1.0;
        for a in 0..d {
            let i = rem % per_axis;
            rem /= per_axis;
            let (node, wg) = GAUSS3[i % 3];
            let left = domain.lo[a] + (i / 3) as f64 * widths[a];
            x[a] = left + 0.5 * widths[a] * (1.0 + node);
            weight *= 0.5 * widths[a] * wg;
        }
        visit(&x, weight);
    }
}

/// Sub-intervals per axis for limit-side integrals.
const LIMIT_PIECES: usize = 24;

/// `∫_Q ∫_Ω u(x, ω) ψ(x) g(ω) dP dx` per component.
pub fn limit_pairing(
    spec: &FieldSpec,
    domain: &DomainBox,
    ncomp: usize,
    entry: &DictionaryEntry,
    profile: LocalProfile<'_>,
) -> Result<Vec<f64>> {
    let axis = entry.observable.neighbor_axis().unwrap_or(0);
    let law = JointLaw::new(spec, axis)?;
    let k = spec.phases.len();
    let mut out = vec![0.0; ncomp];
    let mut vals = vec![vec![0.0; ncomp]; k];
    integrate_box(&entry.bump.support(domain), LIMIT_PIECES, |x, w| {
        let psi = entry.bump.value(x);
        if psi == 0.0 {
            return;
        }
        for (p, v) in vals.iter_mut().enumerate() {
            *v = profile(x, p);
        }
        for c in 0..ncomp {
            out[c] += w * psi * law.expectation(&entry.observable, &|p| vals[p][c]);
        }
    });
    Ok(out)
}

/// Row of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingRecord {
    pub eta: f64,
    pub entry_id: usize,
    pub seed: u64,
    pub pairing: f64,
    pub limit: f64,
    pub abs_err: f64,
}

/// Empirical convergence verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceVerdict {
    /// Least-squares slope of the error against `η` over the tail.
    pub slope: f64,
    pub final_error: f64,
    pub tolerance: f64,
    pub decreasing: bool,
    pub pass: bool,
}

/// Fits `err ≈ a + slope·η` over the last `tail` entries (all if zero).
/// Passing needs a final error within `tol` and errors that do not grow as
/// `η` shrinks, unless all of them sit below `10⁻³·tol`.
pub fn convergence_verdict(etas: &[f64], errors: &[f64], tail: usize, tol: f64) -> ConvergenceVerdict {
    let n = etas.len().min(errors.len());
    let start = if tail == 0 || tail > n { 0 } else { n - tail };
    let (xs, ys) = (&etas[start..n], &errors[start..n]);
    let m = xs.len() as f64;
    let slope = if xs.len() < 2 {
        0.0
    } else {
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    let final_error = ys.last().copied().unwrap_or(f64::NAN);
    // errors far below the tolerance carry no trend
    let floor = 1e-3 * tol;
    let decreasing = slope >= 0.0 || ys.iter().all(|e| *e <= floor);
    ConvergenceVerdict {
        slope,
        final_error,
        tolerance: tol,
        decreasing,
        pass: decreasing && final_error <= tol,
    }
}

/// Pairings of one entry along an `η`-sequence with a candidate limit.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScalePairing {
    pub entry_id: usize,
    pub seed: u64,
    pub etas: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
}

impl TwoScalePairing {
    pub fn new(entry_id: usize, seed: u64, etas: Vec<f64>, values: Vec<f64>, limit: f64) -> Result<Self> {
        check_decreasing(&etas)?;
        if etas.len() != values.len() {
            return Err(Error::GridMismatch {
                expected: etas.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            entry_id,
            seed,
            etas,
            values,
            limit,
        })
    }

    pub fn errors(&self) -> Vec<f64> {
        self.values.iter().map(|v| (v - self.limit).abs()).collect()
    }

    pub fn verdict(&self, tol: f64) -> ConvergenceVerdict {
        convergence_verdict(&self.etas, &self.errors(), 0, tol)
    }

    pub fn records(&self) -> Vec<PairingRecord> {
        self.etas
            .iter()
            .zip(&self.values)
            .map(|(&eta, &pairing)| PairingRecord {
                eta,
                entry_id: self.entry_id,
                seed: self.seed,
                pairing,
                limit: self.limit,
                abs_err: (pairing - self.limit).abs(),
            })
            .collect()
    }
}

fn check_decreasing(etas: &[f64]) -> Result<()> {
    if etas.iter().any(|e| !(*e > 0.0)) || etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Precondition("eta sequence must be positive and strictly decreasing".into()));
    }
    Ok(())
}

/// A displacement-like field on scale `η`.
#[derive(Debug, Clone)]
pub struct OscillatingField {
    pub eta: f64,
    pub grid: Grid,
    /// Nodal values, `ncomp` per node; scalar or `d`-vector fields.
    pub u: Vec<f64>,
    pub ncomp: usize,
}

/// Splitting statistics for one `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    pub eta: f64,
    pub gradient_norm: f64,
    pub corrector_norm: f64,
    /// Largest `|cell mean of the corrector|` over microstructure cells,
    /// relative to the gradient RMS.
    pub max_cell_mean: f64,
    /// `|mean of the corrector over Q|`, relative to the gradient RMS.
    pub global_mean: f64,
    /// Macroscopic gradient per quadrature point (`ncomp·d` components).
    pub macro_gradient: Vec<f64>,
    /// Macroscopic field per element.
    pub macro_field: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplittingReport {
    pub stats: Vec<SplitStats>,
    /// Finest-scale estimate of `u₀` per element.
    pub u0: Vec<f64>,
}

/// Splits `∇u^η` into a macroscopic part, its box average at scale `√η`,
/// and a corrector, the remainder.
///
/// `growth_limit` bounds `‖∇u^η‖` relative to the first member; larger
/// growth is reported as unbounded.
pub fn verify_gradient_splitting(
    sequence: &[OscillatingField],
    cell_size: f64,
    growth_limit: f64,
) -> Result<SplittingReport> {
    if sequence.is_empty() {
        return Err(Error::Precondition("empty sequence".into()));
    }
    let etas: Vec<f64> = sequence.iter().map(|f| f.eta).collect();
    check_decreasing(&etas)?;
    let mut stats = Vec::new();
    let mut first_norm = None;
    for field in sequence {
        let grid = &field.grid;
        let d = grid.dim();
        let nc = field.ncomp * d;
        if field.u.len() != grid.n_nodes() * field.ncomp {
            return Err(Error::GridMismatch {
                expected: grid.n_nodes() * field.ncomp,
                found: field.u.len(),
            });
        }
        grid.check_resolution(field.eta, cell_size)?;
        let grad = if field.ncomp == 1 {
            crate::fem::scalar_gradient(grid, &field.u)
        } else if field.ncomp == d {
            crate::fem::vector_gradient(grid, &field.u)
        } else {
            return Err(Error::GridMismatch {
                expected: d,
                found: field.ncomp,
            });
        };
        let gradient_norm = crate::fem::quad_norm(grid, &grad, nc, 2.0);
        if !gradient_norm.is_finite() {
            return Err(Error::Precondition(format!("gradient is not finite at eta {}", field.eta)));
        }
        let base = *first_norm.get_or_insert(gradient_norm);
        if gradient_norm > growth_limit * base.max(f64::MIN_POSITIVE) {
            return Err(Error::Precondition(format!(
                "gradient norm {gradient_norm:e} at eta {} exceeds {growth_limit} times the first member ({base:e})",
                field.eta
            )));
        }
        let window = field.eta.sqrt();
        let nq = grid.quad_per_element();
        let ne = grid.n_elements();
        let mut elem_grad = vec![0.0; ne * nc];
        for e in 0..ne {
            for q in e * nq..(e + 1) * nq {
                for k in 0..nc {
                    elem_grad[e * nc + k] += grad[q * nc + k] / nq as f64;
                }
            }
        }
        let macro_elem = box_filter(grid, &elem_grad, nc, window);
        let mut elem_u = vec![0.0; ne * field.ncomp];
        for e in 0..ne {
            let nodes = grid.element_nodes(e);
            for &n in nodes.iter().take(grid.corners()) {
                for k in 0..field.ncomp {
                    elem_u[e * field.ncomp + k] += field.u[n * field.ncomp + k] / grid.corners() as f64;
                }
            }
        }
        let macro_field = box_filter(grid, &elem_u, field.ncomp, window);
        let mut macro_gradient = vec![0.0; grad.len()];
        let mut corrector = vec![0.0; grad.len()];
        for e in 0..ne {
            for q in e * nq..(e + 1) * nq {
                for k in 0..nc {
                    macro_gradient[q * nc + k] = macro_elem[e * nc + k];
                    corrector[q * nc + k] = grad[q * nc + k] - macro_elem[e * nc + k];
                }
            }
        }
        let corrector_norm = crate::fem::quad_norm(grid, &corrector, nc, 2.0);
        let rms = gradient_norm / grid.volume().sqrt();
        let (max_cell_mean, global_mean) = cell_means(grid, &corrector, nc, field.eta * cell_size);
        stats.push(SplitStats {
            eta: field.eta,
            gradient_norm,
            corrector_norm,
            max_cell_mean: max_cell_mean / rms.max(f64::MIN_POSITIVE),
            global_mean: global_mean / rms.max(f64::MIN_POSITIVE),
            macro_gradient,
            macro_field,
        });
    }
    let u0 = stats.last().map(|s| s.macro_field.clone()).unwrap_or_default();
    Ok(SplittingReport { stats, u0 })
}

/// Largest cell-mean norm and the norm of the global mean of `v`.
fn cell_means(grid: &Grid, v: &[f64], nc: usize, width: f64) -> (f64, f64) {
    let d = grid.dim();
    let per: Vec<usize> = (0..d)
        .map(|a| ((width / grid.spacing(a)).round() as usize).max(1))
        .collect();
    let counts: Vec<usize> = (0..d).map(|a| grid.cells(a).div_ceil(per[a])).collect();
    let total: usize = counts.iter().product();
    let mut sums = vec![0.0; total * nc];
    let mut weights = vec![0.0; total];
    let nq = grid.quad_per_element();
    let mut global = vec![0.0; nc];
    for e in 0..grid.n_elements() {
        let c = grid.element_center(e);
        let mut idx = 0;
        for a in (0..d).rev() {
            let i = ((c[a] / grid.spacing(a)) as usize) / per[a];
            idx = idx * counts[a] + i.min(counts[a] - 1);
        }
        for q in e * nq..(e + 1) * nq {
            weights[idx] += 1.0;
            for k in 0..nc {
                sums[idx * nc + k] += v[q * nc + k];
                global[k] += v[q * nc + k];
            }
        }
    }
    let nq_total = grid.n_quad() as f64;
    let mut worst = 0.0f64;
    for c in 0..total {
        if weights[c] > 0.0 {
            let m: f64 = (0..nc).map(|k| (sums[c * nc + k] / weights[c]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(m);
        }
    }
    let g = global.iter().map(|x| (x / nq_total).powi(2)).sum::<f64>().sqrt();
    (worst, g)
}

/// Separable moving average over a window of edge `width`; windows wrap on
/// periodic axes and are clipped on Dirichlet axes.
fn box_filter(grid: &Grid, v: &[f64], nc: usize, width: f64) -> Vec<f64> {
    let d = grid.dim();
    let mut cur = v.to_vec();
    for a in 0..d {
        let n = grid.cells(a);
        let half = ((0.5 * width / grid.spacing(a)).round() as usize).min(n / 2);
        let periodic = grid.boundary(a) == crate::fem::AxisBoundary::Periodic;
        let stride: usize = (0..a).map(|b| grid.cells(b)).product();
        let mut next = vec![0.0; cur.len()];
        for e in 0..grid.n_elements() {
            let i = (e / stride) % n;
            let base = e - i * stride;
            let mut acc = vec![0.0; nc];
            let mut count = 0.0;
            for off in -(half as i64)..=(half as i64) {
                let j = i as i64 + off;
                let j = if periodic {
                    j.rem_euclid(n as i64) as usize
                } else if j < 0 || j >= n as i64 {
                    continue;
                } else {
                    j as usize
                };
                let src = base + j * stride;
                for k in 0..nc {
                    acc[k] += cur[src * nc + k];
                }
                count += 1.0;
            }
            for k in 0..nc {
                next[e * nc + k] = acc[k] / count;
            }
        }
        cur = next;
    }
    cur
}

/// A quadrature field on scale `η`.
#[derive(Debug, Clone)]
pub struct QuadSequenceMember<'a> {
    pub eta: f64,
    pub grid: &'a Grid,
    pub values: &'a [f64],
}

/// Outcome of [`liminf_convex`].
#[derive(Debug, Clone, PartialEq)]
pub struct LiminfReport {
    pub etas: Vec<f64>,
    pub values: Vec<f64>,
    pub limit_side: f64,
    pub tail_min: f64,
    pub tolerance: f64,
    pub holds: bool,
}

impl LiminfReport {
    /// `tail_min − limit_side`; positive values are a Jensen gap.
    pub fn gap(&self) -> f64 {
        self.tail_min - self.limit_side
    }
}

/// Compares `∫∫ f(u(x, ω)) dP dx` with `∫ f(u^η) dx` along the sequence.
/// The tail is the finer half of the sequence.
pub fn liminf_convex(
    f: &ConvexFn,
    sequence: &[QuadSequenceMember<'_>],
    spec: &FieldSpec,
    domain: &DomainBox,
    profile: LocalProfile<'_>,
    tol: f64,
) -> Result<LiminfReport> {
    let etas: Vec<f64> = sequence.iter().map(|m| m.eta).collect();
    check_decreasing(&etas)?;
    let mut values = Vec::with_capacity(sequence.len());
    for m in sequence {
        let nq = m.grid.n_quad();
        if nq == 0 || m.values.len() % nq != 0 || m.values.len() / nq != f.dim {
            return Err(Error::GridMismatch {
                expected: nq * f.dim,
                found: m.values.len(),
            });
        }
        let w = m.grid.quad_weight();
        values.push(m.values.chunks(f.dim).map(|v| w * f.value(v)).sum::<f64>());
    }
    let mut limit_side = 0.0;
    integrate_box(domain, LIMIT_PIECES, |x, w| {
        let e: f64 = spec
            .probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| p * f.value(&profile(x, k)))
            .sum();
        limit_side += w * e;
    });
    let tail = &values[values.len() / 2..];
    let tail_min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LiminfReport {
        etas,
        values,
        limit_side,
        tail_min,
        tolerance: tol,
        holds: limit_side <= tail_min + tol,
    })
}

/// Trajectory field tested by [`time_dependent_pairing`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryField {
    Displacement,
    Stress,
    Internal,
}

/// `∫_0^T θ(t) ∫_Q ū(t) ψ g dx dt` for the piecewise-constant interpolant
/// `ū`, per component. `θ` is integrated by 2-point Gauss on every step, which
/// is exact when its breakpoints lie on the time grid.
pub fn time_dependent_pairing(
    grid: &Grid,
    traj: &RotheTrajectory,
    field: TrajectoryField,
    entry: &DictionaryEntry,
    real: &Realization,
    eta: f64,
    theta: &dyn Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let h = traj.step;
    let g = 0.5 / 3f64.sqrt();
    let mut out: Vec<f64> = Vec::new();
    for n in 1..traj.states.len() {
        let t0 = (n - 1) as f64 * h;
        let weight = 0.5 * h * (theta(t0 + (0.5 - g) * h) + theta(t0 + (0.5 + g) * h));
        if weight == 0.0 {
            continue;
        }
        let s = &traj.states[n];
        let p = match field {
            TrajectoryField::Displacement => pair_nodal(grid, &s.u, grid.dim(), entry, real, eta)?,
            TrajectoryField::Stress => pair(grid, &s.stress, s.stress.len() / grid.n_quad(), entry, real, eta)?,
            TrajectoryField::Internal => pair(grid, &s.z, s.z.len() / grid.n_quad(), entry, real, eta)?,
        };
        if out.is_empty() {
            out = vec![0.0; p.len()];
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += weight * v;
        }
    }
    if out.is_empty() {
        let ncomp = match field {
            TrajectoryField::Displacement => grid.dim(),
            TrajectoryField::Stress => traj.states[0].stress.len() / grid.n_quad().max(1),
            TrajectoryField::Internal => traj.states[0].z.len() / grid.n_quad().max(1),
        };
        out = vec![0.0; ncomp];
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
