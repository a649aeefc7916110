//! Implicit (Rothe) time stepping of the elasto-visco-plastic micro system
//!
//! ```text
//! −div σ = b,   σ = ℂ(ε(∇u) − Bz),   ∂ₜz ∈ g(Bᵀσ − Lz),   u = 0 on ∂Q,   z(0) = z⁰
//! ```
//!
//! with step `h = T/2^level` and an optional regularization `κ|z|²/2` that
//! adds `−κz` to the driving force `Σ = Bᵀσ − κz − Lz`. `B` keeps the first
//! `s` internal variables as the plastic strain (Mandel form).
//!
//! Each step alternates an elasticity solve for given `z` with a pointwise
//! metric resolvent for given total strain, under-relaxed on `z`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::convex::{fitzpatrick, fitzpatrick_gap, resolvent_metric, default_search_radius, MonotoneLaw};
use crate::error::{Error, Result};
use crate::fem::{nodal_norm, quad_norm, ElasticitySystem, Grid};
use crate::linalg::{dot, norm, DMat};
use crate::mandel::sym_dim;
use crate::microstructure::{CoefficientSet, Realization};
use crate::par::try_for_each_chunk;
use crate::rng::SplitMix64;

/// Heterogeneous micro problem: a grid, the phases and the phase of every element.
#[derive(Debug, Clone)]
pub struct MicroModel {
    system: ElasticitySystem,
    phases: Vec<CoefficientSet>,
    compliance: Vec<DMat>,
    internal_dim: usize,
}

impl MicroModel {
    pub fn new(grid: Grid, phases: Vec<CoefficientSet>, element_phase: Vec<usize>) -> Result<Self> {
        let first = phases.first().ok_or_else(|| Error::Config("at least one phase is required".into()))?;
        let internal_dim = first.law.dim;
        let s = sym_dim(grid.dim());
        for (k, ph) in phases.iter().enumerate() {
            if ph.law.dim != internal_dim {
                return Err(Error::Config(format!(
                    "phase {k} has {} internal variables, phase 0 has {internal_dim}",
                    ph.law.dim
                )));
            }
            if ph.strain_dim() != s {
                return Err(Error::Config(format!(
                    "phase {k} stiffness is {n}x{n}, the grid needs {s}x{s}",
                    n = ph.strain_dim()
                )));
            }
        }
        let materials = phases.iter().map(|p| p.stiffness.clone()).collect();
        let system = ElasticitySystem::assemble(grid, materials, element_phase)?;
        let compliance = phases.iter().map(|p| p.compliance()).collect();
        Ok(Self {
            system,
            phases,
            compliance,
            internal_dim,
        })
    }

    /// Phases of `real` on scale `η`, sampled at element centers. The grid
    /// spacing must resolve the microstructure cells.
    pub fn from_realization(grid: Grid, real: &Realization, eta: f64) -> Result<Self> {
        grid.check_resolution(eta, real.spec().cell_size)?;
        let element_phase = (0..grid.n_elements())
            .map(|e| real.phase_at(&grid.element_center(e)[..grid.dim()], eta))
            .collect();
        Self::new(grid, real.spec().phases.clone(), element_phase)
    }

    pub fn grid(&self) -> &Grid {
        self.system.grid()
    }

    pub fn system(&self) -> &ElasticitySystem {
        &self.system
    }

    pub fn phases(&self) -> &[CoefficientSet] {
        &self.phases
    }

    pub fn internal_dim(&self) -> usize {
        self.internal_dim
    }

    pub fn strain_dim(&self) -> usize {
        self.system.strain_dim()
    }

    pub fn phase_at_quad(&self, q: usize) -> usize {
        self.system.material_at_quad(q)
    }

    pub fn compliance(&self, phase: usize) -> &DMat {
        &self.compliance[phase]
    }

    /// Plastic strain `Bz` at every quadrature point.
    pub fn plastic_strain(&self, z: &[f64]) -> Vec<f64> {
        let (s, n) = (self.strain_dim(), self.internal_dim);
        z.chunks(n).flat_map(|c| c[..s].iter().copied()).collect()
    }

    /// `Σ = Bᵀσ − (L + κI)z` at every quadrature point.
    pub fn driving_force(&self, stress: &[f64], z: &[f64], regularization: f64) -> Vec<f64> {
        let (s, n) = (self.strain_dim(), self.internal_dim);
        let mut out = vec![0.0; z.len()];
        for q in 0..self.grid().n_quad() {
            let l = &self.phases[self.phase_at_quad(q)].hardening;
            let zq = &z[q * n..(q + 1) * n];
            let lz = l.matvec(zq);
            for i in 0..n {
                let bts = if i < s { stress[q * s + i] } else { 0.0 };
                out[q * n + i] = bts - lz[i] - regularization * zq[i];
            }
        }
        out
    }

    /// `(½‖𝔸^{1/2}σ‖², ½‖L^{1/2}z‖², ½κ‖z‖²)` by quadrature.
    pub fn energies(&self, stress: &[f64], z: &[f64], regularization: f64) -> (f64, f64, f64) {
        let (s, n) = (self.strain_dim(), self.internal_dim);
        let w = self.grid().quad_weight();
        let (mut el, mut hard, mut reg) = (0.0, 0.0, 0.0);
        for q in 0..self.grid().n_quad() {
            let ph = self.phase_at_quad(q);
            let sq = &stress[q * s..(q + 1) * s];
            let zq = &z[q * n..(q + 1) * n];
            el += self.compliance[ph].quad_form(sq);
            hard += self.phases[ph].hardening.quad_form(zq);
            reg += dot(zq, zq);
        }
        (0.5 * w * el, 0.5 * w * hard, 0.5 * w * regularization * reg)
    }

    /// Local problems of one implicit step for a given total strain field:
    /// `z = z_prev + h g(Σ)` with `Σ = Bᵀℂ(ε − Bz) − (L + κI)z`, solved per
    /// point as `Σ + hM g(Σ) ∋ Bᵀℂε − M z_prev`, `M = BᵀℂB + L + κI`.
    pub fn local_update(
        &self,
        strain: &[f64],
        z_prev: &[f64],
        h: f64,
        regularization: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let ops = LocalOps::new(self, h, regularization);
        let (s, n) = (self.strain_dim(), self.internal_dim);
        try_for_each_chunk(out, n, |q, zq| {
            let ph = self.phase_at_quad(q);
            let z_new = ops.solve(self, ph, &strain[q * s..(q + 1) * s], &z_prev[q * n..(q + 1) * n])?;
            zq.copy_from_slice(&z_new);
            Ok(())
        })
    }
}

/// Per-phase matrices of the local problem for one step size.
struct LocalOps {
    h: f64,
    metric: Vec<DMat>,
    m_inverse: Vec<Option<DMat>>,
    m: Vec<DMat>,
}

impl LocalOps {
    fn new(model: &MicroModel, h: f64, regularization: f64) -> Self {
        let (s, n) = (model.strain_dim(), model.internal_dim);
        let m: Vec<DMat> = model
            .phases
            .iter()
            .map(|ph| {
                let mut m = ph.hardening.add(&DMat::scalar(n, regularization));
                for i in 0..s {
                    for j in 0..s {
                        m[(i, j)] += ph.stiffness[(i, j)];
                    }
                }
                m
            })
            .collect();
        let metric = m.iter().map(|mm| mm.scaled(h)).collect();
        let m_inverse = m.iter().map(|mm| mm.cholesky().and_then(|_| mm.inverse())).collect();
        Self { h, metric, m_inverse, m }
    }

    fn solve(&self, model: &MicroModel, phase: usize, strain: &[f64], z_prev: &[f64]) -> Result<Vec<f64>> {
        let ph = &model.phases[phase];
        let s = strain.len();
        let cs = ph.stiffness.matvec(strain);
        let mz = self.m[phase].matvec(z_prev);
        let mut c = vec![0.0; z_prev.len()];
        for i in 0..c.len() {
            c[i] = if i < s { cs[i] } else { 0.0 } - mz[i];
        }
        if ph.law.is_zero() {
            return Ok(z_prev.to_vec());
        }
        let sigma = resolvent_metric(&ph.law, &self.metric[phase], &c)?;
        let sel = ph.law.eval(&sigma);
        match (&self.m_inverse[phase], sel.multivalued) {
            (Some(minv), true) => {
                // z − z_prev = M⁻¹(c − Σ)/h·h
                let diff: Vec<f64> = c.iter().zip(&sigma).map(|(a, b)| a - b).collect();
                let dz = minv.matvec(&diff);
                Ok(z_prev.iter().zip(&dz).map(|(a, b)| a + b).collect())
            }
            _ => Ok(z_prev.iter().zip(&sel.value).map(|(a, g)| a + self.h * g).collect()),
        }
    }
}

/// Body force `b(x, t)`, returning `d` components.
pub type BodyForce = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
/// Initial internal variables `z⁰(x, phase)`, returning `N` components.
pub type InitialInternal = Arc<dyn Fn(&[f64], usize) -> Vec<f64> + Send + Sync>;

/// Loading history and initial data of a run.
#[derive(Clone)]
pub struct LoadProgram {
    pub horizon: f64,
    body_force: Option<BodyForce>,
    initial_z: Option<InitialInternal>,
}

impl fmt::Debug for LoadProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadProgram")
            .field("horizon", &self.horizon)
            .field("body_force", &self.body_force.is_some())
            .field("initial_z", &self.initial_z.is_some())
            .finish()
    }
}

impl LoadProgram {
    /// Zero load and zero initial data on `[0, horizon]`.
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("time horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            horizon,
            body_force: None,
            initial_z: None,
        })
    }

    pub fn with_body_force(mut self, b: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.body_force = Some(Arc::new(b));
        self
    }

    pub fn with_initial_z(mut self, z0: impl Fn(&[f64], usize) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.initial_z = Some(Arc::new(z0));
        self
    }

    pub fn body_force_at(&self, x: &[f64], t: f64, dim: usize) -> Vec<f64> {
        match &self.body_force {
            Some(b) => b(x, t),
            None => vec![0.0; dim],
        }
    }

    pub fn initial_z_at(&self, x: &[f64], phase: usize, n: usize) -> Vec<f64> {
        match &self.initial_z {
            Some(z) => z(x, phase),
            None => vec![0.0; n],
        }
    }

    /// Nodal load of `b(·, t)`.
    pub fn load_at(&self, system: &ElasticitySystem, t: f64) -> Vec<f64> {
        let d = system.grid().dim();
        match &self.body_force {
            Some(b) => system.body_force_load(&|x: &[f64]| b(x, t)),
            None => vec![0.0; system.grid().n_nodes() * d],
        }
    }

    /// Nodal load of the step average `(1/h)∫_{t₀}^{t₁} b`, trapezoid rule
    /// on the endpoints and the midpoint.
    pub fn step_load(&self, system: &ElasticitySystem, t0: f64, t1: f64) -> Vec<f64> {
        if self.body_force.is_none() {
            return self.load_at(system, t0);
        }
        let a = self.load_at(system, t0);
        let m = self.load_at(system, 0.5 * (t0 + t1));
        let b = self.load_at(system, t1);
        a.iter().zip(&m).zip(&b).map(|((x, y), z)| 0.25 * (x + 2.0 * y + z)).collect()
    }

    /// Largest `‖load(t + δ) − load(t)‖/δ` over `samples` uniform steps:
    /// a finite, moderate value signals a time-differentiable load.
    pub fn load_rate(&self, system: &ElasticitySystem, samples: usize) -> f64 {
        let dt = self.horizon / samples.max(1) as f64;
        let mut prev = self.load_at(system, 0.0);
        let mut worst = 0.0_f64;
        for k in 1..=samples.max(1) {
            let next = self.load_at(system, k as f64 * dt);
            let diff: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&diff) / dt);
            prev = next;
        }
        worst
    }
}

/// Time-step level and regularization of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotheParams {
    /// `h = T / 2^level`.
    pub level: u32,
    /// Coefficient `κ = 1/m_reg`; zero disables the regularization.
    pub regularization: f64,
    pub relaxation: f64,
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl RotheParams {
    /// Independent step level and regularization parameter `m_reg`
    /// (`None` disables the regularization).
    pub fn new(level: u32, m_reg: Option<f64>) -> Self {
        Self {
            level,
            regularization: m_reg.map_or(0.0, |m| 1.0 / m),
            relaxation: 0.8,
            max_sweeps: 500,
            tolerance: 1e-8,
        }
    }

    /// The regularization tied to the step level, `m_reg = level`.
    pub fn paper(level: u32) -> Self {
        Self::new(level, Some(level.max(1) as f64))
    }
}

/// One time level of the discrete solution. Nodal `u`; `stress` (Mandel)
/// and `z` at quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct MechState {
    pub t: f64,
    pub u: Vec<f64>,
    pub stress: Vec<f64>,
    pub z: Vec<f64>,
}

impl MechState {
    pub fn driving_force(&self, model: &MicroModel, regularization: f64) -> Vec<f64> {
        model.driving_force(&self.stress, &self.z, regularization)
    }
}

/// Convergence data of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub sweeps: usize,
    /// Relative fixed-point residual of the last sweep.
    pub residual: f64,
    pub equilibrium: f64,
    /// Largest normalized Fitzpatrick gap on the check points.
    pub max_gap: f64,
}

/// Energy bookkeeping at one time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub step: usize,
    pub t: f64,
    /// `½‖𝔸^{1/2}σ‖²`
    pub elastic: f64,
    /// `½‖L^{1/2}z‖²`
    pub hardening: f64,
    /// `½κ‖z‖²`
    pub regularization: f64,
    /// `Σ_k h ⟨Σ_k, (z_k − z_{k−1})/h⟩`
    pub dissipation_cum: f64,
    /// `Σ_k ⟨b_k, u_k − u_{k−1}⟩`
    pub work_cum: f64,
    /// Initial energy plus work minus stored energy and dissipation.
    pub energy_margin: f64,
}

impl LedgerEntry {
    pub fn stored(&self) -> f64 {
        self.elastic + self.hardening + self.regularization
    }
}

/// A complete run: states `0..=2^level`, the step loads and the ledger.
#[derive(Debug, Clone)]
pub struct RotheTrajectory {
    pub states: Vec<MechState>,
    /// `loads[0]` is `b(0)`, `loads[n]` the step average `bⁿ`.
    pub loads: Vec<Vec<f64>>,
    pub step: f64,
    pub level: u32,
    pub regularization: f64,
    pub stats: Vec<StepStats>,
    pub ledger: Vec<LedgerEntry>,
}

/// Evaluation of a trajectory interpolant at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub u: Vec<f64>,
    pub stress: Vec<f64>,
    pub z: Vec<f64>,
}

impl RotheTrajectory {
    pub fn horizon(&self) -> f64 {
        self.step * (self.states.len() - 1) as f64
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let tol = 1e-12 * self.horizon();
        if !(t >= -tol && t <= self.horizon() + tol) {
            return Err(Error::OutOfRange(format!(
                "time {t} outside [0, {}]",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Piecewise-constant interpolant: state `n` on `((n−1)h, nh]`, state 0 at `t = 0`.
    pub fn piecewise_constant(&self, t: f64) -> Result<&MechState> {
        self.check_time(t)?;
        let x = t / self.step - 1e-9;
        let n = if x <= 0.0 { 0 } else { (x.ceil() as usize).min(self.steps()) };
        Ok(&self.states[n])
    }

    /// Piecewise-affine interpolant through the states.
    pub fn piecewise_affine(&self, t: f64) -> Result<Snapshot> {
        self.check_time(t)?;
        let x = (t / self.step).clamp(0.0, self.steps() as f64);
        let n = (x.ceil() as usize).max(1).min(self.steps());
        let theta = x - (n - 1) as f64;
        let a = &self.states[n - 1];
        let b = &self.states[n];
        let mix = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (1.0 - theta) * x + theta * y).collect();
        Ok(Snapshot {
            u: mix(&a.u, &b.u),
            stress: mix(&a.stress, &b.stress),
            z: mix(&a.z, &b.z),
        })
    }
}

/// The state at `t = 0`: `z⁰` sampled at quadrature points and the
/// elasticity solution for the load `b(·, 0)` and plastic strain `Bz⁰`.
pub fn initial_state(model: &MicroModel, program: &LoadProgram) -> Result<(MechState, Vec<f64>)> {
    let g = model.grid();
    let n = model.internal_dim();
    let mut z = Vec::with_capacity(g.n_quad() * n);
    for (q, x) in g.quad_points().iter().enumerate() {
        let v = program.initial_z_at(&x[..g.dim()], model.phase_at_quad(q), n);
        if v.len() != n {
            return Err(Error::GridMismatch { expected: n, found: v.len() });
        }
        z.extend(v);
    }
    let load = program.load_at(model.system(), 0.0);
    let st = model.system().solve(&load, &model.plastic_strain(&z))?;
    Ok((
        MechState {
            t: 0.0,
            u: st.u,
            stress: st.stress,
            z,
        },
        load,
    ))
}

/// One implicit step from `prev` with step `h` and nodal load `load`.
pub fn rothe_step(
    model: &MicroModel,
    prev: &MechState,
    params: &RotheParams,
    h: f64,
    load: &[f64],
) -> Result<(MechState, StepStats)> {
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("time step must be positive, got {h}")));
    }
    let reg = params.regularization;
    let mut z = prev.z.clone();
    let mut z_local = vec![0.0; z.len()];
    let elastic = model.phases().iter().all(|p| p.law.is_zero());
    for sweep in 1..=params.max_sweeps {
        let st = model.system().solve(load, &model.plastic_strain(&z))?;
        model.local_update(&st.strain, &prev.z, h, reg, &mut z_local)?;
        let change: f64 = norm(&crate::linalg::sub(&z_local, &z));
        let increment: f64 = norm(&crate::linalg::sub(&z_local, &prev.z));
        let residual = if change == 0.0 { 0.0 } else { change / increment.max(1e-300) };
        let converged = elastic || residual <= params.tolerance || change <= 1e-14 * norm(&z_local);
        if converged {
            let equilibrium = model.system().equilibrium_residual(&st.stress, load);
            let state = MechState {
                t: prev.t + h,
                u: st.u,
                stress: st.stress,
                z,
            };
            let max_gap = check_point_gap(model, &state, prev, h, reg)?;
            if equilibrium > 1e-9 || max_gap > 1e-6 {
                return Err(Error::StepFailure {
                    step: 0,
                    sweeps: sweep,
                    residual: equilibrium.max(max_gap),
                });
            }
            return Ok((
                state,
                StepStats {
                    sweeps: sweep,
                    residual,
                    equilibrium,
                    max_gap,
                },
            ));
        }
        let w = params.relaxation;
        for (zi, li) in z.iter_mut().zip(&z_local) {
            *zi += w * (li - *zi);
        }
        if sweep == params.max_sweeps {
            return Err(Error::StepFailure {
                step: 0,
                sweeps: sweep,
                residual,
            });
        }
    }
    unreachable!("the sweep loop returns")
}

/// Largest `gap/(1 + |Σ||ż|)` over about 32 evenly spaced quadrature points.
fn check_point_gap(model: &MicroModel, state: &MechState, prev: &MechState, h: f64, reg: f64) -> Result<f64> {
    let n = model.internal_dim();
    let nq = model.grid().n_quad();
    let stride = (nq / 32).max(1);
    let sigma = state.driving_force(model, reg);
    let mut worst = 0.0_f64;
    for q in (0..nq).step_by(stride) {
        let law = &model.phases()[model.phase_at_quad(q)].law;
        let v = &sigma[q * n..(q + 1) * n];
        let w: Vec<f64> = (0..n).map(|i| (state.z[q * n + i] - prev.z[q * n + i]) / h).collect();
        let gap = fitzpatrick_gap(law, v, &w)?;
        worst = worst.max(gap / (1.0 + norm(v) * norm(&w)));
    }
    Ok(worst)
}

/// `2^level` steps of [`rothe_step`] on `[0, program.horizon]`.
pub fn run_trajectory(model: &MicroModel, program: &LoadProgram, params: &RotheParams) -> Result<RotheTrajectory> {
    let steps = 1usize << params.level;
    let h = program.horizon / steps as f64;
    let (s0, l0) = initial_state(model, program)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut loads = Vec::with_capacity(steps + 1);
    let mut stats = Vec::with_capacity(steps);
    states.push(s0);
    loads.push(l0);
    for n in 1..=steps {
        let t0 = (n - 1) as f64 * h;
        let load = program.step_load(model.system(), t0, t0 + h);
        let (mut next, st) = rothe_step(model, &states[n - 1], params, h, &load).map_err(|e| match e {
            Error::StepFailure { sweeps, residual, .. } => Error::StepFailure {
                step: n,
                sweeps,
                residual,
            },
            other => other,
        })?;
        next.t = n as f64 * h;
        states.push(next);
        loads.push(load);
        stats.push(st);
    }
    let mut traj = RotheTrajectory {
        states,
        loads,
        step: h,
        level: params.level,
        regularization: params.regularization,
        stats,
        ledger: Vec::new(),
    };
    traj.ledger = ledger(model, &traj);
    Ok(traj)
}

fn ledger(model: &MicroModel, traj: &RotheTrajectory) -> Vec<LedgerEntry> {
    let reg = traj.regularization;
    let w = model.grid().quad_weight();
    let mut out = Vec::with_capacity(traj.states.len());
    let (e0, h0, r0) = {
        let s = &traj.states[0];
        model.energies(&s.stress, &s.z, reg)
    };
    let initial = e0 + h0 + r0;
    let (mut diss, mut work) = (0.0, 0.0);
    for (n, s) in traj.states.iter().enumerate() {
        if n > 0 {
            let prev = &traj.states[n - 1];
            let sigma = s.driving_force(model, reg);
            let dz: Vec<f64> = s.z.iter().zip(&prev.z).map(|(a, b)| a - b).collect();
            diss += w * dot(&sigma, &dz);
            let du: Vec<f64> = s.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
            work += dot(&traj.loads[n], &du);
        }
        let (el, hard, r) = model.energies(&s.stress, &s.z, reg);
        out.push(LedgerEntry {
            step: n,
            t: s.t,
            elastic: el,
            hardening: hard,
            regularization: r,
            dissipation_cum: diss,
            work_cum: work,
            energy_margin: initial + work - (el + hard + r + diss),
        });
    }
    out
}

/// Ledger of a trajectory with the a-priori check.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub entries: Vec<LedgerEntry>,
    /// Largest `stored + |dissipation| + |work|` over the run, plus the initial energy.
    pub scale: f64,
    pub min_margin: f64,
    /// Steps whose margin is below `−1e-8 · scale`.
    pub flagged_steps: Vec<usize>,
}

impl EnergyReport {
    pub fn holds(&self) -> bool {
        self.flagged_steps.is_empty()
    }
}

/// Recomputes the ledger from the stored states and checks
/// `stored(n) + dissipation(n) ≤ stored(0) + work(n)` at every step.
pub fn energy_report(model: &MicroModel, traj: &RotheTrajectory) -> EnergyReport {
    let entries = ledger(model, traj);
    let initial = entries[0].stored();
    let scale = entries
        .iter()
        .map(|e| initial + e.stored() + e.dissipation_cum.abs() + e.work_cum.abs())
        .fold(0.0, f64::max);
    let min_margin = entries.iter().map(|e| e.energy_margin).fold(f64::INFINITY, f64::min);
    let flagged_steps = entries
        .iter()
        .filter(|e| e.energy_margin < -1e-8 * scale)
        .map(|e| e.step)
        .collect();
    EnergyReport {
        entries,
        scale,
        min_margin,
        flagged_steps,
    }
}

/// Signed residual of the Fitzpatrick energy inequality at every time level.
#[derive(Debug, Clone)]
pub struct WeakResidual {
    pub times: Vec<f64>,
    /// Left minus right side with the energy change written by the discrete
    /// chain rule `Σ_k (𝔸σ_k, σ_k − σ_{k−1}) + ((L + κ)z_k, z_k − z_{k−1})`.
    /// Equals the accumulated Fitzpatrick gaps for an exact discrete
    /// solution, so it is `≈ 0` there and positive off the graph.
    pub residual: Vec<f64>,
    /// The same inequality with the stored energies at the end points; it
    /// differs from `residual` by minus the numerical dissipation
    /// `½Σ‖Δσ‖²_𝔸 + ½Σ‖Δz‖²_{L+κ}` and is `≤ 0` for converged runs.
    pub interpolant_form: Vec<f64>,
    /// Largest sum of the absolute terms over the run.
    pub scale: f64,
    /// Largest `gap/(1 + |Σ||ż|)` over all points and steps.
    pub max_gap: f64,
}

impl WeakResidual {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max residual ≤ rel_tol · scale`
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.max_residual() <= rel_tol * self.scale
    }
}

/// Fitzpatrick weak-solution inequality
/// `½‖σ(t)‖²_𝔸 + ½‖z(t)‖²_{L+κ} + ∫₀ᵗ∫ f_g(Σ, ∂ₜz) ≤ ½‖σ⁰‖²_𝔸 + ½‖z⁰‖²_{L+κ} + ∫₀ᵗ(b, ∂ₜu)`
/// at every time level, with `Σ` from the piecewise-constant and `∂ₜz`,
/// `∂ₜu` from the piecewise-affine interpolants, and `σ⁰` from the initial
/// elasticity solve. `Σ` carries the regularization of the discrete inclusion.
pub fn weak_solution_residual(model: &MicroModel, traj: &RotheTrajectory) -> Result<WeakResidual> {
    let reg = traj.regularization;
    let n = model.internal_dim();
    let (s_dim, nq) = (model.strain_dim(), model.grid().n_quad());
    let w = model.grid().quad_weight();
    let h = traj.step;
    let (e0, h0, r0) = {
        let s = &traj.states[0];
        model.energies(&s.stress, &s.z, reg)
    };
    let initial = e0 + h0 + r0;
    let mut times = vec![0.0];
    let mut residual = vec![0.0];
    let mut interpolant_form = vec![0.0];
    let mut scale = 2.0 * initial;
    let mut max_gap = 0.0_f64;
    let (mut fitz_cum, mut work, mut chain) = (0.0, 0.0, 0.0);
    for k in 1..traj.states.len() {
        let s = &traj.states[k];
        let prev = &traj.states[k - 1];
        let sigma = s.driving_force(model, reg);
        let rate: Vec<f64> = s.z.iter().zip(&prev.z).map(|(a, b)| (a - b) / h).collect();
        let mut both = vec![0.0; 2 * nq];
        try_for_each_chunk(&mut both, 2, |q, out| {
            let law: &MonotoneLaw = &model.phases()[model.phase_at_quad(q)].law;
            let v = &sigma[q * n..(q + 1) * n];
            let vs = &rate[q * n..(q + 1) * n];
            let f = if law.is_zero() {
                // f_0(v, v*) is 0 for v* = 0 and +∞ otherwise
                if norm(vs) == 0.0 {
                    0.0
                } else {
                    return Err(Error::Unbounded {
                        radius: f64::INFINITY,
                        value: f64::INFINITY,
                    });
                }
            } else {
                fitzpatrick(law, v, vs, default_search_radius(law, v, vs))?
            };
            out[0] = f;
            out[1] = (f - dot(v, vs)).max(0.0) / (1.0 + norm(v) * norm(vs));
            Ok(())
        })?;
        max_gap = both.iter().skip(1).step_by(2).copied().fold(max_gap, f64::max);
        fitz_cum += h * w * both.iter().step_by(2).sum::<f64>();
        let du: Vec<f64> = s.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
        work += dot(&traj.loads[k], &du);
        for q in 0..nq {
            let ph = model.phase_at_quad(q);
            let sq = &s.stress[q * s_dim..(q + 1) * s_dim];
            let ds: Vec<f64> = (0..s_dim).map(|i| sq[i] - prev.stress[q * s_dim + i]).collect();
            let zq = &s.z[q * n..(q + 1) * n];
            let dz: Vec<f64> = (0..n).map(|i| zq[i] - prev.z[q * n + i]).collect();
            let l = &model.phases()[ph].hardening;
            chain += w * (model.compliance(ph).bilinear(sq, &ds) + l.bilinear(zq, &dz) + reg * dot(zq, &dz));
        }
        let (el, hard, r) = model.energies(&s.stress, &s.z, reg);
        times.push(s.t);
        residual.push(chain + fitz_cum - work);
        interpolant_form.push(el + hard + r + fitz_cum - initial - work);
        scale = scale.max(el + hard + r + fitz_cum.abs() + initial + work.abs());
    }
    Ok(WeakResidual {
        times,
        residual,
        interpolant_form,
        scale,
        max_gap,
    })
}

/// Copy of `traj` with `z` perturbed by uniform noise of the given amplitude
/// at every step `n ≥ 1`, `(u, σ)` re-solved so that equilibrium still holds.
pub fn perturb_internal(model: &MicroModel, traj: &RotheTrajectory, amplitude: f64, seed: u64) -> Result<RotheTrajectory> {
    let mut rng = SplitMix64::new(seed);
    let mut out = traj.clone();
    for n in 1..out.states.len() {
        let st = &mut out.states[n];
        for v in st.z.iter_mut() {
            *v += amplitude * rng.uniform(-1.0, 1.0);
        }
        let sol = model.system().solve(&traj.loads[n], &model.plastic_strain(&st.z))?;
        st.u = sol.u;
        st.stress = sol.stress;
    }
    out.ledger = ledger(model, &out);
    Ok(out)
}

/// The five norms that stay bounded uniformly in the scale parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformNorms {
    /// `u` in `W^{1,q}(0,T; L^q)`
    pub displacement: f64,
    /// `σ` in `L^∞(0,T; L²)`
    pub stress: f64,
    /// `z` in `W^{1,q}(0,T; L^q)`
    pub internal: f64,
    /// `L^{1/2}z` in `L^∞(0,T; L²)`
    pub hardening: f64,
    /// `Σ` in `L^p(0,T; L^p)`
    pub driving_force: f64,
}

impl UniformNorms {
    pub fn as_array(&self) -> [f64; 5] {
        [self.displacement, self.stress, self.internal, self.hardening, self.driving_force]
    }

    pub const NAMES: [&'static str; 5] = ["u_W1q_Lq", "sigma_Linf_L2", "z_W1q_Lq", "L_half_z_Linf_L2", "Sigma_Lp_Lp"];
}

/// Growth exponents `(p, q)` of the run (the largest `p` over the phases).
pub fn exponents(model: &MicroModel) -> (f64, f64) {
    let p = model.phases().iter().map(|ph| ph.law.p).fold(2.0, f64::max);
    (p, p / (p - 1.0))
}

/// Uniform norms from the interpolants: piecewise-constant values for the
/// `L^r` in time parts, difference quotients for the time derivatives.
pub fn uniform_norms(model: &MicroModel, traj: &RotheTrajectory) -> UniformNorms {
    let g = model.grid();
    let (p, q) = exponents(model);
    let (d, s, n) = (g.dim(), model.strain_dim(), model.internal_dim());
    let h = traj.step;
    let (mut u_val, mut u_rate, mut z_val, mut z_rate, mut sig) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut stress_max, mut hard_max) = (0.0_f64, 0.0_f64);
    for (k, st) in traj.states.iter().enumerate() {
        stress_max = stress_max.max(quad_norm(g, &st.stress, s, 2.0));
        let (_, hard, _) = model.energies(&st.stress, &st.z, 0.0);
        hard_max = hard_max.max((2.0 * hard).sqrt());
        if k == 0 {
            continue;
        }
        let prev = &traj.states[k - 1];
        u_val += h * nodal_norm(g, &st.u, d, q).powf(q);
        z_val += h * quad_norm(g, &st.z, n, q).powf(q);
        let du: Vec<f64> = st.u.iter().zip(&prev.u).map(|(a, b)| (a - b) / h).collect();
        let dz: Vec<f64> = st.z.iter().zip(&prev.z).map(|(a, b)| (a - b) / h).collect();
        u_rate += h * nodal_norm(g, &du, d, q).powf(q);
        z_rate += h * quad_norm(g, &dz, n, q).powf(q);
        let sigma = st.driving_force(model, traj.regularization);
        sig += h * quad_norm(g, &sigma, n, p).powf(p);
    }
    UniformNorms {
        displacement: (u_val + u_rate).powf(1.0 / q),
        stress: stress_max,
        internal: (z_val + z_rate).powf(1.0 / q),
        hardening: hard_max,
        driving_force: sig.powf(1.0 / p),
    }
}

/// Both sides of `‖z_affine‖_{L^r(0,T;L^r)} ≤ (h‖z⁰‖^r + ‖z_const‖^r_{L^r(0,T;L^r)})^{1/r}`.
pub fn interpolant_estimate(model: &MicroModel, traj: &RotheTrajectory, r: f64) -> (f64, f64) {
    let g = model.grid();
    let n = model.internal_dim();
    let h = traj.step;
    // 4-point Gauss-Legendre on [0, 1]
    const NODES: [f64; 4] = [0.069_431_844_202_973_71, 0.330_009_478_207_571_9, 0.669_990_521_792_428_1, 0.930_568_155_797_026_3];
    const WEIGHTS: [f64; 4] = [0.173_927_422_568_726_93, 0.326_072_577_431_273_07, 0.326_072_577_431_273_07, 0.173_927_422_568_726_93];
    let mut lhs = 0.0;
    let mut rhs = h * quad_norm(g, &traj.states[0].z, n, r).powf(r);
    for k in 1..traj.states.len() {
        let (a, b) = (&traj.states[k - 1].z, &traj.states[k].z);
        for (th, wt) in NODES.iter().zip(WEIGHTS) {
            let mix: Vec<f64> = a.iter().zip(b).map(|(x, y)| (1.0 - th) * x + th * y).collect();
            lhs += h * wt * quad_norm(g, &mix, n, r).powf(r);
        }
        rhs += h * quad_norm(g, b, n, r).powf(r);
    }
    (lhs.powf(1.0 / r), rhs.powf(1.0 / r))
}

/// `‖z_h(T) − z_{h/2}(T)‖_{L^q}` between runs on the same model.
pub fn terminal_difference(model: &MicroModel, coarse: &RotheTrajectory, fine: &RotheTrajectory, q: f64) -> f64 {
    let a = &coarse.states.last().expect("nonempty").z;
    let b = &fine.states.last().expect("nonempty").z;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    quad_norm(model.grid(), &diff, model.internal_dim(), q)
}

/// Single material point (`0D`): `z_n = z_{n−1} + h g(Σ_n)` with
/// `Σ_n = driving(t_n) − (L + κI)z_n`, for a prescribed `Bᵀσ` history.
pub fn pointwise_trajectory(
    law: &MonotoneLaw,
    hardening: &DMat,
    regularization: f64,
    driving: &dyn Fn(f64) -> Vec<f64>,
    z0: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if steps == 0 || !(horizon > 0.0) {
        return Err(Error::Config("need a positive horizon and at least one step".into()));
    }
    let n = law.dim;
    let h = horizon / steps as f64;
    let k = hardening.add(&DMat::scalar(n, regularization));
    let metric = k.scaled(h);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(z0.to_vec());
    for step in 1..=steps {
        let prev = out.last().expect("nonempty");
        let drive = driving(step as f64 * h);
        let kz = k.matvec(prev);
        let c: Vec<f64> = drive.iter().zip(&kz).map(|(a, b)| a - b).collect();
        let sigma = resolvent_metric(law, &metric, &c)?;
        let g = law.apply(&sigma);
        let next = prev.iter().zip(&g).map(|(a, b)| a + h * b).collect();
        out.push(next);
    }
    Ok(out)
}
