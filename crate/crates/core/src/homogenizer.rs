//! Homogenized two-scale system on RVE ensembles.
//!
//! Ensemble means over periodic cells stand in for integrals over the
//! probability space, and periodic-cell gradients for gradients in `ω`. Every
//! macroscopic quadrature point `X_j` carries one copy of the ensemble with
//! its own internal variables. At a given `z` the cell fields split into
//!
//! ```text
//! ε = E_j + Σ_k E_jk ε(χ_k) + ε(υ_z),   σ₀ = ℂ(ε − Bz),
//! ```
//!
//! with `χ_k` the linear correctors and `υ_z` the periodic response to the
//! prestrain `Bz`. The macroscopic problem is `−div(ℂ_eff ε(u₀) + ⟨τ_z⟩) = b`
//! with `τ_z = ℂ(ε(υ_z) − Bz)`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::convex::{default_search_radius, fitzpatrick, fitzpatrick_gap, MonotoneLaw};
use crate::error::{Error, Result};
use crate::fem::{evaluate_nodal, effective_stiffness, nodal_norm, strain, voigt_reuss, CellSolution, ElasticState, ElasticitySystem, Grid};
use crate::linalg::{dot, norm, DMat};
use crate::microstructure::{sample_realization, CoefficientSet, FieldSpec, Realization};
use crate::par::{try_for_each_chunk, try_map};
use crate::rng::SplitMix64;
use crate::rothe::{run_trajectory, LedgerEntry, LoadProgram, MicroModel, RotheParams, StepStats, WeakResidual};
use crate::twoscale::{pair, Observable, TestFunctionDictionary};

/// Periodic cells sharing one geometry, one realization each.
#[derive(Debug, Clone)]
pub struct RveEnsemble {
    spec: FieldSpec,
    grid: Grid,
    cells: usize,
    seeds: Vec<u64>,
    realizations: Vec<Realization>,
    models: Vec<MicroModel>,
}

impl RveEnsemble {
    /// Cells of `cells_per_axis` lattice cells per edge, `elements_per_cell`
    /// elements per lattice cell; one realization per seed (the seed of
    /// `spec` is ignored).
    pub fn new(spec: &FieldSpec, seeds: &[u64], cells_per_axis: usize, elements_per_cell: usize) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Precondition("an ensemble needs at least one seed".into()));
        }
        let mut sorted = seeds.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Config("ensemble seeds must be distinct".into()));
        }
        if cells_per_axis == 0 || elements_per_cell == 0 {
            return Err(Error::Config("cells and elements per cell must be positive".into()));
        }
        spec.validate()?;
        let grid = Grid::periodic_cell(
            spec.dim,
            cells_per_axis * elements_per_cell,
            cells_per_axis as f64 * spec.cell_size,
        )?;
        let mut realizations = Vec::with_capacity(seeds.len());
        let mut models = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut sp = spec.clone();
            sp.seed = seed;
            let real = sample_realization(&sp)?;
            models.push(MicroModel::from_realization(grid.clone(), &real, 1.0)?);
            realizations.push(real);
        }
        Ok(Self {
            spec: spec.clone(),
            grid,
            cells: cells_per_axis,
            seeds: seeds.to_vec(),
            realizations,
            models,
        })
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn realizations(&self) -> &[Realization] {
        &self.realizations
    }

    pub fn models(&self) -> &[MicroModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// `g(τ_y ω_r)` at quadrature point `q` of cell `r`, read periodically.
    pub fn observable_at_quad(&self, r: usize, q: usize, obs: &Observable) -> f64 {
        let origin = self.models[r].phase_at_quad(q);
        let neighbor = match obs.neighbor_axis() {
            None => origin,
            Some(axis) => {
                let d = self.grid.dim();
                let c = self.grid.element_center(q / self.grid.quad_per_element());
                let k = self.cells as f64;
                let mut y = [0.0; 3];
                for a in 0..d {
                    y[a] = c[a] / self.spec.cell_size;
                }
                y[axis] += 1.0;
                y[axis] -= k * (y[axis] / k).floor();
                self.realizations[r].phase_at_lattice(&y[..d])
            }
        };
        obs.value(origin, neighbor)
    }
}

/// Ensemble-averaged effective stiffness.
#[derive(Debug, Clone)]
pub struct EffectiveTensor {
    pub mean: DMat,
    /// Entrywise sample standard deviation over the ensemble.
    pub spread: DMat,
    pub samples: Vec<DMat>,
    /// Unit-strain cell solutions, `correctors[r][k]`.
    pub correctors: Vec<Vec<CellSolution>>,
}

impl EffectiveTensor {
    /// Largest entry of the spread.
    pub fn spread_norm(&self) -> f64 {
        self.spread.max_abs()
    }
}

/// Solves the cell problem for every unit strain on every realization.
pub fn effective_tensor(ens: &RveEnsemble) -> Result<EffectiveTensor> {
    let results = try_map(ens.len(), |r| effective_stiffness(ens.models[r].system()))?;
    let n = results.len() as f64;
    let s = ens.models[0].strain_dim();
    let mut mean = DMat::zeros(s, s);
    for (c, _) in &results {
        mean = mean.add(&c.scaled(1.0 / n));
    }
    let mut spread = DMat::zeros(s, s);
    if results.len() > 1 {
        for i in 0..s {
            for j in 0..s {
                let var: f64 = results.iter().map(|(c, _)| (c[(i, j)] - mean[(i, j)]).powi(2)).sum::<f64>() / (n - 1.0);
                spread[(i, j)] = var.sqrt();
            }
        }
    }
    let (samples, correctors) = results.into_iter().unzip();
    Ok(EffectiveTensor {
        mean,
        spread,
        samples,
        correctors,
    })
}

/// Ensemble means of the per-cell Voigt and Reuss bounds.
pub fn ensemble_bounds(ens: &RveEnsemble) -> (DMat, DMat) {
    let s = ens.models[0].strain_dim();
    let n = ens.len() as f64;
    let (mut v, mut r) = (DMat::zeros(s, s), DMat::zeros(s, s));
    for m in &ens.models {
        let (a, b) = voigt_reuss(m.system());
        v = v.add(&a.scaled(1.0 / n));
        r = r.add(&b.scaled(1.0 / n));
    }
    (v, r)
}

/// One time level of the homogenized solution. Cell fields are stored per
/// point `p = (j·R + r)·n_q + q` for macroscopic point `j`, cell `r` and
/// cell quadrature point `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogenizedState {
    pub t: f64,
    /// Macroscopic displacement, nodal.
    pub u0: Vec<f64>,
    /// `⟨σ₀⟩` per macroscopic quadrature point.
    pub macro_stress: Vec<f64>,
    /// Total cell strain `E + ε(υ)`.
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HomogenizedSolution {
    pub macro_grid: Grid,
    pub effective: EffectiveTensor,
    pub states: Vec<HomogenizedState>,
    /// Macroscopic nodal loads, as in [`crate::rothe::RotheTrajectory::loads`].
    pub loads: Vec<Vec<f64>>,
    pub step: f64,
    pub level: u32,
    pub regularization: f64,
    pub stats: Vec<StepStats>,
    pub ledger: Vec<LedgerEntry>,
}

impl HomogenizedSolution {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Problem data shared by all steps.
struct Fe2<'a> {
    ens: &'a RveEnsemble,
    macro_sys: ElasticitySystem,
    ceff_inverse: DMat,
    /// `ε(χ_k)` per cell and unit strain, quadrature fields.
    fluctuation: Vec<Vec<Vec<f64>>>,
    /// Stress of the unit-strain cell solutions.
    unit_stress: Vec<Vec<Vec<f64>>>,
    s: usize,
    n: usize,
    nq: usize,
    samples: usize,
    macro_points: usize,
    point_weight: f64,
}

impl<'a> Fe2<'a> {
    fn new(macro_grid: Grid, ens: &'a RveEnsemble, effective: &EffectiveTensor) -> Result<Self> {
        if macro_grid.dim() != ens.grid.dim() {
            return Err(Error::GridMismatch {
                expected: ens.grid.dim(),
                found: macro_grid.dim(),
            });
        }
        if macro_grid.is_periodic() {
            return Err(Error::Precondition("the macroscopic grid needs Dirichlet walls".into()));
        }
        let s = ens.models[0].strain_dim();
        let ceff = effective.mean.sym_part();
        let ceff_inverse = ceff
            .inverse()
            .ok_or_else(|| Error::Ellipticity("effective stiffness is singular".into()))?;
        let macro_sys = ElasticitySystem::homogeneous(macro_grid, ceff)?;
        let fluctuation = effective
            .correctors
            .iter()
            .map(|sols| {
                sols.iter()
                    .enumerate()
                    .map(|(k, sol)| {
                        sol.strain
                            .chunks(s)
                            .flat_map(|c| c.iter().enumerate().map(move |(i, v)| v - if i == k { 1.0 } else { 0.0 }))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let unit_stress = effective
            .correctors
            .iter()
            .map(|sols| sols.iter().map(|sol| sol.stress.clone()).collect())
            .collect();
        let nq = ens.grid.n_quad();
        let samples = ens.len();
        let macro_points = macro_sys.grid().n_quad();
        let point_weight = macro_sys.grid().quad_weight() / (samples * nq) as f64;
        Ok(Self {
            ens,
            macro_sys,
            ceff_inverse,
            fluctuation,
            unit_stress,
            s,
            n: ens.models[0].internal_dim(),
            nq,
            samples,
            macro_points,
            point_weight,
        })
    }

    fn blocks(&self) -> usize {
        self.macro_points * self.samples
    }

    fn n_points(&self) -> usize {
        self.blocks() * self.nq
    }

    fn cell_of(&self, p: usize) -> (usize, usize, usize) {
        let q = p % self.nq;
        let b = p / self.nq;
        (b / self.samples, b % self.samples, q)
    }

    fn phase(&self, p: usize) -> &CoefficientSet {
        let (_, r, q) = self.cell_of(p);
        let m = &self.ens.models[r];
        &m.phases()[m.phase_at_quad(q)]
    }

    fn plastic(&self, z: &[f64]) -> Vec<f64> {
        z.chunks(self.n).flat_map(|c| c[..self.s].iter().copied()).collect()
    }

    /// Cell responses to the prestrain `Bz`: `(ε(υ_z), τ_z)` per point.
    fn prestrain_response(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (s, n, nq) = (self.s, self.n, self.nq);
        let block = nq * s;
        let zero_load = vec![0.0; self.ens.grid.n_nodes() * self.ens.grid.dim()];
        let mut both = vec![0.0; self.blocks() * 2 * block];
        try_for_each_chunk(&mut both, 2 * block, |b, out| {
            let r = b % self.samples;
            let zb = &z[b * nq * n..(b + 1) * nq * n];
            let plastic = self.plastic(zb);
            if plastic.iter().all(|v| *v == 0.0) {
                out.fill(0.0);
                return Ok(());
            }
            let st = self.ens.models[r].system().solve(&zero_load, &plastic)?;
            out[..block].copy_from_slice(&st.strain);
            out[block..].copy_from_slice(&st.stress);
            Ok(())
        })?;
        let mut eps = Vec::with_capacity(self.n_points() * s);
        let mut tau = Vec::with_capacity(self.n_points() * s);
        for c in both.chunks(2 * block) {
            eps.extend_from_slice(&c[..block]);
            tau.extend_from_slice(&c[block..]);
        }
        Ok((eps, tau))
    }

    /// Mean of a point field over the cells of every macroscopic point.
    fn macro_mean(&self, field: &[f64]) -> Vec<f64> {
        let s = self.s;
        let per = self.samples * self.nq;
        let mut out = vec![0.0; self.macro_points * s];
        for (j, chunk) in field.chunks(per * s).enumerate() {
            for v in chunk.chunks(s) {
                for i in 0..s {
                    out[j * s + i] += v[i];
                }
            }
            for i in 0..s {
                out[j * s + i] /= per as f64;
            }
        }
        out
    }

    /// Macroscopic solve for given cell prestresses.
    fn macro_solve(&self, load: &[f64], tau: &[f64]) -> Result<ElasticState> {
        let mean_tau = self.macro_mean(tau);
        let plastic: Vec<f64> = mean_tau
            .chunks(self.s)
            .flat_map(|t| self.ceff_inverse.matvec(t).into_iter().map(|v| -v))
            .collect();
        self.macro_sys.solve(load, &plastic)
    }

    /// Total cell strain and stress for macroscopic strains `e_macro`.
    fn cell_fields(&self, e_macro: &[f64], eps_z: &[f64], tau: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.s;
        let mut strain = vec![0.0; self.n_points() * s];
        let mut stress = vec![0.0; self.n_points() * s];
        for p in 0..self.n_points() {
            let (j, r, q) = self.cell_of(p);
            let e = &e_macro[j * s..(j + 1) * s];
            for i in 0..s {
                let mut eps = e[i] + eps_z[p * s + i];
                let mut sig = tau[p * s + i];
                for (k, ek) in e.iter().enumerate() {
                    if *ek != 0.0 {
                        eps += ek * self.fluctuation[r][k][q * s + i];
                        sig += ek * self.unit_stress[r][k][q * s + i];
                    }
                }
                strain[p * s + i] = eps;
                stress[p * s + i] = sig;
            }
        }
        (strain, stress)
    }

    fn local_update(&self, strain: &[f64], z_prev: &[f64], h: f64, reg: f64, out: &mut [f64]) -> Result<()> {
        let (s, n, nq) = (self.s, self.n, self.nq);
        try_for_each_chunk(out, nq * n, |b, zb| {
            let r = b % self.samples;
            self.ens.models[r].local_update(
                &strain[b * nq * s..(b + 1) * nq * s],
                &z_prev[b * nq * n..(b + 1) * nq * n],
                h,
                reg,
                zb,
            )
        })
    }

    fn driving_force(&self, stress: &[f64], z: &[f64], reg: f64) -> Vec<f64> {
        let (s, n) = (self.s, self.n);
        let mut out = vec![0.0; z.len()];
        for p in 0..self.n_points() {
            let zq = &z[p * n..(p + 1) * n];
            let lz = self.phase(p).hardening.matvec(zq);
            for i in 0..n {
                let bts = if i < s { stress[p * s + i] } else { 0.0 };
                out[p * n + i] = bts - lz[i] - reg * zq[i];
            }
        }
        out
    }

    fn energies(&self, stress: &[f64], z: &[f64], reg: f64) -> (f64, f64, f64) {
        let (s, n) = (self.s, self.n);
        let (mut el, mut hard, mut r) = (0.0, 0.0, 0.0);
        for p in 0..self.n_points() {
            let ph = self.phase(p);
            let (_, rr, q) = self.cell_of(p);
            let m = &self.ens.models[rr];
            let sq = &stress[p * s..(p + 1) * s];
            let zq = &z[p * n..(p + 1) * n];
            el += m.compliance(m.phase_at_quad(q)).quad_form(sq);
            hard += ph.hardening.quad_form(zq);
            r += dot(zq, zq);
        }
        let w = self.point_weight;
        (0.5 * w * el, 0.5 * w * hard, 0.5 * w * reg * r)
    }

    fn state(&self, t: f64, load: &[f64], z: Vec<f64>) -> Result<(HomogenizedState, f64)> {
        let (eps_z, tau) = self.prestrain_response(&z)?;
        let mac = self.macro_solve(load, &tau)?;
        let (strain, stress) = self.cell_fields(&mac.strain, &eps_z, &tau);
        let macro_stress = self.macro_mean(&stress);
        let equilibrium = self.macro_sys.equilibrium_residual(&macro_stress, load);
        Ok((
            HomogenizedState {
                t,
                u0: mac.u,
                macro_stress,
                strain,
                stress,
                z,
            },
            equilibrium,
        ))
    }

    fn max_gap(&self, state: &HomogenizedState, prev: &HomogenizedState, h: f64, reg: f64) -> Result<f64> {
        let n = self.n;
        let np = self.n_points();
        let stride = (np / 32).max(1);
        let sigma = self.driving_force(&state.stress, &state.z, reg);
        let mut worst = 0.0_f64;
        for p in (0..np).step_by(stride) {
            let law = &self.phase(p).law;
            let v = &sigma[p * n..(p + 1) * n];
            let w: Vec<f64> = (0..n).map(|i| (state.z[p * n + i] - prev.z[p * n + i]) / h).collect();
            worst = worst.max(fitzpatrick_gap(law, v, &w)? / (1.0 + norm(v) * norm(&w)));
        }
        Ok(worst)
    }

    fn step(&self, prev: &HomogenizedState, params: &RotheParams, h: f64, load: &[f64]) -> Result<(HomogenizedState, StepStats)> {
        let reg = params.regularization;
        let elastic = self.ens.spec.phases.iter().all(|p| p.law.is_zero());
        let mut z = prev.z.clone();
        let mut z_local = vec![0.0; z.len()];
        for sweep in 1..=params.max_sweeps {
            let (eps_z, tau) = self.prestrain_response(&z)?;
            let mac = self.macro_solve(load, &tau)?;
            let (strain, _) = self.cell_fields(&mac.strain, &eps_z, &tau);
            self.local_update(&strain, &prev.z, h, reg, &mut z_local)?;
            let change = norm(&crate::linalg::sub(&z_local, &z));
            let increment = norm(&crate::linalg::sub(&z_local, &prev.z));
            let residual = if change == 0.0 { 0.0 } else { change / increment.max(1e-300) };
            if elastic || residual <= params.tolerance || change <= 1e-14 * norm(&z_local) {
                let (state, equilibrium) = self.state(prev.t + h, load, z)?;
                let max_gap = self.max_gap(&state, prev, h, reg)?;
                let combined = residual.max(equilibrium);
                if equilibrium > 1e-9 || combined > 1e-7 || max_gap > 1e-6 {
                    return Err(Error::StepFailure {
                        step: 0,
                        sweeps: sweep,
                        residual: combined.max(max_gap),
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

    fn ledger(&self, states: &[HomogenizedState], loads: &[Vec<f64>], reg: f64) -> Vec<LedgerEntry> {
        let w = self.point_weight;
        let (e0, h0, r0) = self.energies(&states[0].stress, &states[0].z, reg);
        let initial = e0 + h0 + r0;
        let (mut diss, mut work) = (0.0, 0.0);
        let mut out = Vec::with_capacity(states.len());
        for (k, st) in states.iter().enumerate() {
            if k > 0 {
                let prev = &states[k - 1];
                let sigma = self.driving_force(&st.stress, &st.z, reg);
                let dz: Vec<f64> = st.z.iter().zip(&prev.z).map(|(a, b)| a - b).collect();
                diss += w * dot(&sigma, &dz);
                let du: Vec<f64> = st.u0.iter().zip(&prev.u0).map(|(a, b)| a - b).collect();
                work += dot(&loads[k], &du);
            }
            let (el, hard, r) = self.energies(&st.stress, &st.z, reg);
            out.push(LedgerEntry {
                step: k,
                t: st.t,
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
}

/// Rothe march of the homogenized system on `macro_grid` (Dirichlet walls)
/// with one copy of the ensemble per macroscopic quadrature point.
pub fn solve_homogenized(
    macro_grid: Grid,
    program: &LoadProgram,
    ens: &RveEnsemble,
    params: &RotheParams,
) -> Result<HomogenizedSolution> {
    let effective = effective_tensor(ens)?;
    solve_with_effective(macro_grid, program, ens, params, effective)
}

/// [`solve_homogenized`] with precomputed correctors.
pub fn solve_with_effective(
    macro_grid: Grid,
    program: &LoadProgram,
    ens: &RveEnsemble,
    params: &RotheParams,
    effective: EffectiveTensor,
) -> Result<HomogenizedSolution> {
    let fe2 = Fe2::new(macro_grid, ens, &effective)?;
    let steps = 1usize << params.level;
    let h = program.horizon / steps as f64;
    let mg = fe2.macro_sys.grid();
    let d = mg.dim();
    let macro_points = mg.quad_points();
    let mut z0 = Vec::with_capacity(fe2.n_points() * fe2.n);
    for p in 0..fe2.n_points() {
        let (j, r, q) = fe2.cell_of(p);
        let phase = ens.models[r].phase_at_quad(q);
        let v = program.initial_z_at(&macro_points[j][..d], phase, fe2.n);
        if v.len() != fe2.n {
            return Err(Error::GridMismatch {
                expected: fe2.n,
                found: v.len(),
            });
        }
        z0.extend(v);
    }
    let load0 = program.load_at(&fe2.macro_sys, 0.0);
    let (s0, _) = fe2.state(0.0, &load0, z0)?;
    let mut states = vec![s0];
    let mut loads = vec![load0];
    let mut stats = Vec::with_capacity(steps);
    for n in 1..=steps {
        let t0 = (n - 1) as f64 * h;
        let load = program.step_load(&fe2.macro_sys, t0, t0 + h);
        let (mut next, st) = fe2.step(&states[n - 1], params, h, &load).map_err(|e| match e {
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
    let ledger = fe2.ledger(&states, &loads, params.regularization);
    let macro_grid = fe2.macro_sys.grid().clone();
    Ok(HomogenizedSolution {
        macro_grid,
        effective,
        states,
        loads,
        step: h,
        level: params.level,
        regularization: params.regularization,
        stats,
        ledger,
    })
}

/// Fitzpatrick energy inequality of the homogenized system at every time
/// level, with ensemble means for the probability integrals. The fields
/// mirror [`crate::rothe::weak_solution_residual`].
pub fn homogenized_energy_check(sol: &HomogenizedSolution, ens: &RveEnsemble) -> Result<WeakResidual> {
    let fe2 = Fe2::new(sol.macro_grid.clone(), ens, &sol.effective)?;
    let reg = sol.regularization;
    let (s_dim, n) = (fe2.s, fe2.n);
    let np = fe2.n_points();
    let w = fe2.point_weight;
    let h = sol.step;
    let (e0, h0, r0) = fe2.energies(&sol.states[0].stress, &sol.states[0].z, reg);
    let initial = e0 + h0 + r0;
    let mut times = vec![0.0];
    let mut residual = vec![0.0];
    let mut interpolant_form = vec![0.0];
    let mut scale = 2.0 * initial;
    let mut max_gap = 0.0_f64;
    let (mut fitz_cum, mut work, mut chain) = (0.0, 0.0, 0.0);
    for k in 1..sol.states.len() {
        let st = &sol.states[k];
        let prev = &sol.states[k - 1];
        let sigma = fe2.driving_force(&st.stress, &st.z, reg);
        let rate: Vec<f64> = st.z.iter().zip(&prev.z).map(|(a, b)| (a - b) / h).collect();
        let mut both = vec![0.0; 2 * np];
        try_for_each_chunk(&mut both, 2, |p, out| {
            let law: &MonotoneLaw = &fe2.phase(p).law;
            let v = &sigma[p * n..(p + 1) * n];
            let vs = &rate[p * n..(p + 1) * n];
            let f = if law.is_zero() {
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
        let du: Vec<f64> = st.u0.iter().zip(&prev.u0).map(|(a, b)| a - b).collect();
        work += dot(&sol.loads[k], &du);
        for p in 0..np {
            let (_, r, q) = fe2.cell_of(p);
            let m = &ens.models[r];
            let sq = &st.stress[p * s_dim..(p + 1) * s_dim];
            let ds: Vec<f64> = (0..s_dim).map(|i| sq[i] - prev.stress[p * s_dim + i]).collect();
            let zq = &st.z[p * n..(p + 1) * n];
            let dz: Vec<f64> = (0..n).map(|i| zq[i] - prev.z[p * n + i]).collect();
            let l = &fe2.phase(p).hardening;
            chain += w * (m.compliance(m.phase_at_quad(q)).bilinear(sq, &ds) + l.bilinear(zq, &dz) + reg * dot(zq, &dz));
        }
        let (el, hard, r) = fe2.energies(&st.stress, &st.z, reg);
        times.push(st.t);
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

/// Structural checks of a homogenized solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDiagnostics {
    /// `max |σ₀ − ℂ(ε − Bz)|` relative to the largest stress.
    pub constitutive: f64,
    /// Largest `|⟨σ₀, ε(φ)⟩| / (‖σ₀‖ ‖ε(φ)‖)` over random periodic `φ`.
    pub solenoidality: f64,
    /// Largest `|⟨ε(υ)⟩|` per cell relative to the largest strain.
    pub corrector_mean: f64,
}

/// Checks the cell relations at every time level: the constitutive law,
/// orthogonality of `σ₀` to sampled periodic strains and zero-mean correctors.
pub fn cell_diagnostics(sol: &HomogenizedSolution, ens: &RveEnsemble, test_fields: usize, seed: u64) -> Result<CellDiagnostics> {
    let fe2 = Fe2::new(sol.macro_grid.clone(), ens, &sol.effective)?;
    let (s, n, nq) = (fe2.s, fe2.n, fe2.nq);
    let g = &ens.grid;
    let mut rng = SplitMix64::new(seed);
    let phis: Vec<Vec<f64>> = (0..test_fields)
        .map(|_| {
            let u: Vec<f64> = (0..g.n_nodes() * g.dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            strain(g, &u)
        })
        .collect();
    let (mut constitutive, mut solenoidality, mut corrector_mean) = (0.0_f64, 0.0_f64, 0.0_f64);
    for st in &sol.states {
        let e_macro = strain(&sol.macro_grid, &st.u0);
        let smax = st.stress.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let emax = st.strain.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for p in 0..fe2.n_points() {
            let c = &fe2.phase(p).stiffness;
            let el: Vec<f64> = (0..s).map(|i| st.strain[p * s + i] - st.z[p * n + i]).collect();
            let sig = c.matvec(&el);
            for i in 0..s {
                constitutive = constitutive.max((sig[i] - st.stress[p * s + i]).abs() / smax);
            }
        }
        for b in 0..fe2.blocks() {
            let j = b / fe2.samples;
            let sb = &st.stress[b * nq * s..(b + 1) * nq * s];
            let eb = &st.strain[b * nq * s..(b + 1) * nq * s];
            for phi in &phis {
                let den = norm(sb) * norm(phi);
                if den > 0.0 {
                    solenoidality = solenoidality.max(dot(sb, phi).abs() / den);
                }
            }
            for i in 0..s {
                let mean: f64 = eb.iter().skip(i).step_by(s).sum::<f64>() / nq as f64;
                corrector_mean = corrector_mean.max((mean - e_macro[j * s + i]).abs() / emax);
            }
        }
    }
    Ok(CellDiagnostics {
        constitutive,
        solenoidality,
        corrector_mean,
    })
}

/// One micro run compared with the homogenized solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroMacroRow {
    pub eta: f64,
    pub seed: u64,
    /// `‖u_η − u₀‖_{L²(Q_T)}` with piecewise-constant interpolants.
    pub u_error: f64,
    /// `‖u₀‖_{L²(Q_T)}` on the micro grid.
    pub u_norm: f64,
    /// Largest dictionary pairing error of `σ` at the final time, relative
    /// to the largest limit pairing.
    pub sigma_pairing_error: f64,
    pub z_pairing_error: f64,
}

/// Convergence table of micro runs against one homogenized solution.
#[derive(Debug, Clone)]
pub struct MicroMacroTable {
    pub rows: Vec<MicroMacroRow>,
    pub homogenized: HomogenizedSolution,
}

/// Root mean square over seeds of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub eta: f64,
    pub metric: &'static str,
    pub value: f64,
}

impl MicroMacroTable {
    pub const METRICS: [&'static str; 3] = ["u_L2_QT", "sigma_pairing", "z_pairing"];

    /// Per-`η` root mean square over seeds, `η` in the order of the runs.
    pub fn summary(&self) -> Vec<MetricSummary> {
        let mut etas: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !etas.contains(&r.eta) {
                etas.push(r.eta);
            }
        }
        let mut out = Vec::new();
        for eta in etas {
            let rows: Vec<&MicroMacroRow> = self.rows.iter().filter(|r| r.eta == eta).collect();
            let m = rows.len() as f64;
            let rms = |f: &dyn Fn(&MicroMacroRow) -> f64| (rows.iter().map(|r| f(r).powi(2)).sum::<f64>() / m).sqrt();
            out.push(MetricSummary {
                eta,
                metric: Self::METRICS[0],
                value: rms(&|r| r.u_error),
            });
            out.push(MetricSummary {
                eta,
                metric: Self::METRICS[1],
                value: rms(&|r| r.sigma_pairing_error),
            });
            out.push(MetricSummary {
                eta,
                metric: Self::METRICS[2],
                value: rms(&|r| r.z_pairing_error),
            });
        }
        out
    }

    /// Values of one metric in run order.
    pub fn series(&self, metric: &str) -> Vec<f64> {
        self.summary().into_iter().filter(|m| m.metric == metric).map(|m| m.value).collect()
    }
}

/// Micro runs on the macroscopic box for every `η` and seed.
#[derive(Debug, Clone)]
pub struct MicroSweep<'a> {
    pub spec: &'a FieldSpec,
    pub etas: &'a [f64],
    pub seeds: &'a [u64],
    pub elements_per_cell: usize,
    pub params: RotheParams,
}

/// Runs the micro problem per `η` and seed and compares with one
/// homogenized solve on `macro_grid`.
pub fn micro_vs_macro(
    program: &LoadProgram,
    sweep: &MicroSweep<'_>,
    macro_grid: Grid,
    ens: &RveEnsemble,
    dict: &TestFunctionDictionary,
) -> Result<MicroMacroTable> {
    if sweep.etas.iter().any(|e| !(*e > 0.0)) || sweep.etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("eta list must be positive and strictly decreasing".into()));
    }
    let hom = solve_homogenized(macro_grid, program, ens, &sweep.params)?;
    let limits = homogenized_pairings(&hom, ens, dict);
    let mg = &hom.macro_grid;
    let d = mg.dim();
    let lengths: Vec<f64> = (0..d).map(|a| mg.length(a)).collect();
    let jobs: Vec<(f64, u64)> = sweep
        .etas
        .iter()
        .flat_map(|&eta| sweep.seeds.iter().map(move |&s| (eta, s)))
        .collect();
    let rows = try_map(jobs.len(), |i| {
        let (eta, seed) = jobs[i];
        let mut sp = sweep.spec.clone();
        sp.seed = seed;
        let real = sample_realization(&sp)?;
        let cell = eta * sp.cell_size;
        let cells: Vec<usize> = lengths
            .iter()
            .map(|l| ((l / cell).round() as usize).max(1) * sweep.elements_per_cell)
            .collect();
        let grid = Grid::new(&cells, &lengths, &vec![crate::fem::AxisBoundary::Dirichlet; d])?;
        let model = MicroModel::from_realization(grid, &real, eta)?;
        let traj = run_trajectory(&model, program, &sweep.params)?;
        let g = model.grid();
        let h = traj.step;
        let (mut err2, mut norm2) = (0.0, 0.0);
        for k in 1..traj.states.len() {
            let u0: Vec<f64> = (0..g.n_nodes())
                .flat_map(|node| evaluate_nodal(mg, &hom.states[k].u0, d, &g.node_coords(node)[..d]))
                .collect();
            let diff: Vec<f64> = traj.states[k].u.iter().zip(&u0).map(|(a, b)| a - b).collect();
            err2 += h * nodal_norm(g, &diff, d, 2.0).powi(2);
            norm2 += h * nodal_norm(g, &u0, d, 2.0).powi(2);
        }
        let last = traj.states.last().expect("nonempty");
        let s = model.strain_dim();
        let n = model.internal_dim();
        let mut sig_err = 0.0_f64;
        let mut z_err = 0.0_f64;
        for (e, lim) in dict.entries.iter().zip(&limits) {
            let ps = pair(g, &last.stress, s, e, &real, eta)?;
            let pz = pair(g, &last.z, n, e, &real, eta)?;
            for i in 0..s {
                sig_err = sig_err.max((ps[i] - lim.stress[i]).abs());
            }
            for i in 0..n {
                z_err = z_err.max((pz[i] - lim.z[i]).abs());
            }
        }
        let sig_scale = limits.iter().flat_map(|l| l.stress.iter()).fold(0.0_f64, |a, v| a.max(v.abs()));
        let z_scale = limits.iter().flat_map(|l| l.z.iter()).fold(0.0_f64, |a, v| a.max(v.abs()));
        Ok(MicroMacroRow {
            eta,
            seed,
            u_error: err2.sqrt(),
            u_norm: norm2.sqrt(),
            sigma_pairing_error: if sig_scale > 0.0 { sig_err / sig_scale } else { sig_err },
            z_pairing_error: if z_scale > 0.0 { z_err / z_scale } else { z_err },
        })
    })?;
    Ok(MicroMacroTable { rows, homogenized: hom })
}

/// Limit pairings of `σ₀` and `z₀` at the final time.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPairing {
    pub stress: Vec<f64>,
    pub z: Vec<f64>,
}

/// `∫_Q ψ(x) E[σ₀(x, ·) g]` and the same for `z₀`, by macroscopic
/// quadrature and ensemble means.
pub fn homogenized_pairings(sol: &HomogenizedSolution, ens: &RveEnsemble, dict: &TestFunctionDictionary) -> Vec<LimitPairing> {
    let mg = &sol.macro_grid;
    let d = mg.dim();
    let xs = mg.quad_points();
    let last = sol.states.last().expect("nonempty");
    let s = crate::mandel::sym_dim(d);
    let n = last.z.len() / last.stress.len().max(1) * s;
    let nq = ens.grid.n_quad();
    let r_count = ens.len();
    let w = mg.quad_weight() / (r_count * nq) as f64;
    dict.entries
        .iter()
        .map(|e| {
            let obs: Vec<f64> = (0..r_count)
                .flat_map(|r| (0..nq).map(move |q| (r, q)))
                .map(|(r, q)| ens.observable_at_quad(r, q, &e.observable))
                .collect();
            let mut stress = vec![0.0; s];
            let mut z = vec![0.0; n];
            for (j, x) in xs.iter().enumerate() {
                let psi = e.bump.value(&x[..d]);
                if psi == 0.0 {
                    continue;
                }
                for (k, g) in obs.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    let p = j * r_count * nq + k;
                    for i in 0..s {
                        stress[i] += w * psi * g * last.stress[p * s + i];
                    }
                    for i in 0..n {
                        z[i] += w * psi * g * last.z[p * n + i];
                    }
                }
            }
            LimitPairing { stress, z }
        })
        .collect()
}

#[cfg(test)]
mod tests;
