//! Structured-grid finite elements for heterogeneous linear elasticity.
//!
//! Elements are tensor-product linear (1D), bilinear (2D) or trilinear (3D)
//! on a uniform grid. Strains, stresses and internal variables live on the
//! Gauss points of each element (one point in 1D, `2ᵈ` otherwise); the
//! stiffness uses the same rule, so the discrete divergence is exactly the
//! adjoint of the discrete strain.
//!
//! Every axis is either Dirichlet (`u = 0` at both ends) or periodic. When no
//! axis is Dirichlet, node 0 is pinned and solutions are shifted to zero mean.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::SQRT_2;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, pcg, CsrMatrix, DMat, SkylineCholesky};
use crate::mandel::{index_pair, sym_dim};
use crate::microstructure::Realization;

/// Boundary treatment of one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisBoundary {
    Dirichlet,
    Periodic,
}

/// Uniform grid on `[0, L₁] × … × [0, L_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    cells: [usize; 3],
    lengths: [f64; 3],
    boundary: [AxisBoundary; 3],
}

impl Grid {
    pub fn new(cells: &[usize], lengths: &[f64], boundary: &[AxisBoundary]) -> Result<Self> {
        let dim = cells.len();
        if !(1..=3).contains(&dim) || lengths.len() != dim || boundary.len() != dim {
            return Err(Error::Config(format!(
                "grid needs 1 to 3 axes with matching cells/lengths/boundary (got {}, {}, {})",
                cells.len(),
                lengths.len(),
                boundary.len()
            )));
        }
        let mut g = Self {
            dim,
            cells: [1; 3],
            lengths: [1.0; 3],
            boundary: [AxisBoundary::Periodic; 3],
        };
        for a in 0..dim {
            if cells[a] == 0 || !(lengths[a] > 0.0) || !lengths[a].is_finite() {
                return Err(Error::Config(format!(
                    "axis {a}: need at least one cell and a positive length"
                )));
            }
            if boundary[a] == AxisBoundary::Periodic && cells[a] < 2 {
                return Err(Error::Config(format!("periodic axis {a} needs at least two cells")));
            }
            g.cells[a] = cells[a];
            g.lengths[a] = lengths[a];
            g.boundary[a] = boundary[a];
        }
        Ok(g)
    }

    /// `n^d` cells on `[0, length]^d` with Dirichlet walls.
    pub fn dirichlet_box(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::new(&vec![n; dim], &vec![length; dim], &vec![AxisBoundary::Dirichlet; dim])
    }

    /// Fully periodic `n^d` cell of edge `length`.
    pub fn periodic_cell(dim: usize, n: usize, length: f64) -> Result<Self> {
        Self::new(&vec![n; dim], &vec![length; dim], &vec![AxisBoundary::Periodic; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.lengths[axis]
    }

    pub fn boundary(&self, axis: usize) -> AxisBoundary {
        self.boundary[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.cells[axis] as f64
    }

    pub fn is_periodic(&self) -> bool {
        (0..self.dim).all(|a| self.boundary[a] == AxisBoundary::Periodic)
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.lengths[a]).product()
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        match self.boundary[axis] {
            AxisBoundary::Dirichlet => self.cells[axis] + 1,
            AxisBoundary::Periodic => self.cells[axis],
        }
    }

    pub fn n_nodes(&self) -> usize {
        (0..self.dim).map(|a| self.nodes_per_axis(a)).product()
    }

    pub fn n_elements(&self) -> usize {
        (0..self.dim).map(|a| self.cells[a]).product()
    }

    pub fn corners(&self) -> usize {
        1 << self.dim
    }

    pub fn quad_per_element(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            1 << self.dim
        }
    }

    pub fn n_quad(&self) -> usize {
        self.n_elements() * self.quad_per_element()
    }

    /// Weight of every quadrature point.
    pub fn quad_weight(&self) -> f64 {
        let cell: f64 = (0..self.dim).map(|a| self.spacing(a)).product();
        cell / self.quad_per_element() as f64
    }

    fn node_multi(&self, node: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut rem = node;
        for a in 0..self.dim {
            let n = self.nodes_per_axis(a);
            m[a] = rem % n;
            rem /= n;
        }
        m
    }

    fn node_index(&self, m: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim).rev() {
            idx = idx * self.nodes_per_axis(a) + m[a];
        }
        idx
    }

    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let m = self.node_multi(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = m[a] as f64 * self.spacing(a);
        }
        x
    }

    /// Nodes on a Dirichlet wall.
    pub fn is_boundary_node(&self, node: usize) -> bool {
        let m = self.node_multi(node);
        (0..self.dim).any(|a| self.boundary[a] == AxisBoundary::Dirichlet && (m[a] == 0 || m[a] == self.cells[a]))
    }

    fn element_multi(&self, e: usize) -> [usize; 3] {
        let mut m = [0; 3];
        let mut rem = e;
        for a in 0..self.dim {
            m[a] = rem % self.cells[a];
            rem /= self.cells[a];
        }
        m
    }

    /// Corner nodes of element `e`; bit `a` of the corner index selects the
    /// upper end along axis `a`.
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let m = self.element_multi(e);
        let mut out = [0; 8];
        for (c, slot) in out.iter_mut().enumerate().take(self.corners()) {
            let mut nm = [0; 3];
            for a in 0..self.dim {
                let i = m[a] + ((c >> a) & 1);
                nm[a] = i % self.nodes_per_axis(a);
            }
            *slot = self.node_index(nm);
        }
        out
    }

    pub fn element_center(&self, e: usize) -> [f64; 3] {
        let m = self.element_multi(e);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (m[a] as f64 + 0.5) * self.spacing(a);
        }
        x
    }

    /// Coordinates of every quadrature point, element by element.
    pub fn quad_points(&self) -> Vec<[f64; 3]> {
        let refs = reference_points(self.dim);
        let mut out = Vec::with_capacity(self.n_quad());
        for e in 0..self.n_elements() {
            let m = self.element_multi(e);
            for r in &refs {
                let mut x = [0.0; 3];
                for a in 0..self.dim {
                    x[a] = (m[a] as f64 + r[a]) * self.spacing(a);
                }
                out.push(x);
            }
        }
        out
    }

    /// Requires the grid spacing to divide the microstructure cell width `η · cell_size`.
    pub fn check_resolution(&self, eta: f64, cell_size: f64) -> Result<()> {
        let width = eta * cell_size;
        for a in 0..self.dim {
            let h = self.spacing(a);
            let ratio = width / h;
            if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                return Err(Error::Resolution {
                    cell_width: width,
                    spacing: h,
                });
            }
        }
        Ok(())
    }

    /// Nodal values of `f`, `ncomp` components per node.
    pub fn interpolate(&self, ncomp: usize, f: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_nodes() * ncomp);
        for n in 0..self.n_nodes() {
            let x = self.node_coords(n);
            let v = f(&x[..self.dim]);
            out.extend_from_slice(&v[..ncomp]);
        }
        out
    }

    /// Values of `f` at the quadrature points.
    pub fn sample_quad(&self, ncomp: usize, f: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_quad() * ncomp);
        for x in self.quad_points() {
            let v = f(&x[..self.dim]);
            out.extend_from_slice(&v[..ncomp]);
        }
        out
    }
}

fn reference_points(dim: usize) -> Vec<[f64; 3]> {
    if dim == 1 {
        return vec![[0.5, 0.0, 0.0]];
    }
    let g = 0.5 / 3f64.sqrt();
    (0..1usize << dim)
        .map(|q| {
            let mut r = [0.0; 3];
            for (a, slot) in r.iter_mut().enumerate().take(dim) {
                *slot = if (q >> a) & 1 == 1 { 0.5 + g } else { 0.5 - g };
            }
            r
        })
        .collect()
}

/// Which differential operator maps nodal values to quadrature values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpKind {
    /// Vector field to Mandel strain.
    SymGrad,
    /// Vector field to full row-major gradient.
    Grad,
    /// Scalar field to gradient.
    ScalarGrad,
}

/// Per-quadrature-point matrices of one operator on the reference element.
#[derive(Debug, Clone)]
struct ElementOp {
    ncomp: usize,
    rows: usize,
    mats: Vec<DMat>,
}

impl ElementOp {
    fn new(grid: &Grid, kind: OpKind) -> Self {
        let d = grid.dim;
        let nc = grid.corners();
        let refs = reference_points(d);
        let (ncomp, rows) = match kind {
            OpKind::SymGrad => (d, sym_dim(d)),
            OpKind::Grad => (d, d * d),
            OpKind::ScalarGrad => (1, d),
        };
        let mats = refs
            .iter()
            .map(|r| {
                // dN_c/dx_a
                let dn = |c: usize, a: usize| {
                    let mut v = if (c >> a) & 1 == 1 { 1.0 } else { -1.0 };
                    v /= grid.spacing(a);
                    for b in 0..d {
                        if b != a {
                            v *= if (c >> b) & 1 == 1 { r[b] } else { 1.0 - r[b] };
                        }
                    }
                    v
                };
                let mut m = DMat::zeros(rows, nc * ncomp);
                for c in 0..nc {
                    match kind {
                        OpKind::SymGrad => {
                            for k in 0..rows {
                                let (i, j) = index_pair(d, k);
                                if i == j {
                                    m[(k, c * d + i)] = dn(c, i);
                                } else {
                                    m[(k, c * d + i)] = dn(c, j) / SQRT_2;
                                    m[(k, c * d + j)] = dn(c, i) / SQRT_2;
                                }
                            }
                        }
                        OpKind::Grad => {
                            for i in 0..d {
                                for j in 0..d {
                                    m[(i * d + j, c * d + i)] = dn(c, j);
                                }
                            }
                        }
                        OpKind::ScalarGrad => {
                            for a in 0..d {
                                m[(a, c)] = dn(c, a);
                            }
                        }
                    }
                }
                m
            })
            .collect();
        Self { ncomp, rows, mats }
    }

    fn local_dofs(&self, grid: &Grid, e: usize) -> Vec<usize> {
        let nodes = grid.element_nodes(e);
        let mut out = Vec::with_capacity(grid.corners() * self.ncomp);
        for &n in nodes.iter().take(grid.corners()) {
            for k in 0..self.ncomp {
                out.push(n * self.ncomp + k);
            }
        }
        out
    }

    /// Quadrature values `B u`.
    fn apply(&self, grid: &Grid, u: &[f64]) -> Vec<f64> {
        let nq = grid.quad_per_element();
        let mut out = vec![0.0; grid.n_quad() * self.rows];
        let mut local = vec![0.0; grid.corners() * self.ncomp];
        for e in 0..grid.n_elements() {
            let dofs = self.local_dofs(grid, e);
            for (l, &g) in local.iter_mut().zip(&dofs) {
                *l = u[g];
            }
            for q in 0..nq {
                let base = (e * nq + q) * self.rows;
                self.mats[q].matvec_into(&local, &mut out[base..base + self.rows]);
            }
        }
        out
    }

    /// Nodal vector `Σ_q w Bᵀ σ_q`.
    fn apply_transpose(&self, grid: &Grid, sigma: &[f64]) -> Vec<f64> {
        self.accumulate_transpose(grid, sigma, false)
    }

    /// With `magnitude`, sums `|w (Bᵀσ_q)_i|` instead: a scale for residuals.
    fn accumulate_transpose(&self, grid: &Grid, sigma: &[f64], magnitude: bool) -> Vec<f64> {
        let nq = grid.quad_per_element();
        let w = grid.quad_weight();
        let mut out = vec![0.0; grid.n_nodes() * self.ncomp];
        for e in 0..grid.n_elements() {
            let dofs = self.local_dofs(grid, e);
            for q in 0..nq {
                let base = (e * nq + q) * self.rows;
                let loc = self.mats[q].tmatvec(&sigma[base..base + self.rows]);
                for (l, &g) in loc.iter().zip(&dofs) {
                    out[g] += if magnitude { (w * l).abs() } else { w * l };
                }
            }
        }
        out
    }
}

/// Mandel strain `ε(∇u)` at every quadrature point.
pub fn strain(grid: &Grid, u: &[f64]) -> Vec<f64> {
    ElementOp::new(grid, OpKind::SymGrad).apply(grid, u)
}

/// Weak divergence: the nodal vector `d` with `⟨d, φ⟩ = −⟨σ, ε(∇φ)⟩` for
/// every nodal field `φ`, quadrature inner product on the right.
pub fn divergence(grid: &Grid, sigma: &[f64]) -> Vec<f64> {
    let mut out = ElementOp::new(grid, OpKind::SymGrad).apply_transpose(grid, sigma);
    out.iter_mut().for_each(|v| *v = -*v);
    out
}

/// Full gradient of a vector field, row-major `d × d` per quadrature point.
pub fn vector_gradient(grid: &Grid, u: &[f64]) -> Vec<f64> {
    ElementOp::new(grid, OpKind::Grad).apply(grid, u)
}

/// Gradient of a scalar field at every quadrature point.
pub fn scalar_gradient(grid: &Grid, phi: &[f64]) -> Vec<f64> {
    ElementOp::new(grid, OpKind::ScalarGrad).apply(grid, phi)
}

/// `Σ_q w ⟨a_q, b_q⟩`
pub fn quad_inner(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.quad_weight() * dot(a, b)
}

/// `(Σ_q w |v_q|^p)^{1/p}` for a field with `ncomp` components per point.
pub fn quad_norm(grid: &Grid, v: &[f64], ncomp: usize, p: f64) -> f64 {
    let w = grid.quad_weight();
    let s: f64 = v.chunks(ncomp).map(|c| norm(c).powf(p)).sum();
    (w * s).powf(1.0 / p)
}

/// Values of a nodal field at the quadrature points.
pub fn nodal_to_quad(grid: &Grid, u: &[f64], ncomp: usize) -> Vec<f64> {
    let refs = reference_points(grid.dim);
    let mut out = Vec::with_capacity(grid.n_quad() * ncomp);
    for e in 0..grid.n_elements() {
        let nodes = grid.element_nodes(e);
        for r in &refs {
            let mut v = vec![0.0; ncomp];
            for (c, &node) in nodes.iter().enumerate().take(grid.corners()) {
                let mut n = 1.0;
                for a in 0..grid.dim {
                    n *= if (c >> a) & 1 == 1 { r[a] } else { 1.0 - r[a] };
                }
                for k in 0..ncomp {
                    v[k] += n * u[node * ncomp + k];
                }
            }
            out.extend(v);
        }
    }
    out
}

/// `(Σ_nodes Πh_a |u_node|^p)^{1/p}`: lumped nodal `L^p` norm.
pub fn nodal_norm(grid: &Grid, u: &[f64], ncomp: usize, p: f64) -> f64 {
    let w: f64 = (0..grid.dim()).map(|a| grid.spacing(a)).product();
    let s: f64 = u.chunks(ncomp).map(|c| norm(c).powf(p)).sum();
    (w * s).powf(1.0 / p)
}

/// Value of a nodal field at an arbitrary point of the grid's box
/// (multilinear interpolation, periodic axes wrap).
pub fn evaluate_nodal(grid: &Grid, u: &[f64], ncomp: usize, x: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..d {
        let h = grid.spacing(a);
        let n = grid.cells(a);
        let mut xi = x[a] / h;
        if grid.boundary(a) == AxisBoundary::Periodic {
            xi -= n as f64 * (xi / n as f64).floor();
        } else {
            xi = xi.clamp(0.0, n as f64);
        }
        let i = (xi.floor() as usize).min(n - 1);
        base[a] = i;
        frac[a] = xi - i as f64;
    }
    let mut out = vec![0.0; ncomp];
    for c in 0..grid.corners() {
        let mut wgt = 1.0;
        let mut m = [0usize; 3];
        for a in 0..d {
            let up = (c >> a) & 1;
            wgt *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
            m[a] = (base[a] + up) % grid.nodes_per_axis(a);
        }
        if wgt == 0.0 {
            continue;
        }
        let node = grid.node_index(m);
        for k in 0..ncomp {
            out[k] += wgt * u[node * ncomp + k];
        }
    }
    out
}

/// Component-wise mean of a quadrature field (all points weigh the same).
pub fn quad_mean(v: &[f64], ncomp: usize) -> Vec<f64> {
    let mut m = vec![0.0; ncomp];
    for c in v.chunks(ncomp) {
        for (mi, ci) in m.iter_mut().zip(c) {
            *mi += ci;
        }
    }
    let n = (v.len() / ncomp).max(1) as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

/// Free/fixed classification of nodal unknowns.
#[derive(Debug, Clone)]
struct DofMap {
    free_of: Vec<usize>,
    n_free: usize,
    pinned: bool,
}

impl DofMap {
    fn new(grid: &Grid, ncomp: usize) -> Self {
        let pinned = grid.is_periodic();
        let mut free_of = vec![usize::MAX; grid.n_nodes() * ncomp];
        let mut n_free = 0;
        for node in 0..grid.n_nodes() {
            let fixed = grid.is_boundary_node(node) || (pinned && node == 0);
            if !fixed {
                for k in 0..ncomp {
                    free_of[node * ncomp + k] = n_free;
                    n_free += 1;
                }
            }
        }
        Self {
            free_of,
            n_free,
            pinned,
        }
    }

    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (g, &f) in self.free_of.iter().enumerate() {
            if f != usize::MAX {
                out[f] = full[g];
            }
        }
        out
    }

    fn extend(&self, free: &[f64]) -> Vec<f64> {
        self.free_of
            .iter()
            .map(|&f| if f == usize::MAX { 0.0 } else { free[f] })
            .collect()
    }
}

#[derive(Debug, Clone)]
enum LinearSolver {
    Direct(SkylineCholesky),
    Iterative,
}

/// Largest envelope factorization (in multiply-adds) attempted before
/// falling back to conjugate gradients.
const DIRECT_COST_LIMIT: f64 = 4e9;

/// An assembled operator `Σ w Bᵀ M_e B` restricted to the free unknowns.
#[derive(Debug, Clone)]
struct Assembled {
    op: ElementOp,
    dofs: DofMap,
    matrix: CsrMatrix,
    solver: LinearSolver,
}

impl Assembled {
    fn new(grid: &Grid, op: ElementOp, materials: &[DMat], element_material: &[usize]) -> Result<Self> {
        let dofs = DofMap::new(grid, op.ncomp);
        let nq = grid.quad_per_element();
        let w = grid.quad_weight();
        let local_k: Vec<DMat> = materials
            .iter()
            .map(|m| {
                let mut k = DMat::zeros(op.mats[0].cols(), op.mats[0].cols());
                for q in 0..nq {
                    let b = &op.mats[q];
                    k = k.add(&b.transpose().mul(&m.mul(b)).scaled(w));
                }
                k.sym_part()
            })
            .collect();
        let nloc = grid.corners() * op.ncomp;
        let mut triplets = Vec::with_capacity(grid.n_elements() * nloc * nloc);
        for e in 0..grid.n_elements() {
            let ke = &local_k[element_material[e]];
            let gd = op.local_dofs(grid, e);
            for i in 0..nloc {
                let fi = dofs.free_of[gd[i]];
                if fi == usize::MAX {
                    continue;
                }
                for j in 0..nloc {
                    let fj = dofs.free_of[gd[j]];
                    if fj != usize::MAX {
                        triplets.push((fi, fj, ke[(i, j)]));
                    }
                }
            }
        }
        let matrix = CsrMatrix::from_triplets(dofs.n_free, triplets);
        let cost: f64 = (0..matrix.n())
            .map(|i| {
                let first = matrix.row(i).map(|(j, _)| j).min().unwrap_or(i).min(i);
                let len = (i + 1 - first) as f64;
                0.5 * len * len
            })
            .sum();
        let solver = if cost <= DIRECT_COST_LIMIT {
            LinearSolver::Direct(SkylineCholesky::factor(&matrix)?)
        } else {
            LinearSolver::Iterative
        };
        Ok(Self {
            op,
            dofs,
            matrix,
            solver,
        })
    }

    /// Solves with a nodal right-hand side; returns all nodal values.
    fn solve(&self, grid: &Grid, rhs_full: &[f64]) -> Result<Vec<f64>> {
        let rhs = self.dofs.restrict(rhs_full);
        let mut x = vec![0.0; self.dofs.n_free];
        match &self.solver {
            LinearSolver::Direct(f) => {
                x.copy_from_slice(&rhs);
                f.solve_in_place(&mut x);
            }
            LinearSolver::Iterative => {
                let n = self.dofs.n_free;
                pcg(&self.matrix, &rhs, &mut x, 1e-12, 10 * n.max(10), &[])?;
            }
        }
        let rn = norm(&rhs);
        if rn > 0.0 {
            let r = crate::linalg::sub(&self.matrix.matvec(&x), &rhs);
            let rel = norm(&r) / rn;
            if !(rel <= 1e-9) {
                return Err(Error::IllConditioned {
                    iterations: 1,
                    residual: rel,
                    condition_estimate: f64::NAN,
                });
            }
        }
        let mut full = self.dofs.extend(&x);
        if self.dofs.pinned {
            let nc = self.op.ncomp;
            let n = grid.n_nodes() as f64;
            for k in 0..nc {
                let mean: f64 = full.iter().skip(k).step_by(nc).sum::<f64>() / n;
                full.iter_mut().skip(k).step_by(nc).for_each(|v| *v -= mean);
            }
        }
        Ok(full)
    }
}

/// Displacement, strain and stress of one elasticity solve. Nodal `u` holds
/// all nodes (zeros on Dirichlet walls); strain and stress are Mandel vectors
/// per quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticState {
    pub u: Vec<f64>,
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
}

/// Heterogeneous linear elasticity on a [`Grid`] with one stiffness per element.
#[derive(Debug, Clone)]
pub struct ElasticitySystem {
    grid: Grid,
    materials: Vec<DMat>,
    element_material: Vec<usize>,
    system: Assembled,
}

impl ElasticitySystem {
    /// `materials` are `s × s` Mandel stiffnesses, `element_material[e]`
    /// selects the one of element `e`.
    pub fn assemble(grid: Grid, materials: Vec<DMat>, element_material: Vec<usize>) -> Result<Self> {
        let s = sym_dim(grid.dim);
        if element_material.len() != grid.n_elements() {
            return Err(Error::GridMismatch {
                expected: grid.n_elements(),
                found: element_material.len(),
            });
        }
        if materials.is_empty() || element_material.iter().any(|&m| m >= materials.len()) {
            return Err(Error::Config("element material index out of range".into()));
        }
        for (k, m) in materials.iter().enumerate() {
            if m.rows() != s || !m.is_square() {
                return Err(Error::Config(format!("material {k} is not {s}x{s}")));
            }
            if m.cholesky().is_none() {
                return Err(Error::Ellipticity(format!("material {k} stiffness is not positive definite")));
            }
        }
        let op = ElementOp::new(&grid, OpKind::SymGrad);
        let system = Assembled::new(&grid, op, &materials, &element_material)?;
        Ok(Self {
            grid,
            materials,
            element_material,
            system,
        })
    }

    /// Homogeneous material.
    pub fn homogeneous(grid: Grid, stiffness: DMat) -> Result<Self> {
        let n = grid.n_elements();
        Self::assemble(grid, vec![stiffness], vec![0; n])
    }

    /// Stiffness of the realization's phase at each element center on scale `η`.
    pub fn from_realization(grid: Grid, real: &Realization, eta: f64) -> Result<Self> {
        if grid.dim != real.dim() {
            return Err(Error::GridMismatch {
                expected: real.dim(),
                found: grid.dim,
            });
        }
        let materials = real.spec().phases.iter().map(|c| c.stiffness.clone()).collect();
        let element_material = (0..grid.n_elements())
            .map(|e| real.phase_at(&grid.element_center(e)[..grid.dim], eta))
            .collect();
        Self::assemble(grid, materials, element_material)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn strain_dim(&self) -> usize {
        sym_dim(self.grid.dim)
    }

    pub fn materials(&self) -> &[DMat] {
        &self.materials
    }

    pub fn element_material(&self) -> &[usize] {
        &self.element_material
    }

    /// Material index of quadrature point `q`.
    pub fn material_at_quad(&self, q: usize) -> usize {
        self.element_material[q / self.grid.quad_per_element()]
    }

    pub fn stiffness_at_quad(&self, q: usize) -> &DMat {
        &self.materials[self.material_at_quad(q)]
    }

    /// Assembled operator on the free unknowns.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.system.matrix
    }

    /// Nodal load `∫ b · φ_i` of a body force (by the element quadrature).
    pub fn body_force_load(&self, b: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim;
        let values = g.sample_quad(d, b);
        self.load_from_quad_values(&values)
    }

    /// Nodal load from body-force values given at the quadrature points.
    pub fn load_from_quad_values(&self, values: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim;
        let refs = reference_points(d);
        let nq = g.quad_per_element();
        let w = g.quad_weight();
        let mut out = vec![0.0; g.n_nodes() * d];
        for e in 0..g.n_elements() {
            let nodes = g.element_nodes(e);
            for (q, r) in refs.iter().enumerate() {
                let bq = &values[(e * nq + q) * d..(e * nq + q + 1) * d];
                for c in 0..g.corners() {
                    let mut n = 1.0;
                    for a in 0..d {
                        n *= if (c >> a) & 1 == 1 { r[a] } else { 1.0 - r[a] };
                    }
                    for k in 0..d {
                        out[nodes[c] * d + k] += w * n * bq[k];
                    }
                }
            }
        }
        out
    }

    /// Stress `ℂ(strain − plastic)` at every quadrature point.
    pub fn stress_from(&self, strain: &[f64], plastic: &[f64]) -> Vec<f64> {
        let s = self.strain_dim();
        let mut out = vec![0.0; strain.len()];
        let mut diff = vec![0.0; s];
        for q in 0..self.grid.n_quad() {
            let c = self.stiffness_at_quad(q);
            for k in 0..s {
                diff[k] = strain[q * s + k] - plastic.get(q * s + k).copied().unwrap_or(0.0);
            }
            c.matvec_into(&diff, &mut out[q * s..(q + 1) * s]);
        }
        out
    }

    /// Solves `−div ℂ(ε(∇u) − plastic) = load` with the grid's boundary
    /// conditions. `plastic` is a quadrature field of Mandel strains (empty
    /// means zero).
    pub fn solve(&self, load: &[f64], plastic: &[f64]) -> Result<ElasticState> {
        let g = &self.grid;
        let s = self.strain_dim();
        if load.len() != g.n_nodes() * g.dim {
            return Err(Error::GridMismatch {
                expected: g.n_nodes() * g.dim,
                found: load.len(),
            });
        }
        if !plastic.is_empty() && plastic.len() != g.n_quad() * s {
            return Err(Error::GridMismatch {
                expected: g.n_quad() * s,
                found: plastic.len(),
            });
        }
        let mut rhs = load.to_vec();
        if !plastic.is_empty() && plastic.iter().any(|v| *v != 0.0) {
            let zeros = vec![0.0; plastic.len()];
            let prestress = self.stress_from(plastic, &zeros);
            let extra = self.system.op.apply_transpose(g, &prestress);
            for (r, e) in rhs.iter_mut().zip(extra) {
                *r += e;
            }
        }
        let u = self.system.solve(g, &rhs)?;
        let strain = self.system.op.apply(g, &u);
        let stress = self.stress_from(&strain, plastic);
        Ok(ElasticState { u, strain, stress })
    }

    /// `‖P(div σ + load)‖` relative to the load and to the sum of element
    /// contribution magnitudes, over the free unknowns `P`.
    pub fn equilibrium_residual(&self, stress: &[f64], load: &[f64]) -> f64 {
        let div = divergence(&self.grid, stress);
        let r: Vec<f64> = div.iter().zip(load).map(|(a, b)| a + b).collect();
        let rr = self.system.dofs.restrict(&r);
        let mag = self.system.op.accumulate_transpose(&self.grid, stress, true);
        let scale = norm(&self.system.dofs.restrict(load)).max(norm(&self.system.dofs.restrict(&mag)));
        if scale == 0.0 {
            norm(&rr)
        } else {
            norm(&rr) / scale
        }
    }
}

/// Solution of one periodic cell problem.
#[derive(Debug, Clone)]
pub struct CellSolution {
    /// Zero-mean periodic corrector, nodal.
    pub corrector: Vec<f64>,
    /// `E + ε(υ)` per quadrature point.
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
    pub mean_stress: Vec<f64>,
    /// Relative residual of the first-order optimality condition.
    pub residual: f64,
}

/// Minimizes `∫ ℂ(E + ε(υ)) : (E + ε(υ))` over zero-mean periodic `υ`.
pub fn cell_corrector(sys: &ElasticitySystem, mean_strain: &[f64]) -> Result<CellSolution> {
    let g = sys.grid();
    if !g.is_periodic() {
        return Err(Error::Precondition("cell problems need a fully periodic grid".into()));
    }
    let s = sys.strain_dim();
    if mean_strain.len() != s {
        return Err(Error::GridMismatch {
            expected: s,
            found: mean_strain.len(),
        });
    }
    let minus_e: Vec<f64> = (0..g.n_quad()).flat_map(|_| mean_strain.iter().map(|v| -v)).collect();
    let zero_load = vec![0.0; g.n_nodes() * g.dim()];
    let st = sys.solve(&zero_load, &minus_e)?;
    let residual = sys.equilibrium_residual(&st.stress, &zero_load);
    let mean_stress = quad_mean(&st.stress, s);
    Ok(CellSolution {
        corrector: st.u,
        strain: st.strain.iter().zip(mean_strain.iter().cycle()).map(|(a, e)| a + e).collect(),
        stress: st.stress,
        mean_stress,
        residual,
    })
}

/// Effective stiffness of a periodic cell: column `k` is the mean stress
/// for the unit Mandel strain `e_k`.
pub fn effective_stiffness(sys: &ElasticitySystem) -> Result<(DMat, Vec<CellSolution>)> {
    let s = sys.strain_dim();
    let mut c = DMat::zeros(s, s);
    let mut sols = Vec::with_capacity(s);
    for k in 0..s {
        let mut e = vec![0.0; s];
        e[k] = 1.0;
        let sol = cell_corrector(sys, &e)?;
        for i in 0..s {
            c[(i, k)] = sol.mean_stress[i];
        }
        sols.push(sol);
    }
    Ok((c, sols))
}

/// Volume averages `(⟨ℂ⟩, ⟨ℂ⁻¹⟩⁻¹)`: the Voigt and Reuss bounds.
pub fn voigt_reuss(sys: &ElasticitySystem) -> (DMat, DMat) {
    let s = sys.strain_dim();
    let n = sys.element_material().len() as f64;
    let mut counts = vec![0usize; sys.materials().len()];
    for &m in sys.element_material() {
        counts[m] += 1;
    }
    let mut voigt = DMat::zeros(s, s);
    let mut compl = DMat::zeros(s, s);
    for (m, c) in sys.materials().iter().enumerate() {
        let f = counts[m] as f64 / n;
        if f > 0.0 {
            voigt = voigt.add(&c.scaled(f));
            compl = compl.add(&c.inverse().expect("stiffness is positive definite").scaled(f));
        }
    }
    let reuss = compl.inverse().expect("mean compliance is positive definite");
    (voigt, reuss)
}

/// `a ≤ b` in the quadratic-form order, up to `tol` (relative to `|b|`).
pub fn loewner_le(a: &DMat, b: &DMat, tol: f64) -> bool {
    let (lo, _) = b.sub(a).sym_part().min_max_eigen();
    lo >= -tol * b.max_abs().max(1.0)
}

/// Orthogonal splitting of a vector field on a periodic cell.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub mean: Vec<f64>,
    /// Gradient of `potential_of`, per quadrature point.
    pub potential: Vec<f64>,
    pub solenoidal: Vec<f64>,
    /// Zero-mean periodic scalar whose gradient is `potential`.
    pub potential_of: Vec<f64>,
}

/// Splits a quadrature field `v: Ω → ℝᵈ` into its mean, the gradient of a
/// periodic scalar and a discretely divergence-free remainder.
pub fn pot_sol_project(grid: &Grid, v: &[f64]) -> Result<Decomposition> {
    if !grid.is_periodic() {
        return Err(Error::Precondition("potential/solenoidal splitting needs a periodic cell".into()));
    }
    let d = grid.dim();
    if v.len() != grid.n_quad() * d {
        return Err(Error::GridMismatch {
            expected: grid.n_quad() * d,
            found: v.len(),
        });
    }
    let mean = quad_mean(v, d);
    let fluct: Vec<f64> = v.iter().zip(mean.iter().cycle()).map(|(a, m)| a - m).collect();
    let op = ElementOp::new(grid, OpKind::ScalarGrad);
    let rhs = op.apply_transpose(grid, &fluct);
    let lap = Assembled::new(grid, op.clone(), &[DMat::identity(d)], &vec![0; grid.n_elements()])?;
    let phi = if norm(&rhs) == 0.0 {
        vec![0.0; grid.n_nodes()]
    } else {
        lap.solve(grid, &rhs)?
    };
    let potential = op.apply(grid, &phi);
    let solenoidal = fluct.iter().zip(&potential).map(|(a, b)| a - b).collect();
    Ok(Decomposition {
        mean,
        potential,
        solenoidal,
        potential_of: phi,
    })
}

/// Discrete divergence `Σ_q w Gᵀ v_q` of a vector quadrature field, nodal.
pub fn scalar_divergence(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let mut out = ElementOp::new(grid, OpKind::ScalarGrad).apply_transpose(grid, v);
    out.iter_mut().for_each(|x| *x = -*x);
    out
}

/// Empirical constant of `‖∇V‖_p ≤ C ‖ε(V)‖_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct KornReport {
    pub constant: f64,
    pub ratios: Vec<f64>,
    /// Samples whose symmetric gradient vanished.
    pub degenerate: usize,
}

/// Largest `‖∇V‖_p / ‖ε(∇V)‖_p` over the nodal vector fields `samples`
/// (periodic cell).
pub fn korn_check(grid: &Grid, samples: &[Vec<f64>], p: f64) -> Result<KornReport> {
    if !grid.is_periodic() {
        return Err(Error::Precondition("Korn check needs a periodic cell".into()));
    }
    let d = grid.dim();
    let mut ratios = Vec::new();
    let mut degenerate = 0;
    for v in samples {
        if v.len() != grid.n_nodes() * d {
            return Err(Error::GridMismatch {
                expected: grid.n_nodes() * d,
                found: v.len(),
            });
        }
        let full = vector_gradient(grid, v);
        let sym = strain(grid, v);
        let num = quad_norm(grid, &full, d * d, p);
        let den = quad_norm(grid, &sym, sym_dim(d), p);
        if den <= 1e-14 * num.max(1e-300) || den == 0.0 {
            degenerate += 1;
            continue;
        }
        ratios.push(num / den);
    }
    let constant = ratios.iter().copied().fold(0.0, f64::max);
    Ok(KornReport {
        constant,
        ratios,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mandel::isotropic_stiffness;
    use crate::rng::SplitMix64;
    use core::f64::consts::PI;

    fn random_nodal(grid: &Grid, ncomp: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        (0..grid.n_nodes() * ncomp).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn strain_of_affine_and_rigid_fields() {
        let g = Grid::dirichlet_box(2, 4, 1.0).unwrap();
        let a = [0.3, 0.2, 0.2, -0.5];
        let u = g.interpolate(2, &|x| vec![a[0] * x[0] + a[1] * x[1], a[2] * x[0] + a[3] * x[1]]);
        let e = strain(&g, &u);
        let expect = crate::mandel::from_matrix(2, &a);
        for q in 0..g.n_quad() {
            for k in 0..3 {
                assert!((e[q * 3 + k] - expect[k]).abs() < 1e-14);
            }
        }
        let rot = g.interpolate(2, &|x| vec![-x[1], x[0]]);
        assert!(strain(&g, &rot).iter().all(|v| v.abs() < 1e-14));
        let g3 = Grid::dirichlet_box(3, 2, 2.0).unwrap();
        let rot3 = g3.interpolate(3, &|x| vec![x[1] - x[2], -x[0], x[0]]);
        assert!(strain(&g3, &rot3).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn divergence_is_adjoint_of_strain() {
        for g in [
            Grid::dirichlet_box(2, 5, 1.0).unwrap(),
            Grid::periodic_cell(2, 5, 1.0).unwrap(),
            Grid::dirichlet_box(1, 7, 2.0).unwrap(),
            Grid::dirichlet_box(3, 3, 1.0).unwrap(),
        ] {
            let d = g.dim();
            let s = sym_dim(d);
            let phi = random_nodal(&g, d, 1);
            let mut rng = SplitMix64::new(2);
            let sigma: Vec<f64> = (0..g.n_quad() * s).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let lhs = quad_inner(&g, &sigma, &strain(&g, &phi));
            let rhs = -dot(&divergence(&g, &sigma), &phi);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn divergence_matches_dense_transpose() {
        let g = Grid::dirichlet_box(2, 5, 1.0).unwrap();
        let n = g.n_nodes() * 2;
        let m = g.n_quad() * 3;
        // dense strain matrix column by column
        let mut b = DMat::zeros(m, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = strain(&g, &e);
            for i in 0..m {
                b[(i, j)] = col[i];
            }
        }
        let mut rng = SplitMix64::new(4);
        let sigma: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let oracle = b.tmatvec(&sigma);
        let div = divergence(&g, &sigma);
        for i in 0..n {
            assert!((div[i] + g.quad_weight() * oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = Grid::dirichlet_box(2, 6, 1.0).unwrap();
        let sys = ElasticitySystem::homogeneous(g.clone(), isotropic_stiffness(2, 1.0, 1.0)).unwrap();
        let st = sys.solve(&vec![0.0; g.n_nodes() * 2], &[]).unwrap();
        assert!(st.u.iter().chain(&st.stress).all(|v| *v == 0.0));
        assert!(sys.matrix().relative_asymmetry() <= 1e-12);
    }

    #[test]
    fn stress_free_plastic_strain() {
        let g = Grid::dirichlet_box(2, 8, 1.0).unwrap();
        let sys = ElasticitySystem::homogeneous(g.clone(), isotropic_stiffness(2, 2.0, 1.0)).unwrap();
        let ustar = g.interpolate(2, &|x| {
            let bump = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
            vec![bump, 2.0 * bump]
        });
        let bz = strain(&g, &ustar);
        let st = sys.solve(&vec![0.0; g.n_nodes() * 2], &bz).unwrap();
        assert!(st.stress.iter().all(|v| v.abs() < 1e-10));
        for (a, b) in st.u.iter().zip(&ustar) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn manufactured_error(n: usize) -> f64 {
        let (lam, mu) = (1.5, 1.0);
        let g = Grid::dirichlet_box(2, n, 1.0).unwrap();
        let sys = ElasticitySystem::homogeneous(g.clone(), isotropic_stiffness(2, lam, mu)).unwrap();
        // u₁ = u₂ = sin πx sin πy
        let b = |x: &[f64]| {
            let s = (PI * x[0]).sin() * (PI * x[1]).sin();
            let c = (PI * x[0]).cos() * (PI * x[1]).cos();
            let comp = -(mu * (-2.0 * PI * PI * s) + (lam + mu) * (-PI * PI * s + PI * PI * c));
            vec![comp, comp]
        };
        let load = sys.body_force_load(&b);
        let st = sys.solve(&load, &[]).unwrap();
        assert!(sys.equilibrium_residual(&st.stress, &load) < 1e-10);
        // L² error by quadrature of the interpolated discrete solution
        let exact = g.sample_quad(2, &|x| {
            let s = (PI * x[0]).sin() * (PI * x[1]).sin();
            vec![s, s]
        });
        let uq = nodal_to_quad(&g, &st.u, 2);
        let diff: Vec<f64> = uq.iter().zip(&exact).map(|(a, b)| a - b).collect();
        quad_norm(&g, &diff, 2, 2.0)
    }

    #[test]
    fn manufactured_solution_converges_quadratically() {
        let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| manufactured_error(n)).collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 1.8, "{errs:?}");
        }
    }

    #[test]
    fn homogeneous_cell_has_zero_corrector() {
        let g = Grid::periodic_cell(2, 6, 1.0).unwrap();
        let c = isotropic_stiffness(2, 1.0, 0.7);
        let sys = ElasticitySystem::homogeneous(g, c.clone()).unwrap();
        let (eff, sols) = effective_stiffness(&sys).unwrap();
        assert!(sols.iter().all(|s| s.corrector.iter().all(|v| v.abs() < 1e-12)));
        assert!(eff.sub(&c).max_abs() < 1e-12);
    }

    #[test]
    fn laminate_harmonic_mean() {
        let g = Grid::periodic_cell(1, 8, 1.0).unwrap();
        let mats = vec![DMat::scalar(1, 1.0), DMat::scalar(1, 2.0)];
        let sys = ElasticitySystem::assemble(g, mats, vec![0, 1, 1, 0, 0, 1, 0, 1]).unwrap();
        let (eff, sols) = effective_stiffness(&sys).unwrap();
        assert!((eff[(0, 0)] - 4.0 / 3.0).abs() < 1e-10);
        assert!(sols[0].residual < 1e-10);
        let mean: f64 = sols[0].corrector.iter().sum();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn checkerboard_within_voigt_reuss() {
        let g = Grid::periodic_cell(2, 8, 1.0).unwrap();
        let mats = vec![isotropic_stiffness(2, 1.0, 1.0), isotropic_stiffness(2, 4.0, 3.0)];
        let mut rng = SplitMix64::new(12);
        let elem: Vec<usize> = (0..g.n_elements()).map(|_| (rng.next_u64() % 2) as usize).collect();
        let sys = ElasticitySystem::assemble(g, mats, elem).unwrap();
        let (eff, _) = effective_stiffness(&sys).unwrap();
        let (voigt, reuss) = voigt_reuss(&sys);
        assert!(eff.asymmetry() < 1e-10);
        assert!(loewner_le(&reuss, &eff, 1e-10) && loewner_le(&eff, &voigt, 1e-10));
    }

    #[test]
    fn decomposition_parts() {
        let g = Grid::periodic_cell(2, 6, 1.0).unwrap();
        // constant field
        let c = vec![0.4, -1.0].repeat(g.n_quad());
        let dec = pot_sol_project(&g, &c).unwrap();
        assert!(dec.potential.iter().chain(&dec.solenoidal).all(|v| v.abs() < 1e-12));
        // gradient of a periodic scalar
        let phi = random_nodal(&g, 1, 3);
        let grad = scalar_gradient(&g, &phi);
        let dec = pot_sol_project(&g, &grad).unwrap();
        assert!(dec.mean.iter().all(|v| v.abs() < 1e-12));
        for (a, b) in dec.potential.iter().zip(&grad) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(dec.solenoidal.iter().all(|v| v.abs() < 1e-10));
        // random field
        let mut rng = SplitMix64::new(5);
        let v: Vec<f64> = (0..g.n_quad() * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let dec = pot_sol_project(&g, &v).unwrap();
        let mean_field: Vec<f64> = dec.mean.iter().cycle().take(v.len()).copied().collect();
        let scale = quad_inner(&g, &v, &v);
        for (x, y) in [(&mean_field, &dec.potential), (&mean_field, &dec.solenoidal), (&dec.potential, &dec.solenoidal)] {
            assert!(quad_inner(&g, x, y).abs() <= 1e-10 * scale);
        }
        for i in 0..v.len() {
            assert!((mean_field[i] + dec.potential[i] + dec.solenoidal[i] - v[i]).abs() < 1e-10);
        }
        assert!(norm(&scalar_divergence(&g, &dec.solenoidal)) < 1e-10);
    }

    #[test]
    fn korn_trivial_cases() {
        let g = Grid::periodic_cell(1, 8, 1.0).unwrap();
        let v = random_nodal(&g, 1, 9);
        assert!((korn_check(&g, &[v], 2.0).unwrap().constant - 1.0).abs() < 1e-12);
        let g2 = Grid::periodic_cell(2, 8, 1.0).unwrap();
        // periodic gradients of x-independent shear: symmetric part carries half
        let v = g2.interpolate(2, &|x| vec![(2.0 * PI * x[1]).sin(), 0.0]);
        let r = korn_check(&g2, &[v], 2.0).unwrap();
        assert!((r.constant - SQRT_2).abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn resolution_check() {
        let g = Grid::dirichlet_box(2, 64, 1.0).unwrap();
        assert!(g.check_resolution(1.0 / 16.0, 1.0).is_ok());
        assert!(g.check_resolution(1.0 / 128.0, 1.0).is_err());
        assert!(g.check_resolution(1.0 / 24.0, 1.0).is_err());
    }
}
