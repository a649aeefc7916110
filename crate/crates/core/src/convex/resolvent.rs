use alloc::vec::Vec;

use super::optim::{increasing_root, newton_minimize};
use super::{ConvexFn, ConvexKind, LawKind, MonotoneLaw};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, DMat};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

const MAX_ROOT_ITERS: usize = 200;

/// `R_h(w) = (I + h g)⁻¹ w`, the unique `v` with `v + h g(v) ∋ w`.
pub fn resolvent(law: &MonotoneLaw, h: f64, w: &[f64]) -> Result<Vec<f64>> {
    if !(h >= 0.0) {
        return Err(Error::Precondition(alloc::format!("resolvent step must be positive, got {h}")));
    }
    if h == 0.0 {
        return Ok(w.to_vec());
    }
    match &law.kind {
        LawKind::NortonHoff(nh) => {
            let r = norm(w);
            if r <= nh.yield_stress {
                return Ok(w.to_vec());
            }
            // s + h [s − σ_y]^r = |w| in the excess t = s − σ_y
            let excess = r - nh.yield_stress;
            let f = |t: f64| {
                let t = t.max(0.0);
                let val = t + h * t.powf(nh.exponent) - excess;
                let der = 1.0
                    + if t > 0.0 {
                        h * nh.exponent * t.powf(nh.exponent - 1.0)
                    } else {
                        f64::INFINITY
                    };
                (val, der)
            };
            let t = increasing_root(&f, 0.0, excess, 1e-14 * (1.0 + r), MAX_ROOT_ITERS)?;
            let s = nh.yield_stress + t;
            Ok(w.iter().map(|x| x * s / r).collect())
        }
        LawKind::LinearPsd(m) => {
            let a = DMat::identity(law.dim).add(&m.scaled(h));
            a.solve(w).ok_or(Error::NonConvergence {
                what: "linear resolvent",
                iterations: 1,
                residual: f64::INFINITY,
            })
        }
        LawKind::Subdifferential(phi) => prox(phi, h, w),
    }
}

/// `argmin φ(v) + |v − w|²/(2h)`
fn prox(phi: &ConvexFn, h: f64, w: &[f64]) -> Result<Vec<f64>> {
    match &phi.kind {
        ConvexKind::Quadratic(m) => {
            let a = DMat::identity(phi.dim).add(&m.sym_part().scaled(h));
            a.solve(w).ok_or(Error::NonConvergence {
                what: "quadratic prox",
                iterations: 1,
                residual: f64::INFINITY,
            })
        }
        ConvexKind::Power { exponent } => {
            let r = norm(w);
            if r == 0.0 {
                return Ok(w.to_vec());
            }
            let e = *exponent;
            let f = |s: f64| {
                let s = s.max(0.0);
                (s + h * s.powf(e - 1.0) - r, 1.0 + h * (e - 1.0) * s.powf(e - 2.0))
            };
            let s = increasing_root(&f, 0.0, r, 1e-14 * (1.0 + r), MAX_ROOT_ITERS)?;
            Ok(w.iter().map(|x| x * s / r).collect())
        }
        ConvexKind::Norm => {
            let r = norm(w);
            if r <= h {
                Ok(alloc::vec![0.0; w.len()])
            } else {
                Ok(w.iter().map(|x| x * (r - h) / r).collect())
            }
        }
        ConvexKind::CoshSum => w
            .iter()
            .map(|&wi| {
                let f = |s: f64| (s + h * s.sinh() - wi, 1.0 + h * s.cosh());
                let bound = wi.abs();
                increasing_root(&f, -bound, bound, 1e-14 * (1.0 + bound), MAX_ROOT_ITERS)
            })
            .collect(),
        ConvexKind::Custom(_) => {
            if !phi.smooth {
                return Err(Error::Precondition("prox of a custom function requires smoothness".into()));
            }
            let value = |v: &[f64]| {
                let d: f64 = v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
                phi.value(v) + d / (2.0 * h)
            };
            let grad = |v: &[f64]| {
                let g = phi.subgradient(v);
                g.iter().zip(v.iter().zip(w)).map(|(gi, (a, b))| gi + (a - b) / h).collect()
            };
            let hess = |v: &[f64]| phi.hessian(v).add(&DMat::scalar(phi.dim, 1.0 / h));
            // central-difference gradients are only accurate to about 1e-9
            newton_minimize(&value, &grad, &hess, w, 1e-8 * (1.0 + norm(w)), 200)
        }
    }
}

/// Norton-Hoff with a general metric. Writing `g(Σ) = λΣ` with
/// `λ = γ(|Σ|)/|Σ|` gives `Σ = (I + λH)⁻¹c`; `λ ↦ λ|Σ(λ)| − γ(|Σ(λ)|)` is
/// increasing, so its root is bracketed and bisected in the eigenbasis of `H`.
fn radial_metric_resolvent(nh: &super::NortonHoffParams, metric: &DMat, c: &[f64]) -> Vec<f64> {
    let (vals, vecs) = metric.sym_part().sym_eigen();
    let n = c.len();
    let cp: Vec<f64> = (0..n).map(|k| (0..n).map(|i| vecs[(i, k)] * c[i]).sum()).collect();
    let sigma_norm = |lam: f64| {
        cp.iter()
            .zip(&vals)
            .map(|(ci, hi)| {
                let v = ci / (1.0 + lam * hi.max(0.0));
                v * v
            })
            .sum::<f64>()
            .sqrt()
    };
    let phi = |lam: f64| {
        let r = sigma_norm(lam);
        lam * r - nh.magnitude(r)
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while phi(hi) < 0.0 && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    let sp: Vec<f64> = cp.iter().zip(&vals).map(|(ci, hi)| ci / (1.0 + lam * hi.max(0.0))).collect();
    (0..n).map(|i| (0..n).map(|k| vecs[(i, k)] * sp[k]).sum()).collect()
}

/// Solves `Σ + H g(Σ) ∋ c` for a symmetric positive semi-definite metric `H`.
///
/// This is the local problem of an implicit step in which the driving force
/// depends linearly on the unknown increment. With `H = κI` it reduces to
/// [`resolvent`] with step `κ`; otherwise it minimizes the strictly convex
/// `½ΣᵀH⁻¹Σ − ΣᵀH⁻¹c + G(Σ)` where `g = ∂G`.
pub fn resolvent_metric(law: &MonotoneLaw, metric: &DMat, c: &[f64]) -> Result<Vec<f64>> {
    if let Some(kappa) = metric.as_scalar(1e-14) {
        return resolvent(law, kappa.max(0.0), c);
    }
    match &law.kind {
        LawKind::LinearPsd(m) => {
            let a = DMat::identity(law.dim).add(&metric.mul(m));
            a.solve(c).ok_or(Error::NonConvergence {
                what: "linear metric resolvent",
                iterations: 1,
                residual: f64::INFINITY,
            })
        }
        LawKind::NortonHoff(nh) if norm(c) <= nh.yield_stress => Ok(c.to_vec()),
        LawKind::NortonHoff(nh) => Ok(radial_metric_resolvent(nh, metric, c)),
        _ => {
            if let LawKind::Subdifferential(phi) = &law.kind {
                if matches!(phi.kind, ConvexKind::Custom(_)) && !phi.smooth {
                    return Err(Error::Precondition(
                        "metric resolvent of a nonsmooth custom function is not supported".into(),
                    ));
                }
            }
            let inv = metric.inverse().ok_or_else(|| {
                Error::Ellipticity("metric of the local problem is singular".into())
            })?;
            let hinv_c = inv.matvec(c);
            // Norm kink: Σ = 0 solves iff |H⁻¹c| <= 1.
            if let LawKind::Subdifferential(phi) = &law.kind {
                if matches!(phi.kind, ConvexKind::Norm) && norm(&hinv_c) <= 1.0 {
                    return Ok(alloc::vec![0.0; c.len()]);
                }
            }
            let value = |s: &[f64]| 0.5 * inv.quad_form(s) - dot(s, &hinv_c) + law.potential(s).unwrap_or(0.0);
            let grad = |s: &[f64]| {
                let mut g = inv.matvec(s);
                let gs = law.apply(s);
                for i in 0..g.len() {
                    g[i] += gs[i] - hinv_c[i];
                }
                g
            };
            let hess = |s: &[f64]| inv.add(&law.jacobian(s));
            let n = c.len();
            let kappa = (0..n).map(|i| metric[(i, i)]).sum::<f64>() / n as f64;
            let start = resolvent(law, kappa.max(0.0), c)?;
            let tol = 1e-13 * (1.0 + norm(&hinv_c));
            newton_minimize(&value, &grad, &hess, &start, tol, 200)
        }
    }
}
