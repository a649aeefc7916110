use alloc::vec;
use alloc::vec::Vec;

use super::optim::{golden_max, numeric_gradient, projected_ascent, Ascent};
use super::{ConvexFn, LawKind, MonotoneLaw, NortonHoffParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::{hash_cell, SplitMix64};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

/// Tolerance below which `f_g(v, v*) − ⟨v*, v⟩` counts as zero.
pub const FITZPATRICK_TOL: f64 = 1e-6;

const RADIAL_SCAN: usize = 384;

fn starts(dim: usize, anchor: &[f64], radius: f64, seed_src: &[f64]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dim], anchor.to_vec()];
    let a = norm(anchor);
    if a > 0.0 {
        out.push(anchor.iter().map(|x| 0.5 * radius * x / a).collect());
    }
    let seed = seed_src
        .iter()
        .fold(0x5eed_u64, |h, x| hash_cell(h, [x.to_bits() as i64, 0, 0]));
    let mut rng = SplitMix64::new(seed);
    for _ in 0..3 {
        let mut p = vec![0.0; dim];
        rng.in_ball(0.5 * radius, &mut p);
        out.push(p);
    }
    out
}

fn best_ascent(
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    starts: &[Vec<f64>],
    radius: f64,
) -> Ascent {
    let mut best: Option<Ascent> = None;
    for s in starts {
        let r = projected_ascent(f, grad, s, radius, 3000);
        if best.as_ref().is_none_or(|b| r.value > b.value) {
            best = Some(r);
        }
    }
    best.expect("at least one start")
}

/// Outward slope of `f` at a boundary maximizer; positive means the supremum
/// is still growing at the radius.
fn growing_at_boundary(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> bool {
    let r = norm(x);
    if r == 0.0 {
        return false;
    }
    let out: Vec<f64> = x.iter().map(|v| v * (1.0 + 1e-4)).collect();
    let inn: Vec<f64> = x.iter().map(|v| v * (1.0 - 1e-4)).collect();
    let fo = f(&out);
    let fi = f(&inn);
    fo - fi > 1e-9 * (1.0 + fo.abs())
}

/// Numeric Legendre-Fenchel conjugate `φ*(v*) = sup_v ⟨v*, v⟩ − φ(v)` over
/// `|v| <= search_radius` by multi-start projected ascent.
pub fn fenchel_conjugate(phi: &ConvexFn, v_star: &[f64], search_radius: f64) -> Result<f64> {
    conjugate_argmax(phi, v_star, search_radius).map(|a| a.value)
}

fn conjugate_argmax(phi: &ConvexFn, v_star: &[f64], search_radius: f64) -> Result<Ascent> {
    let radius = search_radius.min(phi.domain_radius);
    let f = |v: &[f64]| dot(v_star, v) - phi.value(v);
    let grad = |v: &[f64]| {
        let g = phi.subgradient(v);
        v_star.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<f64>>()
    };
    let st = starts(phi.dim, v_star, radius, v_star);
    let best = best_ascent(&f, &grad, &st, radius);
    if best.on_boundary && search_radius < phi.domain_radius && growing_at_boundary(&f, &best.x) {
        return Err(Error::Unbounded {
            radius,
            value: best.value,
        });
    }
    Ok(best)
}

/// Numeric biconjugate `φ**(v) = sup_{v*} ⟨v*, v⟩ − φ*(v*)` over
/// `|v*| <= dual_radius`, with `φ*` evaluated over `|v| <= primal_radius`.
/// The outer ascent uses the inner maximizer as the gradient of `φ*`.
pub fn biconjugate(phi: &ConvexFn, v: &[f64], primal_radius: f64, dual_radius: f64) -> Result<f64> {
    let inner = |s: &[f64]| conjugate_argmax(phi, s, primal_radius);
    let f = |s: &[f64]| inner(s).map_or(f64::NEG_INFINITY, |a| dot(s, v) - a.value);
    let grad = |s: &[f64]| match inner(s) {
        Ok(a) => v.iter().zip(&a.x).map(|(x, y)| x - y).collect(),
        Err(_) => vec![0.0; v.len()],
    };
    let mut start = phi.subgradient(v);
    super::optim::project_ball(&mut start, dual_radius);
    let best = best_ascent(&f, &grad, &[start, vec![0.0; v.len()]], dual_radius);
    if !best.value.is_finite() {
        return Err(Error::Unbounded {
            radius: primal_radius,
            value: best.value,
        });
    }
    Ok(best.value)
}

/// Radius beyond which the Fitzpatrick supremum cannot be attained.
pub fn default_search_radius(law: &MonotoneLaw, v: &[f64], v_star: &[f64]) -> f64 {
    let nv = norm(v);
    let ns = norm(v_star);
    match &law.kind {
        LawKind::NortonHoff(nh) => {
            // For ρ >= max(2|v|, σ_y + (2|v*|)^{1/r}) the radial objective is <= 0.
            let tail = nh.yield_stress + (2.0 * ns).powf(1.0 / nh.exponent);
            1.05 * (2.0 * nv).max(tail) + 1e-9
        }
        _ => 4.0 * (1.0 + nv + ns),
    }
}

/// Fitzpatrick function `f_g(v, v*) = sup { ⟨v*, v₀⟩ − ⟨v₀*, v₀ − v⟩ : v₀* ∈ g(v₀) }`
/// over graph points with `|v₀| <= search_radius`.
///
/// Norton-Hoff is reduced to a one-dimensional search in `ρ = |v₀|`: for a
/// fixed radius the supremum over directions `e` of the linear form
/// `⟨ρv* + γ(ρ)v, e⟩` is its norm. Linear laws use the closed form
/// `¼ cᵀ M_s⁺ c` with `c = v* + Mᵀv`.
pub fn fitzpatrick(law: &MonotoneLaw, v: &[f64], v_star: &[f64], search_radius: f64) -> Result<f64> {
    match &law.kind {
        LawKind::NortonHoff(nh) => fitzpatrick_norton_hoff(nh, v, v_star, search_radius),
        LawKind::LinearPsd(m) => {
            let c: Vec<f64> = {
                let mt_v = m.tmatvec(v);
                v_star.iter().zip(&mt_v).map(|(a, b)| a + b).collect()
            };
            let (vals, vecs) = m.sym_part().sym_eigen();
            let lam_max = vals.iter().fold(0.0_f64, |a, b| a.max(*b));
            let cn = norm(&c);
            let mut total = 0.0;
            for (k, &lam) in vals.iter().enumerate() {
                let ck: f64 = (0..c.len()).map(|i| vecs[(i, k)] * c[i]).sum();
                if lam <= 1e-12 * lam_max.max(1e-300) {
                    if ck.abs() > 1e-10 * (1.0 + cn) {
                        return Err(Error::Unbounded {
                            radius: f64::INFINITY,
                            value: f64::INFINITY,
                        });
                    }
                } else {
                    total += ck * ck / (4.0 * lam);
                }
            }
            Ok(total)
        }
        LawKind::Subdifferential(phi) => {
            let h = |x: &[f64]| {
                let g = phi.subgradient(x);
                dot(v_star, x) - (0..x.len()).map(|i| g[i] * (x[i] - v[i])).sum::<f64>()
            };
            let grad = |x: &[f64]| numeric_gradient(&h, x);
            let mut st = starts(phi.dim, v_star, search_radius, v);
            // the graph point over v itself gives the lower bound ⟨v*, v⟩
            st.push(v.to_vec());
            let best = best_ascent(&h, &grad, &st, search_radius);
            if best.on_boundary && growing_at_boundary(&h, &best.x) {
                return Err(Error::Unbounded {
                    radius: search_radius,
                    value: best.value,
                });
            }
            Ok(best.value)
        }
    }
}

fn fitzpatrick_norton_hoff(nh: &NortonHoffParams, v: &[f64], v_star: &[f64], radius: f64) -> Result<f64> {
    let objective = |rho: f64| {
        let gamma = nh.magnitude(rho);
        let a: f64 = v
            .iter()
            .zip(v_star)
            .map(|(vi, si)| {
                let c = rho * si + gamma * vi;
                c * c
            })
            .sum();
        a.sqrt() - rho * gamma
    };
    let n = RADIAL_SCAN;
    let mut grid: Vec<f64> = (0..=n).map(|k| radius * k as f64 / n as f64).collect();
    for extra in [nh.yield_stress, norm(v)] {
        if extra < radius {
            grid.push(extra);
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let vals: Vec<f64> = grid.iter().map(|&r| objective(r)).collect();
    let mut best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best_rho = grid[vals.iter().position(|&x| x == best).unwrap()];
    // refine the three largest local maxima of the scan
    let mut peaks: Vec<usize> = (0..grid.len())
        .filter(|&k| {
            let left = k == 0 || vals[k] >= vals[k - 1];
            let right = k + 1 == grid.len() || vals[k] >= vals[k + 1];
            left && right
        })
        .collect();
    peaks.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    for &k in peaks.iter().take(3) {
        let lo = grid[k.saturating_sub(1)];
        let hi = grid[(k + 1).min(grid.len() - 1)];
        let (rho, val) = golden_max(&objective, lo, hi, 200);
        if val > best {
            best = val;
            best_rho = rho;
        }
    }
    if best_rho >= radius * (1.0 - 1e-9) && objective(radius) > objective(radius * (1.0 - 1e-4)) + 1e-12 {
        return Err(Error::Unbounded { radius, value: best });
    }
    Ok(best)
}

/// `max(f_g(v, v*) − ⟨v*, v⟩, 0)` with the default search radius: the
/// inclusion residual of `v* ∈ g(v)`.
pub fn fitzpatrick_gap(law: &MonotoneLaw, v: &[f64], v_star: &[f64]) -> Result<f64> {
    let radius = default_search_radius(law, v, v_star);
    let f = fitzpatrick(law, v, v_star, radius)?;
    Ok((f - dot(v_star, v)).max(0.0))
}
