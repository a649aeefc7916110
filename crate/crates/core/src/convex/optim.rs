//! Small-dimensional optimizers used by the conjugate, Fitzpatrick and
//! resolvent evaluators.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, DMat};
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

pub(crate) struct Ascent {
    pub x: Vec<f64>,
    pub value: f64,
    pub on_boundary: bool,
}

pub(crate) fn project_ball(x: &mut [f64], radius: f64) {
    let n = norm(x);
    if n > radius {
        let s = radius / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Central-difference gradient.
pub(crate) fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut xp = x.to_vec();
    let scale = 1.0 + norm(x);
    let h = 1e-6 * scale;
    (0..x.len())
        .map(|i| {
            let xi = xp[i];
            xp[i] = xi + h;
            let fp = f(&xp);
            xp[i] = xi - h;
            let fm = f(&xp);
            xp[i] = xi;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Projected gradient ascent on the closed ball of `radius` with
/// Barzilai-Borwein step guesses and Armijo backtracking.
pub(crate) fn projected_ascent(
    f: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    radius: f64,
    max_iter: usize,
) -> Ascent {
    let mut x = x0.to_vec();
    project_ball(&mut x, radius);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut step = 1.0;
    let mut stall = 0;
    for _ in 0..max_iter {
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + t * b).collect();
            project_ball(&mut cand, radius);
            let fc = f(&cand);
            let moved: f64 = dot(&g, &cand) - dot(&g, &x);
            if fc.is_finite() && fc >= fx + 1e-4 * moved && fc >= fx {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            break;
        };
        let gn = grad(&xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        step = if sy < 0.0 {
            (ss / -sy).clamp(1e-12, 1e12)
        } else {
            (4.0 * t).min(1e12)
        };
        let improvement = fxn - fx;
        let small_move = ss.sqrt() <= 1e-15 * (1.0 + norm(&xn));
        x = xn;
        fx = fxn;
        g = gn;
        if small_move || improvement <= 1e-17 * (1.0 + fx.abs()) {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
    }
    let on_boundary = norm(&x) >= radius * (1.0 - 1e-9);
    Ascent {
        x,
        value: fx,
        on_boundary,
    }
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub(crate) fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Damped Newton minimization of a smooth strictly convex function.
/// Stops when `|grad| <= tol`.
pub(crate) fn newton_minimize(
    value: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> Vec<f64>,
    hess: &dyn Fn(&[f64]) -> DMat,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut fx = value(&x);
    for _ in 0..max_iter {
        let g = grad(&x);
        let gn = norm(&g);
        if gn <= tol {
            return Ok(x);
        }
        let hm = hess(&x);
        let mut dir = match hm.solve(&g) {
            Some(d) => d.iter().map(|v| -v).collect::<Vec<f64>>(),
            None => g.iter().map(|v| -v).collect(),
        };
        if dot(&dir, &g) >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
        }
        let slope = dot(&dir, &g);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let fc = value(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * t * slope {
                x = cand;
                fx = fc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // Line search exhausted: accept if the gradient is at rounding level.
            let g = grad(&x);
            if norm(&g) <= tol.max(1e-9 * (1.0 + fx.abs())) {
                return Ok(x);
            }
            return Err(Error::NonConvergence {
                what: "damped Newton line search",
                iterations: 0,
                residual: norm(&g),
            });
        }
    }
    let g = grad(&x);
    if norm(&g) <= tol * 10.0 {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        what: "damped Newton",
        iterations: max_iter,
        residual: norm(&g),
    })
}

/// Safeguarded Newton-bisection root of an increasing scalar function on
/// `[lo, hi]` with `f(lo) <= 0 <= f(hi)`.
pub(crate) fn increasing_root(
    f: &dyn Fn(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    abs_tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx.abs() <= abs_tol {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if dfx > 0.0 { x - fx / dfx } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-16 * (1.0 + hi.abs()) {
            let (fx, _) = f(x);
            if fx.abs() <= abs_tol * 1e3 {
                return Ok(x);
            }
            break;
        }
    }
    let (fx, _) = f(x);
    if fx.abs() <= abs_tol {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        what: "scalar root find",
        iterations: max_iter,
        residual: fx.abs(),
    })
}
