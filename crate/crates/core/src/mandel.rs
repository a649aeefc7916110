//! Symmetric `d×d` tensors as vectors in an orthonormal (Mandel) basis:
//! diagonal entries first, then off-diagonals scaled by `√2`, so the
//! Euclidean product of two vectors is the Frobenius product of the tensors.
//! Fourth-order tensors acting on `Sᵈ` become symmetric `s×s` matrices with
//! `s = d(d+1)/2`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::SQRT_2;

use crate::linalg::DMat;

pub const fn sym_dim(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Index pair `(i, j)` of Mandel component `k`.
pub fn index_pair(d: usize, k: usize) -> (usize, usize) {
    match (d, k) {
        (_, k) if k < d => (k, k),
        (2, 2) => (0, 1),
        (3, 3) => (1, 2),
        (3, 4) => (0, 2),
        (3, 5) => (0, 1),
        _ => panic!("no Mandel component {k} in dimension {d}"),
    }
}

fn weight(d: usize, k: usize) -> f64 {
    if k < d {
        1.0
    } else {
        SQRT_2
    }
}

/// Mandel vector of the symmetric part of a row-major `d×d` matrix.
pub fn from_matrix(d: usize, m: &[f64]) -> Vec<f64> {
    (0..sym_dim(d))
        .map(|k| {
            let (i, j) = index_pair(d, k);
            weight(d, k) * 0.5 * (m[i * d + j] + m[j * d + i])
        })
        .collect()
}

pub fn to_matrix(d: usize, v: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for (k, vk) in v.iter().enumerate().take(sym_dim(d)) {
        let (i, j) = index_pair(d, k);
        let val = vk / weight(d, k);
        m[i * d + j] = val;
        m[j * d + i] = val;
    }
    m
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut v = vec![0.0; sym_dim(d)];
    v[..d].iter_mut().for_each(|x| *x = 1.0);
    v
}

/// `ℂ = λ I⊗I + 2μ 𝕀` in Mandel form. In one dimension this is `λ + 2μ`.
pub fn isotropic_stiffness(d: usize, lambda: f64, mu: f64) -> DMat {
    let s = sym_dim(d);
    let id = identity(d);
    DMat::from_fn(s, s, |a, b| {
        lambda * id[a] * id[b] + if a == b { 2.0 * mu } else { 0.0 }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn frobenius_product_is_preserved() {
        let a = [1.0, 2.0, 0.5, 3.0, -1.0, 4.0, 0.0, 2.0, 1.5];
        let b = [0.3, -1.0, 2.0, -1.0, 0.7, 1.0, 2.0, 1.0, -0.4];
        let sa = from_matrix(3, &a);
        let sb = from_matrix(3, &b);
        let ma = to_matrix(3, &sa);
        let mb = to_matrix(3, &sb);
        let frob: f64 = ma.iter().zip(&mb).map(|(x, y)| x * y).sum();
        assert!((dot(&sa, &sb) - frob).abs() < 1e-13);
    }

    #[test]
    fn isotropic_acts_on_identity_as_bulk() {
        let c = isotropic_stiffness(2, 1.5, 0.5);
        let out = c.matvec(&identity(2));
        // (2λ + 2μ) I in 2D
        assert!((out[0] - 4.0).abs() < 1e-14 && (out[1] - 4.0).abs() < 1e-14);
        assert_eq!(out[2], 0.0);
    }
}
