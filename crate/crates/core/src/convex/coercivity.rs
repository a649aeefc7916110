use alloc::vec;
use alloc::vec::Vec;

use super::MonotoneLaw;
use crate::linalg::{dot, norm};
use crate::rng::SplitMix64;
#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

/// Constants in `(v, v*) >= m + α₁|v*|^q + α₂|v|^p` for `v* ∈ g(v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityCertificate {
    pub alpha1: f64,
    pub alpha2: f64,
    pub m_bound: f64,
}

impl CoercivityCertificate {
    /// Worst violation of the inequality over `points` (negative means it holds).
    pub fn violation(&self, law: &MonotoneLaw, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .map(|v| self.m_bound - slack(law, v, self.alpha1, self.alpha2))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Why no certificate was found.
#[derive(Debug, Clone, PartialEq)]
pub struct Refusal {
    pub reason: &'static str,
    pub smallest_alpha_tried: f64,
}

/// Knobs of the certificate search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateSearch {
    pub cloud_radius: f64,
    pub samples: usize,
    pub seed: u64,
    /// Forces `m` to this value instead of searching it.
    pub fixed_m: Option<f64>,
    pub min_alpha: f64,
}

impl CertificateSearch {
    pub fn new(cloud_radius: f64, samples: usize) -> Self {
        Self {
            cloud_radius,
            samples,
            seed: 0xc0e4_c171,
            fixed_m: None,
            min_alpha: 1e-6,
        }
    }
}

/// `(v, g(v)) − α₁|g(v)|^q − α₂|v|^p`
fn slack(law: &MonotoneLaw, v: &[f64], alpha1: f64, alpha2: f64) -> f64 {
    let g = law.apply(v);
    dot(v, &g) - alpha1 * norm(&g).powf(law.q) - alpha2 * norm(v).powf(law.p)
}

fn cloud(dim: usize, radius: f64, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::new(seed);
    let mut pts = Vec::with_capacity(samples + 64);
    // rays hit the extremes of radial laws that random points undersample
    let rays = 8.min(samples / 4).max(1);
    for _ in 0..rays {
        let mut dir = vec![0.0; dim];
        rng.in_ball(1.0, &mut dir);
        let n = norm(&dir).max(1e-300);
        for k in 1..=8 {
            let r = radius * k as f64 / 8.0;
            pts.push(dir.iter().map(|x| x * r / n).collect());
        }
    }
    for _ in 0..samples {
        let mut p = vec![0.0; dim];
        rng.in_ball(radius, &mut p);
        pts.push(p);
    }
    pts
}

/// Searches coercivity constants on a sampled graph cloud.
///
/// `α₁, α₂` run over powers of two from 1 down to `min_alpha`. For each pair
/// the largest admissible `m` on the cloud of radius `R` is compared with
/// the one on the cloud of radius `2R`; a pair is accepted when `m` has
/// stabilised (it does not keep dropping as the cloud grows), or when the
/// forced `m` holds on both clouds.
pub fn certify_coercivity(
    law: &MonotoneLaw,
    search: &CertificateSearch,
) -> core::result::Result<CoercivityCertificate, Refusal> {
    let inner = cloud(law.dim, search.cloud_radius, search.samples, search.seed);
    // the outer cloud contains the inner one, so m can only drop when it grows
    let mut outer = inner.clone();
    outer.extend(cloud(law.dim, 2.0 * search.cloud_radius, search.samples, search.seed ^ 0xa5a5));
    let levels: Vec<f64> = (0..64)
        .map(|k| 0.5_f64.powi(k))
        .take_while(|a| *a >= search.min_alpha)
        .collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..levels.len() {
        for j in 0..levels.len() {
            pairs.push((i, j));
        }
    }
    // prefer the largest smallest-alpha, then the largest sum
    pairs.sort_by_key(|&(i, j)| (i.max(j), i + j, i));
    let min_slack = |pts: &[Vec<f64>], a1: f64, a2: f64| {
        pts.iter()
            .map(|v| slack(law, v, a1, a2))
            .fold(f64::INFINITY, f64::min)
    };
    for (i, j) in pairs {
        let (a1, a2) = (levels[i], levels[j]);
        let m_inner = min_slack(&inner, a1, a2);
        let m_outer = min_slack(&outer[inner.len()..], a1, a2).min(m_inner);
        match search.fixed_m {
            Some(m) => {
                if m_outer >= m - 1e-12 * (1.0 + m.abs()) {
                    return Ok(CoercivityCertificate {
                        alpha1: a1,
                        alpha2: a2,
                        m_bound: m,
                    });
                }
            }
            None => {
                if m_inner - m_outer <= 1e-9 * (1.0 + m_inner.abs()) {
                    return Ok(CoercivityCertificate {
                        alpha1: a1,
                        alpha2: a2,
                        m_bound: m_outer,
                    });
                }
            }
        }
    }
    Err(Refusal {
        reason: if search.fixed_m.is_some() {
            "inequality fails with the forced m for every admissible alpha"
        } else {
            "lower bound m keeps decreasing as the sample cloud grows"
        },
        smallest_alpha_tried: levels.last().copied().unwrap_or(1.0),
    })
}
