use super::*;
use crate::rng::SplitMix64;
use alloc::vec;
use proptest::prelude::*;

fn nh(r: f64) -> MonotoneLaw {
    MonotoneLaw::norton_hoff(2, 1.0, r).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn norton_hoff_selection() {
    let law = nh(1.0);
    assert_eq!(law.apply(&[0.5, 0.0]), vec![0.0, 0.0]);
    let g = law.apply(&[2.0, 0.0]);
    assert!(close(g[0], 1.0, 1e-15) && g[1] == 0.0);
    let id = MonotoneLaw::linear(DMat::identity(3)).unwrap();
    assert_eq!(id.apply(&[1.0, -2.0, 3.0]), vec![1.0, -2.0, 3.0]);
}

#[test]
fn rejects_bad_parameters() {
    assert!(NortonHoffParams::new(0.0, 1.0).is_err());
    assert!(NortonHoffParams::new(1.0, -1.0).is_err());
    assert!(MonotoneLaw::linear(DMat::diag(&[1.0, -1.0])).is_err());
    assert!(ConvexFn::power(1, 1.0).is_err());
}

#[test]
fn resolvent_examples() {
    let law = nh(1.0);
    assert_eq!(resolvent(&law, 1.0, &[0.3, 0.4]).unwrap(), vec![0.3, 0.4]);
    let v = resolvent(&law, 1.0, &[2.0, 0.0]).unwrap();
    // oracle: s + (s − 1) = 2 by bisection
    let (mut lo, mut hi) = (0.0_f64, 2.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + (mid - 1.0).max(0.0) < 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!(close(v[0], lo, 1e-12) && close(lo, 1.5, 1e-12) && v[1] == 0.0);
    let id = MonotoneLaw::linear(DMat::identity(2)).unwrap();
    let v = resolvent(&id, 1.0, &[3.0, -1.0]).unwrap();
    assert!(close(v[0], 1.5, 1e-14) && close(v[1], -0.5, 1e-14));
    assert!(resolvent(&id, -1.0, &[1.0, 0.0]).is_err());
}

#[test]
fn resolvent_residual_all_kinds() {
    let laws = [
        nh(1.0),
        nh(2.0),
        nh(0.5),
        MonotoneLaw::linear(DMat::from_rows(&[&[2.0, 1.0], &[-1.0, 1.0]])).unwrap(),
        MonotoneLaw::subdifferential(ConvexFn::power(2, 3.0).unwrap()),
        MonotoneLaw::subdifferential(ConvexFn::cosh_sum(2)),
        MonotoneLaw::subdifferential(ConvexFn::custom(2, true, |v| v[0].powi(4) / 4.0 + v[1] * v[1])),
    ];
    let mut rng = SplitMix64::new(3);
    for law in &laws {
        for k in 0..200 {
            let h = [1e-3, 1e-2, 0.1, 1.0, 10.0][k % 5];
            let w = [rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)];
            let v = resolvent(law, h, &w).unwrap();
            let rate: Vec<f64> = (0..2).map(|i| (w[i] - v[i]) / h).collect();
            let res = law.graph_residual(&v, &rate);
            let scale = 1.0 + norm(&rate);
            assert!(res <= 1e-7 * scale, "{law:?} h={h} w={w:?} res={res}");
        }
    }
}

#[test]
fn norm_prox_soft_threshold() {
    let law = MonotoneLaw::subdifferential(ConvexFn::norm(2));
    assert_eq!(resolvent(&law, 1.0, &[0.3, 0.4]).unwrap(), vec![0.0, 0.0]);
    let v = resolvent(&law, 1.0, &[3.0, 4.0]).unwrap();
    assert!(close(v[0], 2.4, 1e-14) && close(v[1], 3.2, 1e-14));
    // graph residual at the kink uses the unit ball
    assert_eq!(law.graph_residual(&[0.0, 0.0], &[0.3, 0.4]), 0.0);
}

#[test]
fn metric_resolvent_matches_scalar_and_solves_inclusion() {
    let law = nh(1.0);
    let c = [3.0, -1.0, 0.5];
    let law3 = MonotoneLaw::norton_hoff(3, 1.0, 1.0).unwrap();
    let a = resolvent(&law3, 0.7, &c).unwrap();
    let b = resolvent_metric(&law3, &DMat::scalar(3, 0.7), &c).unwrap();
    assert_eq!(a, b);
    let h = DMat::from_rows(&[&[2.0, 0.5, 0.0], &[0.5, 1.0, 0.2], &[0.0, 0.2, 0.5]]);
    let s = resolvent_metric(&law3, &h, &c).unwrap();
    let hg = h.matvec(&law3.apply(&s));
    for i in 0..3 {
        assert!(close(s[i] + hg[i], c[i], 1e-10), "{s:?}");
    }
    let _ = law;
    let lin = MonotoneLaw::linear(DMat::identity(3)).unwrap();
    let s = resolvent_metric(&lin, &h, &c).unwrap();
    let hs = h.matvec(&s);
    for i in 0..3 {
        assert!(close(s[i] + hs[i], c[i], 1e-12));
    }
}

#[test]
fn conjugate_examples() {
    let q = ConvexFn::half_squared_norm(2);
    let v = fenchel_conjugate(&q, &[1.0, -2.0], 50.0).unwrap();
    assert!(close(v, 2.5, 1e-8), "{v}");
    let n = ConvexFn::norm(2);
    assert!(close(fenchel_conjugate(&n, &[0.3, 0.4], 50.0).unwrap(), 0.0, 1e-10));
    assert!(matches!(fenchel_conjugate(&n, &[0.9, 0.9], 50.0), Err(Error::Unbounded { .. })));
    let p4 = ConvexFn::power(1, 4.0).unwrap();
    let v = fenchel_conjugate(&p4, &[1.0], 10.0).unwrap();
    assert!(close(v, 0.75, 1e-6), "{v}");
}

#[test]
fn conjugate_monotone_in_radius() {
    let phi = ConvexFn::cosh_sum(2);
    let mut last = f64::NEG_INFINITY;
    for r in [0.5, 1.0, 1.5, 2.0, 4.0] {
        // small radii report the still-growing supremum as unbounded
        if let Ok(v) = fenchel_conjugate(&phi, &[2.0, 1.0], r) {
            assert!(v >= last - 1e-12);
            last = v;
        }
    }
}

#[test]
fn biconjugate_recovers_function() {
    let phi = ConvexFn::power(1, 3.0).unwrap();
    for x in [-1.5, -0.2, 0.0, 0.7, 1.3] {
        let star = |s: f64| fenchel_conjugate(&phi, &[s], 20.0).unwrap();
        // sup_s s x − φ*(s) on a fine grid then golden refinement
        let f = |s: f64| s * x - star(s);
        let (_, val) = optim::golden_max(&f, -5.0, 5.0, 120);
        assert!(close(val, phi.value(&[x]), 1e-4), "{x}: {val}");
    }
}

#[test]
fn fitzpatrick_linear_closed_form() {
    let id = MonotoneLaw::linear(DMat::identity(2)).unwrap();
    let mut rng = SplitMix64::new(9);
    for _ in 0..50 {
        let v = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
        let s = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
        let f = fitzpatrick(&id, &v, &s, 100.0).unwrap();
        let sum: Vec<f64> = (0..2).map(|i| v[i] + s[i]).collect();
        assert!(close(f, dot(&sum, &sum) / 4.0, 1e-12));
        // grid-search oracle over graph points v0 ↦ v0
        let mut best = f64::NEG_INFINITY;
        for i in -40..=40 {
            for j in -40..=40 {
                let v0 = [i as f64 * 0.1, j as f64 * 0.1];
                best = best.max(dot(&s, &v0) - dot(&v0, &[v0[0] - v[0], v0[1] - v[1]]));
            }
        }
        assert!(best <= f + 1e-12 && f - best < 0.05);
    }
    let gap = fitzpatrick_gap(&id, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
    assert!(close(gap, 0.25, 1e-12));
}

#[test]
fn fitzpatrick_norton_hoff_gap() {
    let law = nh(1.0);
    let gap = fitzpatrick_gap(&law, &[0.5, 0.0], &[0.2, 0.0]).unwrap();
    // oracle: brute-force graph points in a disc
    let mut best = f64::NEG_INFINITY;
    for i in -150..=150 {
        for j in -150..=150 {
            let v0 = [i as f64 * 0.02, j as f64 * 0.02];
            let g0 = law.apply(&v0);
            best = best.max(0.2 * v0[0] - (g0[0] * (v0[0] - 0.5) + g0[1] * v0[1]));
        }
    }
    assert!(gap > 0.0);
    assert!(close(gap, best - 0.1, 2e-3), "{gap} vs {}", best - 0.1);
}

#[test]
fn fitzpatrick_equality_on_graph() {
    let laws = [nh(1.0), nh(2.0), MonotoneLaw::linear(DMat::diag(&[1.0, 0.5])).unwrap()];
    let mut rng = SplitMix64::new(11);
    for law in &laws {
        for _ in 0..100 {
            let v = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            let s = law.apply(&v);
            let gap = fitzpatrick_gap(law, &v, &s).unwrap();
            assert!(gap <= 1e-6 * (1.0 + norm(&v) * norm(&s)), "{gap}");
        }
    }
}

#[test]
fn fitzpatrick_subdifferential_on_and_off_graph() {
    let law = MonotoneLaw::subdifferential(ConvexFn::power(2, 3.0).unwrap());
    let v = [0.8, -0.3];
    let s = law.apply(&v);
    let f = fitzpatrick(&law, &v, &s, 10.0).unwrap();
    assert!(close(f, dot(&v, &s), 1e-6));
    let off = fitzpatrick(&law, &v, &[1.0, 1.0], 10.0).unwrap();
    assert!(off > dot(&v, &[1.0, 1.0]));
}

#[test]
fn coercivity_examples() {
    let id = MonotoneLaw::linear(DMat::identity(2)).unwrap();
    let search = CertificateSearch::new(4.0, 400);
    let c = certify_coercivity(&id, &search).unwrap();
    assert_eq!((c.alpha1, c.alpha2), (0.5, 0.5));
    assert!(c.m_bound.abs() < 1e-12);

    let law = nh(1.0);
    let c = certify_coercivity(&law, &search).unwrap();
    assert!(c.m_bound < 0.0 && c.alpha1 > 0.0 && c.alpha2 > 0.0);
    let mut rng = SplitMix64::new(77);
    let check: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let mut p = vec![0.0; 2];
            rng.in_ball(20.0, &mut p);
            p
        })
        .collect();
    assert!(c.violation(&law, &check) <= 1e-9, "{c:?}");

    let zero = MonotoneLaw::zero(2);
    let forced = CertificateSearch {
        fixed_m: Some(0.0),
        ..search
    };
    assert!(certify_coercivity(&zero, &forced).is_err());
    assert!(certify_coercivity(&zero, &search).is_err());
}

#[test]
fn canonical_extension_and_quadrature() {
    let laws = [nh(1.0), MonotoneLaw::linear(DMat::scalar(2, 2.0)).unwrap()];
    let phases = [0, 1, 1, 0];
    let field = LawField {
        laws: &laws,
        phase_of_point: &phases,
    };
    let v = [2.0, 0.0, 1.0, 1.0, -1.0, 0.0, 0.1, 0.1];
    let out = canonical_apply(&field, &v).unwrap();
    assert_eq!(&out[0..2], &laws[0].apply(&[2.0, 0.0])[..]);
    assert_eq!(&out[2..4], &[2.0, 2.0]);
    assert_eq!(&out[6..8], &[0.0, 0.0]);
    assert!(matches!(canonical_apply(&field, &v[..6]), Err(Error::GridMismatch { .. })));
    let w = [0.25; 4];
    let pairing = field_pairing(&w, &v, &out).unwrap();
    let oracle: f64 = (0..8).map(|i| 0.25 * v[i] * out[i]).sum();
    assert!(close(pairing, oracle, 1e-15));
}

#[test]
fn young_fenchel_on_fields() {
    let phis = [ConvexFn::half_squared_norm(2), ConvexFn::cosh_sum(2)];
    let phases = [0, 1, 0];
    let weights = [0.2, 0.5, 0.3];
    let field = IntegrandField {
        phis: &phis,
        phase_of_point: &phases,
        weights: &weights,
    };
    let v = [0.5, -1.0, 0.3, 0.2, 1.0, 1.0];
    let s = [1.0, 0.0, 0.5, -0.5, -0.2, 0.3];
    let lhs = integral_functional(&field, &v).unwrap() + conjugate_integral_functional(&field, &s, 30.0).unwrap();
    assert!(lhs >= field_pairing(&weights, &v, &s).unwrap() - 1e-8);
    // equality on the subdifferential graph
    let mut g = Vec::new();
    for (i, &ph) in phases.iter().enumerate() {
        g.extend(phis[ph].subgradient(&v[2 * i..2 * i + 2]));
    }
    let lhs = integral_functional(&field, &v).unwrap() + conjugate_integral_functional(&field, &g, 30.0).unwrap();
    assert!(close(lhs, field_pairing(&weights, &v, &g).unwrap(), 1e-6));
    let sq = IntegrandField {
        phis: &phis[..1],
        phase_of_point: &[0, 0, 0],
        weights: &weights,
    };
    let a = integral_functional(&sq, &s).unwrap();
    let b = conjugate_integral_functional(&sq, &s, 30.0).unwrap();
    assert!(close(a, b, 1e-8));
}

#[test]
fn monotone_laws_pass_defect_check() {
    for law in [nh(1.0), nh(3.0), MonotoneLaw::linear(DMat::from_rows(&[&[1.0, 2.0], &[-2.0, 0.0]])).unwrap()] {
        assert!(monotonicity_defect(&law, 5.0, 1000, 1) >= -1e-10);
    }
}

proptest! {
    #[test]
    fn resolvent_is_nonexpansive(
        a in prop::array::uniform2(-5.0f64..5.0),
        b in prop::array::uniform2(-5.0f64..5.0),
        k in 0usize..5,
        r in 0.5f64..3.0,
    ) {
        let h = [1e-3, 1e-2, 0.1, 1.0, 10.0][k];
        let law = nh(r);
        let ra = resolvent(&law, h, &a).unwrap();
        let rb = resolvent(&law, h, &b).unwrap();
        let d = norm(&crate::linalg::sub(&ra, &rb));
        prop_assert!(d <= norm(&crate::linalg::sub(&a, &b)) + 1e-10);
    }

    #[test]
    fn fitzpatrick_lower_bound(
        v in prop::array::uniform2(-3.0f64..3.0),
        s in prop::array::uniform2(-3.0f64..3.0),
        r in prop::sample::select(vec![1.0f64, 2.0]),
    ) {
        let law = nh(r);
        let radius = default_search_radius(&law, &v, &s);
        let f = fitzpatrick(&law, &v, &s, radius).unwrap();
        prop_assert!(f - dot(&v, &s) >= -1e-8);
    }

    #[test]
    fn convex_functions_are_convex_on_segments(
        a in prop::array::uniform2(-2.0f64..2.0),
        b in prop::array::uniform2(-2.0f64..2.0),
        t in 0.0f64..1.0,
    ) {
        let m: [f64; 2] = [t * a[0] + (1.0 - t) * b[0], t * a[1] + (1.0 - t) * b[1]];
        for phi in [ConvexFn::cosh_sum(2), ConvexFn::norm(2), ConvexFn::power(2, 2.5).unwrap()] {
            prop_assert!(phi.value(&m) <= t * phi.value(&a) + (1.0 - t) * phi.value(&b) + 1e-10);
        }
    }
}

#[test]
fn biconjugate_in_two_dimensions() {
    let phis = [
        ConvexFn::power(2, 3.0).unwrap(),
        ConvexFn::cosh_sum(2),
        ConvexFn::custom(2, true, |v| v[0].powi(4) / 4.0 + v[1] * v[1]),
    ];
    let mut rng = SplitMix64::new(5);
    for phi in &phis {
        for _ in 0..10 {
            let v = [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)];
            let val = biconjugate(phi, &v, 8.0, 20.0).unwrap();
            assert!(close(val, phi.value(&v), 1e-4), "{v:?}: {val} vs {}", phi.value(&v));
        }
    }
}
