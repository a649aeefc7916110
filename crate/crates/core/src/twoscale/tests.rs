use super::*;
use crate::convex::MonotoneLaw;
use crate::fem::{AxisBoundary, Grid};
use crate::linalg::DMat;
use crate::mandel::{isotropic_stiffness, sym_dim};
use crate::microstructure::CoefficientSet;
use crate::rothe::{run_trajectory, LoadProgram, MicroModel, RotheParams};
use std::vec::Vec as StdVec;

fn phase(d: usize, lambda: f64, mu: f64) -> CoefficientSet {
    let s = sym_dim(d);
    CoefficientSet::new(isotropic_stiffness(d, lambda, mu), DMat::zeros(s, s), MonotoneLaw::zero(s)).unwrap()
}

fn spec(kind: FieldKind, dim: usize, seed: u64) -> FieldSpec {
    FieldSpec {
        kind,
        dim,
        cell_size: 1.0,
        phases: vec![phase(dim, 1.0, 1.0), phase(dim, 3.0, 2.0)],
        probabilities: vec![0.5, 0.5],
        seed,
    }
}

fn flat_entry(obs: Observable, dim: usize) -> DictionaryEntry {
    DictionaryEntry {
        id: 0,
        bump: Bump {
            center: vec![0.5; dim],
            radius: vec![f64::INFINITY; dim],
        },
        observable: obs,
    }
}

#[test]
fn standard_dictionary_has_24_deterministic_entries() {
    let sp = spec(FieldKind::CheckerboardIid, 2, 1);
    let a = TestFunctionDictionary::standard(&sp, DomainBox::unit(2)).unwrap();
    let b = TestFunctionDictionary::standard(&sp, DomainBox::unit(2)).unwrap();
    assert_eq!(a.len(), 24);
    assert_eq!(a.entries, b.entries);
    assert!(a.entries.iter().enumerate().all(|(i, e)| e.id == i));
    // bumps vanish on the boundary of the box
    assert_eq!(a.entries[0].bump.value(&[0.0, 0.3]), 0.0);
    assert_eq!(a.entries[0].bump.value(&[0.5, 0.5]), 1.0);
}

#[test]
fn phase_indicator_pairs_to_its_probability() {
    let d = 2;
    let grid = Grid::dirichlet_box(d, 64, 1.0).unwrap();
    let ones = vec![1.0; grid.n_quad()];
    let base = spec(FieldKind::CheckerboardIid, d, 0);
    let obs = Observable::new(ObservableKind::Indicator(0), &base).unwrap();
    let entry = flat_entry(obs, d);
    let seeds = 40;
    let vals: StdVec<f64> = (0..seeds)
        .map(|s| {
            let real = sample_realization(&spec(FieldKind::CheckerboardIid, d, 1000 + s)).unwrap();
            pair(&grid, &ones, 1, &entry, &real, 1.0 / 32.0).unwrap()[0]
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / seeds as f64;
    // binomial standard error of the seed mean: 0.5 / sqrt(32² · seeds)
    let se = 0.5 / (1024.0 * seeds as f64).sqrt();
    assert!((mean - 0.5).abs() < 4.0 * se, "{mean}");
}

#[test]
fn self_pairing_tends_to_second_moment() {
    let d = 2;
    let sp = spec(FieldKind::CheckerboardIid, d, 5);
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(d)).unwrap();
    let entry = &dict.entries[3];
    assert_eq!(entry.observable.kind, ObservableKind::MeanStiffness);
    let g = |k: usize| entry.observable.value(k, k);
    let limit = limit_pairing(&sp, &dict.domain, 1, entry, &|_: &[f64], k| vec![g(k)]).unwrap()[0];
    // E[g²] ∫ψ with ∫ψ = (16/15 · r)^d
    let int_psi = (16.0 / 15.0 * 0.5f64).powi(2);
    let second = 0.5 * (g(0) * g(0) + g(1) * g(1));
    assert!((limit - second * int_psi).abs() < 1e-12 * limit);
    let mut errs = StdVec::new();
    for (eta, n) in [(1.0 / 8.0, 32), (1.0 / 32.0, 128)] {
        let grid = Grid::dirichlet_box(d, n, 1.0).unwrap();
        let mut err = 0.0;
        for s in 0..8 {
            let real = sample_realization(&spec(FieldKind::CheckerboardIid, d, 50 + s)).unwrap();
            let u: StdVec<f64> = grid
                .quad_points()
                .iter()
                .map(|x| entry.observable.at_lattice(&real, &[x[0] / eta, x[1] / eta]))
                .collect();
            err += (pair(&grid, &u, 1, entry, &real, eta).unwrap()[0] - limit).powi(2) / 8.0;
        }
        errs.push(err.sqrt());
    }
    assert!(errs[1] < errs[0] && errs[1] < 0.04 * limit, "{errs:?}");
}

#[test]
fn constant_observable_is_the_classical_pairing() {
    let sp = spec(FieldKind::VoronoiSeeded, 2, 3);
    let real = sample_realization(&sp).unwrap();
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(2)).unwrap();
    let grid = Grid::dirichlet_box(2, 16, 1.0).unwrap();
    let u = grid.sample_quad(2, &|x| vec![x[0] * x[1], (3.0 * x[0]).sin()]);
    for e in dict.entries.iter().filter(|e| e.observable.kind == ObservableKind::Constant) {
        let p = pair(&grid, &u, 2, e, &real, 0.25).unwrap();
        let pts = grid.quad_points();
        for k in 0..2 {
            let direct: f64 = (0..grid.n_quad())
                .map(|q| grid.quad_weight() * u[q * 2 + k] * e.bump.value(&pts[q][..2]))
                .sum();
            assert!((p[k] - direct).abs() < 1e-15);
        }
    }
}

#[test]
fn pairing_is_linear() {
    let sp = spec(FieldKind::CheckerboardIid, 2, 9);
    let real = sample_realization(&sp).unwrap();
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(2)).unwrap();
    let grid = Grid::dirichlet_box(2, 16, 1.0).unwrap();
    let a = grid.sample_quad(1, &|x| vec![x[0] - x[1] * x[1]]);
    let b = grid.sample_quad(1, &|x| vec![(x[0] + 2.0 * x[1]).cos()]);
    let comb: StdVec<f64> = a.iter().zip(&b).map(|(x, y)| 2.5 * x - 0.75 * y).collect();
    for e in &dict.entries {
        let pa = pair(&grid, &a, 1, e, &real, 0.125).unwrap()[0];
        let pb = pair(&grid, &b, 1, e, &real, 0.125).unwrap()[0];
        let pc = pair(&grid, &comb, 1, e, &real, 0.125).unwrap()[0];
        assert!((pc - (2.5 * pa - 0.75 * pb)).abs() <= 1e-14 * (1.0 + pa.abs() + pb.abs()));
    }
}

#[test]
fn unresolved_fields_are_refused() {
    let sp = spec(FieldKind::CheckerboardIid, 2, 9);
    let real = sample_realization(&sp).unwrap();
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(2)).unwrap();
    let grid = Grid::dirichlet_box(2, 8, 1.0).unwrap();
    let u = vec![1.0; grid.n_quad()];
    assert!(matches!(
        pair(&grid, &u, 1, &dict.entries[0], &real, 1.0 / 32.0),
        Err(Error::Resolution { .. })
    ));
}

#[test]
fn joint_laws_are_probability_tables() {
    for kind in [FieldKind::CheckerboardIid, FieldKind::Laminate1d, FieldKind::VoronoiSeeded] {
        for axis in 0..2 {
            let law = JointLaw::new(&spec(kind, 2, 4), axis).unwrap();
            let total: f64 = law.probabilities.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{kind:?}");
            let marginal = law.probabilities[0] + law.probabilities[1];
            let tol = if kind == FieldKind::VoronoiSeeded { 0.02 } else { 1e-15 };
            assert!((marginal - 0.5).abs() < tol, "{kind:?} {marginal}");
        }
    }
    // laminates are constant across the layers
    let lam = JointLaw::new(&spec(FieldKind::Laminate1d, 2, 4), 1).unwrap();
    assert_eq!(lam.probabilities, vec![0.5, 0.0, 0.0, 0.5]);
}

#[test]
fn dictionary_separates_distinct_limits() {
    // equal weak limits, different two-scale limits
    let sp = spec(FieldKind::CheckerboardIid, 2, 1);
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(2)).unwrap();
    let a = |_: &[f64], k: usize| vec![if k == 0 { 1.0 } else { 0.0 }];
    let b = |_: &[f64], _: usize| vec![0.5];
    let pa: StdVec<f64> = dict
        .entries
        .iter()
        .map(|e| limit_pairing(&sp, &dict.domain, 1, e, &a).unwrap()[0])
        .collect();
    let pb: StdVec<f64> = dict
        .entries
        .iter()
        .map(|e| limit_pairing(&sp, &dict.domain, 1, e, &b).unwrap()[0])
        .collect();
    let margin = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let tol = 1e-6;
    assert!(margin > 100.0 * tol, "{margin}");
    assert!(dict.distinguishes(&pa, &pb, tol));
    assert!(!dict.distinguishes(&pa, &pa, tol));
    // constant-observable entries cannot tell them apart
    for e in dict.entries.iter().filter(|e| e.observable.kind == ObservableKind::Constant) {
        assert!((pa[e.id] - pb[e.id]).abs() < 1e-14);
    }
}

#[test]
fn verdict_needs_small_final_error_and_trend() {
    let etas = [0.25, 0.125, 0.0625];
    assert!(convergence_verdict(&etas, &[0.1, 0.05, 0.02], 0, 0.03).pass);
    assert!(!convergence_verdict(&etas, &[0.1, 0.05, 0.04], 0, 0.03).pass);
    let rising = convergence_verdict(&etas, &[0.001, 0.01, 0.02], 0, 0.03);
    assert!(!rising.decreasing && !rising.pass);
    assert!(convergence_verdict(&etas, &[1e-14, 3e-14, 2e-14], 0, 1e-8).pass);
    assert!(TwoScalePairing::new(0, 0, vec![0.1, 0.2], vec![0.0, 0.0], 0.0).is_err());
}

fn laminate_1d(seed: u64) -> Realization {
    sample_realization(&spec(FieldKind::Laminate1d, 1, seed)).unwrap()
}

#[test]
fn liminf_shows_jensen_gap_and_affine_equality() {
    let sp = spec(FieldKind::Laminate1d, 1, 11);
    let real = laminate_1d(11);
    let h = |k: usize| if k == 0 { 1.0 } else { -0.5 };
    let amp = |x: f64| 1.0 + x;
    let etas = [1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0];
    let grids: StdVec<Grid> = etas
        .iter()
        .map(|eta| Grid::new(&[(32.0 / (eta * eta)) as usize], &[1.0], &[AxisBoundary::Dirichlet]).unwrap())
        .collect();
    // a·h(τω) + fast oscillation at scale η², invisible to two-scale limits
    let fields: StdVec<StdVec<f64>> = etas
        .iter()
        .zip(&grids)
        .map(|(&eta, g)| {
            g.sample_quad(1, &|x| {
                let k = real.phase_at(x, eta);
                vec![amp(x[0]) * (h(k) + (2.0 * core::f64::consts::PI * x[0] / (eta * eta)).sin())]
            })
        })
        .collect();
    let seq: StdVec<QuadSequenceMember> = etas
        .iter()
        .zip(&grids)
        .zip(&fields)
        .map(|((&eta, grid), v)| QuadSequenceMember { eta, grid, values: v })
        .collect();
    let profile = |x: &[f64], k: usize| vec![amp(x[0]) * h(k)];
    let quad = ConvexFn::quadratic(DMat::identity(1).scaled(2.0));
    let rep = liminf_convex(&quad, &seq, &sp, &DomainBox::unit(1), &profile, 1e-6).unwrap();
    assert!(rep.holds);
    // the fast oscillation adds ½∫a² = 7/6 on top of the sampled phase average
    assert!(rep.gap() > 1.0, "{rep:?}");
    let affine = ConvexFn::custom(1, true, |v: &[f64]| 3.0 * v[0] - 1.0);
    let rep = liminf_convex(&affine, &seq, &sp, &DomainBox::unit(1), &profile, 1e-6).unwrap();
    // ergodic error of the sampled phase mean over 16 cells
    let mc = 3.0 * 2.0 * 1.5 * 0.5 / 16f64.sqrt();
    assert!((rep.values[2] - rep.limit_side).abs() < mc, "{rep:?}");
    // constant sequences: equality
    let g = &grids[0];
    let c = vec![0.7; g.n_quad()];
    let seq = [QuadSequenceMember { eta: 0.25, grid: g, values: &c }];
    let rep = liminf_convex(&quad, &seq, &sp, &DomainBox::unit(1), &|_: &[f64], _| vec![0.7], 1e-6).unwrap();
    assert!((rep.values[0] - rep.limit_side).abs() < 1e-12 && rep.holds);
}

#[test]
fn smooth_fields_have_no_corrector() {
    let seq: StdVec<OscillatingField> = [(0.25, 16), (0.125, 32), (0.0625, 64)]
        .iter()
        .map(|&(eta, n)| {
            let grid = Grid::periodic_cell(2, n, 1.0).unwrap();
            let u = grid.interpolate(1, &|x| {
                vec![(2.0 * core::f64::consts::PI * x[0]).sin() * (2.0 * core::f64::consts::PI * x[1]).cos()]
            });
            OscillatingField { eta, grid, u, ncomp: 1 }
        })
        .collect();
    let rep = verify_gradient_splitting(&seq, 1.0, 4.0).unwrap();
    for s in &rep.stats {
        assert!(s.global_mean < 1e-12, "{s:?}");
    }
    // the window shrinks like √η, so the smooth part is recovered better
    let rel: StdVec<f64> = rep.stats.iter().map(|s| s.corrector_norm / s.gradient_norm).collect();
    assert!(rel.windows(2).all(|w| w[1] < w[0]), "{rel:?}");
}

#[test]
fn constructed_sequence_splits_into_gradient_and_corrector() {
    use core::f64::consts::PI;
    // u^η = u + η φ(x) χ(x/η) with χ a random-amplitude bubble per cell
    let real = sample_realization(&spec(FieldKind::CheckerboardIid, 2, 21)).unwrap();
    let amp = |k: usize| if k == 0 { 1.0 } else { -2.0 };
    let mut seq = StdVec::new();
    for &(eta, n) in &[(1.0 / 8.0, 64usize), (1.0 / 16.0, 128), (1.0 / 32.0, 256)] {
        let grid = Grid::dirichlet_box(2, n, 1.0).unwrap();
        let u = grid.interpolate(1, &|x| {
            let y = [x[0] / eta, x[1] / eta];
            let bubble = (PI * y[0]).sin().powi(2) * (PI * y[1]).sin().powi(2);
            let k = real.phase_at_lattice(&y);
            vec![x[0] * x[0] + x[1] + eta * (1.0 + x[0]) * amp(k) * bubble]
        });
        seq.push(OscillatingField { eta, grid, u, ncomp: 1 });
    }
    let rep = verify_gradient_splitting(&seq, 1.0, 4.0).unwrap();
    let mut macro_errs = StdVec::new();
    for (s, f) in rep.stats.iter().zip(&seq) {
        let exact = f.grid.sample_quad(2, &|x| vec![2.0 * x[0], 1.0]);
        // compare away from the walls where the window is clipped
        let pts = f.grid.quad_points();
        let mut e2 = 0.0;
        let mut n = 0.0;
        for (q, x) in pts.iter().enumerate() {
            if (0.25..0.75).contains(&x[0]) && (0.25..0.75).contains(&x[1]) {
                for k in 0..2 {
                    e2 += (s.macro_gradient[q * 2 + k] - exact[q * 2 + k]).powi(2);
                }
                n += 1.0;
            }
        }
        macro_errs.push((e2 / n).sqrt());
        // the corrector carries the oscillation and has zero cell means
        assert!(s.corrector_norm > 0.5, "{s:?}");
        assert!(s.max_cell_mean < 0.5, "{}", s.max_cell_mean);
    }
    assert!(macro_errs.windows(2).all(|w| w[1] < w[0]), "{macro_errs:?}");
    assert!(macro_errs[2] < 0.25, "{macro_errs:?}");
    let cm: StdVec<f64> = rep.stats.iter().map(|s| s.max_cell_mean).collect();
    assert!(cm[2] < cm[0], "{cm:?}");
}

#[test]
fn exploding_gradients_are_reported() {
    let seq: StdVec<OscillatingField> = [(0.25, 16), (0.125, 32)]
        .iter()
        .map(|&(eta, n)| {
            let grid = Grid::periodic_cell(1, n, 1.0).unwrap();
            let u = grid.interpolate(1, &|x| vec![(2.0 * core::f64::consts::PI * x[0] / eta).sin()]);
            OscillatingField { eta, grid, u, ncomp: 1 }
        })
        .collect();
    assert!(matches!(verify_gradient_splitting(&seq, 1.0, 1.5), Err(Error::Precondition(_))));
}

#[test]
fn time_pairing_reduces_to_step_pairings() {
    let d = 2;
    let s = sym_dim(d);
    let nh = CoefficientSet::new(
        isotropic_stiffness(d, 1.0, 1.0),
        DMat::scalar(s, 0.5),
        MonotoneLaw::norton_hoff(s, 1.0, 1.0).unwrap(),
    )
    .unwrap();
    let mut sp = spec(FieldKind::CheckerboardIid, d, 7);
    sp.phases = vec![nh.clone(), nh];
    let real = sample_realization(&sp).unwrap();
    let eta = 0.25;
    let model = MicroModel::from_realization(Grid::dirichlet_box(d, 8, 1.0).unwrap(), &real, eta).unwrap();
    let program = LoadProgram::new(1.0)
        .unwrap()
        .with_body_force(|x: &[f64], t: f64| vec![40.0 * t * (1.0 + x[1]), -20.0 * t]);
    let traj = run_trajectory(&model, &program, &RotheParams::new(3, Some(8.0))).unwrap();
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(d)).unwrap();
    let grid = model.grid();
    let e = &dict.entries[7];
    let h = traj.step;
    let per_step: StdVec<StdVec<f64>> = traj
        .states
        .iter()
        .map(|st| pair(grid, &st.stress, s, e, &real, eta).unwrap())
        .collect();
    // one step
    let k = 3;
    let one = time_dependent_pairing(grid, &traj, TrajectoryField::Stress, e, &real, eta, &|t| {
        if t > (k - 1) as f64 * h && t <= k as f64 * h {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();
    for c in 0..s {
        assert!((one[c] - h * per_step[k][c]).abs() < 1e-13 * (1.0 + per_step[k][c].abs()));
    }
    // affine in time
    let theta = |t: f64| 2.0 - t;
    let all = time_dependent_pairing(grid, &traj, TrajectoryField::Stress, e, &real, eta, &theta).unwrap();
    for c in 0..s {
        let expect: f64 = (1..traj.states.len())
            .map(|n| per_step[n][c] * h * 0.5 * (theta((n - 1) as f64 * h) + theta(n as f64 * h)))
            .sum();
        assert!((all[c] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
    }
    // constant in time and space: T · pair
    let ones = time_dependent_pairing(grid, &traj, TrajectoryField::Internal, e, &real, eta, &|_| 1.0).unwrap();
    let direct: StdVec<f64> = (1..traj.states.len())
        .map(|n| pair(grid, &traj.states[n].z, s, e, &real, eta).unwrap()[0] * h)
        .collect();
    assert!((ones[0] - direct.iter().sum::<f64>()).abs() < 1e-13);
}

#[test]
fn elastic_trajectory_pairings_match_per_time_solves() {
    let d = 2;
    let sp = spec(FieldKind::CheckerboardIid, d, 17);
    let real = sample_realization(&sp).unwrap();
    let eta = 0.25;
    let model = MicroModel::from_realization(Grid::dirichlet_box(d, 8, 1.0).unwrap(), &real, eta).unwrap();
    let program = LoadProgram::new(1.0)
        .unwrap()
        .with_body_force(|x: &[f64], t: f64| vec![t * x[0], 1.0 - t]);
    let traj = run_trajectory(&model, &program, &RotheParams::new(3, None)).unwrap();
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(d)).unwrap();
    let e = &dict.entries[1];
    let theta = |t: f64| 1.0 + 3.0 * t;
    let got = time_dependent_pairing(model.grid(), &traj, TrajectoryField::Displacement, e, &real, eta, &theta).unwrap();
    let h = traj.step;
    let mut expect = [0.0; 2];
    for n in 1..traj.states.len() {
        let st = model.system().solve(&traj.loads[n], &[]).unwrap();
        let p = pair_nodal(model.grid(), &st.u, d, e, &real, eta).unwrap();
        let w = 0.5 * h * (theta((n - 1) as f64 * h) + theta(n as f64 * h));
        for c in 0..d {
            expect[c] += w * p[c];
        }
    }
    for c in 0..d {
        assert!((got[c] - expect[c]).abs() < 1e-10 * (1.0 + expect[c].abs()), "{got:?} {expect:?}");
    }
}
