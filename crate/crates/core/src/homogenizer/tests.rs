use super::*;
use crate::convex::MonotoneLaw;
use crate::mandel::{isotropic_stiffness, sym_dim};
use crate::microstructure::{DomainBox, FieldKind};
use crate::rothe::weak_solution_residual;
use std::vec::Vec as StdVec;

fn phase(d: usize, c: f64, hardening: f64, plastic: bool) -> CoefficientSet {
    let s = sym_dim(d);
    let law = if plastic {
        MonotoneLaw::norton_hoff(s, 1.0, 1.0).unwrap()
    } else {
        MonotoneLaw::zero(s)
    };
    let stiffness = if d == 1 { DMat::scalar(1, c) } else { isotropic_stiffness(d, c, c) };
    CoefficientSet::new(stiffness, DMat::scalar(s, hardening), law).unwrap()
}

fn spec(kind: FieldKind, d: usize, phases: StdVec<CoefficientSet>) -> FieldSpec {
    FieldSpec {
        kind,
        dim: d,
        cell_size: 1.0,
        phases,
        probabilities: vec![0.5, 0.5],
        seed: 0,
    }
}

fn load_1d() -> LoadProgram {
    LoadProgram::new(1.0).unwrap().with_body_force(|x: &[f64], t: f64| vec![6.0 * t * (1.0 + x[0])])
}

#[test]
fn homogeneous_medium_is_its_own_effective_tensor() {
    let p = phase(2, 1.5, 0.5, false);
    let sp = spec(FieldKind::CheckerboardIid, 2, vec![p.clone(), p.clone()]);
    let ens = RveEnsemble::new(&sp, &[1, 2], 3, 2).unwrap();
    let eff = effective_tensor(&ens).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((eff.mean[(i, j)] - p.stiffness[(i, j)]).abs() < 1e-10);
        }
    }
    assert!(eff.spread_norm() < 1e-10);
}

#[test]
fn laminate_gives_harmonic_mean() {
    let sp = spec(FieldKind::Laminate1d, 1, vec![phase(1, 1.0, 0.0, false), phase(1, 2.0, 0.0, false)]);
    let ens = RveEnsemble::new(&sp, &[3, 4, 5], 16, 2).unwrap();
    let eff = effective_tensor(&ens).unwrap();
    for (r, c) in eff.samples.iter().enumerate() {
        let m = &ens.models()[r];
        let nq = ens.grid().n_quad();
        let harmonic = nq as f64 / (0..nq).map(|q| 1.0 / m.phases()[m.phase_at_quad(q)].stiffness[(0, 0)]).sum::<f64>();
        assert!((c[(0, 0)] - harmonic).abs() < 1e-10, "{} {harmonic}", c[(0, 0)]);
    }
}

#[test]
fn effective_tensor_is_symmetric_and_bounded() {
    let sp = spec(FieldKind::CheckerboardIid, 2, vec![phase(2, 1.0, 0.0, false), phase(2, 4.0, 0.0, false)]);
    let ens = RveEnsemble::new(&sp, &[11, 12, 13], 4, 2).unwrap();
    let eff = effective_tensor(&ens).unwrap();
    let (v, r) = ensemble_bounds(&ens);
    for i in 0..3 {
        for j in 0..3 {
            assert!((eff.mean[(i, j)] - eff.mean[(j, i)]).abs() < 1e-9);
        }
    }
    let sym = eff.mean.sym_part();
    assert!(crate::fem::loewner_le(&r, &sym, 1e-9));
    assert!(crate::fem::loewner_le(&sym, &v, 1e-9));
    assert!(eff.spread_norm() > 0.0);
}

#[test]
fn ensemble_rejects_repeated_seeds() {
    let sp = spec(FieldKind::CheckerboardIid, 1, vec![phase(1, 1.0, 0.0, false), phase(1, 2.0, 0.0, false)]);
    assert!(RveEnsemble::new(&sp, &[1, 1], 4, 1).is_err());
    assert!(RveEnsemble::new(&sp, &[], 4, 1).is_err());
}

#[test]
fn elastic_limit_is_the_effective_elasticity_problem() {
    let sp = spec(FieldKind::CheckerboardIid, 1, vec![phase(1, 1.0, 0.0, false), phase(1, 3.0, 0.0, false)]);
    let ens = RveEnsemble::new(&sp, &[1, 2, 3], 8, 2).unwrap();
    let sol = solve_homogenized(Grid::dirichlet_box(1, 8, 1.0).unwrap(), &load_1d(), &ens, &RotheParams::new(2, None)).unwrap();
    let sys = ElasticitySystem::homogeneous(sol.macro_grid.clone(), sol.effective.mean.sym_part()).unwrap();
    for (k, st) in sol.states.iter().enumerate() {
        let direct = sys.solve(&sol.loads[k], &[0.0; 8]).unwrap();
        let scale = direct.u.iter().fold(1e-300_f64, |a, v| a.max(v.abs()));
        for (a, b) in direct.u.iter().zip(&st.u0) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
    }
    let diag = cell_diagnostics(&sol, &ens, 4, 9).unwrap();
    assert!(diag.constitutive < 1e-10 && diag.solenoidality < 1e-10 && diag.corrector_mean < 1e-10, "{diag:?}");
}

#[test]
fn homogeneous_plastic_medium_reduces_to_the_micro_solver() {
    let p = phase(1, 2.0, 0.5, true);
    let sp = spec(FieldKind::CheckerboardIid, 1, vec![p.clone(), p.clone()]);
    let ens = RveEnsemble::new(&sp, &[1, 2], 2, 2).unwrap();
    let params = RotheParams::new(3, Some(8.0));
    let macro_grid = Grid::dirichlet_box(1, 8, 1.0).unwrap();
    let sol = solve_homogenized(macro_grid.clone(), &load_1d(), &ens, &params).unwrap();
    let mut msp = sp.clone();
    msp.seed = 1;
    let real = sample_realization(&msp).unwrap();
    let micro = MicroModel::from_realization(macro_grid, &real, 1.0).unwrap();
    let traj = run_trajectory(&micro, &load_1d(), &params).unwrap();
    let nq = ens.grid().n_quad() * ens.len();
    for (a, b) in traj.states.iter().zip(&sol.states) {
        for (x, y) in a.u.iter().zip(&b.u0) {
            assert!((x - y).abs() < 1e-7 * (1.0 + x.abs()), "{x} {y}");
        }
        for (j, zj) in a.z.iter().enumerate() {
            for k in 0..nq {
                assert!((zj - b.z[j * nq + k]).abs() < 1e-7 * (1.0 + zj.abs()));
            }
        }
    }
    assert!(sol.ledger.iter().all(|e| e.energy_margin >= -1e-9));
}

#[test]
fn zero_data_gives_zero_solution() {
    let sp = spec(FieldKind::CheckerboardIid, 2, vec![phase(2, 1.0, 0.5, true), phase(2, 2.0, 0.5, true)]);
    let ens = RveEnsemble::new(&sp, &[5, 6], 2, 2).unwrap();
    let sol = solve_homogenized(Grid::dirichlet_box(2, 2, 1.0).unwrap(), &LoadProgram::new(1.0).unwrap(), &ens, &RotheParams::new(2, Some(4.0))).unwrap();
    assert!(sol.states.iter().all(|s| s.u0.iter().chain(&s.stress).chain(&s.z).all(|v| *v == 0.0)));
}

#[test]
fn plastic_run_satisfies_energy_check_and_cell_relations() {
    let sp = spec(FieldKind::CheckerboardIid, 1, vec![phase(1, 1.0, 0.5, true), phase(1, 3.0, 1.0, true)]);
    let ens = RveEnsemble::new(&sp, &[1, 2, 3], 8, 2).unwrap();
    let sol = solve_homogenized(Grid::dirichlet_box(1, 8, 1.0).unwrap(), &load_1d(), &ens, &RotheParams::new(3, Some(8.0))).unwrap();
    assert!(sol.states.last().unwrap().z.iter().any(|v| v.abs() > 1e-3));
    let weak = homogenized_energy_check(&sol, &ens).unwrap();
    assert!(weak.holds(1e-6), "{:?}", weak.residual);
    assert!(weak.interpolant_form.iter().all(|v| *v <= 1e-9 * weak.scale));
    assert!(sol.ledger.iter().all(|e| e.energy_margin >= -1e-9 * (1.0 + e.stored())));
    assert!(sol.stats.iter().all(|s| s.equilibrium <= 1e-9 && s.residual <= 1e-7));
    let diag = cell_diagnostics(&sol, &ens, 4, 9).unwrap();
    assert!(diag.constitutive < 1e-9 && diag.solenoidality < 1e-9 && diag.corrector_mean < 1e-9, "{diag:?}");
}

#[test]
fn homogeneous_check_matches_micro_residual() {
    let p = phase(1, 2.0, 0.5, true);
    let sp = spec(FieldKind::CheckerboardIid, 1, vec![p.clone(), p]);
    let ens = RveEnsemble::new(&sp, &[1], 2, 1).unwrap();
    let params = RotheParams::new(2, Some(4.0));
    let grid = Grid::dirichlet_box(1, 6, 1.0).unwrap();
    let sol = solve_homogenized(grid.clone(), &load_1d(), &ens, &params).unwrap();
    let real = sample_realization(&sp).unwrap();
    let micro = MicroModel::from_realization(grid, &real, 1.0).unwrap();
    let traj = run_trajectory(&micro, &load_1d(), &params).unwrap();
    let a = weak_solution_residual(&micro, &traj).unwrap();
    let b = homogenized_energy_check(&sol, &ens).unwrap();
    for (x, y) in a.residual.iter().zip(&b.residual) {
        assert!((x - y).abs() < 1e-8 * a.scale, "{x} {y}");
    }
}

#[test]
fn spread_shrinks_with_cell_size() {
    let sp = spec(FieldKind::CheckerboardIid, 1, vec![phase(1, 1.0, 0.0, false), phase(1, 4.0, 0.0, false)]);
    let seeds: StdVec<u64> = (1..=12).collect();
    let small = effective_tensor(&RveEnsemble::new(&sp, &seeds, 4, 1).unwrap()).unwrap();
    let large = effective_tensor(&RveEnsemble::new(&sp, &seeds, 64, 1).unwrap()).unwrap();
    assert!(large.spread_norm() < 0.5 * small.spread_norm(), "{} {}", large.spread_norm(), small.spread_norm());
}

#[test]
fn micro_runs_approach_the_homogenized_solution() {
    let sp = spec(FieldKind::CheckerboardIid, 1, vec![phase(1, 1.0, 0.5, true), phase(1, 3.0, 1.0, true)]);
    let seeds: StdVec<u64> = (1..=8).collect();
    let ens = RveEnsemble::new(&sp, &seeds, 64, 1).unwrap();
    let dict = TestFunctionDictionary::standard(&sp, DomainBox::unit(1)).unwrap();
    let sweep = MicroSweep {
        spec: &sp,
        etas: &[1.0 / 8.0, 1.0 / 32.0, 1.0 / 128.0],
        seeds: &[21, 22],
        elements_per_cell: 1,
        params: RotheParams::new(2, Some(4.0)),
    };
    let table = micro_vs_macro(&load_1d(), &sweep, Grid::dirichlet_box(1, 16, 1.0).unwrap(), &ens, &dict).unwrap();
    assert_eq!(table.rows.len(), 6);
    let u = table.series("u_L2_QT");
    assert!(u[2] < u[0], "{u:?}");
    let sigma = table.series("sigma_pairing");
    assert!(sigma[2] < sigma[0], "{sigma:?}");
}
