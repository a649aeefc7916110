use proptest::prelude::*;
use stochom_core::convex::{fitzpatrick_gap, resolvent, MonotoneLaw};
use stochom_core::fem::Grid;
use stochom_core::homogenizer::{effective_tensor, ensemble_bounds, RveEnsemble};
use stochom_core::linalg::{dot, norm, sub, DMat};
use stochom_core::mandel::isotropic_stiffness;
use stochom_core::microstructure::{sample_realization, CoefficientSet, FieldKind, FieldSpec};
use stochom_core::rothe::{run_trajectory, LoadProgram, MicroModel, RotheParams};

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, 3)
}

fn law() -> impl Strategy<Value = MonotoneLaw> {
    prop_oneof![
        (0.1..2.0f64, 1.0..3.0f64).prop_map(|(y, r)| MonotoneLaw::norton_hoff(3, y, r).unwrap()),
        (0.1..3.0f64).prop_map(|a| MonotoneLaw::linear(DMat::diag(&[a, 0.5 * a, 2.0 * a])).unwrap()),
    ]
}

fn phase(lambda: f64, mu: f64) -> CoefficientSet {
    CoefficientSet::new(isotropic_stiffness(2, lambda, mu), DMat::scalar(3, 0.5), MonotoneLaw::zero(3)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resolvent_is_nonexpansive_and_lands_on_the_graph(l in law(), h in 0.01..2.0f64, a in vec3(), b in vec3()) {
        let ra = resolvent(&l, h, &a).unwrap();
        let rb = resolvent(&l, h, &b).unwrap();
        prop_assert!(norm(&sub(&ra, &rb)) <= norm(&sub(&a, &b)) * (1.0 + 1e-9) + 1e-12);
        let w: Vec<f64> = a.iter().zip(&ra).map(|(x, r)| (x - r) / h).collect();
        prop_assert!(l.graph_residual(&ra, &w) <= 1e-8 * (1.0 + norm(&a)));
    }

    #[test]
    fn fitzpatrick_dominates_the_pairing_and_vanishes_on_the_graph(l in law(), v in vec3(), w in vec3()) {
        prop_assert!(fitzpatrick_gap(&l, &v, &w).unwrap() >= 0.0);
        let g = l.apply(&v);
        prop_assert!(fitzpatrick_gap(&l, &v, &g).unwrap() <= 1e-6 * (1.0 + norm(&v) * norm(&g)));
    }

    #[test]
    fn laws_are_monotone(l in law(), a in vec3(), b in vec3()) {
        let d = sub(&l.apply(&a), &l.apply(&b));
        prop_assert!(dot(&d, &sub(&a, &b)) >= -1e-10);
    }

    #[test]
    fn effective_tensor_sits_between_reuss_and_voigt(
        l0 in 0.5..3.0f64, m0 in 0.5..3.0f64, l1 in 0.5..3.0f64, m1 in 0.5..3.0f64, seed in 0u64..1000,
    ) {
        let spec = FieldSpec {
            kind: FieldKind::CheckerboardIid,
            dim: 2,
            cell_size: 1.0,
            phases: vec![phase(l0, m0), phase(l1, m1)],
            probabilities: vec![0.5, 0.5],
            seed,
        };
        let ens = RveEnsemble::new(&spec, &[seed, seed + 1], 4, 1).unwrap();
        let eff = effective_tensor(&ens).unwrap();
        let (voigt, reuss) = ensemble_bounds(&ens);
        prop_assert!(eff.mean.asymmetry() < 1e-10);
        let upper = voigt.sub(&eff.mean).sym_part().min_max_eigen().0;
        let lower = eff.mean.sub(&reuss).sym_part().min_max_eigen().0;
        prop_assert!(upper >= -1e-9 && lower >= -1e-9, "{upper} {lower}");
    }

    #[test]
    fn realizations_depend_only_on_the_seed(seed in any::<u64>(), i in -50i64..50, j in -50i64..50) {
        let spec = FieldSpec {
            kind: FieldKind::CheckerboardIid,
            dim: 2,
            cell_size: 1.0,
            phases: vec![phase(1.0, 1.0), phase(2.0, 2.0)],
            probabilities: vec![0.3, 0.7],
            seed,
        };
        let a = sample_realization(&spec).unwrap();
        let b = sample_realization(&spec.clone()).unwrap();
        prop_assert_eq!(a.lattice_value([i, j, 0]), b.lattice_value([i, j, 0]));
        prop_assert_eq!(a.shifted([1, 0, 0]).lattice_value([i, j, 0]), a.lattice_value([i + 1, j, 0]));
    }

    #[test]
    fn energy_margin_is_nonnegative(seed in 0u64..500, fx in -40.0..40.0f64, fy in -40.0..40.0f64, level in 1u32..4) {
        let nh = |lambda: f64, mu: f64, hard: f64| {
            CoefficientSet::new(
                isotropic_stiffness(2, lambda, mu),
                DMat::scalar(3, hard),
                MonotoneLaw::norton_hoff(3, 1.0, 1.0).unwrap(),
            )
            .unwrap()
        };
        let spec = FieldSpec {
            kind: FieldKind::CheckerboardIid,
            dim: 2,
            cell_size: 1.0,
            phases: vec![nh(1.0, 1.0, 0.5), nh(3.0, 2.0, 1.0)],
            probabilities: vec![0.5, 0.5],
            seed,
        };
        let real = sample_realization(&spec).unwrap();
        let model = MicroModel::from_realization(Grid::dirichlet_box(2, 8, 1.0).unwrap(), &real, 0.25).unwrap();
        let program = LoadProgram::new(1.0)
            .unwrap()
            .with_body_force(move |x: &[f64], t: f64| vec![fx * t * (1.0 + x[1]), fy * t]);
        let traj = run_trajectory(&model, &program, &RotheParams::paper(level)).unwrap();
        for e in &traj.ledger {
            prop_assert!(e.energy_margin >= -1e-8 * (1.0 + e.work_cum.abs()), "{e:?}");
        }
    }
}
