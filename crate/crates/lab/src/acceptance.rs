//! The acceptance suite: thirteen property checks at desk scale.
//!
//! Every criterion returns its verdict together with the tables behind it.
//! Tolerances and problem sizes are pinned here.

use std::sync::OnceLock;
use std::time::Instant;

use stochom_core::convex::{biconjugate, default_search_radius, fitzpatrick, resolvent, ConvexFn, MonotoneLaw};
use stochom_core::fem::{korn_check, loewner_le, AxisBoundary, Grid};
use stochom_core::homogenizer::{effective_tensor, ensemble_bounds, micro_vs_macro, MicroSweep, RveEnsemble};
use stochom_core::linalg::{dot, DMat};
use stochom_core::mandel::{isotropic_stiffness, sym_dim};
use stochom_core::microstructure::{ergodic_average, sample_realization, CoefficientSet, DomainBox, FieldKind, FieldSpec};
use stochom_core::rng::SplitMix64;
use stochom_core::rothe::{
    energy_report, exponents, interpolant_estimate, perturb_internal, pointwise_trajectory, run_trajectory, uniform_norms,
    weak_solution_residual, LoadProgram, MicroModel, RotheParams, RotheTrajectory,
};
use stochom_core::twoscale::{liminf_convex, QuadSequenceMember, TestFunctionDictionary};
use stochom_core::Result;

use crate::report::{Cell, RunReport, Table, Verdict};

/// Verdict of one criterion with its supporting tables.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    /// Headline quantity compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
    pub tables: Vec<Table>,
}

/// Result of running one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
    pub tables: Vec<Table>,
}

impl CriterionResult {
    /// One status line.
    pub fn line(&self) -> String {
        let budget = if self.budget_seconds.is_finite() {
            format!("of {:.0}s", self.budget_seconds)
        } else {
            "unbudgeted".to_string()
        };
        format!(
            "criterion {:>2} {} :: {} (value {:.3e}, tolerance {:.3e}, {:.1}s {budget}) {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.title,
            self.value,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

pub struct Criterion {
    pub id: u32,
    pub title: &'static str,
    pub budget_seconds: f64,
    run: fn(&Shared) -> Result<Outcome>,
}

/// Runs shared between criteria.
#[derive(Default)]
pub struct Shared {
    rothe_2d: OnceLock<Result<(MicroModel, RotheTrajectory)>>,
}

pub fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, title: "Fitzpatrick identities on and off the graph", budget_seconds: 30.0, run: fitzpatrick_identities },
        Criterion { id: 2, title: "resolvent exactness", budget_seconds: 5.0, run: resolvent_exactness },
        Criterion { id: 3, title: "conjugate involution", budget_seconds: 60.0, run: conjugate_involution },
        Criterion { id: 4, title: "Rothe energy inequality, 2D Norton-Hoff checkerboard", budget_seconds: 300.0, run: rothe_energy },
        Criterion { id: 5, title: "weak-solution residual with perturbed control", budget_seconds: 300.0, run: weak_residual },
        Criterion { id: 6, title: "uniform estimates across levels", budget_seconds: 300.0, run: uniform_estimates },
        Criterion { id: 7, title: "0D backward-Euler convergence", budget_seconds: 1.0, run: zero_dimensional },
        Criterion { id: 8, title: "linear homogenization", budget_seconds: 120.0, run: linear_homogenization },
        Criterion { id: 9, title: "ergodic averaging", budget_seconds: 60.0, run: ergodic_averaging },
        Criterion { id: 10, title: "two-scale micro vs macro", budget_seconds: 600.0, run: micro_vs_macro_1d },
        Criterion { id: 11, title: "liminf inequality", budget_seconds: 60.0, run: liminf },
        Criterion { id: 12, title: "discrete Korn constant", budget_seconds: 60.0, run: discrete_korn },
    ]
}

/// Criterion 13 reruns the others on a thread pool of a different size.
pub const DETERMINISM_ID: u32 = 13;
const DETERMINISM_TITLE: &str = "determinism of CSV bodies across reruns and thread counts";

/// Runs the selected criteria (all when `ids` is empty).
pub fn run_criteria(ids: &[u32], mut on_result: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let selected = |id: u32| ids.is_empty() || ids.contains(&id);
    let shared = Shared::default();
    let mut out = Vec::new();
    for c in criteria().into_iter().filter(|c| selected(c.id)) {
        let r = run_one(&c, &shared);
        on_result(&r);
        out.push(r);
    }
    if selected(DETERMINISM_ID) {
        let r = determinism(&out, ids);
        on_result(&r);
        out.push(r);
    }
    out
}

fn run_one(c: &Criterion, shared: &Shared) -> CriterionResult {
    let start = Instant::now();
    let outcome = (c.run)(shared);
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(o) => {
            let in_budget = seconds <= c.budget_seconds;
            let mut detail = o.detail;
            if !in_budget {
                detail = format!("{detail}; over the runtime budget");
            }
            CriterionResult {
                id: c.id,
                title: c.title,
                pass: o.pass && in_budget,
                value: o.value,
                tolerance: o.tolerance,
                detail,
                seconds,
                budget_seconds: c.budget_seconds,
                tables: o.tables,
            }
        }
        Err(e) => CriterionResult {
            id: c.id,
            title: c.title,
            pass: false,
            value: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("error: {e}"),
            seconds,
            budget_seconds: c.budget_seconds,
            tables: Vec::new(),
        },
    }
}

/// Reruns every table-producing criterion of the first pass on a two-thread
/// pool and compares CSV bodies byte for byte.
fn determinism(first: &[CriterionResult], ids: &[u32]) -> CriterionResult {
    let start = Instant::now();
    let rerun_ids: Vec<u32> = first.iter().map(|r| r.id).filter(|id| ids.is_empty() || ids.contains(id)).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().expect("thread pool");
    let shared = Shared::default();
    let second: Vec<CriterionResult> = pool.install(|| {
        criteria()
            .into_iter()
            .filter(|c| rerun_ids.contains(&c.id))
            .map(|c| run_one(&c, &shared))
            .collect()
    });
    let mut compared = 0usize;
    let mut mismatched = Vec::new();
    for (a, b) in first.iter().zip(&second) {
        if a.tables.len() != b.tables.len() {
            mismatched.push(format!("criterion {}: table count", a.id));
            continue;
        }
        for (ta, tb) in a.tables.iter().zip(&b.tables) {
            compared += 1;
            if ta.to_csv() != tb.to_csv() {
                mismatched.push(ta.name.clone());
            }
        }
    }
    let mut summary = Table::new("c13_determinism", &["criterion", "tables", "identical"]);
    for (a, b) in first.iter().zip(&second) {
        let same = a.tables.len() == b.tables.len() && a.tables.iter().zip(&b.tables).all(|(x, y)| x.to_csv() == y.to_csv());
        summary.push(vec![(a.id as usize).into(), a.tables.len().into(), (if same { "yes" } else { "no" }).into()]);
    }
    let pass = mismatched.is_empty() && compared > 0;
    CriterionResult {
        id: DETERMINISM_ID,
        title: DETERMINISM_TITLE,
        pass,
        value: mismatched.len() as f64,
        tolerance: 0.0,
        detail: if mismatched.is_empty() {
            format!("{compared} tables identical")
        } else {
            format!("differing: {}", mismatched.join(", "))
        },
        seconds: start.elapsed().as_secs_f64(),
        budget_seconds: f64::INFINITY,
        tables: vec![summary],
    }
}

/// Runs the suite into a report: one verdict and its tables per criterion.
pub fn run_suite(ids: &[u32], report: &mut RunReport) {
    let results = run_criteria(ids, |r| eprintln!("{}", r.line()));
    let mut overview = Table::new("acceptance", &["criterion", "title", "pass", "value", "tolerance"]);
    for r in results {
        overview.push(vec![
            (r.id as usize).into(),
            r.title.into(),
            (if r.pass { "pass" } else { "fail" }).into(),
            r.value.into(),
            r.tolerance.into(),
        ]);
        report.runs.push(crate::report::RunStatus {
            name: format!("criterion {}", r.id),
            status: crate::report::Status::Pass,
            error: None,
            seconds: r.seconds,
        });
        report.verdict(Verdict {
            name: format!("criterion {}: {}", r.id, r.title),
            operation: format!("acceptance::criterion_{}", r.id),
            value: r.value,
            tolerance: r.tolerance,
            margin: if r.pass { 0.0 } else { -1.0 },
            pass: r.pass,
            detail: r.detail,
        });
        report.tables.extend(r.tables);
    }
    report.tables.push(overview);
}

fn nh(dim: usize, exponent: f64) -> MonotoneLaw {
    MonotoneLaw::norton_hoff(dim, 1.0, exponent).expect("valid Norton-Hoff parameters")
}

fn linear_law() -> MonotoneLaw {
    // monotone with a skew part
    MonotoneLaw::linear(DMat::from_rows(&[&[2.0, 1.0, 0.0], &[-1.0, 1.0, 0.5], &[0.0, -0.5, 1.5]])).expect("monotone matrix")
}

fn random_vec(rng: &mut SplitMix64, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-r, r)).collect()
}

fn fitzpatrick_identities(_: &Shared) -> Result<Outcome> {
    const SAMPLES: usize = 1000;
    const ON_GRAPH_TOL: f64 = 1e-6;
    const OFF_GRAPH_TOL: f64 = 1e-8;
    let laws = [("norton-hoff r=1", nh(3, 1.0)), ("norton-hoff r=2", nh(3, 2.0)), ("linear", linear_law())];
    let mut table = Table::new("c01_fitzpatrick", &["law", "graph_points", "max_graph_error", "off_graph_points", "min_off_graph_gap"]);
    let mut pass = true;
    let mut worst = 0.0_f64;
    for (name, law) in &laws {
        let mut rng = SplitMix64::new(101);
        let mut on = 0.0_f64;
        for _ in 0..SAMPLES {
            let v = random_vec(&mut rng, 3, 3.0);
            let s = law.apply(&v);
            let f = fitzpatrick(law, &v, &s, default_search_radius(law, &v, &s))?;
            on = on.max((f - dot(&v, &s)).abs());
        }
        let mut off = f64::INFINITY;
        for _ in 0..SAMPLES {
            let v = random_vec(&mut rng, 3, 3.0);
            let s = random_vec(&mut rng, 3, 3.0);
            let f = fitzpatrick(law, &v, &s, default_search_radius(law, &v, &s))?;
            off = off.min(f - dot(&v, &s));
        }
        pass &= on <= ON_GRAPH_TOL && off >= -OFF_GRAPH_TOL;
        worst = worst.max(on);
        table.push(vec![(*name).into(), SAMPLES.into(), on.into(), SAMPLES.into(), off.into()]);
    }
    Ok(Outcome {
        pass,
        value: worst,
        tolerance: ON_GRAPH_TOL,
        detail: format!("off-graph floor {OFF_GRAPH_TOL:e}"),
        tables: vec![table],
    })
}

fn resolvent_exactness(_: &Shared) -> Result<Outcome> {
    const SAMPLES: usize = 1000;
    const TOL: f64 = 1e-10;
    let steps = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
    let laws = [("norton-hoff r=1", nh(3, 1.0)), ("norton-hoff r=2", nh(3, 2.0)), ("linear", linear_law())];
    let mut table = Table::new("c02_resolvent", &["law", "h", "samples", "max_residual"]);
    let mut worst = 0.0_f64;
    for (name, law) in &laws {
        let mut rng = SplitMix64::new(202);
        for &h in &steps {
            let mut res = 0.0_f64;
            for _ in 0..SAMPLES / steps.len() {
                let w = random_vec(&mut rng, 3, 4.0);
                let v = resolvent(law, h, &w)?;
                let rate: Vec<f64> = w.iter().zip(&v).map(|(a, b)| (a - b) / h).collect();
                res = res.max(law.graph_residual(&v, &rate));
            }
            worst = worst.max(res);
            table.push(vec![(*name).into(), h.into(), (SAMPLES / steps.len()).into(), res.into()]);
        }
    }
    Ok(Outcome {
        pass: worst <= TOL,
        value: worst,
        tolerance: TOL,
        detail: format!("{SAMPLES} samples per law"),
        tables: vec![table],
    })
}

fn conjugate_involution(_: &Shared) -> Result<Outcome> {
    const POINTS: usize = 100;
    const TOL: f64 = 1e-4;
    let phis = [
        ("power p=3", ConvexFn::power(2, 3.0)?),
        ("cosh sum", ConvexFn::cosh_sum(2)),
        ("quartic plus quadratic", ConvexFn::custom(2, true, |v| v[0].powi(4) / 4.0 + v[1] * v[1])),
    ];
    let mut table = Table::new("c03_biconjugate", &["function", "x0", "x1", "phi", "phi_biconjugate", "abs_err"]);
    let mut worst = 0.0_f64;
    for (name, phi) in &phis {
        let mut rng = SplitMix64::new(303);
        for _ in 0..POINTS {
            let v = random_vec(&mut rng, 2, 1.5);
            let exact = phi.value(&v);
            let bi = biconjugate(phi, &v, 8.0, 20.0)?;
            let err = (bi - exact).abs();
            worst = worst.max(err);
            table.push(vec![(*name).into(), v[0].into(), v[1].into(), exact.into(), bi.into(), err.into()]);
        }
    }
    Ok(Outcome {
        pass: worst <= TOL,
        value: worst,
        tolerance: TOL,
        detail: format!("{} points", POINTS * phis.len()),
        tables: vec![table],
    })
}

fn phase(d: usize, lambda: f64, mu: f64, hardening: f64, law: MonotoneLaw) -> CoefficientSet {
    CoefficientSet::new(isotropic_stiffness(d, lambda, mu), DMat::scalar(sym_dim(d), hardening), law).expect("valid phase")
}

/// 2D two-phase Norton-Hoff checkerboard, cells of width 1/8 on the unit square.
fn checkerboard_model(elements: usize) -> Result<MicroModel> {
    let spec = FieldSpec {
        kind: FieldKind::CheckerboardIid,
        dim: 2,
        cell_size: 1.0,
        phases: vec![phase(2, 1.0, 1.0, 0.5, nh(3, 1.0)), phase(2, 3.0, 2.0, 1.0, nh(3, 1.0))],
        probabilities: vec![0.5, 0.5],
        seed: 404,
    };
    let real = sample_realization(&spec)?;
    MicroModel::from_realization(Grid::dirichlet_box(2, elements, 1.0)?, &real, 1.0 / 8.0)
}

fn checkerboard_load() -> LoadProgram {
    LoadProgram::new(1.0)
        .expect("positive horizon")
        .with_body_force(|x: &[f64], t: f64| vec![60.0 * t * (1.0 + x[1]), -30.0 * t])
}

fn rothe_2d(shared: &Shared) -> Result<&(MicroModel, RotheTrajectory)> {
    shared
        .rothe_2d
        .get_or_init(|| {
            let model = checkerboard_model(64)?;
            let traj = run_trajectory(&model, &checkerboard_load(), &RotheParams::paper(6))?;
            Ok((model, traj))
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn rothe_energy(shared: &Shared) -> Result<Outcome> {
    const TOL: f64 = 1e-8;
    let (model, traj) = rothe_2d(shared)?;
    let rep = energy_report(model, traj);
    let mut table = crate::report::ledger_table("c04_energy_ledger", &rep.entries);
    table.header.push("sweeps".into());
    for (k, row) in table.rows.iter_mut().enumerate() {
        let sweeps = if k == 0 { 0 } else { traj.stats[k - 1].sweeps };
        row.push(sweeps.into());
    }
    let zmax = traj.states.last().expect("nonempty").z.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    // the margin is zero at step 0 by construction
    let smallest = rep.entries[1..].iter().map(|e| e.energy_margin).fold(f64::INFINITY, f64::min) / rep.scale;
    Ok(Outcome {
        pass: rep.holds() && zmax > 0.0,
        value: -smallest,
        tolerance: TOL,
        detail: format!("64x64 grid, 64 steps, smallest relative margin {smallest:.3e}, max |z| = {zmax:.3e}"),
        tables: vec![table],
    })
}

fn weak_residual(shared: &Shared) -> Result<Outcome> {
    const TOL: f64 = 1e-5;
    let (model, traj) = rothe_2d(shared)?;
    let weak = weak_solution_residual(model, traj)?;
    let perturbed = perturb_internal(model, traj, 1e-2, 505)?;
    let control = weak_solution_residual(model, &perturbed)?;
    let rel = weak.max_residual() / weak.scale;
    let control_rel = control.max_residual() / control.scale;
    let mut table = Table::new("c05_weak_residual", &["t", "residual", "interpolant_form", "perturbed_residual"]);
    for i in 0..weak.times.len() {
        table.push(vec![
            weak.times[i].into(),
            weak.residual[i].into(),
            weak.interpolant_form[i].into(),
            control.residual[i].into(),
        ]);
    }
    Ok(Outcome {
        pass: rel <= TOL && control_rel > 10.0 * TOL,
        value: rel,
        tolerance: TOL,
        detail: format!("perturbed control {control_rel:.3e} (needs > {:.0e})", 10.0 * TOL),
        tables: vec![table],
    })
}

fn uniform_estimates(_: &Shared) -> Result<Outcome> {
    const SPREAD: f64 = 2.0;
    let model = checkerboard_model(16)?;
    let program = checkerboard_load();
    let (p, q) = exponents(&model);
    let mut table = Table::new(
        "c06_uniform_norms",
        &["level", "displacement", "stress", "internal", "hardening", "driving_force", "interp_lhs_q", "interp_rhs_q", "interp_lhs_2", "interp_rhs_2", "interp_lhs_p", "interp_rhs_p"],
    );
    let mut norms = Vec::new();
    let mut interp_ok = true;
    for level in 4..=7u32 {
        let traj = run_trajectory(&model, &program, &RotheParams::paper(level))?;
        let n = uniform_norms(&model, &traj).as_array();
        let mut row: Vec<Cell> = vec![(level as usize).into()];
        row.extend(n.iter().map(|v| Cell::Float(*v)));
        for r in [q, 2.0, p] {
            let (lhs, rhs) = interpolant_estimate(&model, &traj, r);
            interp_ok &= lhs <= rhs * (1.0 + 1e-12);
            row.push(lhs.into());
            row.push(rhs.into());
        }
        table.push(row);
        norms.push(n);
    }
    let mut ratio = 1.0_f64;
    let mut finite = true;
    for k in 0..5 {
        let col: Vec<f64> = norms.iter().map(|n| n[k]).collect();
        finite &= col.iter().all(|v| v.is_finite() && *v > 0.0);
        let (lo, hi) = col.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), v| (a.min(*v), b.max(*v)));
        ratio = ratio.max(hi / lo);
    }
    Ok(Outcome {
        pass: finite && ratio < SPREAD && interp_ok,
        value: ratio,
        tolerance: SPREAD,
        detail: format!("16x16 grid, levels 4..7, interpolant estimate {}", if interp_ok { "holds" } else { "violated" }),
        tables: vec![table],
    })
}

fn zero_dimensional(_: &Shared) -> Result<Outcome> {
    const RATIO: f64 = 0.5;
    const RATIO_TOL: f64 = 0.1;
    let law = MonotoneLaw::linear(DMat::identity(1))?;
    let exact = 1.0 - (-1.0_f64).exp();
    let mut table = Table::new("c07_zero_dim", &["steps", "z_final", "abs_err", "ratio"]);
    let mut errors: Vec<f64> = Vec::new();
    let mut worst = 0.0_f64;
    for k in 0..5 {
        let steps = 8usize << k;
        let z = pointwise_trajectory(&law, &DMat::identity(1), 0.0, &|_| vec![1.0], &[0.0], 1.0, steps)?;
        let zf = z.last().expect("nonempty")[0];
        let err = (zf - exact).abs();
        let ratio = errors.last().map_or(f64::NAN, |e| err / e);
        if k > 0 {
            worst = worst.max((ratio - RATIO).abs());
        }
        table.push(vec![steps.into(), zf.into(), err.into(), ratio.into()]);
        errors.push(err);
    }
    Ok(Outcome {
        pass: worst <= RATIO_TOL,
        value: worst,
        tolerance: RATIO_TOL,
        detail: "largest |ratio - 0.5| over 4 halvings".into(),
        tables: vec![table],
    })
}

fn two_phase_1d(kind: FieldKind, c: [f64; 2]) -> FieldSpec {
    let ph = |v: f64| CoefficientSet::new(DMat::scalar(1, v), DMat::zeros(1, 1), MonotoneLaw::zero(1)).expect("valid phase");
    FieldSpec {
        kind,
        dim: 1,
        cell_size: 1.0,
        phases: vec![ph(c[0]), ph(c[1])],
        probabilities: vec![0.5, 0.5],
        seed: 0,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn linear_homogenization(_: &Shared) -> Result<Outcome> {
    const LAMINATE_TOL: f64 = 1e-10;
    const SYMMETRY_TOL: f64 = 1e-10;
    const REPETITIONS: u64 = 8;
    const SAMPLES: u64 = 8;
    // laminate: cells of 16 layers whose realizations carry exactly equal fractions
    let spec = two_phase_1d(FieldKind::Laminate1d, [1.0, 2.0]);
    let layers = 16;
    let mut seeds = Vec::new();
    let mut seed = 1u64;
    while seeds.len() < SAMPLES as usize {
        let mut sp = spec.clone();
        sp.seed = seed;
        let real = sample_realization(&sp)?;
        let ones = (0..layers).filter(|&i| real.phase_at_lattice(&[i as f64 + 0.5]) == 1).count();
        if 2 * ones == layers {
            seeds.push(seed);
        }
        seed += 1;
    }
    let lam = effective_tensor(&RveEnsemble::new(&spec, &seeds, layers, 2)?)?;
    let lam_err = (lam.mean[(0, 0)] - 4.0 / 3.0).abs();
    // 2D checkerboard
    let ph = |l: f64, m: f64| phase(2, l, m, 0.0, MonotoneLaw::zero(3));
    let cb = FieldSpec {
        kind: FieldKind::CheckerboardIid,
        dim: 2,
        cell_size: 1.0,
        phases: vec![ph(1.0, 1.0), ph(4.0, 3.0)],
        probabilities: vec![0.5, 0.5],
        seed: 0,
    };
    let mut spreads = Table::new("c08_spread", &["repetition", "cells_per_axis", "spread", "c00", "c11", "c22", "asymmetry", "within_bounds"]);
    let (mut small, mut large) = (Vec::new(), Vec::new());
    let mut bounds_ok = true;
    let mut asym_max = 0.0_f64;
    for rep in 0..REPETITIONS {
        for (k, sink) in [(8usize, &mut small), (16usize, &mut large)] {
            let seeds: Vec<u64> = (0..SAMPLES).map(|i| 1000 * (rep + 1) + i).collect();
            let ens = RveEnsemble::new(&cb, &seeds, k, 2)?;
            let eff = effective_tensor(&ens)?;
            let (voigt, reuss) = ensemble_bounds(&ens);
            let sym = eff.mean.sym_part();
            let within = loewner_le(&reuss, &sym, 1e-9) && loewner_le(&sym, &voigt, 1e-9);
            let mut asym = 0.0_f64;
            for i in 0..3 {
                for j in 0..3 {
                    asym = asym.max((eff.mean[(i, j)] - eff.mean[(j, i)]).abs());
                }
            }
            bounds_ok &= within;
            asym_max = asym_max.max(asym);
            sink.push(eff.spread_norm());
            spreads.push(vec![
                (rep as usize).into(),
                k.into(),
                eff.spread_norm().into(),
                eff.mean[(0, 0)].into(),
                eff.mean[(1, 1)].into(),
                eff.mean[(2, 2)].into(),
                asym.into(),
                (if within { "yes" } else { "no" }).into(),
            ]);
        }
    }
    let (m_small, m_large) = (median(small), median(large));
    let mut laminate = Table::new("c08_laminate", &["seed", "effective"]);
    for (s, c) in seeds.iter().zip(&lam.samples) {
        laminate.push(vec![(*s).into(), c[(0, 0)].into()]);
    }
    let pass = lam_err <= LAMINATE_TOL && bounds_ok && asym_max <= SYMMETRY_TOL && m_large <= m_small;
    Ok(Outcome {
        pass,
        value: lam_err,
        tolerance: LAMINATE_TOL,
        detail: format!(
            "laminate {:.15}, asymmetry {asym_max:.1e}, bounds {}, median spread {m_small:.3e} -> {m_large:.3e}",
            lam.mean[(0, 0)],
            if bounds_ok { "hold" } else { "violated" }
        ),
        tables: vec![laminate, spreads],
    })
}

fn ergodic_averaging(_: &Shared) -> Result<Outcome> {
    const SEEDS: u64 = 100;
    const SIGMAS: f64 = 6.0;
    let spec = two_phase_1d(FieldKind::CheckerboardIid, [1.0, 2.0]);
    let spec = FieldSpec { dim: 2, phases: vec![phase(2, 1.0, 1.0, 0.0, MonotoneLaw::zero(3)), phase(2, 2.0, 2.0, 0.0, MonotoneLaw::zero(3))], ..spec };
    let indicator = |k: usize, _: &CoefficientSet| if k == 0 { 1.0 } else { 0.0 };
    let domain = DomainBox::unit(2);
    let eta = 1.0 / 64.0;
    let sigma = (0.25_f64 / (64.0 * 64.0)).sqrt();
    let mut table = Table::new("c09_ergodic", &["seed", "average_eta", "error_eta", "average_eta_over_4", "error_eta_over_4"]);
    let (mut coarse, mut fine) = (Vec::new(), Vec::new());
    let mut worst = 0.0_f64;
    for seed in 1..=SEEDS {
        let mut sp = spec.clone();
        sp.seed = seed;
        let real = sample_realization(&sp)?;
        let a = ergodic_average(&real, &indicator, &domain, eta, 1)?;
        let b = ergodic_average(&real, &indicator, &domain, eta / 4.0, 1)?;
        worst = worst.max((a - 0.5).abs() / sigma);
        coarse.push((a - 0.5).abs());
        fine.push((b - 0.5).abs());
        table.push(vec![seed.into(), a.into(), (a - 0.5).abs().into(), b.into(), (b - 0.5).abs().into()]);
    }
    let (mc, mf) = (median(coarse), median(fine));
    Ok(Outcome {
        pass: worst <= SIGMAS && mf <= mc,
        value: worst,
        tolerance: SIGMAS,
        detail: format!("largest deviation in binomial sigmas; median error {mc:.3e} -> {mf:.3e}"),
        tables: vec![table],
    })
}

fn micro_vs_macro_1d(_: &Shared) -> Result<Outcome> {
    let law = nh(1, 1.0);
    let ph = |c: f64, l: f64| CoefficientSet::new(DMat::scalar(1, c), DMat::scalar(1, l), law.clone()).expect("valid phase");
    let spec = FieldSpec {
        kind: FieldKind::Laminate1d,
        dim: 1,
        cell_size: 1.0,
        phases: vec![ph(1.0, 0.5), ph(3.0, 1.0)],
        probabilities: vec![0.5, 0.5],
        seed: 0,
    };
    let rve_seeds: Vec<u64> = (1..=16).collect();
    let ens = RveEnsemble::new(&spec, &rve_seeds, 256, 1)?;
    let dict = TestFunctionDictionary::standard(&spec, DomainBox::unit(1))?;
    let micro_seeds: Vec<u64> = (101..=116).collect();
    let etas = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let sweep = MicroSweep {
        spec: &spec,
        etas: &etas,
        seeds: &micro_seeds,
        elements_per_cell: 4,
        params: RotheParams::new(4, Some(4.0)),
    };
    let program = LoadProgram::new(1.0)
        .expect("positive horizon")
        .with_body_force(|x: &[f64], t: f64| vec![8.0 * t * (1.0 + x[0])]);
    let table = micro_vs_macro(&program, &sweep, Grid::new(&[64], &[1.0], &[AxisBoundary::Dirichlet])?, &ens, &dict)?;
    let mut summary = Table::new("c10_micro_vs_macro", &["eta", "metric", "value"]);
    for m in table.summary() {
        summary.push(vec![m.eta.into(), m.metric.into(), m.value.into()]);
    }
    let mut runs = Table::new("c10_runs", &["eta", "seed", "u_error", "u_norm", "sigma_pairing_error", "z_pairing_error"]);
    for r in &table.rows {
        runs.push(vec![r.eta.into(), r.seed.into(), r.u_error.into(), r.u_norm.into(), r.sigma_pairing_error.into(), r.z_pairing_error.into()]);
    }
    let u = table.series("u_L2_QT");
    let s = table.series("sigma_pairing");
    let z = table.series("z_pairing");
    let strictly = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let pass = strictly(&u) && strictly(&s) && strictly(&z);
    let last_ratio = u[2] / u[0];
    Ok(Outcome {
        pass,
        value: last_ratio,
        tolerance: 1.0,
        detail: format!("u {}, sigma {}, z {}", series(&u), series(&s), series(&z)),
        tables: vec![summary, runs],
    })
}

fn series(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn liminf(_: &Shared) -> Result<Outcome> {
    const TOL: f64 = 1e-6;
    let spec = two_phase_1d(FieldKind::Laminate1d, [1.0, 3.0]);
    let mut sp = spec.clone();
    sp.seed = 1111;
    let real = sample_realization(&sp)?;
    let level = |k: usize| if k == 0 { 1.0 } else { -0.5 };
    let amp = |x: f64| 1.0 + x;
    let etas = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
    let grids: Vec<Grid> = etas
        .iter()
        .map(|eta| Grid::new(&[(8.0 / (eta * eta)) as usize], &[1.0], &[AxisBoundary::Dirichlet]))
        .collect::<Result<_>>()?;
    // two-scale limit a(x)·h(τω) plus an oscillation at scale η² that only
    // the convex functional sees
    let fields: Vec<Vec<f64>> = etas
        .iter()
        .zip(&grids)
        .map(|(&eta, g)| {
            g.sample_quad(1, &|x| {
                let k = real.phase_at(x, eta);
                vec![amp(x[0]) * (level(k) + (2.0 * std::f64::consts::PI * x[0] / (eta * eta)).sin())]
            })
        })
        .collect();
    let seq: Vec<QuadSequenceMember> = etas
        .iter()
        .zip(&grids)
        .zip(&fields)
        .map(|((&eta, grid), values)| QuadSequenceMember { eta, grid, values })
        .collect();
    let profile = |x: &[f64], k: usize| vec![amp(x[0]) * level(k)];
    let domain = DomainBox::unit(1);
    let quad = ConvexFn::quadratic(DMat::identity(1).scaled(2.0));
    let q = liminf_convex(&quad, &seq, &sp, &domain, &profile, TOL)?;
    let affine = ConvexFn::custom(1, true, |v: &[f64]| 3.0 * v[0] - 1.0);
    let a = liminf_convex(&affine, &seq, &sp, &domain, &profile, TOL)?;
    // Monte Carlo bound: 4 standard deviations of 3∫a(h(τω) − E h) over 1/η iid cells
    let finest = *etas.last().expect("nonempty");
    let h_sd = 0.75;
    let a2: f64 = 7.0 / 3.0;
    let mc = 4.0 * 3.0 * h_sd * (finest * a2).sqrt();
    let affine_err = (a.values.last().expect("nonempty") - a.limit_side).abs();
    let mut table = Table::new("c11_liminf", &["functional", "eta", "value", "limit_side"]);
    for (name, rep) in [("quadratic", &q), ("affine", &a)] {
        for (eta, v) in rep.etas.iter().zip(&rep.values) {
            table.push(vec![name.into(), (*eta).into(), (*v).into(), rep.limit_side.into()]);
        }
    }
    Ok(Outcome {
        pass: q.holds && affine_err <= mc,
        value: q.limit_side - q.tail_min,
        tolerance: TOL,
        detail: format!("Jensen gap {:.3e}; affine deviation {affine_err:.3e} within Monte Carlo bound {mc:.3e}", q.gap()),
        tables: vec![table],
    })
}

/// Periodic test fields: divergence-free Fourier modes, gradients of random
/// potentials, mixed modes and nodal noise.
fn korn_samples(grid: &Grid, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|i| {
            let (kx, ky) = (1 + (rng.next_u64() % 4) as i32, (rng.next_u64() % 5) as i32);
            let (a, b, c) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2.0 * PI));
            let (kx, ky) = (kx as f64, ky as f64);
            let mode = i % 4;
            let mut v = grid.interpolate(2, &|x| {
                let ph = 2.0 * PI * (kx * x[0] + ky * x[1]) + c;
                let (s, co) = ph.sin_cos();
                match mode {
                    // curl of a·sin: divergence-free
                    0 => vec![a * ky * co, -a * kx * co],
                    // gradient of a·sin
                    1 => vec![a * kx * co, a * ky * co],
                    _ => vec![a * s, b * co],
                }
            });
            if mode == 3 {
                v.iter_mut().for_each(|x| *x += 0.3 * rng.uniform(-1.0, 1.0));
            }
            v
        })
        .collect()
}

fn discrete_korn(_: &Shared) -> Result<Outcome> {
    const CHANGE: f64 = 0.10;
    const SAMPLES: usize = 200;
    let mut table = Table::new("c12_korn", &["cells_per_axis", "constant", "mean_ratio", "degenerate"]);
    let mut constants = Vec::new();
    for n in [16usize, 32] {
        let grid = Grid::periodic_cell(2, n, 1.0)?;
        let rep = korn_check(&grid, &korn_samples(&grid, SAMPLES, 1212), 2.0)?;
        let mean = rep.ratios.iter().sum::<f64>() / rep.ratios.len() as f64;
        table.push(vec![n.into(), rep.constant.into(), mean.into(), rep.degenerate.into()]);
        constants.push(rep.constant);
    }
    let change = (constants[1] - constants[0]).abs() / constants[0];
    Ok(Outcome {
        pass: constants.iter().all(|c| c.is_finite()) && change < CHANGE,
        value: change,
        tolerance: CHANGE,
        detail: format!("C2 = {:.4} (16x16), {:.4} (32x32)", constants[0], constants[1]),
        tables: vec![table],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stochom_core::linalg::norm;

    #[test]
    fn criteria_ids_are_unique_and_ordered() {
        let ids: Vec<u32> = criteria().iter().map(|c| c.id).collect();
        assert_eq!(ids, (1..=12).collect::<Vec<_>>());
    }

    #[test]
    fn zero_dimensional_criterion_runs_alone() {
        let out = run_criteria(&[7], |_| {});
        assert_eq!(out.len(), 1);
        assert!(out[0].pass, "{}", out[0].line());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn korn_samples_are_deterministic() {
        let g = Grid::periodic_cell(2, 4, 1.0).unwrap();
        assert_eq!(korn_samples(&g, 5, 3), korn_samples(&g, 5, 3));
        let v = &korn_samples(&g, 1, 3)[0];
        assert!(norm(v) > 0.0);
    }
}
