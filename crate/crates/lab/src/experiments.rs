//! Experiment runners: one per configuration kind.

use std::time::Instant;

use serde_json::{json, Value};
use stochom_core::fem::{loewner_le, Grid};
use stochom_core::homogenizer::{
    cell_diagnostics, effective_tensor, ensemble_bounds, homogenized_energy_check, micro_vs_macro, solve_with_effective, EffectiveTensor,
    MicroSweep, RveEnsemble,
};
use stochom_core::linalg::DMat;
use stochom_core::microstructure::{sample_realization, DomainBox};
use stochom_core::rothe::{energy_report, run_trajectory, weak_solution_residual, MicroModel};
use stochom_core::twoscale::TestFunctionDictionary;
use stochom_core::Result;

use crate::acceptance;
use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::report::{ledger_table, nodal_table, Cell, RunReport, Status, Table, Verdict};

/// Command-line overrides applied on top of a configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> std::result::Result<(), ConfigError> {
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        cfg.validate()
    }
}

/// Runs the experiment; kernel errors are captured into the report.
pub fn run(cfg: &ExperimentConfig) -> RunReport {
    let mut report = RunReport::new(&cfg.name, cfg.kind.as_str(), cfg.digest());
    let outcome = match cfg.kind {
        ExperimentKind::MicroRun => micro_run(cfg, &mut report),
        ExperimentKind::HomogenizedRun => homogenized_run(cfg, &mut report),
        ExperimentKind::EtaSweep => eta_sweep(cfg, &mut report),
        ExperimentKind::CellProblem => cell_problem(cfg, &mut report),
        ExperimentKind::AcceptanceSuite => {
            acceptance::run_suite(&cfg.criteria, &mut report);
            Ok(())
        }
    };
    if let Err(e) = outcome {
        match e {
            Failure::Config(e) => {
                report.status = report.status.combine(Status::ConfigError);
                report.runs.push(crate::report::RunStatus {
                    name: cfg.name.clone(),
                    status: Status::ConfigError,
                    error: Some(e.to_string()),
                    seconds: 0.0,
                });
            }
            Failure::Kernel => {}
        }
    }
    report
}

enum Failure {
    Config(ConfigError),
    /// Already recorded in the report.
    Kernel,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

/// Times `f` and records its status under `name`.
fn timed<T>(report: &mut RunReport, name: &str, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, Failure> {
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    match out {
        Ok(v) => {
            report.record_run(name, secs, Ok(()));
            Ok(v)
        }
        Err(e) => {
            report.record_run(name, secs, Err(&e));
            Err(Failure::Kernel)
        }
    }
}

fn macro_grid(cfg: &ExperimentConfig) -> std::result::Result<Grid, Failure> {
    let g = cfg.grid.as_ref().expect("validated");
    let d = cfg.field.as_ref().expect("validated").dim;
    Grid::dirichlet_box(d, g.cells_per_axis, g.length).map_err(|e| Failure::Config(ConfigError {
        field: Some("grid".into()),
        message: e.to_string(),
    }))
}

fn micro_run(cfg: &ExperimentConfig, report: &mut RunReport) -> std::result::Result<(), Failure> {
    let program = cfg.load_program()?;
    let params = cfg.rothe_params()?;
    let grid = macro_grid(cfg)?;
    let eta = cfg.etas[0];
    for &seed in &cfg.seeds {
        let spec = cfg.field_spec(seed)?;
        let name = format!("micro_seed{seed}");
        let (model, traj) = timed(report, &name, || {
            let real = sample_realization(&spec)?;
            let model = MicroModel::from_realization(grid.clone(), &real, eta)?;
            let traj = run_trajectory(&model, &program, &params)?;
            Ok((model, traj))
        })?;
        let energy = energy_report(&model, &traj);
        report.verdict(
            Verdict::at_least(
                &format!("{name}/energy_margin"),
                "rothe::energy_report",
                energy.min_margin,
                -cfg.tolerances.energy_margin * energy.scale,
            )
            .with_detail(format!("scale {:e}", energy.scale)),
        );
        let weak = timed(report, &format!("{name}/weak_residual"), || weak_solution_residual(&model, &traj))?;
        report.verdict(
            Verdict::at_most(
                &format!("{name}/weak_residual"),
                "rothe::weak_solution_residual",
                weak.max_residual(),
                cfg.tolerances.weak_residual * weak.scale,
            )
            .with_detail(format!("scale {:e}", weak.scale)),
        );
        let mut stats = Table::new(format!("{name}_steps"), &["step", "sweeps", "residual", "equilibrium", "max_gap"]);
        for (k, s) in traj.stats.iter().enumerate() {
            stats.push(vec![(k + 1).into(), s.sweeps.into(), s.residual.into(), s.equilibrium.into(), s.max_gap.into()]);
        }
        report.tables.push(stats);
        report.tables.push(ledger_table(&format!("{name}_ledger"), &traj.ledger));
        let last = traj.states.last().expect("nonempty");
        report
            .tables
            .push(nodal_table(&format!("{name}_u_final"), model.grid(), &last.u, model.grid().dim()));
        report.ledgers.push((name, traj.ledger.clone()));
    }
    Ok(())
}

fn ensemble(cfg: &ExperimentConfig, report: &mut RunReport) -> std::result::Result<(RveEnsemble, EffectiveTensor), Failure> {
    let rve = cfg.rve.as_ref().expect("validated");
    let spec = cfg.field_spec(0)?;
    timed(report, "effective_tensor", || {
        let ens = RveEnsemble::new(&spec, &rve.seeds, rve.cells_per_axis, rve.elements_per_cell)?;
        let eff = effective_tensor(&ens)?;
        Ok((ens, eff))
    })
}

fn matrix_json(m: &DMat) -> Value {
    let (r, c) = (m.rows(), m.cols());
    json!({
        "rows": r,
        "cols": c,
        "row_major": (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect::<Vec<f64>>(),
    })
}

fn effective_json(eff: &EffectiveTensor) -> Value {
    json!({ "mean": matrix_json(&eff.mean), "spread": matrix_json(&eff.spread), "samples": eff.samples.len() })
}

fn tensor_table(eff: &EffectiveTensor) -> Table {
    let mut t = Table::new("effective_tensor", &["i", "j", "mean", "spread"]);
    let s = eff.mean.rows();
    for i in 0..s {
        for j in 0..s {
            t.push(vec![i.into(), j.into(), eff.mean[(i, j)].into(), eff.spread[(i, j)].into()]);
        }
    }
    t
}

fn tensor_verdicts(cfg: &ExperimentConfig, ens: &RveEnsemble, eff: &EffectiveTensor, report: &mut RunReport) {
    let s = eff.mean.rows();
    let mut asym = 0.0_f64;
    for i in 0..s {
        for j in 0..s {
            asym = asym.max((eff.mean[(i, j)] - eff.mean[(j, i)]).abs());
        }
    }
    report.verdict(Verdict::at_most(
        "effective_tensor/symmetry",
        "homogenizer::effective_tensor",
        asym,
        cfg.tolerances.symmetry * eff.mean.max_abs().max(1.0),
    ));
    let (voigt, reuss) = ensemble_bounds(ens);
    let sym = eff.mean.sym_part();
    report.verdict(Verdict::flag(
        "effective_tensor/voigt_reuss",
        "homogenizer::ensemble_bounds",
        loewner_le(&reuss, &sym, 1e-9) && loewner_le(&sym, &voigt, 1e-9),
    ));
}

fn cell_problem(cfg: &ExperimentConfig, report: &mut RunReport) -> std::result::Result<(), Failure> {
    let (ens, eff) = ensemble(cfg, report)?;
    tensor_verdicts(cfg, &ens, &eff, report);
    report.results.insert("effective_tensor".into(), effective_json(&eff));
    report.tables.push(tensor_table(&eff));
    Ok(())
}

fn homogenized_run(cfg: &ExperimentConfig, report: &mut RunReport) -> std::result::Result<(), Failure> {
    let program = cfg.load_program()?;
    let params = cfg.rothe_params()?;
    let grid = macro_grid(cfg)?;
    let (ens, eff) = ensemble(cfg, report)?;
    tensor_verdicts(cfg, &ens, &eff, report);
    report.results.insert("effective_tensor".into(), effective_json(&eff));
    report.tables.push(tensor_table(&eff));
    let sol = timed(report, "solve_homogenized", || solve_with_effective(grid, &program, &ens, &params, eff))?;
    let weak = timed(report, "homogenized_energy_check", || homogenized_energy_check(&sol, &ens))?;
    report.verdict(Verdict::at_most(
        "homogenized/energy_check",
        "homogenizer::homogenized_energy_check",
        weak.max_residual(),
        cfg.tolerances.weak_residual * weak.scale,
    ));
    let eq = sol.stats.iter().map(|s| s.equilibrium).fold(0.0, f64::max);
    report.verdict(Verdict::at_most("homogenized/equilibrium", "homogenizer::solve_homogenized", eq, 1e-9));
    let diag = timed(report, "cell_diagnostics", || cell_diagnostics(&sol, &ens, 4, cfg.seeds[0]))?;
    report.verdict(Verdict::at_most("homogenized/constitutive", "homogenizer::cell_diagnostics", diag.constitutive, 1e-9));
    report.verdict(Verdict::at_most("homogenized/solenoidality", "homogenizer::cell_diagnostics", diag.solenoidality, 1e-8));
    report.verdict(Verdict::at_most("homogenized/corrector_mean", "homogenizer::cell_diagnostics", diag.corrector_mean, 1e-10));
    report.tables.push(ledger_table("homogenized_ledger", &sol.ledger));
    let last = sol.states.last().expect("nonempty");
    report
        .tables
        .push(nodal_table("homogenized_u0_final", &sol.macro_grid, &last.u0, sol.macro_grid.dim()));
    report.ledgers.push(("homogenized".into(), sol.ledger));
    Ok(())
}

fn eta_sweep(cfg: &ExperimentConfig, report: &mut RunReport) -> std::result::Result<(), Failure> {
    let program = cfg.load_program()?;
    let params = cfg.rothe_params()?;
    let grid = macro_grid(cfg)?;
    let spec = cfg.field_spec(0)?;
    let rve = cfg.rve.as_ref().expect("validated");
    let d = spec.dim;
    let epc = cfg.grid.as_ref().expect("validated").elements_per_cell;
    let table = timed(report, "micro_vs_macro", || {
        let ens = RveEnsemble::new(&spec, &rve.seeds, rve.cells_per_axis, rve.elements_per_cell)?;
        let dict = TestFunctionDictionary::standard(&spec, DomainBox {
            lo: vec![0.0; d],
            hi: vec![grid.length(0); d],
        })?;
        let sweep = MicroSweep {
            spec: &spec,
            etas: &cfg.etas,
            seeds: &cfg.seeds,
            elements_per_cell: epc,
            params: params.clone(),
        };
        micro_vs_macro(&program, &sweep, grid.clone(), &ens, &dict)
    })?;
    let mut summary = Table::new("eta_sweep", &["eta", "metric", "value"]);
    for m in table.summary() {
        summary.push(vec![m.eta.into(), m.metric.into(), m.value.into()]);
    }
    let mut runs = Table::new("eta_sweep_runs", &["eta", "seed", "u_error", "u_norm", "sigma_pairing_error", "z_pairing_error"]);
    let mut rows = table.rows.clone();
    rows.sort_by(|a, b| b.eta.total_cmp(&a.eta).then(a.seed.cmp(&b.seed)));
    for r in &rows {
        runs.push(vec![
            Cell::Float(r.eta),
            r.seed.into(),
            r.u_error.into(),
            r.u_norm.into(),
            r.sigma_pairing_error.into(),
            r.z_pairing_error.into(),
        ]);
    }
    for metric in ["u_L2_QT", "sigma_pairing", "z_pairing"] {
        let s = table.series(metric);
        let decreasing = s.windows(2).all(|w| w[1] < w[0]);
        report.verdict(
            Verdict::flag(&format!("eta_sweep/{metric}_decreasing"), "homogenizer::micro_vs_macro", decreasing)
                .with_detail(format!("{s:?}")),
        );
    }
    report.tables.push(summary);
    report.tables.push(runs);
    report.ledgers.push(("homogenized".into(), table.homogenized.ledger.clone()));
    Ok(())
}

