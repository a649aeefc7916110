use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const ELASTIC: &str = r#"
kind = "micro-run"
name = "elastic"
etas = [0.25]
seeds = [3]

[field]
kind = "checkerboard"
dim = 2
probabilities = [0.5, 0.5]

[[phases]]
lambda = 1.0
mu = 1.0
law = { kind = "zero" }

[[phases]]
lambda = 3.0
mu = 2.0
law = { kind = "zero" }

[grid]
cells_per_axis = 8

[time]
T_e_seconds = 1.0
level = 2

[load]
body_force = ["10*t*(1+y)", "-5*t"]
"#;

fn stochom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochom")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn csv_bodies(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = fs::read_dir(dir.join("tables"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read_to_string(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn elastic_micro_run_has_zero_dissipation_and_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "elastic.toml", ELASTIC);
    let out = tmp.path().join("out");
    let res = stochom(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let ledger = fs::read_to_string(out.join("tables/micro_seed3_ledger.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(ledger.as_bytes());
    let header = rows.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "dissipation_cum").unwrap();
    let mut n = 0;
    for r in rows.records() {
        assert_eq!(r.unwrap()[col].parse::<f64>().unwrap(), 0.0);
        n += 1;
    }
    assert_eq!(n, 5);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ledgers/micro_seed3.json")).unwrap()).unwrap();
    let keys: Vec<&str> = json[0].as_object().unwrap().keys().map(|k| k.as_str()).collect();
    for k in ["step", "t", "elastic", "hardening", "regularization", "dissipation_cum", "work_cum", "energy_margin"] {
        assert!(keys.contains(&k), "{keys:?}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "pass");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!(report["verdicts"].as_array().unwrap().iter().all(|v| v["operation"].as_str().unwrap().contains("::")));
    let field = fs::read_to_string(out.join("tables/micro_seed3_u_final.csv")).unwrap();
    assert!(field.starts_with("node,x,y,c0,c1\n"));
}

#[test]
fn reruns_give_identical_csv_bodies_for_any_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let plastic = ELASTIC.replacen("law = { kind = \"zero\" }", "hardening = 0.5\nlaw = { kind = \"norton-hoff\", yield_stress = 1.0, exponent = 1.0 }", 1);
    let cfg = write_config(tmp.path(), "plastic.toml", &plastic);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(stochom(&["run", &cfg, "--out", a.to_str().unwrap(), "--threads", "1"]).status.code(), Some(0));
    assert_eq!(stochom(&["run", &cfg, "--out", b.to_str().unwrap(), "--threads", "3"]).status.code(), Some(0));
    let (x, y) = (csv_bodies(&a), csv_bodies(&b));
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn seeds_flag_overrides_the_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "elastic.toml", ELASTIC);
    let out = tmp.path().join("out");
    let res = stochom(&["run", &cfg, "--out", out.to_str().unwrap(), "--seeds", "5,6"]);
    assert_eq!(res.status.code(), Some(0));
    assert!(out.join("tables/micro_seed5_ledger.csv").exists());
    assert!(out.join("tables/micro_seed6_ledger.csv").exists());
    assert!(!out.join("tables/micro_seed3_ledger.csv").exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = ELASTIC.replace("[0.5, 0.5]", "[0.5, 0.49]");
    let cfg = write_config(tmp.path(), "bad.toml", &bad);
    let res = stochom(&["run", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("field.probabilities") && err.contains("0.99"), "{err}");
    let unknown = ELASTIC.replace("level = 2", "level = 2\nsteps = 4");
    let cfg = write_config(tmp.path(), "unknown.toml", &unknown);
    let res = stochom(&["run", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("steps"));
    let res = stochom(&["sweep", &write_config(tmp.path(), "e.toml", ELASTIC)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn failed_verdicts_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let plastic = ELASTIC.replacen("law = { kind = \"zero\" }", "law = { kind = \"norton-hoff\", yield_stress = 1.0, exponent = 1.0 }", 1);
    let strict = format!("{plastic}\n[tolerances]\nweak_residual = 1e-300\n");
    let cfg = write_config(tmp.path(), "strict.toml", &strict);
    let out = tmp.path().join("out");
    let res = stochom(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "verdict-failure");
}

#[test]
fn cell_problem_reports_effective_tensor() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ELASTIC.replace("micro-run", "cell-problem") + "\n[rve]\ncells_per_axis = 4\nseeds = [1, 2, 3]\n";
    let cfg = write_config(tmp.path(), "cell.toml", &text);
    let out = tmp.path().join("out");
    let res = stochom(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let t = &report["results"]["effective_tensor"];
    assert_eq!(t["mean"]["row_major"].as_array().unwrap().len(), 9);
    assert_eq!(t["spread"]["rows"], 3);
    let csv = fs::read_to_string(out.join("tables/effective_tensor.csv")).unwrap();
    assert!(csv.starts_with("i,j,mean,spread\n"));
}

#[test]
fn homogenized_run_passes_its_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
kind = "homogenized-run"

[field]
kind = "laminate"
dim = 1
probabilities = [0.5, 0.5]

[[phases]]
stiffness = [[1.0]]
hardening = 0.5
law = { kind = "norton-hoff", yield_stress = 1.0, exponent = 1.0 }

[[phases]]
stiffness = [[3.0]]
hardening = 1.0
law = { kind = "norton-hoff", yield_stress = 1.0, exponent = 1.0 }

[grid]
cells_per_axis = 8

[time]
level = 3
m_reg = 8.0

[load]
body_force = ["6*t*(1+x)"]

[rve]
cells_per_axis = 8
seeds = [1, 2, 3]
"#;
    let cfg = write_config(tmp.path(), "hom.toml", text);
    let out = tmp.path().join("out");
    let res = stochom(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    assert!(out.join("ledgers/homogenized.json").exists());
    assert!(out.join("tables/homogenized_u0_final.csv").exists());
}

#[test]
fn sweep_writes_eta_metric_value_table() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
kind = "eta-sweep"
etas = [0.125, 0.03125]
seeds = [11, 12]

[field]
kind = "laminate"
dim = 1
probabilities = [0.5, 0.5]

[[phases]]
stiffness = [[1.0]]
law = { kind = "zero" }

[[phases]]
stiffness = [[3.0]]
law = { kind = "zero" }

[grid]
cells_per_axis = 16
elements_per_cell = 2

[time]
level = 1

[load]
body_force = ["4*t"]

[rve]
cells_per_axis = 32
elements_per_cell = 1
seeds = [1, 2, 3, 4]
"#;
    let cfg = write_config(tmp.path(), "sweep.toml", text);
    let out = tmp.path().join("out");
    let res = stochom(&["sweep", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(res.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("tables/eta_sweep.csv")).unwrap();
    assert!(csv.starts_with("eta,metric,value\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let runs = fs::read_to_string(out.join("tables/eta_sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4);
}

#[test]
fn accept_runs_selected_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("acc");
    let res = stochom(&["accept", "--criteria", "2,7", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(out.join("tables/acceptance.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(out.join("tables/c07_zero_dim.csv").exists());
}
