use std::process::{Command, Output};

use serde_json::Value;

fn qtm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtm")).args(args).output().expect("qtm runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "qtm failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid json")
}

fn complex(v: &Value) -> (f64, f64) {
    (v["re"].as_f64().unwrap(), v["im"].as_f64().unwrap())
}

fn real(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn thermo_free_spin_row() {
    for (t, h) in [(1.0f64, 0.6f64), (0.5, 0.2)] {
        let (ts, hs) = (format!("model.t={t}"), format!("model.h={h}"));
        let doc = json_of(&qtm(&["thermo", "--set", "model.j=0", "--set", &ts, "--set", &hs]));
        assert_eq!(doc["schema"], 1);
        let r = &doc["records"][0];
        let f = -t * (2.0 * (h / (2.0 * t)).cosh()).ln();
        let m = 0.5 * (h / (2.0 * t)).tanh();
        let (fr, fi) = complex(&r["f"]);
        assert!(((fr - f) / f).abs() < 1e-10 && fi.abs() < 1e-12, "f = {fr} + {fi}i vs {f}");
        for key in ["m_sigma", "m_G"] {
            let (mr, mi) = complex(&r[key]);
            assert!(((mr - m) / m).abs() < 1e-10 && mi.abs() < 1e-12, "{key} = {mr} vs {m}");
        }
    }
}

#[test]
fn csv_and_json_carry_identical_numbers() {
    let args = ["thermo", "--set", "sweep.t=0.5,1", "--set", "sweep.h=0,0.3"];
    let doc = json_of(&qtm(&[&args[..], &["--format", "json"]].concat()));
    let csv = qtm(&[&args[..], &["--format", "csv"]].concat());
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let records = doc["records"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(records.len(), 4);
    for (row, rec) in rows.iter().zip(records) {
        assert_eq!(row[0], doc["config_hash"].as_str().unwrap());
        assert_eq!(row[0], rec["config_hash"].as_str().unwrap());
        for (col, cell) in header.iter().zip(row).skip(6) {
            let json_value = if let Some(base) = col.strip_suffix("_re") {
                rec[base]["re"].clone()
            } else if let Some(base) = col.strip_suffix("_im") {
                rec[base]["im"].clone()
            } else {
                rec[*col].clone()
            };
            let parsed: f64 = cell.parse().unwrap();
            assert_eq!(parsed.to_bits(), real(&json_value).to_bits(), "column {col}");
        }
    }
    assert_eq!(real(&doc["grid"]["r"]), 3.0);
}

#[test]
fn output_is_deterministic_and_independent_of_jobs() {
    let a = qtm(&["thermo", "--set", "sweep.h=0.1,0.2", "--format", "csv"]);
    let b = qtm(&["thermo", "--set", "sweep.h=0.1,0.2", "--format", "csv", "--jobs", "1"]);
    let c = qtm(&["thermo", "--set", "sweep.h=0.1,0.2", "--format", "csv", "--jobs", "2"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let p1 = qtm(&["psi", "0.1", "-0.15"]);
    let p2 = qtm(&["psi", "0.1", "-0.15"]);
    assert_eq!(p1.stdout, p2.stdout);
}

#[test]
fn verify_default_passes() {
    let out = qtm(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let doc = json_of(&out);
    let records = doc["records"].as_array().unwrap();
    assert!(records.len() > 20);
    for r in records {
        assert_eq!(r["pass"], true, "{r}");
        assert!(real(&r["max_residual"]) < real(&r["tolerance"]));
        assert!(r["anchor"].as_str().is_some_and(|s| !s.is_empty()));
    }
    let names: Vec<&str> = records.iter().map(|r| r["name"].as_str().unwrap()).collect();
    for name in ["id0", "id2", "sigma", "sigma_alpha0", "one_point", "psi_symmetry", "rho_symmetry", "dressed_trick", "phi0_contour", "ed_vs_tq"] {
        assert!(names.contains(&name), "missing check {name}");
    }
    assert!(records.iter().any(|r| r["condition"].as_f64().is_some_and(|c| c >= 1.0)));
}

#[test]
fn verify_reports_sum_of_roots_when_nlie_feasible() {
    let doc = json_of(&qtm(&["verify", "--set", "trotter.n=16"]));
    let r = doc["records"].as_array().unwrap().iter().find(|r| r["name"] == "sum_of_roots").expect("sum_of_roots record");
    assert!(real(&r["max_residual"]) < 1e-9);
}

#[test]
fn perturbed_root_is_caught() {
    let out = qtm(&["verify", "--perturb-root", "1e-3"]);
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let failed: Vec<&str> =
        doc["records"].as_array().unwrap().iter().filter(|r| r["pass"] == false).map(|r| r["name"].as_str().unwrap()).collect();
    for name in ["bethe_equations", "pole_freeness", "sigma", "phi0_contour", "one_point"] {
        assert!(failed.contains(&name), "{name} should fail, failed: {failed:?}");
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("verification failed: sigma"));
}

#[test]
fn psi_symmetry_and_asymptotics() {
    let doc = json_of(&qtm(&["psi", "0.1", "-0.15"]));
    let r = &doc["records"][0];
    assert!(real(&r["symmetry_residual"]) < 1e-8);
    assert_eq!(r["placement_nu1"], "inside");
    assert!(r["limit_nu1"].is_null() && r["limit_nu2"].is_null());
    let mut gaps = Vec::new();
    for x in ["5", "6", "7"] {
        let doc = json_of(&qtm(&["psi", x, "0.2"]));
        let r = &doc["records"][0];
        assert_eq!(r["placement_nu1"], "outside");
        assert!(real(&r["symmetry_residual"]) < 1e-8);
        gaps.push(real(&r["limit_nu1_gap"]));
    }
    assert!(gaps[0] < 1e-3 && gaps[1] < gaps[0] && gaps[2] < gaps[1], "{gaps:?}");
    let doc = json_of(&qtm(&["psi", "0.1-0.05i", "6.5"]));
    let gap2 = real(&doc["records"][0]["limit_nu2_gap"]);
    assert!(gap2 < 1e-4, "{gap2}");
}

#[test]
fn psi_on_the_contour_is_a_precondition_failure() {
    let out = qtm(&["psi", "3", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let diag: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["schema"], 1);
    assert!(diag["error"].as_str().unwrap().contains("contour"));
}

#[test]
fn bethe_table() {
    let doc = json_of(&qtm(&["bethe", "--set", "trotter.n=2,4,8,16,32"]));
    let recs = doc["records"].as_array().unwrap();
    assert_eq!(recs[0]["n"], 2);
    assert!(real(&recs[0]["ed_rel_error"]) < 1e-10);
    assert!(real(&recs[1]["ed_rel_error"]) < 1e-10);
    assert!(recs[2]["ed_rel_error"].is_null());
    let gaps: Vec<f64> = recs.iter().map(|r| real(&r["f_gap"])).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    for r in recs {
        let n = r["n"].as_u64().unwrap() as usize;
        assert_eq!(r["roots"].as_array().unwrap().len(), n / 2);
        assert!(real(&r["bethe_residual"]) < 1e-12);
    }
    assert!(real(&recs[4]["sum_of_roots_residual"]) < 1e-9);
}

#[test]
fn config_file_overrides_and_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out.csv");
    std::fs::write(&cfg, "# free spins\nmodel.j = 0\nmodel.gamma = pi/3\nmodel.h = 0.6\noutput.format = csv\n").unwrap();
    let run = qtm(&["thermo", "--config", cfg.to_str().unwrap(), "--set", "model.t=0.5", "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(run.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[6].parse::<f64>().unwrap(), 0.5);
    assert_eq!(row[8].parse::<f64>().unwrap(), std::f64::consts::PI / 3.0);
    let f: f64 = row[10].parse().unwrap();
    assert!((f + 0.5 * (2.0 * 0.6f64.cosh()).ln()).abs() < 1e-10);
}

#[test]
fn invalid_configuration_exits_2() {
    for set in ["model.gamma=1.6", "trotter.n=3", "model.t=-1", "grid.d_work=0.5", "unknown.key=1"] {
        let out = qtm(&["thermo", "--set", set]);
        assert_eq!(out.status.code(), Some(2), "{set}");
        let diag: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(diag["command"], "thermo");
    }
    let out = qtm(&["thermo", "--set", "model.kappa=0.1i"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nlie_dump_rows() {
    let doc = json_of(&qtm(&["nlie-dump"]));
    let recs = doc["records"].as_array().unwrap();
    assert!(recs.len() > 100);
    assert!(real(&recs[0]["residual"]) < 1e-11);
    let segs: std::collections::BTreeSet<&str> = recs.iter().map(|r| r["segment"].as_str().unwrap()).collect();
    assert_eq!(segs.len(), 4);
    let out = qtm(&["nlie-dump", "--n", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(qtm(&["nlie-dump", "--n", "32"]).status.success());
}
