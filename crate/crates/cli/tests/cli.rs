use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rri(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rri"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("error is JSON")
}

fn generate(dir: &Path, n: &str, seed: &str) -> Output {
    rri(&[
        "generate",
        "--cohort",
        "pulmonary",
        "--n",
        n,
        "--seed",
        seed,
        "--out",
        p(dir),
    ])
}

#[test]
fn bogus_cohort_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rri(&[
        "generate",
        "--cohort",
        "bogus",
        "--seed",
        "1",
        "--out",
        p(&tmp.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["exit_code"], 2);
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(
        msg.contains("isoradial, pulmonary, brachiocephalic"),
        "{msg}"
    );
}

#[test]
fn unknown_flag_is_a_config_error() {
    let out = rri(&["generate", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "config");
}

#[test]
fn missing_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rri(&[
        "generate",
        "--cohort",
        "pulmonary",
        "--out",
        p(&tmp.path().join("d")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn manifest_lists_requested_geometries_and_rerun_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = generate(&a, "5", "7");
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let second = generate(&b, "5", "7");
    assert!(second.status.success());

    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n_geometries"], 5);
    assert_eq!(manifest["geometry_ids"].as_array().unwrap().len(), 5);
    assert_eq!(
        stdout_json(&first)["fingerprint"],
        stdout_json(&second)["fingerprint"]
    );
    assert_eq!(
        std::fs::read(a.join("records.jsonl")).unwrap(),
        std::fs::read(b.join("records.jsonl")).unwrap()
    );

    let clash = generate(&a, "5", "7");
    assert_eq!(clash.status.code(), Some(2));
    let forced = rri(&[
        "generate",
        "--cohort",
        "pulmonary",
        "--n",
        "5",
        "--seed",
        "7",
        "--out",
        p(&a),
        "--force",
    ]);
    assert!(forced.status.success());
    assert_eq!(
        stdout_json(&forced)["fingerprint"],
        stdout_json(&first)["fingerprint"]
    );
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"cohort": "brachiocephalic", "n": 3, "seed": 4}"#).unwrap();
    let out = rri(&[
        "generate",
        "--config",
        p(&cfg),
        "--n",
        "2",
        "--out",
        p(&tmp.path().join("d")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout_json(&out)["n_geometries"], 2);

    std::fs::write(&cfg, r#"{"cohort": "pulmonary", "colour": "red"}"#).unwrap();
    let bad = rri(&[
        "generate",
        "--config",
        p(&cfg),
        "--seed",
        "1",
        "--out",
        p(&tmp.path().join("e")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr_json(&bad)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("colour"));
}

#[test]
fn evaluate_without_train_is_a_dependency_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    assert!(generate(&ds, "4", "1").status.success());
    let out = rri(&[
        "evaluate",
        "--dataset",
        p(&ds),
        "--models",
        p(&tmp.path().join("models.json")),
        "--out",
        p(&tmp.path().join("report")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"]["kind"], "dependency");
}

#[test]
fn generate_train_evaluate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let models = tmp.path().join("models.json");
    let report = tmp.path().join("report");
    assert!(generate(&ds, "10", "20").status.success());

    let tr = rri(&[
        "train",
        "--dataset",
        p(&ds),
        "--seed",
        "22",
        "--out",
        p(&models),
    ]);
    assert!(
        tr.status.success(),
        "{}",
        String::from_utf8_lossy(&tr.stderr)
    );
    assert_eq!(stdout_json(&tr)["models"].as_array().unwrap().len(), 12);

    let ev = rri(&[
        "evaluate",
        "--dataset",
        p(&ds),
        "--models",
        p(&models),
        "--out",
        p(&report),
    ]);
    assert!(
        ev.status.success(),
        "{}",
        String::from_utf8_lossy(&ev.stderr)
    );
    let rep: Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap())
            .unwrap();
    let entries = rep["models"].as_array().unwrap();
    assert_eq!(entries.len(), 12);
    for kind in ["knn", "dtree", "linear", "svr", "gpr", "nn"] {
        for modality in ["standard", "to"] {
            assert!(
                entries
                    .iter()
                    .any(|m| m["kind"] == kind && m["modality"] == modality),
                "{kind}/{modality} missing"
            );
        }
    }
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 12);

    let other = tmp.path().join("other");
    assert!(generate(&other, "10", "21").status.success());
    let mismatch = rri(&[
        "evaluate",
        "--dataset",
        p(&other),
        "--models",
        p(&models),
        "--out",
        p(&tmp.path().join("r2")),
    ]);
    assert_eq!(mismatch.status.code(), Some(3));
    assert_eq!(stderr_json(&mismatch)["error"]["kind"], "fingerprint");

    let sim = tmp.path().join("rri.csv");
    let out = rri(&[
        "simulate",
        "--cohort",
        "pulmonary",
        "--models",
        p(&models),
        "--kind",
        "linear",
        "--modality",
        "to",
        "--out",
        p(&sim),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        std::fs::read_to_string(&sim).unwrap().lines().count(),
        1 + 1001
    );

    let sweep = tmp.path().join("sweep");
    let out = rri(&[
        "sweep",
        "--cohort",
        "pulmonary",
        "--points",
        "5",
        "--models",
        p(&models),
        "--kind",
        "knn",
        "--out",
        p(&sweep),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let steady = std::fs::read_to_string(sweep.join("steady.csv")).unwrap();
    assert!(steady
        .lines()
        .skip(1)
        .any(|l| l.starts_with("steady,predicted,")));
    assert!(sweep.join("transient.csv").is_file());
}

#[test]
fn static_closure_keeps_inlet_and_outlet_pressures_equal() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("static.csv");
    let out = rri(&[
        "simulate",
        "--cohort",
        "brachiocephalic",
        "--closure",
        "static",
        "--out",
        p(&csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (pi, p1, p2) = (col("P_inlet"), col("P1"), col("P2"));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let scale = v[pi].abs().max(1.0);
        assert!((v[pi] - v[p1]).abs() <= 1e-9 * scale, "{line}");
        assert!((v[pi] - v[p2]).abs() <= 1e-9 * scale, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 1001);
}

#[test]
fn rri_closure_without_models_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rri(&[
        "simulate",
        "--cohort",
        "pulmonary",
        "--closure",
        "rri",
        "--out",
        p(&tmp.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
