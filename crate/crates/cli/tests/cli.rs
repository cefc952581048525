use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn ifa(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifa"))
        .args(args)
        .env("IFA_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn generating_model() -> Value {
    let items: Vec<Value> = (0..6)
        .map(|j| {
            let mut l = vec![0.0, 0.0];
            l[j / 3] = 1.5;
            json!({ "intercepts": [-0.8 + 0.1 * j as f64, 0.9], "loadings": l })
        })
        .collect();
    json!({ "items": items, "correlation": [[1.0, 0.3], [0.3, 1.0]] })
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ifa(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(ifa(&["fit", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(ifa(&[], dir.path()).status.code(), Some(1));
    let missing = ifa(&["simulate", "--model", "/nonexistent.json", "--n", "5"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn malformed_spec_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "0,1\n1,0\n").unwrap();
    let spec = dir.path().join("s.json");
    std::fs::write(&spec, "{\n  \"categories\": 2, \"items\": 2, \"factors\": 1,\n  \"loadings\": [\n    [\"free\"],\n    [\"maybe\"]\n  ]\n}\n").unwrap();
    let o = ifa(
        &[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("s.json:5:"), "{err}");
}

#[test]
fn out_of_range_codes_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "0,1\n1,2\n").unwrap();
    let spec = dir.path().join("s.json");
    write(
        &spec,
        &json!({ "categories": 2, "items": 2, "factors": 1, "simple_structure": [0, 0] }),
    );
    let o = ifa(
        &[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
}

#[test]
fn diverging_fit_exits_with_numerical_status() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen.json");
    write(&gen, &generating_model());
    let sim = ifa(
        &[
            "simulate",
            "--model",
            gen.to_str().unwrap(),
            "--n",
            "300",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert!(sim.status.success());
    let data = stdout(&sim);
    let spec = dir.path().join("s.json");
    write(
        &spec,
        &json!({ "categories": 3, "items": 6, "factors": 2, "simple_structure": [0, 0, 0, 1, 1, 1] }),
    );
    let o = ifa(
        &[
            "fit",
            "--data",
            &data,
            "--spec",
            spec.to_str().unwrap(),
            "--learning-rate",
            "1e300",
            "--max-steps",
            "300",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_fit_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let gen = root.join("gen.json");
    write(&gen, &generating_model());

    let sim_out = root.join("sim");
    let o = ifa(
        &[
            "simulate",
            "--model",
            gen.to_str().unwrap(),
            "--n",
            "400",
            "--seed",
            "3",
            "--out",
            sim_out.to_str().unwrap(),
        ],
        root,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = sim_out.join("responses.csv");
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 400);
    assert_eq!(read(&sim_out.join("manifest.json"))["seed"], 3);

    let spec = root.join("spec.json");
    write(
        &spec,
        &json!({ "categories": 3, "items": 6, "factors": 2, "simple_structure": [0, 0, 0, 1, 1, 1] }),
    );
    // Without --out the run lands under the output root.
    let o = ifa(
        &[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
            "--seed",
            "11",
            "--max-steps",
            "300",
        ],
        root,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit_dir = Path::new(&stdout(&o)).to_path_buf();
    assert!(fit_dir.starts_with(root));
    for f in ["fit.json", "estimates.json", "trace.csv", "manifest.json"] {
        assert!(fit_dir.join(f).exists(), "{f}");
    }
    let manifest = read(&fit_dir.join("manifest.json"));
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["fit"]["seed"], 11);
    assert_eq!(manifest["command"], "fit");
    let fit_json = fit_dir.join("fit.json");

    // Re-running from the manifest's resolved config gives the same fit.
    let cfg_path = root.join("fitcfg.json");
    write(&cfg_path, &manifest["config"]["fit"]);
    let again = root.join("again");
    let o = ifa(
        &[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ],
        root,
    );
    assert!(o.status.success());
    let (a, b) = (read(&fit_json), read(&again.join("fit.json")));
    assert_eq!(a["params"], b["params"]);
    assert_eq!(a["trace"], b["trace"]);

    let gof = |sub: &str, extra: &[&str]| {
        let out = root.join(format!("gof-{sub}"));
        let mut args = vec![
            "gof",
            sub,
            "--model",
            fit_json.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--classifier",
            "knn",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let o = ifa(&args, root);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let c = gof("c2st", &["--delta", "0.025", "--probabilities"]);
    let report = read(&c.join("c2st.json"));
    assert_eq!(report["delta"], 0.025);
    assert_eq!(report["n_test"], 400);
    let acc = report["acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(
        std::fs::read_to_string(c.join("probabilities.csv"))
            .unwrap()
            .lines()
            .count(),
        401
    );

    let r = gof("rfi", &[]);
    let report = read(&r.join("rfi.json"));
    assert_eq!(report["m_base"], 12);
    assert_eq!(report["m_prop"], 12 + 6 + 1);

    let p = gof("pi", &["--reps", "2"]);
    assert_eq!(
        read(&p.join("importance.json"))["importance"].as_array().unwrap().len(),
        6
    );
}

#[test]
fn experiment_writes_report_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    write(
        &cfg,
        &json!({
            "sample_sizes": [100, 200],
            "classifiers": [{ "kind": "knn" }],
            "replications": 3,
            "seed": 8
        }),
    );
    let out = dir.path().join("exp");
    let o = ifa(
        &[
            "experiment",
            "--study",
            "uniform-calibration",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(&out.join("report.json"));
    assert_eq!(report["study"], "uniform_calibration");
    assert_eq!(report["records"].as_array().unwrap().len(), 2 * 2 * 3);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("study,n,iw_samples,shift,model,classifier,delta,parameter,metric,value"));
    assert_eq!(read(&out.join("manifest.json"))["seed"], 8);

    let o = ifa(
        &[
            "experiment",
            "--study",
            "recovery",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let zero = dir.path().join("zero.json");
    write(&zero, &json!({ "sample_sizes": [100], "replications": 0, "seed": 1 }));
    let o = ifa(
        &[
            "experiment",
            "--study",
            "uniform-calibration",
            "--config",
            zero.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}
