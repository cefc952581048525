use ifa_core::error::IfaError;
use ifa_core::grm::{sample_responses, ModelSpec};
use ifa_core::io::{
    load_fit, load_responses, parse_responses, parse_spec, responses_to_csv, save_results, write_atomic, Estimates,
    ResponseOptions, RunManifest, FIT_FILE, MANIFEST_FILE,
};
use ifa_core::iwave::{fit, FitConfig};

fn opts() -> ResponseOptions {
    ResponseOptions::default()
}

#[test]
fn reads_a_small_matrix() {
    let m = parse_responses("0,1\n1,1\n0,0\n", "t", &opts()).unwrap();
    assert_eq!((m.n_rows(), m.n_items()), (3, 2));
    assert_eq!(m.codes(), &[0, 1, 1, 1, 0, 0]);
    assert_eq!(m.categories(), &[2, 2]);
}

#[test]
fn detects_a_header_row() {
    let m = parse_responses("q1, q2\n0,2\n1,1\n", "t", &opts()).unwrap();
    assert_eq!(m.n_rows(), 2);
    assert_eq!(m.categories(), &[2, 3]);
}

#[test]
fn rejects_codes_outside_the_category_range() {
    let o = ResponseOptions {
        categories: Some(vec![5, 5]),
        ..opts()
    };
    let err = parse_responses("0,4\n5,1\n", "t", &o).unwrap_err();
    assert!(
        matches!(
            err,
            IfaError::CategoryOutOfRange {
                row: 1,
                item: 0,
                code: 5,
                categories: 5
            }
        ),
        "{err}"
    );
    assert!(parse_responses("0,-1\n", "t", &opts()).is_err());
}

#[test]
fn rejects_non_integers_and_ragged_rows_with_line_numbers() {
    let err = parse_responses("0,1\n1,x\n", "data.csv", &opts()).unwrap_err();
    assert!(matches!(err, IfaError::Parse { line: 2, .. }), "{err}");
    let err = parse_responses("0,1\n1,0,1\n", "data.csv", &opts()).unwrap_err();
    assert!(matches!(err, IfaError::Parse { line: 2, .. }), "{err}");
    assert!(err.to_string().starts_with("data.csv:2:"));
    assert!(matches!(
        parse_responses("a,b\n", "t", &opts()),
        Err(IfaError::EmptyData(_))
    ));
}

#[test]
fn one_based_codes_are_shifted() {
    let o = ResponseOptions {
        one_based: true,
        categories: Some(vec![5, 5]),
    };
    let m = parse_responses("1,5\n3,2\n", "t", &o).unwrap();
    assert_eq!(m.codes(), &[0, 4, 2, 1]);
    assert!(parse_responses("0,1\n", "t", &o).is_err());
}

#[test]
fn response_csv_round_trips() {
    let m = parse_responses("0,2,1\n1,0,3\n", "t", &opts()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_atomic(&path, &responses_to_csv(&m).unwrap()).unwrap();
    let o = ResponseOptions {
        categories: Some(m.categories().to_vec()),
        ..opts()
    };
    assert_eq!(load_responses(&path, &o).unwrap(), m);
}

#[test]
fn simple_structure_pattern_selects_one_factor_per_item() {
    let doc = r#"{
        "categories": 3, "items": 6, "factors": 2,
        "loadings": [["free", 0], ["free", 0], ["free", 0], [0, "free"], [0, "*"], [0, "free"]]
    }"#;
    let s = parse_spec(doc, "s").unwrap();
    assert!(s.warnings.is_empty());
    assert_eq!(s.spec.free_loadings, 6);
    for (j, c) in s.spec.constraints.iter().enumerate() {
        let f = usize::from(j >= 3);
        assert!(!c.is_structural_zero(f));
        assert!(c.is_structural_zero(1 - f));
    }
    let short = parse_spec(
        r#"{"categories": 3, "items": 6, "factors": 2, "simple_structure": [0,0,0,1,1,1]}"#,
        "s",
    )
    .unwrap();
    assert_eq!(short.spec, s.spec);
}

#[test]
fn tie_groups_share_a_parameter() {
    let doc = r#"{
        "categories": [2, 2, 2, 2], "factors": 2,
        "loadings": [["free", 0], ["free", "=d"], ["free", "=d"], ["free", 0.5]],
        "correlation": {"orthogonal_factors": [1]}
    }"#;
    let s = parse_spec(doc, "s").unwrap().spec;
    assert_eq!(s.free_loadings, 5);
    assert_eq!(s.constraints[1].map[1], s.constraints[2].map[1]);
    assert_eq!(s.constraints[3].offset[1], 0.5);
    assert_eq!(s.correlation.fixed, vec![Some(std::f64::consts::FRAC_PI_2)]);
}

#[test]
fn explicit_linear_form_and_fixed_angles() {
    let doc = r#"{
        "categories": [3, 3], "factors": 2, "free_loadings": 1,
        "constraints": [
            {"offset": [0.0, 0.0], "map": [[1.0], [0.0]]},
            {"offset": [0.2, 0.0], "map": [[0.0], [2.0]]}
        ],
        "correlation": {"fixed_angles": [[1, 0, 1.0]]}
    }"#;
    let s = parse_spec(doc, "s").unwrap().spec;
    assert_eq!(s.constraints[1].map[1], vec![2.0]);
    assert_eq!(s.correlation.fixed, vec![Some(1.0)]);
    assert_eq!(
        parse_spec(r#"{"categories": [2, 2], "factors": 0}"#, "s").unwrap().spec,
        ModelSpec::zero_factor(vec![2, 2]).unwrap()
    );
}

#[test]
fn spec_errors_name_the_offending_line() {
    let doc = "{\n  \"categories\": 3, \"items\": 2, \"factors\": 1,\n  \"loadings\": [\n    [\"free\"],\n    [\"bogus\"]\n  ]\n}";
    let err = parse_spec(doc, "spec.json").unwrap_err();
    assert!(matches!(err, IfaError::Parse { line: 5, .. }), "{err}");
    let err = parse_spec("{\n  \"categories\": 3,\n  \"factors\": 1,,\n}", "spec.json").unwrap_err();
    assert!(matches!(err, IfaError::Parse { line: 3, .. }), "{err}");
    for bad in [
        r#"{"categories": 3, "factors": 1, "loadings": [["free"]]}"#,
        r#"{"categories": [3, 3], "factors": 1, "loadings": [["free"]]}"#,
        r#"{"categories": [3], "factors": 2, "loadings": [["free"]]}"#,
        r#"{"categories": [3], "factors": 1}"#,
        r#"{"categories": [1], "factors": 0}"#,
        r#"{"categories": [3], "factors": 1, "simple_structure": [2]}"#,
        r#"{"categories": [3], "factors": 1, "loadings": [["free"]], "colour": 1}"#,
        r#"{"categories": [3, 3], "factors": 2, "simple_structure": [0, 1], "correlation": "banded"}"#,
        r#"{"categories": [3, 3], "factors": 2, "simple_structure": [0, 1], "correlation": {"fixed_angles": [[0, 1, 1.0]]}}"#,
    ] {
        assert!(matches!(parse_spec(bad, "s"), Err(IfaError::Parse { .. })), "{bad}");
    }
}

#[test]
fn unidentified_factor_produces_a_warning() {
    let doc = r#"{"categories": [2, 2], "factors": 2, "loadings": [["free", 0], ["free", 0]]}"#;
    let s = parse_spec(doc, "s").unwrap();
    assert_eq!(s.warnings.len(), 1);
}

#[test]
fn saved_results_round_trip_bit_exactly() {
    let spec = ModelSpec::simple_structure(vec![3; 4], &[0, 0, 1, 1], 2).unwrap();
    let baseline = ifa_core::grm::BaselineModel {
        proportions: vec![vec![0.3, 0.4, 0.3]; 4],
    };
    let data = ifa_core::grm::sample_baseline(&baseline, 200, 0).unwrap();
    let cfg = FitConfig {
        max_steps: 60,
        ..FitConfig::default()
    };
    let gen = fit(&data, &spec, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a/b");
    let paths = save_results(&gen, &first).unwrap();
    assert_eq!(paths.len(), 3);
    let loaded = load_fit(&first.join(FIT_FILE)).unwrap();
    assert_eq!(loaded, gen);
    let second = dir.path().join("c");
    save_results(&loaded, &second).unwrap();
    for name in ["fit.json", "estimates.json", "trace.csv"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
    let est: Estimates = ifa_core::io::read_json(&first.join("estimates.json")).unwrap();
    assert_eq!(est.loadings, gen.loadings());
    // A reloaded fit keeps generating the same data.
    let a = sample_responses(&gen.generating_model(), 50, 1).unwrap();
    let b = sample_responses(&loaded.generating_model(), 50, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn manifest_records_seed_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("new/run");
    let m = RunManifest::start(
        "fit",
        vec!["ifa".into(), "fit".into()],
        serde_json::json!({"seed": 42}),
        Some(42),
    );
    std::fs::create_dir_all(&out).unwrap();
    let path = m.finish(&out, &[out.join("fit.json")]).unwrap();
    assert_eq!(path, out.join(MANIFEST_FILE));
    let back = RunManifest::load(&path).unwrap();
    assert_eq!(back.seed, Some(42));
    assert_eq!(back.config["seed"], 42);
    assert_eq!(back.outputs, vec!["fit.json".to_string()]);
    assert!(back.finished.is_some());
}
