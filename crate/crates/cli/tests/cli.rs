use rdu_equilibrium::config::RunConfig;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("rdu-eq-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn rdu_eq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdu-eq")).args(args).env_remove("RDU_EQ_THREADS").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn malformed_config_exits_2_with_position() {
    let d = scratch("malformed");
    let cfg = d.join("bad.json");
    std::fs::write(&cfg, "{\n  \"market\": {\"horizon\": 1.0,,}\n}\n").unwrap();
    let out = rdu_eq(&["solve", "--config", s(&cfg), "--out", s(&d)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");
}

#[test]
fn unknown_field_exits_2() {
    let d = scratch("unknown");
    let cfg = d.join("bad.json");
    let text = std::fs::read_to_string(root().join("configs/gaussian_half.json")).unwrap();
    std::fs::write(&cfg, text.replace("\"seed\": 1", "\"seed\": 1, \"sead\": 2")).unwrap();
    let out = rdu_eq(&["solve", "--config", s(&cfg), "--out", s(&d)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sead"));
}

#[test]
fn missing_config_file_exits_2() {
    let d = scratch("missing");
    let out = rdu_eq(&["solve", "--config", s(&d.join("nope.json")), "--out", s(&d)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reproduce_example5_passes() {
    let d = scratch("example5");
    let out = rdu_eq(&["reproduce-example5", "--out", s(&d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("example5_report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));
    assert!(report["lambda_max_abs_dev_from_0.5"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn identity_weighting_gives_unit_lambda() {
    let d = scratch("identity");
    let cfg = root().join("configs/identity_piecewise.json");
    let out = rdu_eq(&["solve", "--config", s(&cfg), "--out", s(&d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("lambda.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "lambda").unwrap();
    let mut n = 0;
    for line in lines {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!((v - 1.0).abs() <= 1e-4, "{line}");
        n += 1;
    }
    assert!(n > 100);
}

#[test]
fn reruns_are_byte_identical() {
    let d = scratch("rerun");
    let cfg = root().join("configs/two_asset_monte_carlo.json");
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let o = d.join(i.to_string());
        for cmd in ["solve", "simulate"] {
            let out = rdu_eq(&[cmd, "--config", s(&cfg), "--out", s(&o), "--threads", threads]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        let files: Vec<Vec<u8>> = ["lambda.csv", "equilibrium.json", "paths_summary.csv"]
            .iter()
            .map(|f| std::fs::read(o.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_override_changes_monte_carlo_output() {
    let d = scratch("seed");
    let cfg = root().join("configs/two_asset_monte_carlo.json");
    let a = d.join("a");
    let b = d.join("b");
    assert!(rdu_eq(&["simulate", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(rdu_eq(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "7"]).status.success());
    assert_ne!(std::fs::read(a.join("paths_summary.csv")).unwrap(), std::fs::read(b.join("paths_summary.csv")).unwrap());
}

#[test]
fn shipped_configs_parse_and_match_schema_keys() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("schema/run_config.schema.json")).unwrap()).unwrap();
    let props = schema["properties"].as_object().unwrap();
    let mut count = 0;
    for entry in std::fs::read_dir(root().join("configs")).unwrap() {
        let p = entry.unwrap().path();
        let cfg = RunConfig::from_json(&std::fs::read_to_string(&p).unwrap()).unwrap();
        cfg.market().unwrap();
        cfg.weighting().unwrap();
        cfg.grid().unwrap();
        let full = serde_json::to_value(&cfg).unwrap();
        for key in full.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "{key} missing from schema");
        }
        for section in ["grid", "quadrature", "solver", "simulate", "verify"] {
            let sp = props[section]["properties"].as_object().unwrap();
            for key in full[section].as_object().unwrap().keys() {
                assert!(sp.contains_key(key), "{section}.{key} missing from schema");
            }
        }
        count += 1;
    }
    assert!(count >= 5);
}

#[test]
fn verify_and_certify_pass_for_gaussian_half() {
    let d = scratch("verify");
    let cfg = root().join("configs/gaussian_half.json");
    for cmd in ["verify", "certify", "risk-premium"] {
        let out = rdu_eq(&[cmd, "--config", s(&cfg), "--out", s(&d)]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("equilibrium_certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["certificate"]["passed"], serde_json::Value::Bool(true));
}
