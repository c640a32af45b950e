use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const K2: &str = r#"{"tree":{"k":2,"l0":1.0,"r":0.5,"delta":0.6,"N":2,"J":2},"experiment":{"modes":12,"h":0.03125}}"#;
const EDGE: &str = r#"{"tree":{"k":1,"l0":1.0,"r":0.5,"delta":0.5,"N":2,"J":0}}"#;

fn treespec(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_treespec"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .env_remove("TREESPEC_THREADS")
        .output()
        .unwrap()
}

/// Lambda column of a spectrum table.
fn lambdas(csv: &Path) -> Vec<f64> {
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# treespec "));
    assert_eq!(lines.next().unwrap(), "index,lambda,multiplicity,residual");
    lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn single_edge_spectrum_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = treespec(dir.path(), EDGE, &["spectrum1d", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let l = lambdas(&out.join("spectrum1d.csv"));
    let exact = (std::f64::consts::PI / 2.0).powi(2);
    assert!((l[0] - exact).abs() / exact < 1e-3, "{}", l[0]);
}

#[test]
fn decompose_and_direct_columns_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for cmd in ["spectrum1d", "decompose"] {
        let o = treespec(dir.path(), K2, &[cmd, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (lambdas(&out.join("spectrum1d.csv")), lambdas(&out.join("decompose.csv")));
    assert_eq!(a.len(), 12);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-8 * x.abs(), "{x} vs {y}");
    }
}

#[test]
fn failing_discreteness_condition_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = treespec(dir.path(), K2, &["check-discreteness", "--set", "tree.delta=0.4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("condition fails"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("discreteness.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], false);
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = treespec(dir.path(), K2, &["spectrum1d", "--set", "tree.delta=1.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));
    let o = treespec(dir.path(), K2, &["spectrum1d", "--set", "weights.colour=red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("weights"));
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = treespec(
            dir.path(),
            K2,
            &["decompose", "--set", &format!("seed={seed}"), "--set", "threads=2", "--out", out.to_str().unwrap()],
        );
        assert!(o.status.success());
        fs::read(out.join("decompose.csv")).unwrap()
    };
    let (a, b, c) = (run("a", "5"), run("b", "5"), run("c", "6"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(String::from_utf8(c).unwrap().lines().next().unwrap().ends_with("seed=6"));
}

#[test]
fn mesh_dump_writes_consistent_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = treespec(
        dir.path(),
        K2,
        &["connector-constants", "--set", "experiment.dump_mesh=true", "--out", out.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().skip(2).count();
    let nodes = rows("connector_nodes.csv");
    let text = fs::read_to_string(out.join("connector_triangles.csv")).unwrap();
    for line in text.lines().skip(2) {
        for v in line.split(',').skip(1) {
            assert!(v.parse::<usize>().unwrap() < nodes);
        }
    }
    assert!(rows("connector_tags.csv") > 0);
}
