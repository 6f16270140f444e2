use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn catclust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catclust"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn small_config(dir: &Path, dataset: &Path) -> PathBuf {
    let text = format!(
        r#"seed = 7
representations = ["euclidean", "mmc", "rfphate"]
k_min = 2
k_max = 5
restarts = 3
cv_folds = 3
rf_n_estimators = [30]
rf_max_depth = [5]
embed_dim_min = 2
embed_dim_max = 3
gap_references = 2
mmc_max_iter = 50

[[dataset]]
name = "iris"
path = "{}"
"#,
        dataset.display()
    );
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_exits_zero() {
    let out = catclust(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("evaluate"));
}

#[test]
fn unknown_flag_exits_one() {
    let out = catclust(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_config_is_validation_error() {
    let out = catclust(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_config_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "k_min = 9\nk_max = 3\n").unwrap();
    let out = catclust(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_representation_rejected() {
    let iris = data("iris.csv");
    let out = catclust(&["cluster", iris.to_str().unwrap(), "--rep", "cosine", "--k", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cluster_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let out = catclust(&[
        "cluster",
        iris.to_str().unwrap(),
        "--rep",
        "euclidean",
        "--k",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let assignments = dir.path().join("iris_euclidean_k3.csv");
    let text = fs::read_to_string(&assignments).unwrap();
    assert_eq!(text.lines().count(), 151);
    let reported: f64 = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("clustering_accuracy: "))
        .expect("accuracy line")
        .parse()
        .unwrap();

    let eval = catclust(&["evaluate", iris.to_str().unwrap(), assignments.to_str().unwrap()]);
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let printed = stdout(&eval);
    let acc: f64 = printed
        .lines()
        .find_map(|l| l.strip_prefix("clustering_accuracy: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((acc - reported).abs() < 5e-5);
    for name in ["silhouette", "davies_bouldin", "adjusted_rand", "nmi"] {
        assert!(printed.contains(&format!("{name}: ")), "missing {name}");
    }
}

#[test]
fn evaluate_rejects_short_assignments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    fs::write(&path, "id,cluster\n0,0\n1,1\n").unwrap();
    let iris = data("iris.csv");
    let out = catclust(&["evaluate", iris.to_str().unwrap(), path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_exports_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), &data("iris.csv"));
    let out_dir = dir.path().join("out");
    let out = catclust(&["run", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["rf_scores.csv", "kc_by_metric.csv", "clustering_accuracy.csv", "manifest.json"] {
        assert!(out_dir.join(file).is_file(), "{file} missing");
    }
    assert!(out_dir.join("embedding/iris.csv").is_file());

    let report = catclust(&["report", out_dir.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0));
    let text = stdout(&report);
    assert!(text.contains("iris"));
    assert!(text.contains("rfphate"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn report_on_missing_dir_fails() {
    let out = catclust(&["report", "/nonexistent/run"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn embed_writes_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let out = catclust(&[
        "embed",
        iris.to_str().unwrap(),
        "--n-estimators",
        "40",
        "--dims",
        "2",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("iris_embedding.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("id,dim_1,dim_2"));
    assert_eq!(text.lines().count(), 151);
    let stress = fs::read_to_string(dir.path().join("iris_stress.csv")).unwrap();
    assert_eq!(stress.lines().count(), 3);
}
