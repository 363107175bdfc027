use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cellnas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellnas")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{"search":{"B":2,"K":8,"J":2,"seed":1,
    "operators":["identity","3x3 conv","2x2 maxpool"],"predictor":{"trials":2}},
    "selection":{"top_k":2}}"#;

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let o = cellnas(&["search", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

#[test]
fn schema_errors_and_bad_flags_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{"search":{"K":-3}}"#).unwrap();
    let o = cellnas(&["search", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("search.K"), "{}", stderr(&o));

    let o = cellnas(&["inspect", "--run", "x", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
    assert_eq!(cellnas(&[]).status.code(), Some(1));
    assert_eq!(cellnas(&["export-dot", "--cell", "[]", "--macro", "3,2"]).status.code(), Some(1));
    assert_eq!(cellnas(&["select", "--run", "x", "--params-min", "5"]).status.code(), Some(1));
}

#[test]
fn export_dot_of_a_series_cell() {
    let o = cellnas(&["export-dot", "--cell", "[(-2, 'gru', -1, '21 conv')]"]);
    assert_eq!(o.status.code(), Some(0));
    let dot = stdout(&o);
    assert!(dot.starts_with("digraph"));
    for label in ["\"gru\"", "\"21 conv\"", "\"add\"", "\"cell-output\""] {
        assert!(dot.contains(label), "missing {label}");
    }
    let o = cellnas(&["export-dot", "--cell", "[(-1, 'nope', -1, 'identity')]"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none");
    assert_eq!(cellnas(&["inspect", "--run", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cellnas(&["final", "--run", missing.to_str().unwrap()]).status.code(), Some(2));
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, SMALL).unwrap();
    let run = tmp.path().join("run");

    let o = cellnas(&["search", "--config", arg(&config), "--out", arg(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("b=1: 21 networks"), "{}", stdout(&o));
    // a second plain search refuses to overwrite, resume is a no-op
    assert_eq!(cellnas(&["search", "--config", arg(&config), "--out", arg(&run)]).status.code(), Some(2));
    let o = cellnas(&["search", "--config", arg(&config), "--out", arg(&run), "--resume"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let o = cellnas(&["inspect", "--run", arg(&run), "--step", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("step b=1 (21 networks)"));

    let o = cellnas(&["score-predictors", "--run", arg(&run)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().nth(1).unwrap().trim_start().starts_with("2 "));

    let o = cellnas(&["final", "--run", arg(&run)]);
    assert_eq!(o.status.code(), Some(2), "final needs a selection first");

    let o = cellnas(&["select", "--run", arg(&run), "--k", "2", "--params-min", "1000", "--params-max", "100000000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("best: "));
    assert!(run.join("selection.csv").exists());

    let o = cellnas(&["final", "--run", arg(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("final.json")).unwrap()).unwrap();
    assert_eq!(record["training"]["full_training_data"], true);
}

#[test]
fn docs_configs_load() {
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs");
    let mut n = 0;
    for entry in fs::read_dir(&docs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            cellnas_core::config::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
