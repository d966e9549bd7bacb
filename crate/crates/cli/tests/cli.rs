use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "model.vertices = 162\ndataset.size = 200\ntrain.epochs = 2\ntrain.hidden = 16\neval.reference_size = 300\n";

fn m3dm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_m3dm"))
        .args(args)
        .current_dir(dir)
        .env_remove("M3DM_LOG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = m3dm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.txt"), SMALL).unwrap();
    ok(tmp.path(), &["world", "init", "--config", "small.txt", "--out", "w"]);
    ok(tmp.path(), &["dataset", "generate", "--world", "w", "--attr", "young", "--out", "d"]);
    tmp
}

#[test]
fn same_seed_gives_byte_identical_reports() {
    let tmp = setup();
    let p = tmp.path();
    for run in ["a", "b"] {
        ok(p, &["eval", "l2cv", "--dataset", "d", "--config", "small.txt", "--folds", "4", "--seed", "7", "--out", run]);
    }
    assert_eq!(fs::read(p.join("a.tsv")).unwrap(), fs::read(p.join("b.tsv")).unwrap());
    assert_eq!(fs::read(p.join("a.json")).unwrap(), fs::read(p.join("b.json")).unwrap());
    let tsv = fs::read_to_string(p.join("a.tsv")).unwrap();
    assert!(tsv.starts_with("# config "));
    let rows: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(rows, ["L2", "Baseline", "Ours w.o.res", "Ours"]);
}

#[test]
fn folds_split_the_dataset_evenly() {
    let tmp = setup();
    let p = tmp.path();
    ok(p, &["eval", "l2cv", "--dataset", "d", "--methods", "baseline", "--folds", "5", "--out", "r"]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(p.join("r.json")).unwrap()).unwrap();
    let sizes = &json["rows"][0]["fold_sizes"];
    assert_eq!(sizes.as_array().unwrap().len(), 5);
    for s in sizes.as_array().unwrap() {
        assert_eq!(s, &serde_json::json!([160, 40]));
    }
    assert_eq!(json["config"]["eval.folds"], "5");
}

#[test]
fn training_and_transform_round() {
    let tmp = setup();
    let p = tmp.path();
    ok(p, &["controller", "train", "--dataset", "d", "--config", "small.txt", "--out", "c.bin"]);
    ok(p, &["baseline", "fit", "--dataset", "d", "--out", "b.bin"]);
    fs::write(p.join("p.txt"), "0.5 ".repeat(40)).unwrap();
    ok(p, &["transform", "--weights", "c.bin", "--in", "p.txt", "--score", "-1.0", "--out", "q.txt"]);
    let q: Vec<f64> = fs::read_to_string(p.join("q.txt")).unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(q.len(), 40);
    ok(p, &["transform", "--weights", "b.bin", "--in", "p.txt", "--score", "1", "--src-score", "1", "--out", "same.txt"]);
    let same: Vec<f64> = fs::read_to_string(p.join("same.txt")).unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert_eq!(same, vec![0.5; 40]);
    ok(p, &["export", "sweep", "--weights", "c.bin", "--world", "w", "--in", "p.txt", "--scores", "-1,1", "--out", "sw"]);
    assert!(p.join("sw/sweep_young_-1.0.obj").exists());
    assert!(p.join("sw/sweep_young_1.0.obj").exists());
    ok(p, &["export", "mesh", "--world", "w", "--in", "p.txt", "--out", "m.obj"]);
    assert!(fs::read_to_string(p.join("m.obj")).unwrap().starts_with("v "));
}

#[test]
fn mahalanobis_report_from_reference() {
    let tmp = setup();
    let p = tmp.path();
    ok(p, &["dataset", "reference", "--world", "w", "--out", "ref"]);
    let table = ok(p, &["eval", "mahalanobis", "--dataset", "d", "--reference", "ref", "--config", "small.txt"]);
    assert!(table.starts_with("Mahalanobis\tyoung\tmean"));
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let tmp = setup();
    let p = tmp.path();
    let cases: [&[&str]; 4] = [
        &["controller", "train", "--dataset", "missing", "--out", "c.bin"],
        &["dataset", "generate", "--world", "w", "--attr", "nonexistent", "--out", "x"],
        &["eval", "l2cv", "--dataset", "d", "--folds", "3"],
        &["eval", "l2cv", "--dataset", "d", "--methods", "magic"],
    ];
    for args in cases {
        let out = m3dm(p, args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }
    fs::write(p.join("bad.txt"), "train.epochs = many\n").unwrap();
    let out = m3dm(p, &["world", "init", "--config", "bad.txt", "--out", "w2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn truncated_dataset_is_reported() {
    let tmp = setup();
    let p = tmp.path();
    let f = p.join("d/p_pos.f32");
    let bytes = fs::read(&f).unwrap();
    fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
    let out = m3dm(p, &["baseline", "fit", "--dataset", "d", "--out", "b.bin"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("p_pos.f32"));
}
