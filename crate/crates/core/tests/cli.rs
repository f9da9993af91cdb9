use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn groupanno(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groupanno"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) {
    let o = groupanno(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_infer_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&data, &["--seed", "3", "generate", "--shape", "moon", "--instances-per-class", "40"]);
    for f in ["annotations.csv", "annotators.csv", "gold.csv", "truth.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let (ann, annotators, gold) = (data.join("annotations.csv"), data.join("annotators.csv"), data.join("gold.csv"));

    for method in ["mv", "zencrowd", "lfc", "groupanno"] {
        let out = dir.path().join(method);
        ok(
            &out,
            &["infer", "--method", method, "--annotations", s(&ann), "--annotators", s(&annotators)],
        );
        for f in ["posteriors.csv", "bias.json", "classifier.json", "trace.csv"] {
            assert!(out.join(f).is_file(), "{method} {f}");
        }
        ok(&out, &["evaluate", "--posteriors", s(&out.join("posteriors.csv")), "--gold", s(&gold)]);
        let metrics: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        let acc = metrics["accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc), "{method} {acc}");
        assert!(out.join("metrics.txt").is_file());
    }
}

#[test]
fn analyze_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture("small_moon");
    ok(
        dir.path(),
        &[
            "analyze",
            "--annotations",
            s(&fx.join("annotations.csv")),
            "--annotators",
            s(&fx.join("annotators.csv")),
        ],
    );
    let txt = std::fs::read_to_string(dir.path().join("analysis.txt")).unwrap();
    assert!(txt.contains("category_0"), "{txt}");
    assert!(dir.path().join("analysis.json").is_file());
}

#[test]
fn text_instances_are_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture("text");
    ok(
        dir.path(),
        &[
            "infer",
            "--method",
            "groupanno",
            "--annotations",
            s(&fx.join("annotations.csv")),
            "--instances",
            s(&fx.join("instances.csv")),
            "--text-buckets",
            "64",
            "--annotators",
            s(&fx.join("annotators.csv")),
        ],
    );
    let c: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("classifier.json")).unwrap()).unwrap();
    assert_eq!(c["weights"].as_array().unwrap().len(), 64);
}

#[test]
fn experiment_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture("small_moon");
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        format!(
            "name = \"cli\"\nseed = 2\nmethods = [\"mv\", \"lfc\"]\n[data.files]\nannotations = {:?}\nannotators = {:?}\ngold = {:?}\n",
            fx.join("annotations.csv"),
            fx.join("annotators.csv"),
            fx.join("gold.csv"),
        ),
    )
    .unwrap();
    ok(dir.path(), &["experiment", "--config", s(&cfg)]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"].as_object().unwrap().len(), 2);
    assert!(dir.path().join("report.txt").is_file());
}

#[test]
fn bad_label_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.csv");
    std::fs::write(&ann, "instance_id,annotator_id,label,feature_0\nx,r,7,0.5\n").unwrap();
    let o = groupanno(dir.path(), &["infer", "--method", "mv", "--annotations", s(&ann)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_file_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = groupanno(
        dir.path(),
        &["evaluate", "--posteriors", s(&dir.path().join("nope.csv")), "--gold", "nope.csv"],
    );
    assert_eq!(o.status.code(), Some(1));
}
