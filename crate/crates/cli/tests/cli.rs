use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mini(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini").join(name)
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_subsbench"));
    cmd.env_remove("SUBSBENCH_CONFIG").env("SUBSBENCH_LOG", "warn");
    cmd
}

fn corpus(cmd: &mut Command) -> &mut Command {
    cmd.arg("--recipes")
        .arg(mini("recipes.jsonl"))
        .arg("--train")
        .arg(mini("train.jsonl"))
        .arg("--test")
        .arg(mini("test.jsonl"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn dry_run_validates_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sft.jsonl");
    let o = run(corpus(&mut bin()).args(["--dry-run", "forge", "sft", "--out"]).arg(&out));
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("plan: forge sft"));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());

    let o = run(bin().args(["--dry-run", "forge", "sft", "--train", "/does/not/exist.jsonl", "--out"]).arg(&out));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["eval", "run", "--out"]).arg(dir.path().join("p.jsonl")));
    assert_eq!(o.status.code(), Some(2), "missing split is a config error");

    let o = run(bin().args(["--backend", "smoke-signals", "eval", "score", "--predictions", "x"]));
    assert_eq!(o.status.code(), Some(2));

    let o = run(bin().args(["eval", "frobnicate"]));
    assert_eq!(o.status.code(), Some(2), "usage errors too");

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    let o = run(bin().args(["eval", "score", "--predictions"]).arg(&bad));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl:1"));

    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[eval]\nkz = [1]\n").unwrap();
    let o = run(bin().arg("--config").arg(&cfg).args(["eval", "score", "--predictions"]).arg(&bad));
    assert_eq!(o.status.code(), Some(2), "unknown config key");
}

#[test]
fn config_file_paths_are_relative_to_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = mini("").canonicalize().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        format!(
            "[corpus]\nrecipes = \"{0}/recipes.jsonl\"\ntrain = \"{0}/train.jsonl\"\n[forge]\nn = 7\n",
            data.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("sft.jsonl");
    let o = run(bin().arg("--config").arg(&cfg).env("SUBSBENCH_FORGE__N", "4").args(["forge", "sft", "--out"]).arg(&out));
    assert!(o.status.success(), "{o:?}");
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sft.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["records"], 4);
    assert_eq!(manifest["command"], "forge sft");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn mock_eval_then_dpo() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("train.preds.jsonl");
    let o = run(corpus(&mut bin())
        .args(["--backend", "mock", "--mock-responses"])
        .arg(mini("mock_train.jsonl"))
        .args(["eval", "run", "--split", "train", "--k", "1", "--k", "5", "--out"])
        .arg(&preds));
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("Hit@1: 33.33% (50/150)"), "{text}");
    assert!(dir.path().join("train.preds.report.json").exists());

    let dpo = dir.path().join("dpo.jsonl");
    let o = run(corpus(&mut bin()).args(["forge", "dpo", "--cap", "60", "--predictions"]).arg(&preds).arg("--out").arg(&dpo));
    assert!(o.status.success(), "{o:?}");
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(&dpo)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 60);
    for r in &rows {
        assert_eq!(r["rejected"], "cardboard");
        assert!(r["prompt"].as_str().unwrap().ends_with("[/INST]"));
    }
}

#[test]
fn retrieval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(corpus(&mut bin())
        .env("SUBSBENCH_RETRIEVAL__VECTORS", mini("vectors.jsonl"))
        .args(["retrieve", "topk", "--source", "Lemons", "--k", "3"]));
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| !l.split('\t').nth(1).unwrap().eq("lemon")));

    let out = dir.path().join("b2.jsonl");
    let empty = dir.path().join("none.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(corpus(&mut bin())
        .env("SUBSBENCH_RETRIEVAL__VECTORS", mini("vectors.jsonl"))
        .env("SUBSBENCH_RETRIEVAL__CATEGORIES", mini("categories.jsonl"))
        .args(["--backend", "mock", "--mock-responses"])
        .arg(&empty)
        .args(["retrieve", "baseline2", "--rerank", "category", "--k", "5", "--limit", "20", "--out"])
        .arg(&out));
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("samples: 20  failed: 20"));
    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&out).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["ranked"].as_array().unwrap().len(), 5, "similarity order stands in");
}
