use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ilora(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilora"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ILORA_OUT_DIR")
        .output()
        .unwrap()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SHORT: &str = r#"{"train": {"steps": 30, "eval_every": 10, "eval_sequences": 8, "single_baselines": false}}"#;

#[test]
fn grad_check_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ilora(&["grad-check"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    assert_eq!(v["passed"], true);
    let names: Vec<&str> = v["tensors"].as_array().unwrap().iter().map(|t| t["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["A", "B.0", "B.1", "B.2", "Wr", "H"]);
}

#[test]
fn grad_check_single_head_skips_router() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", r#"{"n": 1, "instances": 3}"#);
    let out = ilora(&["grad-check", "--config", "g.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    let wr = v["tensors"].as_array().unwrap().iter().find(|t| t["name"] == "Wr").unwrap();
    assert_eq!(wr["skipped_zero"], true);
    assert!(!v["notes"].as_array().unwrap().is_empty());
}

#[test]
fn grad_check_failure_is_numerical_exit() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "g.json", r#"{"instances": 2, "tolerance": 1e-30}"#);
    let out = ilora(&["grad-check", "--config", "g.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stdout)["passed"], false);
    assert!(String::from_utf8_lossy(&out.stderr).contains("index"));
}

#[test]
fn train_writes_schema_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SHORT);
    let out = ilora(&["train", "--config", "c.json", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");

    let report = json(&fs::read(run.join("report.json")).unwrap());
    assert_eq!(report["kind"], "ilora");
    assert_eq!(report["param_count"], 268);
    assert_eq!(report["final_loss"].as_object().unwrap().len(), 3);
    assert_eq!(report["activation"]["heads"], 3);

    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    let mut lines = losses.lines();
    assert_eq!(lines.next(), Some("step,task_id,loss"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // steps 0, 10, 20, 30 for each of three tasks
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert!(r[2].parse::<f64>().unwrap().is_finite());
    }

    let traces = fs::read_to_string(run.join("traces.csv")).unwrap();
    assert!(traces.starts_with("token_index,task_id,segment_tag,s_0,s_1,s_2\n"));
    // 8 held-out sequences of 8 tokens per task
    assert_eq!(traces.lines().count(), 1 + 3 * 8 * 8);

    let ckpt = json(&fs::read(run.join("checkpoint.json")).unwrap());
    assert_eq!(ckpt["version"], 1);
}

#[test]
fn frozen_arm_is_flat_and_keeps_zero_heads() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SHORT);
    let out = ilora(&["train", "--config", "c.json", "--arm", "frozen", "--out", "f"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let losses = fs::read_to_string(dir.path().join("f/losses.csv")).unwrap();
    let mut per_task = std::collections::BTreeMap::<String, Vec<String>>::new();
    for l in losses.lines().skip(1) {
        let c: Vec<&str> = l.split(',').collect();
        per_task.entry(c[1].to_string()).or_default().push(c[2].to_string());
    }
    for values in per_task.values() {
        assert!(values.windows(2).all(|w| w[0] == w[1]));
    }
    let ckpt = json(&fs::read(dir.path().join("f/checkpoint.json")).unwrap());
    for t in ckpt["tensors"].as_array().unwrap() {
        if t["name"].as_str().unwrap().starts_with("B.") {
            assert!(t["data_b64"].as_str().unwrap().chars().all(|c| c == 'A' || c == '='));
        }
    }
}

#[test]
fn same_seed_gives_identical_losses_and_env_sets_output() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SHORT);
    let a = ilora(&["train", "--config", "c.json", "--seed", "7", "--out", "a"], dir.path());
    let b = Command::new(env!("CARGO_BIN_EXE_ilora"))
        .args(["train", "--config", "c.json", "--seed", "7"])
        .current_dir(dir.path())
        .env("ILORA_OUT_DIR", dir.path().join("b"))
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    let la = fs::read(dir.path().join("a/losses.csv")).unwrap();
    let lb = fs::read(dir.path().join("b/losses.csv")).unwrap();
    assert_eq!(la, lb);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_config_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "bad.json",
        r#"{"adapter": {"h": 16, "d": 16, "r": 0, "n": 3, "alpha": 8.0}}"#,
    );
    let out = ilora(&["train", "--config", "bad.json", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('r'));
    assert!(!dir.path().join("x").exists());

    write(dir.path(), "typo.json", r#"{"sede": 3}"#);
    assert_eq!(ilora(&["train", "--config", "typo.json"], dir.path()).status.code(), Some(1));
    assert_eq!(ilora(&["train", "--config", "missing.json"], dir.path()).status.code(), Some(3));
}

#[test]
fn eval_reproduces_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SHORT);
    assert!(ilora(&["train", "--config", "c.json", "--out", "r"], dir.path()).status.success());
    let out = ilora(&["eval", "--config", "c.json", "--checkpoint", "r/checkpoint.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&fs::read(dir.path().join("r/report.json")).unwrap());
    assert_eq!(json(&out.stdout)["loss"], report["final_loss"]);
}

#[test]
fn analyze_emits_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", SHORT);
    assert!(ilora(&["train", "--config", "c.json", "--out", "r"], dir.path()).status.success());
    let out = ilora(
        &["analyze", "--checkpoint", "r/checkpoint.json", "--traces", "r/traces.csv", "--out", "an"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let sim = json(&fs::read(dir.path().join("an/similarity.json")).unwrap());
    assert_eq!(sim["pairwise"].as_array().unwrap().len(), 3);
    let act = json(&fs::read(dir.path().join("an/activations.json")).unwrap());
    let mean: f64 = act["per_head_mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((mean - 1.0).abs() < 1e-12);

    write(dir.path(), "junk.csv", "token_index,task_id\n0,zero\n");
    let out = ilora(&["analyze", "--traces", "junk.csv", "--out", "an2"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn maskprompt_contract_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut pgm = String::from("P2\n8 6\n1\n");
    for y in 0..6 {
        let row: Vec<&str> = (0..8).map(|x| if (1..7).contains(&x) && (1..5).contains(&y) { "1" } else { "0" }).collect();
        pgm.push_str(&row.join(" "));
        pgm.push('\n');
    }
    write(dir.path(), "m.pgm", &pgm);
    let out = ilora(&["maskprompt", "m.pgm"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    assert_eq!(v["bbox"], serde_json::json!([1, 1, 6, 4]));
    assert_eq!(v["points"].as_array().unwrap().len(), 3);
    assert!(v["degenerate"].is_boolean());
    assert_eq!(v.as_object().unwrap().len(), 3);

    let out = ilora(&["maskprompt", "m.pgm", "--k", "5", "--iou-cap", "0.0"], dir.path());
    assert_eq!(json(&out.stdout)["points"].as_array().unwrap().len(), 5);

    write(dir.path(), "empty.pgm", "P2\n2 2\n1\n0 0\n0 0\n");
    assert_eq!(ilora(&["maskprompt", "empty.pgm"], dir.path()).status.code(), Some(1));
    write(dir.path(), "bad.pgm", "P2\n2 2\n1\n0 0\n");
    assert_eq!(ilora(&["maskprompt", "bad.pgm"], dir.path()).status.code(), Some(1));
    assert_eq!(ilora(&["maskprompt", "nope.pgm"], dir.path()).status.code(), Some(3));
    assert_eq!(ilora(&["maskprompt", "m.pgm", "--iou-cap", "2"], dir.path()).status.code(), Some(1));
}

#[test]
fn report_scores_synergy() {
    let dir = tempfile::tempdir().unwrap();
    let with_singles = r#"{"train": {"steps": 20, "eval_every": 10, "eval_sequences": 8}}"#;
    write(dir.path(), "c.json", with_singles);
    assert!(ilora(&["train", "--config", "c.json", "--out", "m"], dir.path()).status.success());
    let stored = json(&fs::read(dir.path().join("m/report.json")).unwrap());

    let out = ilora(&["report", "--multi", "m/report.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    assert_eq!(v["net_score"], stored["synergy"]["net_score"]);
    let net = v["net_score"].as_f64().unwrap();
    let (p, n) = (v["positive_fraction"].as_f64().unwrap(), v["negative_fraction"].as_f64().unwrap());
    assert_eq!(net, p - n);

    // a report against itself is all ties
    let out = ilora(&["report", "--multi", "m/report.json", "--single", "m/report.json"], dir.path());
    assert_eq!(json(&out.stdout)["net_score"], 0.0);

    write(dir.path(), "s.json", SHORT);
    assert!(ilora(&["train", "--config", "s.json", "--out", "s"], dir.path()).status.success());
    let out = ilora(&["report", "--multi", "s/report.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
