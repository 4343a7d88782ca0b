use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hvla_core::actions::read_dataset;
use serde_json::Value;

const TINY: &[&str] = &[
    "simplant.tasks=[0]",
    "simplant.demos_per_task=3",
    "simplant.eval.trials=2",
    "fasttok.vocab_size=260",
    "fasttok.fit_frames=60",
    "flowexpert.model.width=16",
    "flowexpert.model.heads=2",
    "flowexpert.model.blocks=1",
    "flowexpert.model.vl_tokens=2",
    "flowexpert.model.pretrain.vocab=260",
    "flowexpert.model.pretrain.blocks=1",
    "flowexpert.pretrain.steps=3",
    "flowexpert.posttrain.steps=3",
    "flowexpert.posttrain.validate_every=0",
    "flowexpert.posttrain.validation_size=4",
    "flowexpert.finetune.steps=3",
    "flowexpert.finetune.validate_every=0",
    "flowexpert.finetune.validation_size=4",
    "flowexpert.sample_steps=2",
    "rtcsched.sweep.latencies_ms=[160]",
    "rtcsched.bench_ticks=100",
];

fn hvla(out: &Path, args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hvla"));
    cmd.arg("--out").arg(out);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.args(args).output().expect("spawn hvla")
}

fn ok(out: &Path, args: &[&str], sets: &[&str]) -> String {
    let o = hvla(out, args, sets);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn fails(out: &Path, args: &[&str], sets: &[&str], code: i32) -> String {
    let o = hvla(out, args, sets);
    assert_eq!(o.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stderr).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn outputs(dir: &Path, command: &str) -> Value {
    json(&dir.join(format!("reports/{command}.manifest.json")))["outputs"].clone()
}

#[test]
fn default_gendata_writes_a_readable_dataset_with_80_demos_per_task() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gendata"], &[]);
    let eps = read_dataset(dir.path().join("datasets/demos.psids")).unwrap();
    let report = json(&dir.path().join("reports/gendata.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["demos_per_task"], 80);
    for task in ["0", "1", "2"] {
        assert_eq!(report["episodes_per_task"][task], 80);
    }
    assert_eq!(eps.len(), 240);
    let ts = read_dataset(dir.path().join("datasets/task_space.psids")).unwrap();
    assert_eq!(ts.len(), 240);
    assert!(eps.iter().zip(&ts).all(|(a, b)| a.len() == b.len() && a.states == b.states));
}

#[test]
fn gendata_is_reproducible_per_seed() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(a.path(), &["gendata"], TINY);
    ok(b.path(), &["gendata"], TINY);
    ok(c.path(), &["--seed", "9", "gendata"], TINY);
    assert_eq!(outputs(a.path(), "gendata"), outputs(b.path(), "gendata"));
    assert_ne!(outputs(a.path(), "gendata")["datasets/demos.psids"], outputs(c.path(), "gendata")["datasets/demos.psids"]);
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails(dir.path(), &["finetune"], TINY, 1);
    assert!(err.contains("missing posttrain checkpoint"), "{err}");
    let err = fails(dir.path(), &["posttrain"], TINY, 1);
    assert!(err.contains("missing pretrain checkpoint"), "{err}");
    let err = fails(dir.path(), &["fit-tokenizer"], TINY, 1);
    assert!(err.contains("missing task-space dataset"), "{err}");
    let err = fails(dir.path(), &["eval"], TINY, 1);
    assert!(err.contains("missing finetune checkpoint"), "{err}");
}

#[test]
fn config_errors_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    fails(dir.path(), &["gendata"], &["simplant.nope=1"], 1);
    fails(dir.path(), &["gendata"], &["simplant.demos_per_task=-3"], 1);
    let err = fails(dir.path(), &["gendata"], &["rtcsched.scheduler.horizon=8"], 1);
    assert!(err.contains("horizon"), "{err}");
    fails(dir.path(), &["no-such-command"], &[], 1);
    fails(dir.path(), &["--config", "/nonexistent/config.json", "gendata"], &[], 1);
}

#[test]
fn tampered_artifact_is_an_internal_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gendata"], TINY);
    let norm = dir.path().join("datasets/task_norm.json");
    let mut text = fs::read_to_string(&norm).unwrap();
    text.push(' ');
    fs::write(&norm, text).unwrap();
    let err = fails(dir.path(), &["fit-tokenizer"], TINY, 2);
    assert!(err.contains("does not match"), "{err}");
}

#[test]
fn a_held_lock_blocks_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(".hvla.lock"), "1").unwrap();
    let err = fails(dir.path(), &["gendata"], TINY, 1);
    assert!(err.contains("locked"), "{err}");
}

#[test]
fn tiny_pipeline_runs_every_stage_and_reports_are_versioned() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for stage in ["gendata", "fit-tokenizer", "pretrain", "posttrain", "finetune", "bench-rtc"] {
        ok(d, &[stage], TINY);
    }
    let untrained = ok(d, &["eval", "--policy", "untrained"], TINY);
    assert!(untrained.contains("/2"), "{untrained}");
    let oracle = ok(d, &["eval", "--policy", "oracle"], TINY);
    assert!(oracle.contains(": 2/2"), "{oracle}");
    ok(d, &["eval"], TINY);
    for entry in fs::read_dir(d.join("reports")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") && !p.to_string_lossy().ends_with(".manifest.json") {
            assert_eq!(json(&p)["schema_version"], 1, "{}", p.display());
        }
    }
    let m = json(&d.join("reports/finetune.manifest.json"));
    assert!(m["inputs"]["checkpoints/posttrain.ckpt"].is_string());
    assert!(m["outputs"]["checkpoints/finetune.ckpt"].is_string());
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);

    let ck: Value = serde_json::from_str(&ok(d, &["inspect", d.join("checkpoints/finetune.ckpt").to_str().unwrap()], &[])).unwrap();
    assert_eq!(ck["kind"], "checkpoint");
    assert_eq!(ck["header"]["stage"], "finetune");
    let ds: Value = serde_json::from_str(&ok(d, &["inspect", d.join("datasets/demos.psids").to_str().unwrap()], &[])).unwrap();
    assert_eq!(ds["episodes"], 3);
    let rep: Value = serde_json::from_str(&ok(d, &["inspect", d.join("reports/eval-oracle.json").to_str().unwrap()], &[])).unwrap();
    assert_eq!(rep["command"], "eval-oracle");
}

#[test]
fn zeros_policy_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["eval", "--policy", "zeros"], TINY);
    assert!(out.contains(": 0/2"), "{out}");
    let r = json(&dir.path().join("reports/eval-zeros.json"));
    assert_eq!(r["success_rate"], "0/2");
    assert_eq!(r["subgoal_rates"].as_array().unwrap().len(), 3);
}

#[test]
fn bench_rtc_sweep_reports_gaps_overruns_and_sync_baseline() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["bench-rtc"], &[]);
    let r = json(&dir.path().join("reports/bench-rtc.json"));
    let points = r["points"].as_array().unwrap();
    let at = |ms: f64| points.iter().find(|p| p["latency_ms"] == ms).unwrap();
    let nominal = at(160.0);
    assert_eq!(nominal["inpaint"]["gap_ticks"], 0);
    assert_eq!(nominal["inpaint"]["overruns"], 0);
    assert_eq!(nominal["sync_gaps_per_boundary"], 5.0);
    // lambda = 12 > H - s_min = 8
    let slow = at(400.0);
    assert_eq!(slow["feasible"], false);
    assert!(slow["inpaint"]["overruns"].as_u64().unwrap() > 0);
    assert!(dir.path().join("reports/traces/160ms_s8_h16_inpaint.jsonl").exists());
}

#[test]
fn config_file_round_trips_through_the_config_command() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(dir.path(), &["--seed", "4", "config"], &["flowexpert.finetune.steps=11"]);
    let path = dir.path().join("cfg.json");
    fs::write(&path, &printed).unwrap();
    let again = ok(dir.path(), &["--config", path.to_str().unwrap(), "config"], &[]);
    assert_eq!(printed, again);
    let v: Value = serde_json::from_str(&again).unwrap();
    assert_eq!(v["seed"], 4);
    assert_eq!(v["flowexpert"]["finetune"]["steps"], 11);
}
