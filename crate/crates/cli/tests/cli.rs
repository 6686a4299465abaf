use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use course_assistant::analytics::SyntheticSpec;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_course-assistant")).args(args).output().expect("binary runs")
}

fn stderr_json(output: &Output) -> Value {
    let text = String::from_utf8_lossy(&output.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("one-line json error")
}

fn write_spec(dir: &Path, spec: &SyntheticSpec) -> String {
    let path = dir.join("spec.toml");
    fs::write(&path, toml::to_string(spec).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn report_on_empty_export_is_zeroed() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.ndjson");
    fs::write(&input, "").unwrap();
    let output = run(&["report", "--input", input.to_str().unwrap()]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["empty"], true);
    assert_eq!(report["conversation_count"], 0);
    assert_eq!(report["within_ten_minutes_ratio"], 0.0);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &SyntheticSpec::deployment_profile(500));
    let outputs: Vec<Vec<u8>> = ["a.ndjson", "b.ndjson", "c.ndjson"]
        .iter()
        .zip(["7", "7", "8"])
        .map(|(name, seed)| {
            let out = dir.path().join(name);
            let status = run(&["simulate", "--spec", &spec, "--seed", seed, "--out", out.to_str().unwrap()]);
            assert!(status.status.success());
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
}

#[test]
fn simulate_then_report_reproduces_targets() {
    let dir = tempfile::tempdir().unwrap();
    let shaped = SyntheticSpec::deployment_profile(2000);
    let spec = write_spec(dir.path(), &shaped);
    let export = dir.path().join("logs.ndjson");
    assert!(run(&["simulate", "--spec", &spec, "--seed", "3", "--out", export.to_str().unwrap()]).status.success());
    let start = shaped.semester_start.to_string();
    let output = run(&["report", "--input", export.to_str().unwrap(), "--semester-start", &start]);
    assert!(output.status.success());
    let report: Value = serde_json::from_slice(&output.stdout).unwrap();
    let total = shaped.total_conversations as f64;
    assert_eq!(report["conversation_count"], shaped.total_conversations);
    assert_eq!(report["rounds_histogram"][0], shaped.zero_rounds);
    assert_eq!(report["rounds_histogram"][1], shaped.single_round);
    assert_eq!(report["within_ten_minutes_ratio"].as_f64().unwrap(), shaped.within_ten_minutes as f64 / total);
    assert_eq!(report["follow_up"]["overall"]["emitted"], shaped.follow_up_emitted);
    assert_eq!(report["follow_up"]["overall"]["answered"], shaped.follow_up_answered);

    let with_dev = run(&["report", "--input", export.to_str().unwrap(), "--developers"]);
    let with_dev: Value = serde_json::from_slice(&with_dev.stdout).unwrap();
    assert_eq!(with_dev["conversation_count"], shaped.total_conversations + shaped.developer_conversations);

    let tables = dir.path().join("tables");
    let csv = run(&["report", "--input", export.to_str().unwrap(), "--format", "csv", "--out", tables.to_str().unwrap()]);
    assert!(csv.status.success());
    assert!(fs::read_to_string(tables.join("rounds.csv")).unwrap().lines().count() > 2);
    assert!(!tables.join("annotations.csv").exists());

    let ids = run(&["sample", "--input", export.to_str().unwrap(), "--n", "50", "--seed", "1"]);
    assert!(ids.status.success());
    let lines: Vec<_> = std::str::from_utf8(&ids.stdout).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 50);
    assert!(lines.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(stderr_json(&ids)["shortfall"], 0);
}

#[test]
fn ingest_with_missing_file_ingests_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let settings = dir.path().join("settings.toml");
    fs::write(&settings, "data_dir = \"data\"\nsalt = \"s\"\n[embedding]\nprovider = \"hash\"\n[llm]\nprovider = \"mock\"\n")
        .unwrap();
    fs::write(dir.path().join("lecture.md"), "Round robin gives every process a fixed quantum.").unwrap();
    let manifest = dir.path().join("manifest.csv");
    fs::write(&manifest, "title,kind,path\nLecture 1,lecture,lecture.md\nHomework 1,homework,missing.md\n").unwrap();
    let args = ["ingest", "--config", settings.to_str().unwrap(), "--course", "OS", "--manifest", manifest.to_str().unwrap()];
    let output = run(&args);
    assert_eq!(output.status.code(), Some(3));
    assert_eq!(stderr_json(&output)["error"], "io");
    assert!(!dir.path().join("data/knowledge.json").exists());

    fs::write(&manifest, "title,kind,path\nLecture 1,lecture,lecture.md\n").unwrap();
    let output = run(&args);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summaries: Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(summaries.as_array().unwrap().len(), 1);
    assert!(dir.path().join("data/knowledge.json").exists());

    let export = run(&["export", "--config", settings.to_str().unwrap(), "--course", "OS"]);
    assert!(export.status.success());
    assert!(export.stdout.is_empty());
}

#[test]
fn usage_and_input_errors_have_distinct_exit_codes() {
    let unknown = run(&["report", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(stderr_json(&unknown)["error"], "usage");
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["report", "--input", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));

    let garbage = dir.path().join("garbage.ndjson");
    fs::write(&garbage, "{not json}\n").unwrap();
    let malformed = run(&["report", "--input", garbage.to_str().unwrap()]);
    assert_eq!(malformed.status.code(), Some(4));
    assert_eq!(stderr_json(&malformed)["error"], "malformed_input");

    let annotations = dir.path().join("annotations.csv");
    fs::write(
        &annotations,
        "conversation_id,course_id,mode,question_index,bloom,correctness,grammatical_error,polite,off_topic,has_example,llm_question_present,llm_question_answered,annotator_id\n\
         c1,OS,general,0,remember,correct_helpful,false,true,false,false,false,true,a1\n",
    )
    .unwrap();
    let rejected = run(&["annotate-import", "--input", annotations.to_str().unwrap()]);
    assert_eq!(rejected.status.code(), Some(6));
    let body: Value = serde_json::from_slice(&rejected.stdout).unwrap();
    assert_eq!(body["accepted"], 0);
    assert_eq!(body["rejected"].as_array().unwrap().len(), 1);
}

#[test]
fn serve_reports_port_in_use() {
    let dir = tempfile::tempdir().unwrap();
    let settings = dir.path().join("settings.toml");
    fs::write(&settings, "[embedding]\nprovider = \"hash\"\n[llm]\nprovider = \"mock\"\n").unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let output = run(&["serve", "--config", settings.to_str().unwrap(), "--port", &port]);
    assert_eq!(output.status.code(), Some(5));
    assert_eq!(stderr_json(&output)["error"], "port_in_use");
}
