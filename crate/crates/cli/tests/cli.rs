use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const ARTIFACTS: [&str; 9] = [
    "scan.jsonl",
    "graph.jsonl",
    "build.jsonl",
    "records.jsonl",
    "prompts.train.jsonl",
    "prompts.test.jsonl",
    "stats.json",
    "outcomes.jsonl",
    "eval.json",
];

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn leanforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leanforge")).args(args).env_remove("LEANFORGE_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let f = fixtures().canonicalize().unwrap();
    let text = format!(
        r#"workspace = "out"
corpus = "{corpus}"
record_timing = false
{extra}
[build]
command = "{{self}} sim-compile {{path}}"
workers = 3
timeout_secs = 60

[extract]
backend = "{{self}} sim-backend --world {world}"
url_prefix = "https://example.org/"
commit = "0123abc"

[dataset]
split = [0.8, 0.2]

[search]
world = "{world}"
attempts = 2
k = 20

[eval]
k = [1, 2]
"#,
        corpus = f.join("corpus").display(),
        world = f.join("world.json").display(),
    );
    let path = dir.join("pipeline.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_pipeline(dir: &Path) -> PathBuf {
    let config = write_config(dir, "");
    stdout(&leanforge(&["pipeline", "--config", config.to_str().unwrap()]));
    dir.join("out")
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn pipeline_matches_goldens() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_pipeline(tmp.path());
    if std::env::var_os("LEANFORGE_UPDATE_GOLDENS").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        for a in ARTIFACTS {
            fs::copy(out.join(a), golden_dir().join(a)).unwrap();
        }
    }
    for a in ARTIFACTS {
        let got = fs::read_to_string(out.join(a)).unwrap();
        let want = fs::read_to_string(golden_dir().join(a)).unwrap();
        assert!(got == want, "{a} differs from its golden");
    }
}

#[test]
fn pipeline_artifact_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_pipeline(tmp.path());

    let scan = jsonl(&out.join("scan.jsonl"));
    let kinds: Vec<(&str, &str)> =
        scan.iter().map(|r| (r["name"].as_str().unwrap(), r["classification"]["kind"].as_str().unwrap())).collect();
    assert_eq!(
        kinds,
        vec![
            ("algebra-project", "CompilableProject"),
            ("deprecated-repo", "DeprecatedVersion"),
            ("logic-project", "CompilableProject"),
            ("missing-deps", "MissingDependencies"),
            ("old-lean3", "NotLean4"),
            ("scratch-files", "IsolatedFiles"),
        ]
    );
    // a release candidate resolves to the nearest release
    assert_eq!(scan[2]["toolchain"], "leanprover/lean4:v4.10.0");

    let build = jsonl(&out.join("build.jsonl"));
    assert_eq!(build.len(), 10);
    let status = |m: &str| build.iter().find(|r| r["module"] == m).unwrap().clone();
    assert_eq!(status("«algebra-project».Algebra.Broken")["status"], "failed");
    let down = status("«algebra-project».Algebra.Downstream");
    assert_eq!(down["status"], "skipped");
    assert_eq!(down["blamed"], "«algebra-project».Algebra.Broken");
    assert!(build.iter().all(|r| r["wall_ms"] == 0));

    let records = jsonl(&out.join("records.jsonl"));
    assert_eq!(records.len(), 42);
    assert!(records.iter().all(|r| r["file_path"] != "algebra-project/Algebra/Crash.lean"));
    assert_eq!(records[0]["url"], "https://example.org/algebra-project");

    let stats: Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["theorems_total"], 42);
    assert_eq!(stats["theorems_with_tactics"], 28);
    assert_eq!(stats["tactic_steps"], 45);

    let prompts = jsonl(&out.join("prompts.train.jsonl")).len() + jsonl(&out.join("prompts.test.jsonl")).len();
    assert_eq!(prompts, 45);

    let outcomes = jsonl(&out.join("outcomes.jsonl"));
    assert_eq!(outcomes.len(), 84);
    let eval: Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(eval["problems"], 42);
    assert_eq!(eval["attempts"], 2);
}

#[test]
fn pipeline_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_pipeline(tmp.path());
    let first: Vec<String> = ARTIFACTS.iter().map(|a| fs::read_to_string(out.join(a)).unwrap()).collect();
    run_pipeline(tmp.path());
    let second: Vec<String> = ARTIFACTS.iter().map(|a| fs::read_to_string(out.join(a)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn worker_count_does_not_change_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_pipeline(tmp.path());
    let graph = out.join("graph.jsonl");
    let corpus = fixtures().join("corpus");
    let mut reports = Vec::new();
    for workers in ["1", "8"] {
        let o = Command::new(env!("CARGO_BIN_EXE_leanforge"))
            .args(["build", graph.to_str().unwrap(), "--cmd", "{self} sim-compile {path}", "--no-timing"])
            .args(["--root", corpus.to_str().unwrap()])
            .env("LEANFORGE_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(1), "one module fails to compile");
        reports.push(String::from_utf8(o.stdout).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], fs::read_to_string(out.join("build.jsonl")).unwrap());
}

#[test]
fn missing_input_names_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let o = leanforge(&["pipeline", "--config", config.to_str().unwrap(), "--stages", "build"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage build failed: missing graph.jsonl; run the graph stage first"), "{err}");
}

#[test]
fn earlier_artifacts_survive_a_failing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let text = fs::read_to_string(&config).unwrap().replace("backend = \"{self} sim-backend", "# backend = \"{self} sim-backend");
    fs::write(&config, text).unwrap();
    let o = leanforge(&["pipeline", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage extract failed: extract.backend is not set"));
    let out = tmp.path().join("out");
    for a in ["scan.jsonl", "graph.jsonl", "build.jsonl"] {
        assert!(out.join(a).exists(), "{a}");
    }
    assert!(!out.join("records.jsonl").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "wrokers = 3\n");
    let o = leanforge(&["pipeline", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid config"));
}

#[test]
fn bad_split_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "");
    let text = fs::read_to_string(&config).unwrap().replace("split = [0.8, 0.2]", "split = [0.8, 0.3]");
    fs::write(&config, text).unwrap();
    let o = leanforge(&["pipeline", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fractions sum to"));
    assert!(!tmp.path().join("out").exists(), "nothing runs before the config validates");
}

#[test]
fn process_generator_matches_builtin() {
    let tmp = tempfile::tempdir().unwrap();
    let world = fixtures().join("world.json");
    let w = world.to_str().unwrap();
    let theorems = tmp.path().join("theorems.txt");
    fs::write(&theorems, "# sample\nMyNat.mul_pow\nLogic.or_comm'\n\nLogic.dne\n").unwrap();
    let t = theorems.to_str().unwrap();
    let builtin = stdout(&leanforge(&["search", "--theorems", t, "--world", w, "--attempts", "3"]));
    let backend = format!("{{self}} sim-backend --world {w}");
    let generator = format!("{{self}} sim-generator --world {w} --seed {{seed}}");
    let external = stdout(&leanforge(&[
        "search", "--theorems", t, "--backend", &backend, "--generator", &generator, "--attempts", "3",
    ]));
    assert_eq!(builtin, external);
    let lines: Vec<Value> = builtin.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[3]["proof"][2], "· right\n    exact hp");
    assert_eq!(lines[8]["outcome"], "exhausted");
}

#[test]
fn eval_merges_matrix_files() {
    let f = fixtures().join("eval");
    let o = leanforge(&[
        "eval",
        "--outcomes",
        f.join("run_a.json").to_str().unwrap(),
        f.join("run_b.json").to_str().unwrap(),
        "--k",
        "1,64",
    ]);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["attempts"], 64);
    assert_eq!(report["rows"][1]["solved"], 133);
    assert_eq!(report["rows"][1]["percent"], "54.5%");
}

#[test]
fn eval_rejects_k_beyond_attempts() {
    let f = fixtures().join("eval/run_a.json");
    let o = leanforge(&["eval", "--outcomes", f.to_str().unwrap(), "--k", "64"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn canon_reports_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("states.jsonl");
    fs::write(&input, "\"x : ℕ\\nh : x = 1\\n⊢ x = 1\"\n{\"state\":\"y : ℕ\\nhy : y = 1\\n⊢ y = 1\"}\n\"not a state\"\n").unwrap();
    let out = stdout(&leanforge(&["canon", "--in", input.to_str().unwrap()]));
    let rows: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[0]["canonical_text"], "_h0 : ℕ\n_h1 : _h0 = 1\n⊢ _h0 = 1");
    assert_eq!(rows[0]["digest"], rows[1]["digest"]);
    assert_eq!(rows[0]["digest"].as_str().unwrap().len(), 32);
    assert_eq!(rows[2]["canonical"], false);
}

#[test]
fn dataset_build_writes_one_file_per_split() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("p/prompts.jsonl");
    let records = fixtures().join("records12.jsonl");
    let o = leanforge(&[
        "dataset", "build", "--records", records.to_str().unwrap(), "--out-prompts", base.to_str().unwrap(),
        "--split", "0.6,0.2,0.2",
    ]);
    stdout(&o);
    let total: usize = ["train", "valid", "test"]
        .iter()
        .map(|s| fs::read_to_string(tmp.path().join(format!("p/prompts.{s}.jsonl"))).unwrap().lines().count())
        .sum();
    assert_eq!(total, 31);
}

#[test]
fn sim_compile_exit_codes() {
    let corpus = fixtures().join("corpus/algebra-project/Algebra");
    assert_eq!(leanforge(&["sim-compile", corpus.join("Basic.lean").to_str().unwrap()]).status.code(), Some(0));
    let o = leanforge(&["sim-compile", corpus.join("Broken.lean").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error: simulated compile failure"));
}
