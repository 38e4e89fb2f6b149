//! End-to-end runs of the `serum` binary: exit codes, output files,
//! determinism, environment overrides, and the wire protocol through the
//! full stack.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{MockServer, WireResponse};

fn serum() -> Command {
    Command::new(env!("CARGO_BIN_EXE_serum"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    serum().args(args).output().expect("spawn serum")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn eval_ngram_writes_three_files_and_prints_the_table() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "eval",
        "--task",
        "copa",
        "--data",
        fixture("mini_copa.xml").to_str().unwrap(),
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--methods",
        "max_post,max_ratio",
        "--out",
        out_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    for name in ["report.json", "report.txt", "instances.jsonl"] {
        assert!(out_dir.path().join(name).exists(), "{name} missing");
    }
    let stdout = stdout_of(&out);
    assert!(stdout.contains("Aggregate accuracy"));
    assert!(stdout.contains("MaxPost"));
    assert!(stdout.contains("MaxRatio"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["item_count"], 4);
    assert_eq!(report["methods"][0], "max_post");
}

#[test]
fn eval_is_byte_identical_across_invocations_and_jobs() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let base = |out: &Path, jobs: &str| {
        run(&[
            "eval",
            "--task",
            "storycloze",
            "--data",
            fixture("mini_storycloze.csv").to_str().unwrap(),
            "--backend",
            "ngram",
            "--corpus",
            fixture("corpus.txt").to_str().unwrap(),
            "--methods",
            "max_post,max_ratio,max_diff,max_post_n",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let a = base(dir1.path(), "1");
    let b = base(dir2.path(), "8");
    assert_eq!(code(&a), 0, "stderr: {}", stderr_of(&a));
    assert_eq!(code(&b), 0, "stderr: {}", stderr_of(&b));
    for name in ["report.json", "report.txt", "instances.jsonl"] {
        assert_eq!(
            std::fs::read(dir1.path().join(name)).unwrap(),
            std::fs::read(dir2.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn eval_missing_data_is_a_usage_error() {
    let out = run(&["eval", "--task", "truthfulqa"]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("--data"));
}

#[test]
fn unknown_flags_are_rejected() {
    let out = run(&["eval", "--task", "copa", "--nonsense"]);
    assert_eq!(code(&out), 1);
    let out = run(&["validate", "--task", "copa", "--data", "x", "--bogus"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn help_exits_zero_and_documents_flags() {
    for sub in ["eval", "score", "validate", "pts-demo"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
        let text = stdout_of(&out);
        assert!(text.contains("Usage"), "{sub} --help output: {text}");
    }
    let eval_help = stdout_of(&run(&["eval", "--help"]));
    for flag in [
        "--task", "--data", "--backend", "--corpus", "--remote-url", "--model", "--methods",
        "--prior", "--jobs", "--out", "--cache-dir", "--skip-errors", "--config",
    ] {
        assert!(eval_help.contains(flag), "eval --help missing {flag}");
    }
}

#[test]
fn validate_prints_stats_for_all_three_formats() {
    let out = run(&[
        "validate",
        "--task",
        "truthfulqa",
        "--data",
        fixture("mini_truthfulqa.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("items: 4"));
    assert!(text.contains("2 filtered, 2 unfiltered"));
    assert!(text.contains("categories: 4"));

    let out = run(&[
        "validate",
        "--task",
        "copa",
        "--data",
        fixture("mini_copa.xml").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout_of(&out).contains("items: 4"));
    assert!(stdout_of(&out).contains("mean candidates per item: 2.0000"));

    let out = run(&[
        "validate",
        "--task",
        "storycloze",
        "--data",
        fixture("mini_storycloze.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout_of(&out).contains("items: 3"));
}

#[test]
fn validate_reports_the_offending_row_on_truncated_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truncated.csv");
    let full = std::fs::read_to_string(fixture("mini_truthfulqa.csv")).unwrap();
    // Cut the file in the middle of the third data row.
    let lines: Vec<&str> = full.lines().collect();
    let truncated = format!(
        "{}\n{}\n{}\n{}",
        lines[0],
        lines[1],
        lines[2],
        &lines[3][..40]
    );
    std::fs::write(&path, truncated).unwrap();
    let out = run(&["validate", "--task", "truthfulqa", "--data", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr_of(&out).contains("row 4"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn validate_nonexistent_file_is_a_data_error() {
    let out = run(&["validate", "--task", "copa", "--data", "/nonexistent/file.xml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn score_prints_per_candidate_scores_and_selections() {
    let out = run(&[
        "score",
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--question",
        "which city is the seat of the dutch government ?",
        "--prior-context",
        "?",
        "--candidate",
        "the hague",
        "--candidate",
        "amsterdam",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("logp_post"));
    assert!(text.contains("max_ratio: index"));
    assert!(text.contains("max_post: index"));
    assert!(text.lines().filter(|l| l.starts_with(['0', '1'])).count() >= 2);
}

#[test]
fn score_tau_matches_the_eval_path_exactly() {
    // The same question/candidates as one row in the mini dataset: the
    // ad-hoc path and the dataset path must produce identical numbers.
    let out_dir = tempfile::tempdir().unwrap();
    let eval_out = run(&[
        "eval",
        "--task",
        "truthfulqa",
        "--data",
        fixture("mini_truthfulqa.csv").to_str().unwrap(),
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--methods",
        "max_ratio",
        "--out",
        out_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&eval_out), 0, "stderr: {}", stderr_of(&eval_out));

    // Instance line for the Dutch-government item (tqa-0003).
    let instances = std::fs::read_to_string(out_dir.path().join("instances.jsonl")).unwrap();
    let record: serde_json::Value = instances
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .find(|v: &serde_json::Value| v["item_id"] == "tqa-0003")
        .expect("instance for tqa-0003");

    let score_out = run(&[
        "score",
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--question",
        "Which city is the seat of the Dutch government?",
        "--prior-context",
        "?",
        "--candidate",
        "The Hague",
        "--candidate",
        "The seat is The Hague",
        "--candidate",
        "Amsterdam",
        "--candidate",
        "Rotterdam",
        "--methods",
        "max_ratio",
    ]);
    assert_eq!(code(&score_out), 0, "stderr: {}", stderr_of(&score_out));
    let text = stdout_of(&score_out);
    let chosen = record["chosen_index"].as_u64().unwrap();
    let line = text
        .lines()
        .find(|l| l.starts_with(&format!("{chosen}\t")))
        .expect("chosen candidate line");
    let fields: Vec<&str> = line.split('\t').collect();
    let tau_cli: f64 = fields[3].parse().unwrap();
    let tau_eval = record["tau"].as_f64().unwrap();
    assert_eq!(tau_cli.to_bits(), tau_eval.to_bits(), "{tau_cli} vs {tau_eval}");
    assert!(text.contains(&format!("max_ratio: index {chosen}")));
}

#[test]
fn score_single_candidate_selects_index_zero_everywhere() {
    let out = run(&[
        "score",
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--question",
        "it started to rain so",
        "--candidate",
        "the ground got wet",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout_of(&out);
    for method in ["max_post", "max_ratio", "max_diff", "max_post_n"] {
        assert!(
            text.contains(&format!("{method}: index 0")),
            "missing {method} line in {text}"
        );
    }
}

#[test]
fn score_without_candidates_is_a_usage_error() {
    let out = run(&[
        "score",
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--question",
        "anything",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn pts_demo_prints_the_worked_example() {
    let out = run(&["pts-demo"]);
    assert_eq!(code(&out), 0);
    let text = stdout_of(&out);
    assert!(text.contains("6.0000"), "{text}");
    assert!(text.contains("1.1667"), "{text}");
}

#[test]
fn unreachable_remote_with_empty_cache_exits_three() {
    let cache = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let out = serum()
        .args([
            "eval",
            "--task",
            "copa",
            "--data",
            fixture("mini_copa.xml").to_str().unwrap(),
            "--backend",
            "remote",
            "--remote-url",
            &format!("http://127.0.0.1:{port}"),
            "--model",
            "m",
            "--methods",
            "max_ratio",
            "--cache-dir",
            cache.path().to_str().unwrap(),
            "--out",
            out_dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "stderr: {}", stderr_of(&out));
}

#[test]
fn remote_eval_through_mock_server_works_and_caches() {
    let server = MockServer::start(WireResponse::ok_for);
    let cache = tempfile::tempdir().unwrap();
    let out_dir = tempfile::tempdir().unwrap();
    let data = fixture("mini_copa.xml");
    let args = [
        "eval",
        "--task",
        "copa",
        "--data",
        data.to_str().unwrap(),
        "--backend",
        "remote",
        "--remote-url",
        server.url(),
        "--model",
        "gpt-test",
        "--methods",
        "max_post,max_ratio",
        "--cache-dir",
        cache.path().to_str().unwrap(),
        "--out",
        out_dir.path().to_str().unwrap(),
    ];
    let first = run(&args);
    assert_eq!(code(&first), 0, "stderr: {}", stderr_of(&first));
    let after_first = server.request_count();
    assert!(after_first > 0);

    // Second run answers fully from the persistent cache.
    let second = run(&args);
    assert_eq!(code(&second), 0, "stderr: {}", stderr_of(&second));
    assert_eq!(server.request_count(), after_first, "second run must not hit the server");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["model"], "gpt-test");
}

#[test]
fn env_var_supplies_the_remote_url_and_flags_override_it() {
    let server = MockServer::start(WireResponse::ok_for);
    let out_dir = tempfile::tempdir().unwrap();
    // URL comes from the environment.
    let out = serum()
        .env("SERUM_REMOTE_URL", server.url())
        .args([
            "eval",
            "--task",
            "copa",
            "--data",
            fixture("mini_copa.xml").to_str().unwrap(),
            "--backend",
            "remote",
            "--model",
            "m",
            "--methods",
            "max_ratio",
            "--out",
            out_dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(server.request_count() > 0);

    // A flag pointing at a live server beats a dead env URL.
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let out_dir2 = tempfile::tempdir().unwrap();
    let before = server.request_count();
    let out = serum()
        .env("SERUM_REMOTE_URL", format!("http://127.0.0.1:{port}"))
        .args([
            "eval",
            "--task",
            "copa",
            "--data",
            fixture("mini_copa.xml").to_str().unwrap(),
            "--backend",
            "remote",
            "--remote-url",
            server.url(),
            "--model",
            "m",
            "--methods",
            "max_ratio",
            "--out",
            out_dir2.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(server.request_count() > before);
}

#[test]
fn skip_errors_records_unanswered_items_and_partial_failures_flush() {
    // The mock fails any request whose continuation mentions "ladder".
    let server = MockServer::start(|req| {
        if req.continuation.contains("ladder") {
            WireResponse {
                status: 500,
                body: "{\"error\":\"rigged\"}".into(),
            }
        } else {
            WireResponse::ok_for(req)
        }
    });
    let out_dir = tempfile::tempdir().unwrap();
    let base_args = |out: &Path, extra: &[&str]| {
        let mut v = vec![
            "eval".to_string(),
            "--task".into(),
            "copa".into(),
            "--data".into(),
            fixture("mini_copa.xml").to_str().unwrap().into(),
            "--backend".into(),
            "remote".into(),
            "--remote-url".into(),
            server.url().to_string(),
            "--model".into(),
            "m".into(),
            "--methods".into(),
            "max_ratio".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };

    // Default policy: abort with a backend exit code, partials flushed.
    let out = serum()
        .args(base_args(out_dir.path(), &[]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "stderr: {}", stderr_of(&out));
    let partial = std::fs::read_to_string(out_dir.path().join("instances.jsonl")).unwrap();
    assert!(
        partial.lines().count() >= 1,
        "completed items must be flushed before aborting"
    );

    // Skip policy: run completes, item 2 is excluded and flagged.
    let out_dir2 = tempfile::tempdir().unwrap();
    let out = serum()
        .args(base_args(out_dir2.path(), &["--skip-errors"]))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir2.path().join("report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["item_count"], 3);
    assert_eq!(report["skipped"][0]["item_id"], "copa-2");
    let text = std::fs::read_to_string(out_dir2.path().join("report.txt")).unwrap();
    assert!(text.contains("Skipped items"));
}

#[test]
fn config_file_supplies_settings_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("out-a");
    let config_path = dir.path().join("run.json");
    let config = serde_json::json!({
        "datasets": [{"kind": "copa", "path": fixture("mini_copa.xml")}],
        "backend": {"kind": "ngram"},
        "corpus_path": fixture("corpus.txt"),
        "methods": ["max_post", "max_ratio"],
        "out_dir": out_a,
    });
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

    let out = run(&["eval", "--config", config_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(out_a.join("report.json").exists());

    // Flag overrides the configured output directory and method list.
    let out_b = dir.path().join("out-b");
    let out = run(&[
        "eval",
        "--config",
        config_path.to_str().unwrap(),
        "--methods",
        "max_diff",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_b.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"], serde_json::json!(["max_diff"]));
}

#[test]
fn prior_flag_is_rejected_for_non_question_tasks() {
    let out = run(&[
        "eval",
        "--task",
        "copa",
        "--data",
        fixture("mini_copa.xml").to_str().unwrap(),
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--methods",
        "max_ratio",
        "--prior",
        "empty",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr_of(&out).contains("truthfulqa"));
}

#[test]
fn multi_prior_mode_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let priors_path = dir.path().join("priors.txt");
    std::fs::write(&priors_path, "?\nwhich city ?\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "eval",
        "--task",
        "truthfulqa",
        "--data",
        fixture("mini_truthfulqa.csv").to_str().unwrap(),
        "--backend",
        "ngram",
        "--corpus",
        fixture("corpus.txt").to_str().unwrap(),
        "--methods",
        "max_ratio",
        "--prior",
        &format!("multi:{}", priors_path.display()),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("report.json").exists());
}
