use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use promptloop_core::gateway::{BackendDescriptor, Gateway};
use promptloop_core::scoring::{corpus_score, load_corpus};
use promptloop_core::EmbeddingCache;

const CORPUS: &str = "{\"text\": \"Diagnosen: Pneumonie rechts basal.\"}\n\
{\"text\": \"Therapie und Verlauf: rasche Besserung unter Antibiose.\"}\n";

fn promptloop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptloop"))
        .current_dir(dir)
        .env_remove("PROMPTLOOP_BASE_URL")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Mock config with scripted prompting and summarizer roles.
fn workspace(engine: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.jsonl"), CORPUS).unwrap();
    let config = format!(
        "corpus_path = \"corpus.jsonl\"\noutput_dir = \"out\"\nlog_level = \"warn\"\n\n\
         [backend]\nkind = \"mock\"\n\n\
         [backend.scripts]\n\
         prompting = [\"Nenne die Diagnosen. Beschreibe den Verlauf.\", \"Beginne mit Diagnosen. Nenne die Therapie.\", \
         \"Gliedere den Brief. Nenne Befunde.\", \"Schreibe sachlich. Nenne Diagnosen.\", \"Sei knapp.\"]\n\
         summarizer = [\"Mehr Diagnosen.\", \"Mehr Therapie.\", \"Mehr Verlauf.\", \"Knapper.\"]\n\n\
         [engine]\n{engine}\n"
    );
    fs::write(dir.path().join("config.toml"), config).unwrap();
    dir
}

const SMALL: &str =
    "samples_per_round = 2\nbest_capacity = 2\nworst_capacity = 2\nmax_rounds = 4\n\
mutation_trigger = { after_rounds = 3 }\nmutation_budget = 2";

#[test]
fn demo_prints_a_rising_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = promptloop(dir.path(), &["demo"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let scores: Vec<f64> = text
        .lines()
        .skip_while(|l| !l.starts_with("Round"))
        .skip(1)
        .map_while(|l| l.split_whitespace().nth(1)?.parse().ok())
        .collect();
    assert!(scores.len() >= 3, "{text}");
    assert!(scores.windows(2).all(|w| w[1] > w[0]), "{scores:?}");
}

#[test]
fn demo_log_reports_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = promptloop(dir.path(), &["demo", "--output-dir", "d"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["events.jsonl", "report.md", "report.json", "corpus.jsonl"] {
        assert!(dir.path().join("d").join(f).is_file(), "{f} missing");
    }
    let out = promptloop(
        dir.path(),
        &["report", "d/events.jsonl", "--format", "json"],
    );
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["finished"], true);
    assert_eq!(report["rounds"].as_array().unwrap().len(), 4);

    let md = promptloop(dir.path(), &["report", "d/events.jsonl"]);
    assert!(stdout(&md).starts_with("# Optimization run"));
    // A second demo into the same directory would clobber the log.
    assert_eq!(
        promptloop(dir.path(), &["demo", "--output-dir", "d"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn optimize_writes_log_and_reports() {
    let dir = workspace(SMALL);
    let out = promptloop(
        dir.path(),
        &[
            "optimize",
            "-c",
            "config.toml",
            "--prompt",
            "Schreibe einen Arztbrief",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("Best prompt"));
    assert!(text.contains("Score: "));
    for f in ["events.jsonl", "report.md", "report.json"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f} missing");
    }
    // The output directory now holds a log; a fresh run must not overwrite it.
    let again = promptloop(
        dir.path(),
        &["optimize", "-c", "config.toml", "--prompt", "x"],
    );
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn prompt_file_is_read() {
    let dir = workspace(SMALL);
    fs::write(dir.path().join("task.txt"), "Schreibe einen Arztbrief\n").unwrap();
    let out = promptloop(
        dir.path(),
        &["optimize", "-c", "config.toml", "--prompt-file", "task.txt"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("out/events.jsonl")).unwrap();
    assert!(log.contains("\"task_prompt\":\"Schreibe einen Arztbrief\""));
}

#[test]
fn conflicting_or_missing_prompt_is_a_usage_error() {
    let dir = workspace(SMALL);
    let both = promptloop(
        dir.path(),
        &[
            "optimize",
            "-c",
            "config.toml",
            "--prompt",
            "a",
            "--prompt-file",
            "b",
        ],
    );
    assert_eq!(both.status.code(), Some(2));
    let none = promptloop(dir.path(), &["optimize", "-c", "config.toml"]);
    assert_eq!(none.status.code(), Some(2));
    let empty = promptloop(
        dir.path(),
        &["optimize", "-c", "config.toml", "--prompt", "  "],
    );
    assert_eq!(empty.status.code(), Some(2));
    assert!(!dir.path().join("out/events.jsonl").exists());
}

#[test]
fn resume_completes_an_interrupted_run() {
    let dir = workspace(SMALL);
    let args = [
        "optimize",
        "-c",
        "config.toml",
        "--prompt",
        "Schreibe einen Arztbrief",
    ];
    assert!(promptloop(dir.path(), &args).status.success());
    let log_path = dir.path().join("out/events.jsonl");
    let full = fs::read_to_string(&log_path).unwrap();

    // Keep the manifest, RunStarted, the initial prompt and round 1.
    let lines: Vec<&str> = full.lines().collect();
    let end = lines
        .iter()
        .position(|l| l.contains("\"kind\":\"ArchivesUpdated\""))
        .unwrap();
    fs::write(&log_path, lines[..=end + 1].join("\n") + "\n").unwrap();

    let out = promptloop(
        dir.path(),
        &[
            "optimize",
            "-c",
            "config.toml",
            "--resume",
            "out/events.jsonl",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&log_path).unwrap(), full);

    let other = promptloop(
        dir.path(),
        &[
            "optimize",
            "-c",
            "config.toml",
            "--resume",
            "out/events.jsonl",
            "--prompt",
            "anders",
        ],
    );
    assert_eq!(other.status.code(), Some(2));
}

#[test]
fn resume_with_changed_config_names_the_mismatch() {
    let dir = workspace(SMALL);
    let args = [
        "optimize",
        "-c",
        "config.toml",
        "--prompt",
        "Schreibe einen Arztbrief",
    ];
    assert!(promptloop(dir.path(), &args).status.success());
    let config = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    fs::write(
        dir.path().join("config.toml"),
        config.replace("max_rounds = 4", "max_rounds = 5"),
    )
    .unwrap();
    let out = promptloop(
        dir.path(),
        &[
            "optimize",
            "-c",
            "config.toml",
            "--resume",
            "out/events.jsonl",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("config digest mismatch"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn unreachable_backend_exits_3_without_a_log() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.jsonl"), CORPUS).unwrap();
    // Bind and drop a listener to get a port nobody serves.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let config = format!(
        "corpus_path = \"corpus.jsonl\"\noutput_dir = \"out\"\n[backend]\nkind = \"http\"\n\
         base_url = \"http://127.0.0.1:{port}\"\nmax_retries = 0\ntimeout_secs = 2\n"
    );
    fs::write(dir.path().join("config.toml"), config).unwrap();
    let out = promptloop(
        dir.path(),
        &["optimize", "-c", "config.toml", "--prompt", "t"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(!dir.path().join("out/events.jsonl").exists());
}

/// Ollama-compatible server that answers `chat_budget` chat calls, then
/// fails every further one with HTTP 500.
fn flaky_server(chat_budget: usize) -> u16 {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    thread::spawn(move || {
        let mut chats = 0;
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            let mut length = 0;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = header.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let (status, reply) = if request_line.contains("/api/tags") {
                ("200 OK", r#"{"models":[{"name":"llama3.1"}]}"#.to_string())
            } else if request_line.contains("/api/embed") {
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let vectors: Vec<Vec<f64>> = req["input"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|t| {
                        let n = t.as_str().unwrap().len() as f64;
                        vec![1.0, n % 7.0 + 1.0, 2.0]
                    })
                    .collect();
                (
                    "200 OK",
                    serde_json::json!({ "embeddings": vectors }).to_string(),
                )
            } else {
                chats += 1;
                if chats <= chat_budget {
                    let content = format!("Antwort {chats}. Weiter so.");
                    ("200 OK", serde_json::json!({ "message": { "role": "assistant", "content": content } }).to_string())
                } else {
                    ("500 Internal Server Error", "{}".to_string())
                }
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    port
}

#[test]
fn mid_run_backend_failure_exits_4_and_keeps_the_log() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.jsonl"), CORPUS).unwrap();
    // Initial plan plus one full round of 2 samples: 1 + 2 + 2 + 1 + 1 chats.
    let port = flaky_server(7 + 2);
    let config = format!(
        "corpus_path = \"corpus.jsonl\"\noutput_dir = \"out\"\nlog_level = \"error\"\n[backend]\nkind = \"http\"\n\
         base_url = \"http://127.0.0.1:{port}\"\nmax_retries = 0\nretry_backoff_ms = 0\n\
         [engine]\nsamples_per_round = 2\nmax_rounds = 5\n"
    );
    fs::write(dir.path().join("config.toml"), config).unwrap();
    let out = promptloop(
        dir.path(),
        &["optimize", "-c", "config.toml", "--prompt", "t"],
    );
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("out/events.jsonl")).unwrap();
    assert!(log
        .lines()
        .last()
        .unwrap()
        .contains("\"kind\":\"BackendFailure\""));
    assert!(log.contains("\"kind\":\"ArchivesUpdated\""));
}

#[test]
fn score_prints_the_library_value() {
    let dir = workspace(SMALL);
    let doc = "Diagnosen: Pneumonie rechts basal.";
    fs::write(
        dir.path().join("one.jsonl"),
        format!("{{\"text\": \"{doc}\"}}\n"),
    )
    .unwrap();
    let out = promptloop(
        dir.path(),
        &[
            "score",
            "-c",
            "config.toml",
            "--text",
            doc,
            "--corpus",
            "one.jsonl",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "1.0");

    let text = "Therapie mit Antibiose.";
    let out = promptloop(dir.path(), &["score", "-c", "config.toml", "--text", text]);
    let printed: f64 = stdout(&out).trim().parse().unwrap();
    let gateway = Gateway::from_descriptor(&BackendDescriptor::mock()).unwrap();
    let cache = EmbeddingCache::new();
    let corpus = load_corpus(&dir.path().join("corpus.jsonl"), None, &gateway, &cache).unwrap();
    let expected = corpus_score(text, &corpus, &cache, &gateway)
        .unwrap()
        .value();
    assert_eq!(printed, expected);

    let empty = promptloop(dir.path(), &["score", "-c", "config.toml", "--text", ""]);
    assert_eq!(empty.status.code(), Some(2));
    assert!(stderr(&empty).contains("degenerate"));
}

#[test]
fn validate_config_prints_defaults_or_names_the_field() {
    let dir = workspace("");
    let out = promptloop(dir.path(), &["validate-config", "-c", "config.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains(
        "[engine.role_params.summarizer]\ntemperature = 0.2\ntop_k = 5\ntop_p = 0.5\nseed = 42"
    ));
    assert!(!text.contains("base_url"));

    fs::write(dir.path().join("bad.toml"), "[backend]\nkind = \"mock\"\n").unwrap();
    let out = promptloop(dir.path(), &["validate-config", "-c", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("corpus_path"));

    fs::write(dir.path().join("typo.toml"), "corpus_path = \"corpus.jsonl\"\n[backend]\nkind = \"mock\"\n[engine]\nsample_per_round = 3\n").unwrap();
    let out = promptloop(dir.path(), &["validate-config", "-c", "typo.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sample_per_round"));
}

#[test]
fn base_url_override_never_reaches_a_mock() {
    let dir = workspace(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_promptloop"))
        .current_dir(dir.path())
        .env("PROMPTLOOP_BASE_URL", "http://127.0.0.1:9")
        .args(["validate-config", "-c", "config.toml"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("kind = \"mock\""));
    assert!(!stdout(&out).contains("127.0.0.1"));
}
