use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn dorag(data: &Path, transcript: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dorag"))
        .current_dir(fixtures())
        .arg("--data-dir")
        .arg(data)
        .args(["--config", "dorag.toml", "--transcript"])
        .arg(transcript)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = fixtures().join("transcript.json");

    let empty = dorag(dir.path(), &transcript, &["query", "What is GSTART_TIMEOUT?"]);
    assert_eq!(empty.status.code(), Some(5));
    assert_eq!(stdout(&empty).trim(), "I do not know.");

    assert_eq!(dorag(dir.path(), &transcript, &["query", "   "]).status.code(), Some(2));
    assert_eq!(dorag(dir.path(), &transcript, &["--alpha", "3", "query", "x"]).status.code(), Some(2));
    assert_eq!(dorag(dir.path(), &transcript, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(dorag(dir.path(), &transcript, &["ingest", "docs/missing.md"]).status.code(), Some(3));
    assert_eq!(dorag(dir.path(), &transcript, &["eval", "no-such.jsonl"]).status.code(), Some(3));

    // A strict transcript with no entries fails every extraction call.
    let silent = dir.path().join("silent.json");
    std::fs::write(&silent, r#"{"strict": true, "entries": []}"#).unwrap();
    assert_eq!(dorag(dir.path(), &silent, &["ingest", "docs/startup.md"]).status.code(), Some(0));
    let build = dorag(dir.path(), &silent, &["build-kg"]);
    assert_eq!(build.status.code(), Some(4), "{}", String::from_utf8_lossy(&build.stderr));
}

#[test]
fn text_output_lists_citations_and_session() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = fixtures().join("transcript.json");
    assert!(dorag(dir.path(), &transcript, &["ingest", "docs"]).status.success());
    let again = dorag(dir.path(), &transcript, &["ingest", "docs/startup.md"]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("already ingested"));
    assert!(dorag(dir.path(), &transcript, &["build-kg"]).status.success());

    let out = dorag(dir.path(), &transcript, &["query", "What is the default value of GSTART_TIMEOUT?"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("Citations:") && text.contains("p. 12"), "{text}");
    let session = text.lines().last().unwrap().split_whitespace().nth(1).unwrap().to_string();
    assert!(session.starts_with("s-"));

    let follow = dorag(dir.path(), &transcript, &["query", "How do I change GSTART_TIMEOUT?", "--session", &session]);
    assert!(follow.status.success());
    assert!(stdout(&follow).contains(&format!("session {session}")));

    let abstain = dorag(dir.path(), &transcript, &["query", "Who won the 1998 football World Cup?"]);
    assert_eq!(abstain.status.code(), Some(0));
    assert!(stdout(&abstain).starts_with("I do not know.\n"));
    assert!(!stdout(&abstain).contains("Citations:"));

    let graph = dir.path().join("graph-out.jsonl");
    let export = dorag(dir.path(), &transcript, &["export-graph", graph.to_str().unwrap()]);
    assert!(export.status.success());
    assert!(std::fs::read_to_string(&graph).unwrap().lines().count() > 10);
}
