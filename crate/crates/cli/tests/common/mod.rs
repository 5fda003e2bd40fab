#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

#[path = "../../../core/tests/support/mod.rs"]
pub mod support;

use agentrank_core::io::write_jsonl;

pub const BIN: &str = env!("CARGO_BIN_EXE_agentrank");

/// Writes the gap fixture and a ranker-mode config into `dir`.
pub fn write_workspace(dir: &Path, extra_config: &str) {
    let fx = support::gap_fixture();
    write_jsonl(fs::File::create(dir.join("corpus.jsonl")).unwrap(), &fx.corpus).unwrap();
    write_jsonl(fs::File::create(dir.join("questions.jsonl")).unwrap(), &fx.questions).unwrap();
    let main = serde_json::to_string(&[support::SEARCH_TURN, support::REFINE_TURN, support::ANSWER_TURN]).unwrap();
    fs::write(dir.join("main_script.json"), main).unwrap();
    let ranker = support::identity_ranker(5).turns;
    let config = format!(
        r#"corpus = "corpus.jsonl"
questions = "questions.jsonl"
seed = 17
{extra_config}

[main_policy]
kind = "scripted"
script = "main_script.json"

[ranker_policy]
kind = "scripted"
turns = {}
"#,
        serde_json::to_string(&ranker).unwrap()
    );
    fs::write(dir.join("run.toml"), config).unwrap();
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(["--config", "run.toml"]).args(args).output().unwrap()
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "agentrank {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// rollout -> reward -> group -> export inside `dir`.
pub fn pipeline(dir: &Path) {
    run_ok(dir, &["rollout", "--out", "traj.jsonl"]);
    run_ok(dir, &["reward", "--input", "traj.jsonl", "--out", "rewarded.jsonl"]);
    run_ok(dir, &["group", "--input", "rewarded.jsonl", "--out", "groups.jsonl"]);
    run_ok(dir, &["export", "--trajectories", "rewarded.jsonl", "--groups", "groups.jsonl", "--out", "batch.jsonl"]);
}
