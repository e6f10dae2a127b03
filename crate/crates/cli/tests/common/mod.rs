#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_CONFIG: &str = "\
[model]
hidden = 16
layers = 2
word_embed = 12
image_embed = 12
desc_embed = 12
dropout = 0.2

[train]
lr = 0.005
batch_size = 10
";

pub fn vstory(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vstory"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its stdout.
pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vstory(dir, args);
    assert!(
        out.status.success(),
        "vstory {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a command that must fail and returns its stderr.
pub fn fails(dir: &Path, args: &[&str]) -> String {
    let out = vstory(dir, args);
    assert!(!out.status.success(), "vstory {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// preprocess → train → generate → evaluate on a synthetic corpus inside
/// `dir`, with relative paths only.
pub fn run_pipeline(dir: &Path, stories: usize, epochs: usize) {
    fs::write(dir.join("tiny.toml"), TINY_CONFIG).unwrap();
    let n = stories.to_string();
    let e = epochs.to_string();
    ok(dir, &["preprocess", "--synthetic", &n, "--feature-dim", "16", "--min-count", "1", "--seed", "3", "--out", "data"]);
    ok(dir, &["train", "--config", "tiny.toml", "--data", "data", "--epochs", &e, "--seed", "3", "--out", "run"]);
    ok(dir, &["generate", "--checkpoint", "run/best.ckpt", "--data", "data", "--out", "gen"]);
    ok(dir, &["evaluate", "--candidates", "gen/stories.jsonl", "--references", "data/val.refs.jsonl", "--out", "eval"]);
}

/// Every file under `root`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
