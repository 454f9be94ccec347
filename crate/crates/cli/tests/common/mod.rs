#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const STAGES: [&str; 5] = ["extract", "assign", "rank", "suggest", "evaluate"];

pub fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/weather/pipeline.toml")
}

pub fn reviewlens(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reviewlens"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn reviewlens")
}

pub fn run_pipeline(config: &Path, out: &Path) {
    for stage in STAGES {
        let o = reviewlens(config, out, &[stage]);
        assert!(
            o.status.success(),
            "{stage} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data lines of a jsonl artifact, header skipped.
pub fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
