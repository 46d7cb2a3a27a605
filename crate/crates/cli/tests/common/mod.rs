// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn model_dir() -> PathBuf {
    fixtures().join("gpt2-tiny")
}

pub fn categories() -> PathBuf {
    fixtures().join("blimp-synth.categories.json")
}

/// Copies the first `n` lines of `src` to `dst`.
pub fn head_lines(src: &Path, dst: &Path, n: usize) {
    let lines: Vec<String> = BufReader::new(fs::File::open(src).unwrap())
        .lines()
        .take(n)
        .map(|l| l.unwrap())
        .collect();
    fs::write(dst, lines.join("\n") + "\n").unwrap();
}

/// A small benchmark directory with `n` pairs of each named phenomenon.
pub fn subset(dir: &Path, uids: &[&str], n: usize) -> PathBuf {
    let out = dir.join("bench");
    fs::create_dir_all(&out).unwrap();
    for uid in uids {
        let name = format!("{uid}.jsonl");
        head_lines(&fixtures().join("blimp-synth").join(&name), &out.join(&name), n);
    }
    out
}

pub fn synloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synloc"))
        .args(args)
        .env_remove("SYNLOC_CACHE_DIR")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

pub type Snapshot = Vec<(String, Vec<u8>)>;

/// All files under `dir` as (relative path, bytes), sorted.
pub fn snapshot(dir: &Path) -> Snapshot {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// CSV rows without the leading `#` comment lines.
pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
