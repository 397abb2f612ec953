//! Helpers for driving the `geoloc` binary from integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub fn geoloc<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geoloc"));
    // overrides from the caller's shell would leak into every run
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("GEOLOC_")) {
        cmd.env_remove(k);
    }
    cmd.args(args).output().expect("spawn geoloc")
}

/// Runs `geoloc` and panics with its stderr unless it exits 0.
pub fn geoloc_ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = geoloc(args);
    assert!(
        out.status.success(),
        "geoloc failed ({:?}): {}",
        out.status.code(),
        stderr(&out)
    );
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn key_values(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn recall_at_1(path: &Path) -> f64 {
    key_values(path)["recall@1"].parse().unwrap()
}

/// Per-epoch values of one metrics.csv column.
pub fn metric_column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

pub fn files_under(root: &Path) -> Vec<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// Writes a toy dataset with `classes` classes under `root`.
pub fn gen_toy(root: &Path, classes: usize, views: usize, size: usize) {
    let (c, v, s) = (classes.to_string(), views.to_string(), size.to_string());
    geoloc_ok([
        "gen-toy",
        "--out",
        root.to_str().unwrap(),
        "--classes",
        &c,
        "--drone-views",
        &v,
        "--query-views",
        &v,
        "--size",
        &s,
    ]);
}
