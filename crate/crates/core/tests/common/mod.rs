//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde::Deserialize;

#[derive(Deserialize)]
pub struct HdbscanCase {
    pub seed: i64,
    pub min_cluster_size: usize,
    pub epsilon: f64,
    pub allow_single_cluster: bool,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<i32>,
}

#[derive(Deserialize)]
pub struct ScoreCase {
    pub a: Vec<i64>,
    pub b: Vec<i64>,
    pub value: f64,
}

#[derive(Deserialize)]
pub struct SilhouetteCase {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub value: f64,
}

#[derive(Deserialize)]
pub struct Reference {
    pub hdbscan: Vec<HdbscanCase>,
    pub ari: Vec<ScoreCase>,
    pub silhouette: Vec<SilhouetteCase>,
}

pub fn reference() -> Reference {
    let raw = include_str!("../fixtures/sklearn_reference.json");
    serde_json::from_str(raw).expect("fixture parses")
}

/// Fraction of the reference's non-noise points whose label matches under
/// a greedy one-to-one relabeling by co-occurrence.
pub fn agreement(ours: &[i32], theirs: &[i32]) -> f64 {
    let mut counts: HashMap<(i32, i32), usize> = HashMap::new();
    let total = theirs.iter().filter(|&&b| b >= 0).count();
    if total == 0 {
        return if ours.iter().all(|&a| a < 0) { 1.0 } else { 0.0 };
    }
    for (&a, &b) in ours.iter().zip(theirs) {
        if b < 0 {
            continue;
        }
        *counts.entry((a, b)).or_default() += 1;
    }
    let mut pairs: Vec<((i32, i32), usize)> = counts.into_iter().collect();
    pairs.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let mut used_a = HashSet::new();
    let mut used_b = HashSet::new();
    let mut matched = 0;
    for ((a, b), c) in pairs {
        if a < 0 || used_a.contains(&a) || used_b.contains(&b) {
            continue;
        }
        used_a.insert(a);
        used_b.insert(b);
        matched += c;
    }
    matched as f64 / total as f64
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_viewagg"))
}

/// Run the binary from `dir` with the given arguments.
pub fn viewagg(dir: &Path, args: &[&str]) -> Output {
    viewagg_env(dir, args, &[])
}

pub fn viewagg_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.current_dir(dir).args(args).env_remove("VIEWAGG_EMBED_URL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

/// The stage sequence of a full single-threaded run.
pub const PIPELINE: &[&[&str]] = &[
    &["--threads", "1", "synth", "--objects", "3", "--views", "10", "--seed", "4"],
    &["--threads", "1", "train"],
    &["--threads", "1", "decompose"],
    &["--threads", "1", "describe"],
    &["--threads", "1", "query"],
    &["--threads", "1", "analyze", "--svg"],
    &["--threads", "1", "eval"],
    &["--threads", "1", "ablate"],
];

/// Run every pipeline stage in `dir`; the first failing stage is reported.
pub fn run_pipeline(dir: &Path) -> Result<(), String> {
    for args in PIPELINE {
        let out = viewagg(dir, args);
        if !out.status.success() {
            return Err(format!(
                "{:?} exited {:?}: {}",
                args,
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

/// Relative path to content for every file below `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("below root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
