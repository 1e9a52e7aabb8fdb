//! Every on-disk artifact reads back and rewrites to identical bytes, and
//! dataset ingest rejects inconsistent directories.

mod common;

use std::path::Path;

use viewagg::config::PipelineConfig;
use viewagg::error::Error;
use viewagg::io::{
    self, descriptor_path, ingest_external, read_decomposition, read_descriptors, read_result, view_file,
    write_dataset, write_decomposition, write_json, write_matrix, write_result, Checkpoint,
};
use viewagg::synth::{generate_dataset, SynthConfig};

fn staged_run(dir: &Path) {
    for args in &common::PIPELINE[..5] {
        let out = common::viewagg(dir, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn same_bytes(a: &Path, b: &Path) {
    assert!(std::fs::read(a).unwrap() == std::fs::read(b).unwrap(), "{} vs {}", a.display(), b.display());
}

#[test]
fn artifacts_rewrite_identically() {
    let tmp = tempfile::tempdir().unwrap();
    staged_run(tmp.path());
    let run = tmp.path().join("run");
    let copy = tmp.path().join("copy");

    let ds = ingest_external(&run.join("dataset"), Some(32)).unwrap();
    let queries = io::read_queries(&run.join("dataset/queries.json"), 32).unwrap();
    write_dataset(&copy.join("dataset"), &ds, Some(&queries)).unwrap();
    let (a, b) = (common::tree(&run.join("dataset")), common::tree(&copy.join("dataset")));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    let differing: Vec<_> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    assert!(differing.is_empty(), "{differing:?}");

    let ckpt = Checkpoint::read(&run.join("checkpoints/level0.ckpt")).unwrap();
    ckpt.write(&copy.join("level0.ckpt")).unwrap();
    same_bytes(&run.join("checkpoints/level0.ckpt"), &copy.join("level0.ckpt"));

    let outputs = run.join("outputs");
    let d = read_decomposition(&outputs, 0).unwrap();
    write_decomposition(&copy, &d).unwrap();
    let (json, bin) = io::decomposition_paths(&outputs, 0);
    let (json2, bin2) = io::decomposition_paths(&copy, 0);
    same_bytes(&json, &json2);
    same_bytes(&bin, &bin2);

    let desc = read_descriptors(&outputs, 0).unwrap();
    write_json(&descriptor_path(&copy, 0), &desc).unwrap();
    same_bytes(&descriptor_path(&outputs, 0), &descriptor_path(&copy, 0));

    for q in &queries.queries {
        let r = read_result(&outputs, &q.name).unwrap();
        write_result(&copy, &q.name, &r).unwrap();
        let (a, b) = io::result_paths(&outputs, &q.name);
        let (a2, b2) = io::result_paths(&copy, &q.name);
        same_bytes(&a, &a2);
        same_bytes(&b, &b2);
    }
}

#[test]
fn printed_config_reloads_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = common::viewagg(tmp.path(), &["--print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = PipelineConfig::from_toml(&text, Path::new("printed.toml")).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
    assert_eq!(cfg.to_toml(), text);
}

fn exported(cfg: &SynthConfig) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, _) = generate_dataset(cfg).unwrap();
    write_dataset(tmp.path(), &ds, None).unwrap();
    tmp
}

#[test]
fn missing_mask_is_reported_by_id() {
    let tmp = exported(&SynthConfig::default());
    let path = view_file(tmp.path(), 1);
    let mut view: serde_json::Value = io::read_json(&path).unwrap();
    let masks = view["masks"].as_array_mut().unwrap();
    let dropped = masks.remove(0)["id"].as_u64().unwrap() as u32;
    write_json(&path, &view).unwrap();
    match ingest_external(tmp.path(), None) {
        Err(Error::MissingMasks(ids)) => assert_eq!(ids, vec![dropped]),
        other => panic!("expected missing masks, got {other:?}"),
    }
}

#[test]
fn feature_row_count_must_match_manifest() {
    let tmp = exported(&SynthConfig::default());
    let path = tmp.path().join("features.bin");
    let m = io::read_matrix(&path).unwrap();
    let rows = m.to_rows();
    write_matrix(&path, &viewagg::linalg::Matrix::from_rows(&rows[1..], m.cols())).unwrap();
    assert!(matches!(
        ingest_external(tmp.path(), None),
        Err(Error::DimensionMismatch { context: "feature rows vs manifest masks", .. })
    ));
}

#[test]
fn wide_features_follow_the_configured_dimension() {
    let cfg = SynthConfig {
        feature_dim: 512,
        views: 4,
        ..SynthConfig::default()
    };
    let tmp = exported(&cfg);
    let ds = ingest_external(tmp.path(), Some(512)).unwrap();
    assert_eq!(ds.feature_dim, 512);
    assert!(ds.masks.iter().all(|m| m.feature.len() == 512));
    assert!(matches!(
        ingest_external(tmp.path(), Some(32)),
        Err(Error::DimensionMismatch { expected: 32, actual: 512, .. })
    ));
}

#[test]
fn newer_manifest_version_is_refused() {
    let tmp = exported(&SynthConfig::default());
    let path = tmp.path().join("manifest.json");
    let mut m: serde_json::Value = io::read_json(&path).unwrap();
    m["version"] = serde_json::json!(io::FORMAT_VERSION + 1);
    write_json(&path, &m).unwrap();
    assert!(matches!(ingest_external(tmp.path(), None), Err(Error::VersionMismatch { .. })));
}
