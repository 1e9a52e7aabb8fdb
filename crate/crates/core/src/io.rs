//! On-disk formats: dataset directories, binary matrices and checkpoints,
//! and the per-stage result files.
//!
//! Dataset directory layout:
//!
//! ```text
//! manifest.json        format tag, version, sizes, and one entry per mask
//! scene.json           Gaussians
//! cameras.json         cameras, indexed by view
//! masks/view_NNNN.json RLE masks of one view
//! features.bin         mask semantic features, rows in manifest order
//! oracle.json          optional ground truth for synthetic data
//! queries.json         optional query set
//! ```
//!
//! Binary files start with an 8-byte magic and a little-endian u32 format
//! version; all values are little-endian (matrices as f32).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Oracle};
use crate::decompose::{LevelDecomposition, ObjectCluster};
use crate::descriptors::{DescriptorSet, Extraction, Weighting};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mask::{BinaryMask, MaskObservation, RleMask};
use crate::query::{QueryResult, QuerySet};
use crate::scene::{Camera, Gaussian, GaussianScene};
use crate::synth::AspectModel;
use crate::train::LossRecord;

pub const FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT: &str = "viewagg-dataset";

const MATRIX_MAGIC: &[u8; 8] = b"VAGGMAT\0";
const CHECKPOINT_MAGIC: &[u8; 8] = b"VAGGCKP\0";
const LABELS_MAGIC: &[u8; 8] = b"VAGGLBL\0";

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::malformed(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::malformed(path, e))
}

/// Little-endian reader over a byte buffer with error context.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::malformed(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::malformed(self.path, "bad magic"));
        }
        let found = self.u32()?;
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                path: self.path.to_path_buf(),
                expected: FORMAT_VERSION,
                found,
            });
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::malformed(self.path, "size overflow"))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::malformed(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

fn push_header(out: &mut Vec<u8>, magic: &[u8; 8]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("size fits in u32").to_le_bytes());
}

fn push_matrix_body(out: &mut Vec<u8>, m: &Matrix) {
    push_u32(out, m.rows());
    push_u32(out, m.cols());
    for v in m.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn read_matrix_body(r: &mut Reader<'_>) -> Result<Matrix> {
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?;
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * m.as_slice().len());
    push_header(&mut out, MATRIX_MAGIC);
    push_matrix_body(&mut out, m);
    out
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut r = Reader::new(bytes, path);
    r.header(MATRIX_MAGIC)?;
    let m = read_matrix_body(&mut r)?;
    r.finish()?;
    Ok(m)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_bytes(path, &encode_matrix(m))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    decode_matrix(&read_bytes(path)?, path)
}

pub fn encode_labels(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * labels.len());
    push_header(&mut out, LABELS_MAGIC);
    push_u32(&mut out, labels.len());
    labels.iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
    out
}

pub fn decode_labels(bytes: &[u8], path: &Path) -> Result<Vec<u32>> {
    let mut r = Reader::new(bytes, path);
    r.header(LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    let labels = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
    r.finish()?;
    Ok(labels)
}

/// Trained affinity features of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub level: u32,
    /// Number of completed iterations.
    pub iteration: u32,
    pub features: Matrix,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_header(&mut out, CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.level.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        push_matrix_body(&mut out, &self.features);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.header(CHECKPOINT_MAGIC)?;
        let level = r.u32()?;
        let iteration = r.u32()?;
        let features = read_matrix_body(&mut r)?;
        r.finish()?;
        Ok(Self {
            level,
            iteration,
            features,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_bytes(path)?, path)
    }
}

pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("iteration,rebalanced,norm\n");
    for r in trace {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.rebalanced, r.norm));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GaussianRecord {
    position: [f64; 3],
    radius: f64,
    opacity: f64,
    color: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneFile {
    gaussians: Vec<GaussianRecord>,
}

impl SceneFile {
    fn from_scene(scene: &GaussianScene) -> Self {
        Self {
            gaussians: scene
                .gaussians
                .iter()
                .map(|g| GaussianRecord {
                    position: [g.position.x, g.position.y, g.position.z],
                    radius: g.radius,
                    opacity: g.opacity,
                    color: g.color,
                    gt_label: g.gt_label,
                })
                .collect(),
        }
    }

    fn into_scene(self) -> GaussianScene {
        GaussianScene::new(
            self.gaussians
                .into_iter()
                .map(|r| {
                    let mut g = Gaussian::new(r.position, r.radius, r.opacity);
                    g.color = r.color;
                    g.gt_label = r.gt_label;
                    g
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub id: u32,
    pub view: usize,
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub num_levels: usize,
    pub feature_dim: usize,
    pub views: usize,
    pub masks: Vec<MaskEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ViewMasks {
    view: usize,
    masks: Vec<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OracleFile {
    level_labels: Vec<Vec<u32>>,
    aspects: Vec<AspectModel>,
}

pub fn view_file(dir: &Path, view: usize) -> PathBuf {
    dir.join("masks").join(format!("view_{view:04}.json"))
}

/// Write a dataset directory; views without masks still get an empty file.
pub fn write_dataset(dir: &Path, ds: &Dataset, queries: Option<&QuerySet>) -> Result<()> {
    let mut masks: Vec<&MaskObservation> = ds.masks.iter().collect();
    masks.sort_by_key(|m| m.id);
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        num_levels: ds.num_levels,
        feature_dim: ds.feature_dim,
        views: ds.cameras.len(),
        masks: masks
            .iter()
            .map(|m| MaskEntry {
                id: m.id,
                view: m.view,
                level: m.level,
                source: m.source,
            })
            .collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("scene.json"), &SceneFile::from_scene(&ds.scene))?;
    write_json(&dir.join("cameras.json"), &ds.cameras)?;
    for v in 0..ds.cameras.len() {
        let file = ViewMasks {
            view: v,
            masks: masks
                .iter()
                .filter(|m| m.view == v)
                .map(|m| RleMask {
                    id: m.id,
                    counts: m.mask.to_rle(),
                })
                .collect(),
        };
        write_json(&view_file(dir, v), &file)?;
    }
    let rows: Vec<Vec<f64>> = masks.iter().map(|m| m.feature.clone()).collect();
    write_matrix(&dir.join("features.bin"), &Matrix::from_rows(&rows, ds.feature_dim))?;
    if let Some(o) = &ds.oracle {
        write_json(
            &dir.join("oracle.json"),
            &OracleFile {
                level_labels: o.level_labels.clone(),
                aspects: o.aspects.clone(),
            },
        )?;
    }
    if let Some(q) = queries {
        write_json(&dir.join("queries.json"), q)?;
    }
    Ok(())
}

/// Read and validate a dataset directory. With `expected_dim`, the feature
/// dimension must match it.
pub fn ingest_external(dir: &Path, expected_dim: Option<usize>) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::malformed(&manifest_path, format!("unknown format {:?}", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: manifest_path,
            expected: FORMAT_VERSION,
            found: manifest.version,
        });
    }
    if let Some(dim) = expected_dim {
        if dim != manifest.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: manifest.feature_dim,
                context: "dataset feature dimension vs config",
            });
        }
    }
    let scene = read_json::<SceneFile>(&dir.join("scene.json"))?.into_scene();
    let cameras: Vec<Camera> = read_json(&dir.join("cameras.json"))?;
    if cameras.len() != manifest.views {
        return Err(Error::DimensionMismatch {
            expected: manifest.views,
            actual: cameras.len(),
            context: "cameras vs manifest views",
        });
    }
    let features_path = dir.join("features.bin");
    let features = read_matrix(&features_path)?;
    if features.rows() != manifest.masks.len() {
        return Err(Error::DimensionMismatch {
            expected: manifest.masks.len(),
            actual: features.rows(),
            context: "feature rows vs manifest masks",
        });
    }
    if features.cols() != manifest.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: manifest.feature_dim,
            actual: features.cols(),
            context: "feature columns vs manifest dimension",
        });
    }
    // Load every referenced view file once.
    let mut rle: HashMap<u32, (usize, Vec<u32>)> = HashMap::new();
    let views: std::collections::BTreeSet<usize> = manifest.masks.iter().map(|m| m.view).collect();
    for &v in &views {
        if v >= cameras.len() {
            return Err(Error::InvalidInput(format!("manifest references missing view {v}")));
        }
        let path = view_file(dir, v);
        let file: ViewMasks = read_json(&path)?;
        if file.view != v {
            return Err(Error::malformed(&path, format!("declares view {}", file.view)));
        }
        for m in file.masks {
            rle.insert(m.id, (v, m.counts));
        }
    }
    let missing: Vec<u32> = manifest
        .masks
        .iter()
        .filter(|e| rle.get(&e.id).is_none_or(|(v, _)| *v != e.view))
        .map(|e| e.id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingMasks(missing));
    }
    let mut seen = std::collections::HashSet::new();
    let mut masks = Vec::with_capacity(manifest.masks.len());
    for (row, e) in manifest.masks.iter().enumerate() {
        if !seen.insert(e.id) {
            return Err(Error::malformed(&manifest_path, format!("duplicate mask id {}", e.id)));
        }
        let cam = &cameras[e.view];
        let counts = &rle[&e.id].1;
        let mask = BinaryMask::from_rle(cam.width, cam.height, counts)
            .map_err(|err| Error::malformed(view_file(dir, e.view), format!("mask {}: {err}", e.id)))?;
        masks.push(MaskObservation {
            id: e.id,
            view: e.view,
            level: e.level,
            mask,
            feature: features.row(row).to_vec(),
            source: e.source,
        });
    }
    let oracle_path = dir.join("oracle.json");
    let oracle = if oracle_path.exists() {
        let o: OracleFile = read_json(&oracle_path)?;
        Some(Oracle {
            level_labels: o.level_labels,
            aspects: o.aspects,
        })
    } else {
        log::info!("{}: no oracle sidecar; oracle checks disabled", dir.display());
        None
    };
    let ds = Dataset {
        scene,
        cameras,
        masks,
        num_levels: manifest.num_levels,
        feature_dim: manifest.feature_dim,
        oracle,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn read_queries(path: &Path, dim: usize) -> Result<QuerySet> {
    let q: QuerySet = read_json(path)?;
    q.validate(dim)?;
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFile {
    pub version: u32,
    pub level: usize,
    pub zero_norm: usize,
    pub clusters: Vec<ObjectCluster>,
}

pub fn decomposition_paths(dir: &Path, level: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("decomposition_level{level}.json")),
        dir.join(format!("assignment_level{level}.bin")),
    )
}

/// Clusters as JSON plus the per-Gaussian assignment as binary labels.
pub fn write_decomposition(dir: &Path, d: &LevelDecomposition) -> Result<()> {
    let (json, bin) = decomposition_paths(dir, d.level);
    write_json(
        &json,
        &DecompositionFile {
            version: FORMAT_VERSION,
            level: d.level,
            zero_norm: d.zero_norm,
            clusters: d.clusters.clone(),
        },
    )?;
    write_bytes(&bin, &encode_labels(&d.assignment))
}

fn check_version(path: &Path, found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: FORMAT_VERSION,
            found,
        });
    }
    Ok(())
}

pub fn read_decomposition(dir: &Path, level: usize) -> Result<LevelDecomposition> {
    let (json, bin) = decomposition_paths(dir, level);
    let f: DecompositionFile = read_json(&json)?;
    check_version(&json, f.version)?;
    let assignment = decode_labels(&read_bytes(&bin)?, &bin)?;
    Ok(LevelDecomposition {
        level: f.level,
        clusters: f.clusters,
        assignment,
        zero_norm: f.zero_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorFile {
    pub version: u32,
    pub level: usize,
    pub extraction: Extraction,
    pub weighting: Weighting,
    pub k_max: usize,
    pub sets: Vec<DescriptorSet>,
}

pub fn descriptor_path(dir: &Path, level: usize) -> PathBuf {
    dir.join(format!("descriptors_level{level}.json"))
}

pub fn read_descriptors(dir: &Path, level: usize) -> Result<DescriptorFile> {
    let path = descriptor_path(dir, level);
    let f: DescriptorFile = read_json(&path)?;
    check_version(&path, f.version)?;
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: u32,
    pub query: String,
    pub object_rel: Vec<Vec<Option<f64>>>,
    pub foreground: Vec<u32>,
}

/// File-name-safe form of a query name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() { "query".into() } else { s }
}

pub fn result_paths(dir: &Path, query: &str) -> (PathBuf, PathBuf) {
    let s = slug(query);
    (dir.join(format!("result_{s}.json")), dir.join(format!("result_{s}_relevance.bin")))
}

/// Result summary as JSON; per-level scores and the final relevance as a
/// `(levels + 1) x n` matrix.
pub fn write_result(dir: &Path, query: &str, r: &QueryResult) -> Result<()> {
    let (json, bin) = result_paths(dir, query);
    write_json(
        &json,
        &ResultFile {
            version: FORMAT_VERSION,
            query: query.to_string(),
            object_rel: r.object_rel.clone(),
            foreground: r.foreground.clone(),
        },
    )?;
    let mut rows = r.level_scores.clone();
    rows.push(r.relevance.clone());
    write_matrix(&bin, &Matrix::from_rows(&rows, r.relevance.len()))
}

pub fn read_result(dir: &Path, query: &str) -> Result<QueryResult> {
    let (json, bin) = result_paths(dir, query);
    let f: ResultFile = read_json(&json)?;
    check_version(&json, f.version)?;
    let m = read_matrix(&bin)?;
    if m.rows() == 0 {
        return Err(Error::malformed(&bin, "no relevance row"));
    }
    let mut rows = m.to_rows();
    let relevance = rows.pop().expect("non-empty");
    Ok(QueryResult {
        object_rel: f.object_rel,
        level_scores: rows,
        relevance,
        foreground: f.foreground,
    })
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Output file name to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn matrix_header_layout() {
        let m = Matrix::from_vec(1, 2, vec![1.0, -2.5]);
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[..8], b"VAGGMAT\0");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 4 + 8 + 8);
        assert_eq!(decode_matrix(&bytes, p()).unwrap(), m);
    }

    #[test]
    fn version_and_truncation_errors() {
        let mut bytes = encode_matrix(&Matrix::zeros(2, 2));
        assert!(matches!(decode_matrix(&bytes[..bytes.len() - 1], p()), Err(Error::Malformed { .. })));
        bytes[8] = 9;
        assert!(matches!(
            decode_matrix(&bytes, p()),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        let ck = Checkpoint { level: 0, iteration: 3, features: Matrix::zeros(1, 1) }.encode();
        assert!(matches!(decode_matrix(&ck, p()), Err(Error::Malformed { .. })));
    }

    #[test]
    fn checkpoint_and_labels_round_trip() {
        let ck = Checkpoint {
            level: 2,
            iteration: 300,
            features: Matrix::from_vec(2, 2, vec![0.5, 0.25, -1.0, 3.0]),
        };
        let bytes = ck.encode();
        assert_eq!(Checkpoint::decode(&bytes, p()).unwrap(), ck);
        let labels = vec![0, 7, 7, u32::MAX];
        assert_eq!(decode_labels(&encode_labels(&labels), p()).unwrap(), labels);
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("red toy/1"), "red_toy_1");
        assert_eq!(slug(""), "query");
    }
}
