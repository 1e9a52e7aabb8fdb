//! Synthetic scenes with planted ground truth: shell-shaped objects, a ring
//! of cameras, label-rendered masks and view-dependent mask semantics.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Oracle};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, quantize_f32};
use crate::mask::{BinaryMask, MaskObservation};
use crate::query::{Query, QuerySet};
use crate::rng::{rng_for, tags};
use crate::scene::{project, Camera, Gaussian, GaussianScene};

/// Minimum mask area in pixels; smaller masks are dropped.
pub const MIN_MASK_AREA: usize = 16;
const NARROW_CONE: f64 = 0.05;

/// One view-dependent appearance of an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aspect {
    /// Unit semantic vector.
    pub vector: Vec<f64>,
    /// Unit view direction at the center of the visibility cone.
    pub cone_center: [f64; 3],
    /// Half-angle of the cone in radians, in (0, pi].
    pub cone_half_angle: f64,
    /// Narrow aspects borrowed from another object's semantics.
    #[serde(default)]
    pub confusable: bool,
}

/// Per-unit aspects plus the isotropic feature noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectModel {
    pub units: Vec<Vec<Aspect>>,
    pub sigma: f64,
}

impl AspectModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::InvalidInput("aspect noise must be >= 0".into()));
        }
        for (u, aspects) in self.units.iter().enumerate() {
            for a in aspects {
                let n = dot(&a.vector, &a.vector).sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidInput(format!("unit {u}: aspect not unit norm")));
                }
                if !(a.cone_half_angle > 0.0 && a.cone_half_angle <= PI) {
                    return Err(Error::InvalidInput(format!("unit {u}: cone width out of range")));
                }
            }
        }
        Ok(())
    }

    /// Aspect seen along `view_dir` (unit): among cones containing the
    /// direction the nearest center wins; if none contain it, the nearest
    /// center overall.
    pub fn choose(&self, unit: usize, view_dir: &Vector3<f64>) -> Result<&Aspect> {
        let aspects = self
            .units
            .get(unit)
            .filter(|a| !a.is_empty())
            .ok_or(Error::NoAspects(unit))?;
        let angle = |a: &Aspect| {
            let c = Vector3::from(a.cone_center);
            view_dir.dot(&c).clamp(-1.0, 1.0).acos()
        };
        let mut inside: Option<(&Aspect, f64)> = None;
        let mut nearest: Option<(&Aspect, f64)> = None;
        for a in aspects {
            let d = angle(a);
            if nearest.is_none_or(|(_, bd)| d < bd) {
                nearest = Some((a, d));
            }
            if d <= a.cone_half_angle && inside.is_none_or(|(_, bd)| d < bd) {
                inside = Some((a, d));
            }
        }
        let chosen = inside.or(nearest).map(|(a, _)| a);
        chosen.ok_or(Error::NoAspects(unit))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticsKind {
    /// One aspect per unit visible from everywhere.
    SingleAspect,
    /// Two aspects per unit on opposite view hemispheres.
    TwoAspect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub objects: usize,
    pub gaussians_per_object: usize,
    pub views: usize,
    pub levels: usize,
    pub feature_dim: usize,
    pub image_size: usize,
    pub focal: f64,
    pub camera_distance: f64,
    pub semantics: SemanticsKind,
    pub sigma: f64,
    /// Range of the cosine between a unit's two aspects, drawn uniformly
    /// per unit; `[0, 0]` gives orthogonal aspects.
    pub aspect_cosine: [f64; 2],
    /// Probability that an object gets a narrow aspect copied from another
    /// object's semantics.
    pub confusable_rate: f64,
    pub random_distractors: usize,
    pub canonical_count: usize,
    pub min_mask_area: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: 3,
            gaussians_per_object: 50,
            views: 12,
            levels: 1,
            feature_dim: 32,
            image_size: 80,
            focal: 80.0,
            camera_distance: 5.0,
            semantics: SemanticsKind::SingleAspect,
            sigma: 0.0,
            aspect_cosine: [0.0, 0.0],
            confusable_rate: 0.0,
            random_distractors: 2,
            canonical_count: 4,
            min_mask_area: MIN_MASK_AREA,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The multi-aspect benchmark: two view-dependent aspects per object with
    /// cosines drawn from [0, 0.8], feature noise 0.05, and one confusable
    /// view per object.
    pub fn multi_aspect_benchmark(seed: u64) -> Self {
        Self {
            objects: 3 + (seed % 4) as usize,
            views: 16,
            semantics: SemanticsKind::TwoAspect,
            sigma: 0.05,
            aspect_cosine: [0.0, 0.8],
            confusable_rate: 1.0,
            seed,
            ..Self::default()
        }
    }
}

const OBJECT_RADIUS: f64 = 0.35;
const GAUSSIAN_RADIUS: f64 = 0.11;
const GAUSSIAN_OPACITY: f64 = 0.9;
const MIN_SEPARATION: f64 = 1.05;
const EXTENT: [f64; 3] = [1.5, 0.7, 1.5];

/// Spatially separated spherical shells of Gaussians, labeled by object.
pub fn generate_scene(n_objects: usize, gaussians_per_object: usize, seed: u64) -> GaussianScene {
    let mut rng = rng_for(seed, tags::SCENE, 0);
    let mut centers: Vec<Vector3<f64>> = Vec::with_capacity(n_objects);
    let mut spread = 1.0;
    while centers.len() < n_objects {
        let mut placed = false;
        for _ in 0..2000 {
            let c = Vector3::new(
                rng.random_range(-EXTENT[0]..=EXTENT[0]) * spread,
                rng.random_range(-EXTENT[1]..=EXTENT[1]) * spread,
                rng.random_range(-EXTENT[2]..=EXTENT[2]) * spread,
            );
            if centers.iter().all(|o| (o - c).norm() >= MIN_SEPARATION) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            spread *= 1.1;
        }
    }
    let mut gaussians = Vec::with_capacity(n_objects * gaussians_per_object);
    for (label, center) in centers.iter().enumerate() {
        let axis = Unit::new_normalize(random_unit3(&mut rng));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..2.0 * PI));
        let color = [rng.random(), rng.random(), rng.random()];
        for k in 0..gaussians_per_object {
            let dir = rot * fibonacci_point(k, gaussians_per_object);
            let jitter = 1.0 + rng.random_range(-0.05..0.05);
            let pos = center + dir * OBJECT_RADIUS * jitter;
            gaussians.push(Gaussian {
                position: pos.map(|v| v as f32 as f64),
                radius: GAUSSIAN_RADIUS,
                opacity: GAUSSIAN_OPACITY as f32 as f64,
                color,
                gt_label: Some(label as u32),
            });
        }
    }
    for g in &mut gaussians {
        g.radius = g.radius as f32 as f64;
        for c in &mut g.color {
            *c = *c as f32 as f64;
        }
    }
    GaussianScene::new(gaussians)
}

fn fibonacci_point(k: usize, n: usize) -> Vector3<f64> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let y = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
    let r = (1.0 - y * y).max(0.0).sqrt();
    let phi = golden * k as f64;
    Vector3::new(r * phi.cos(), y, r * phi.sin())
}

fn random_unit3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if v.norm() > 1e-9 {
            return v.normalize();
        }
    }
}

/// Cameras on a Fibonacci sphere around the origin, all looking at it.
pub fn generate_cameras(n_views: usize, distance: f64, focal: f64, size: usize) -> Vec<Camera> {
    (0..n_views)
        .map(|i| {
            let eye = fibonacci_point(i, n_views) * distance;
            Camera::look_at([eye.x, eye.y, eye.z], [0.0; 3], [0.0, 1.0, 0.0], focal, size, size)
        })
        .collect()
}

/// Per-level unit labels by recursive plane splits of each object; level
/// `levels - 1` is the whole object.
pub fn hierarchical_labels(scene: &GaussianScene, levels: usize, seed: u64) -> Vec<Vec<u32>> {
    let whole: Vec<u32> = scene.gaussians.iter().map(|g| g.gt_label.unwrap_or(0)).collect();
    let mut out = vec![whole];
    let mut rng = rng_for(seed, tags::SPLIT, 0);
    for _ in 1..levels.clamp(1, 3) {
        let prev = out.last().unwrap().clone();
        let n_units = prev.iter().max().map_or(0, |m| *m as usize + 1);
        let mut next = vec![0u32; prev.len()];
        for unit in 0..n_units {
            let members: Vec<usize> = (0..prev.len()).filter(|&i| prev[i] as usize == unit).collect();
            let centroid = members
                .iter()
                .fold(Vector3::zeros(), |acc, &i| acc + scene.gaussians[i].position)
                / members.len().max(1) as f64;
            let normal = random_unit3(&mut rng);
            for &i in &members {
                let side = (scene.gaussians[i].position - centroid).dot(&normal) >= 0.0;
                next[i] = 2 * unit as u32 + u32::from(side);
            }
        }
        out.push(next);
    }
    out.reverse();
    out
}

/// Label-rendered masks: for each view and unit, pixels whose composited
/// indicator exceeds 0.5, dropping masks smaller than `min_area`.
/// Features are left empty and ids are assigned by the caller.
pub fn generate_masks(
    scene: &GaussianScene,
    cameras: &[Camera],
    labels: &[u32],
    level: usize,
    min_area: usize,
) -> Result<Vec<MaskObservation>> {
    if labels.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            expected: scene.len(),
            actual: labels.len(),
            context: "unit labels",
        });
    }
    let n_units = labels.iter().max().map_or(0, |m| *m as usize + 1);
    let mut out = Vec::new();
    for (view, cam) in cameras.iter().enumerate() {
        let raster = project(scene, cam)?;
        for unit in 0..n_units {
            let selected: Vec<bool> = labels.iter().map(|&l| l as usize == unit).collect();
            let map = raster.label_map(&selected);
            let mask = BinaryMask::from_threshold(cam.width, cam.height, &map, 0.5);
            if mask.area() < min_area.max(1) {
                continue;
            }
            out.push(MaskObservation {
                id: 0,
                view,
                level,
                mask,
                feature: Vec::new(),
                source: Some(unit as u32),
            });
        }
    }
    Ok(out)
}

/// Unit centroid of each labeled group of Gaussians.
pub fn unit_centroids(scene: &GaussianScene, labels: &[u32]) -> Vec<Vector3<f64>> {
    let n_units = labels.iter().max().map_or(0, |m| *m as usize + 1);
    let mut sums = vec![Vector3::zeros(); n_units];
    let mut counts = vec![0usize; n_units];
    for (g, &l) in scene.gaussians.iter().zip(labels) {
        sums[l as usize] += g.position;
        counts[l as usize] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| s / c.max(1) as f64)
        .collect()
}

/// Attach a unit semantic feature to every mask from the aspect visible
/// along the camera-to-centroid direction, plus isotropic Gaussian noise.
pub fn synthesize_semantics(
    masks: &mut [MaskObservation],
    cameras: &[Camera],
    centroids: &[Vector3<f64>],
    aspects: &AspectModel,
    seed: u64,
) -> Result<()> {
    aspects.validate()?;
    for m in masks.iter_mut() {
        let unit = m
            .source
            .ok_or_else(|| Error::InvalidInput(format!("mask {} has no source unit", m.id)))?
            as usize;
        let dir = view_direction(&cameras[m.view], &centroids[unit]);
        let aspect = aspects.choose(unit, &dir)?;
        let mut rng = rng_for(seed, tags::SEMANTICS, u64::from(m.id));
        let noisy: Vec<f64> = aspect
            .vector
            .iter()
            .map(|a| a + aspects.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut f = normalized(&noisy).unwrap_or_else(|| aspect.vector.clone());
        quantize_f32(&mut f);
        m.feature = f;
    }
    Ok(())
}

pub fn view_direction(cam: &Camera, target: &Vector3<f64>) -> Vector3<f64> {
    (target - cam.center()).normalize()
}

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// `count` unit vectors, mutually orthogonal for the first `dim` of them.
pub fn orthonormal_set<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = random_unit(rng, dim);
        if out.len() < dim {
            for b in &out {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            match normalized(&v) {
                Some(u) => v = u,
                None => continue,
            }
        }
        out.push(v);
    }
    out
}

pub fn single_aspect_model(n_units: usize, dim: usize, sigma: f64, seed: u64) -> AspectModel {
    let mut rng = rng_for(seed, tags::ASPECTS, 0);
    let vectors = orthonormal_set(&mut rng, n_units, dim);
    let units = vectors
        .into_iter()
        .map(|v| {
            vec![Aspect {
                vector: v,
                cone_center: [0.0, 0.0, 1.0],
                cone_half_angle: PI,
                confusable: false,
            }]
        })
        .collect();
    AspectModel { units, sigma }
}

/// Two orthogonal aspects per unit, each owning one hemisphere of view
/// directions around a random axis.
pub fn two_aspect_model(n_units: usize, dim: usize, sigma: f64, cosine: [f64; 2], seed: u64) -> AspectModel {
    let mut rng = rng_for(seed, tags::ASPECTS, 0);
    let mut vectors = orthonormal_set(&mut rng, 2 * n_units, dim);
    let units = (0..n_units)
        .map(|u| {
            let axis = random_unit3(&mut rng);
            let c = if cosine[1] > cosine[0] {
                rng.random_range(cosine[0]..=cosine[1])
            } else {
                cosine[0]
            };
            let s = (1.0 - c * c).sqrt();
            let tilted: Vec<f64> = vectors[2 * u]
                .iter()
                .zip(&vectors[2 * u + 1])
                .map(|(a, b)| c * a + s * b)
                .collect();
            vectors[2 * u + 1] = tilted;
            let mk = |v: &Vec<f64>, c: Vector3<f64>| Aspect {
                vector: v.clone(),
                cone_center: [c.x, c.y, c.z],
                cone_half_angle: PI / 2.0,
                confusable: false,
            };
            vec![mk(&vectors[2 * u], axis), mk(&vectors[2 * u + 1], -axis)]
        })
        .collect();
    AspectModel { units, sigma }
}

/// With probability `rate`, give each unit a narrow aspect aimed at one of
/// its observing views whose semantics copy a broad aspect of another unit.
pub fn plant_confusable_aspects(
    model: &mut AspectModel,
    masks: &[MaskObservation],
    cameras: &[Camera],
    centroids: &[Vector3<f64>],
    rate: f64,
    seed: u64,
) {
    let n_units = model.units.len();
    if n_units < 2 || rate <= 0.0 {
        return;
    }
    let mut rng = rng_for(seed, tags::CONFUSABLE, 0);
    for unit in 0..n_units {
        let views: Vec<usize> = masks
            .iter()
            .filter(|m| m.source == Some(unit as u32))
            .map(|m| m.view)
            .collect();
        let draw: f64 = rng.random();
        if views.is_empty() || draw >= rate {
            continue;
        }
        let view = views[rng.random_range(0..views.len())];
        let mut other = rng.random_range(0..n_units - 1);
        if other >= unit {
            other += 1;
        }
        let broad: Vec<&Aspect> = model.units[other].iter().filter(|a| !a.confusable).collect();
        let source = broad[rng.random_range(0..broad.len())].vector.clone();
        let dir = view_direction(&cameras[view], &centroids[unit]);
        model.units[unit].push(Aspect {
            vector: source,
            cone_center: [dir.x, dir.y, dir.z],
            cone_half_angle: NARROW_CONE,
            confusable: true,
        });
    }
}

/// Evaluation queries for the whole level: one per broad aspect (owned by
/// its unit), a blend distractor per multi-aspect unit, random distractors,
/// and random canonical vectors.
pub fn benchmark_queries(model: &AspectModel, cfg: &SynthConfig) -> QuerySet {
    let mut queries = Vec::new();
    for (u, aspects) in model.units.iter().enumerate() {
        let broad: Vec<&Aspect> = aspects.iter().filter(|a| !a.confusable).collect();
        for (k, a) in broad.iter().enumerate() {
            queries.push(Query {
                name: format!("object{u}_aspect{k}"),
                vector: a.vector.clone(),
                owner: Some(u as u32),
            });
        }
        if broad.len() > 1 {
            let mut sum = vec![0.0; cfg.feature_dim];
            for a in &broad {
                sum.iter_mut().zip(&a.vector).for_each(|(s, v)| *s += v);
            }
            if let Some(v) = normalized(&sum) {
                queries.push(Query {
                    name: format!("object{u}_blend"),
                    vector: v,
                    owner: None,
                });
            }
        }
    }
    let mut rng = rng_for(cfg.seed, tags::QUERIES, 0);
    for k in 0..cfg.random_distractors {
        queries.push(Query {
            name: format!("distractor{k}"),
            vector: random_unit(&mut rng, cfg.feature_dim),
            owner: None,
        });
    }
    let mut crng = rng_for(cfg.seed, tags::CANONICAL, 0);
    let canonical = (0..cfg.canonical_count.max(1))
        .map(|_| random_unit(&mut crng, cfg.feature_dim))
        .collect();
    let mut set = QuerySet { queries, canonical };
    set.quantize();
    set
}

/// Full synthetic dataset plus its benchmark queries.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<(Dataset, QuerySet)> {
    if cfg.objects == 0 {
        return Err(Error::InvalidInput("need at least one object".into()));
    }
    if cfg.aspect_cosine.iter().any(|c| !(-1.0..=1.0).contains(c)) || cfg.aspect_cosine[0] > cfg.aspect_cosine[1] {
        return Err(Error::InvalidInput(format!("bad aspect cosine range {:?}", cfg.aspect_cosine)));
    }
    let scene = generate_scene(cfg.objects, cfg.gaussians_per_object, cfg.seed);
    let cameras = generate_cameras(cfg.views, cfg.camera_distance, cfg.focal, cfg.image_size);
    let level_labels = hierarchical_labels(&scene, cfg.levels, cfg.seed);
    let mut masks = Vec::new();
    let mut models = Vec::new();
    for (level, labels) in level_labels.iter().enumerate() {
        let mut level_masks = generate_masks(&scene, &cameras, labels, level, cfg.min_mask_area)?;
        for m in &mut level_masks {
            m.id = (masks.len()) as u32;
            masks.push(m.clone());
        }
        let n_units = labels.iter().max().map_or(0, |m| *m as usize + 1);
        let level_seed = cfg.seed.wrapping_add(level as u64 * 7919);
        let mut model = match cfg.semantics {
            SemanticsKind::SingleAspect => {
                single_aspect_model(n_units, cfg.feature_dim, cfg.sigma, level_seed)
            }
            SemanticsKind::TwoAspect => {
                two_aspect_model(n_units, cfg.feature_dim, cfg.sigma, cfg.aspect_cosine, level_seed)
            }
        };
        let centroids = unit_centroids(&scene, labels);
        let first = masks.len() - level_masks.len();
        plant_confusable_aspects(
            &mut model,
            &masks[first..],
            &cameras,
            &centroids,
            cfg.confusable_rate,
            level_seed,
        );
        synthesize_semantics(&mut masks[first..], &cameras, &centroids, &model, cfg.seed)?;
        models.push(model);
    }
    let queries = benchmark_queries(models.last().expect("at least one level"), cfg);
    let dataset = Dataset {
        scene,
        cameras,
        masks,
        num_levels: level_labels.len(),
        feature_dim: cfg.feature_dim,
        oracle: Some(Oracle {
            level_labels,
            aspects: models,
        }),
    };
    Ok((dataset, queries))
}
