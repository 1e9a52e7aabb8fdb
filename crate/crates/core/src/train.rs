//! Contrastive training of per-Gaussian affinity features from multi-view
//! masks: masked average pooling, the contrastive and rebalanced losses, the
//! rendered-norm regularizer, and an SGD loop over views.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, cosine, dot, norm, Matrix};
use crate::mask::{BinaryMask, MaskObservation};
use crate::rng::{rng_for, tags};
use crate::scene::{backprop_to_features, project, render_features, Camera, FeatureMap, GaussianScene, Rasterization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Affinity feature dimension.
    pub dim: usize,
    /// Positive and negative samples drawn per mask and iteration.
    pub samples_per_mask: usize,
    pub norm_weight: f64,
    pub momentum: f64,
    /// Differentiate through masked average pooling instead of treating
    /// prototypes as constants.
    pub full_prototype_gradient: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            learning_rate: 2e-4,
            dim: 32,
            samples_per_mask: 256,
            norm_weight: 1.0,
            momentum: 0.0,
            full_prototype_gradient: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rate must be > 0".into()));
        }
        if self.samples_per_mask == 0 || self.dim == 0 {
            return Err(Error::InvalidInput("samples per mask and dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

fn check_shape(mask: &BinaryMask, map: &FeatureMap) -> Result<()> {
    if mask.len() != map.num_pixels() {
        return Err(Error::DimensionMismatch {
            expected: map.num_pixels(),
            actual: mask.len(),
            context: "mask vs feature map pixels",
        });
    }
    Ok(())
}

/// Mean rendered feature over the mask's on pixels.
pub fn masked_average_pool(mask: &BinaryMask, map: &FeatureMap) -> Result<Vec<f64>> {
    check_shape(mask, map)?;
    let on = mask.on_pixels();
    if on.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut acc = vec![0.0; map.dim];
    for &p in &on {
        axpy(1.0, map.pixel(p), &mut acc);
    }
    let inv = 1.0 / on.len() as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    Ok(acc)
}

/// `sum_p (1 - 2 M(p)) * max(cos(proto, F(p)), 0)` over all pixels.
pub fn contrastive_loss(proto: &[f64], map: &FeatureMap, mask: &BinaryMask) -> Result<f64> {
    check_shape(mask, map)?;
    check_dim(proto, map)?;
    Ok((0..map.num_pixels())
        .map(|p| {
            let sign = if mask.get(p) { -1.0 } else { 1.0 };
            sign * cosine(proto, map.pixel(p)).max(0.0)
        })
        .sum())
}

fn check_dim(proto: &[f64], map: &FeatureMap) -> Result<()> {
    if proto.len() != map.dim {
        return Err(Error::DimensionMismatch {
            expected: map.dim,
            actual: proto.len(),
            context: "prototype",
        });
    }
    Ok(())
}

/// `-sum_{P} M cos + sum_{N} (1 - M) max(cos, 0)`; the positive branch is
/// not clamped.
pub fn rebalanced_loss(
    proto: &[f64],
    map: &FeatureMap,
    mask: &BinaryMask,
    positives: &[usize],
    negatives: &[usize],
) -> Result<f64> {
    check_shape(mask, map)?;
    check_dim(proto, map)?;
    if positives.len() != negatives.len() {
        return Err(Error::InvalidInput(format!(
            "unbalanced samples: {} positives, {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let pos: f64 = positives
        .iter()
        .filter(|&&p| mask.get(p))
        .map(|&p| cosine(proto, map.pixel(p)))
        .sum();
    let neg: f64 = negatives
        .iter()
        .filter(|&&p| !mask.get(p))
        .map(|&p| cosine(proto, map.pixel(p)).max(0.0))
        .sum();
    Ok(neg - pos)
}

/// `sum_p (1 - |F(p)|)` over the given pixels.
pub fn norm_regularizer(map: &FeatureMap, pixels: &[usize]) -> f64 {
    pixels.iter().map(|&p| 1.0 - norm(map.pixel(p))).sum()
}

/// Gradients of `cos(a, b)` with respect to `a` and `b`.
fn cosine_grads(a: &[f64], b: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let c = dot(a, b) / (na * nb);
    let ga = a.iter().zip(b).map(|(x, y)| y / (na * nb) - c * x / (na * na)).collect();
    let gb = a.iter().zip(b).map(|(x, y)| x / (na * nb) - c * y / (nb * nb)).collect();
    Some((c, ga, gb))
}

/// Sampled pixels for one mask in one iteration.
#[derive(Debug, Clone)]
pub struct MaskSample<'a> {
    pub mask: &'a BinaryMask,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rebalanced: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub rebalanced: f64,
    pub norm: f64,
    pub total: f64,
    /// Gradient of `total` with respect to the raw per-Gaussian features.
    pub grad: Matrix,
}

/// Loss of one view under normalized rendering. Prototypes come from the
/// current render unless `frozen` supplies them.
pub fn view_loss(
    raster: &Rasterization,
    features: &Matrix,
    batch: &[MaskSample<'_>],
    weights: LossWeights,
    frozen: Option<&[Vec<f64>]>,
) -> Result<(f64, f64)> {
    let map = render_features(raster, features, true);
    let mut lr = 0.0;
    let mut ln = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let proto = match frozen {
            Some(p) => p[i].clone(),
            None => masked_average_pool(s.mask, &map)?,
        };
        lr += rebalanced_loss(&proto, &map, s.mask, &s.positives, &s.negatives)?;
        ln += norm_regularizer(&map, &s.positives) + norm_regularizer(&map, &s.negatives);
    }
    Ok((weights.rebalanced * lr, weights.norm * ln))
}

/// Loss and analytic feature gradient of one view. With `full_prototype`
/// the gradient also flows through masked average pooling.
pub fn view_objective(
    raster: &Rasterization,
    features: &Matrix,
    batch: &[MaskSample<'_>],
    weights: LossWeights,
    full_prototype: bool,
) -> Result<Objective> {
    let map = render_features(raster, features, true);
    let dim = features.cols();
    let mut pixel_grads = FeatureMap::zeros(map.width, map.height, dim);
    let mut lr = 0.0;
    let mut ln = 0.0;
    for s in batch {
        if s.positives.len() != s.negatives.len() {
            return Err(Error::InvalidInput("unbalanced samples".into()));
        }
        let proto = masked_average_pool(s.mask, &map)?;
        let mut proto_grad = vec![0.0; dim];
        for &p in &s.positives {
            if !s.mask.get(p) {
                continue;
            }
            if let Some((c, gp, gf)) = cosine_grads(&proto, map.pixel(p)) {
                lr -= c;
                axpy(-weights.rebalanced, &gf, pixel_grads.pixel_mut(p));
                axpy(-weights.rebalanced, &gp, &mut proto_grad);
            }
        }
        for &p in &s.negatives {
            if s.mask.get(p) {
                continue;
            }
            if let Some((c, gp, gf)) = cosine_grads(&proto, map.pixel(p)) {
                if c > 0.0 {
                    lr += c;
                    axpy(weights.rebalanced, &gf, pixel_grads.pixel_mut(p));
                    axpy(weights.rebalanced, &gp, &mut proto_grad);
                }
            }
        }
        for &p in s.positives.iter().chain(&s.negatives) {
            let f = map.pixel(p);
            let n = norm(f);
            ln += 1.0 - n;
            if n > 0.0 {
                let g: Vec<f64> = f.iter().map(|v| -weights.norm * v / n).collect();
                axpy(1.0, &g, pixel_grads.pixel_mut(p));
            }
        }
        if full_prototype {
            let on = s.mask.on_pixels();
            let scale = 1.0 / on.len() as f64;
            for p in on {
                axpy(scale, &proto_grad, pixel_grads.pixel_mut(p));
            }
        }
    }
    let grad = backprop_to_features(raster, &pixel_grads, features, true)?;
    let (rebalanced, norm_term) = (weights.rebalanced * lr, weights.norm * ln);
    Ok(Objective {
        rebalanced,
        norm: norm_term,
        total: rebalanced + norm_term,
        grad,
    })
}

/// Draw `count` positives from the mask and `count` negatives from covered
/// off-mask pixels, with replacement. `None` when either pool is empty.
pub fn sample_mask<'a, R: Rng>(
    mask: &'a BinaryMask,
    covered: &[bool],
    count: usize,
    rng: &mut R,
) -> Option<MaskSample<'a>> {
    let pos_pool = mask.on_pixels();
    let neg_pool: Vec<usize> = (0..mask.len()).filter(|&p| covered[p] && !mask.get(p)).collect();
    if pos_pool.is_empty() || neg_pool.is_empty() {
        return None;
    }
    let positives = (0..count).map(|_| pos_pool[rng.random_range(0..pos_pool.len())]).collect();
    let negatives = (0..count).map(|_| neg_pool[rng.random_range(0..neg_pool.len())]).collect();
    Some(MaskSample {
        mask,
        positives,
        negatives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub rebalanced: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub level: usize,
    pub features: Matrix,
    pub trace: Vec<LossRecord>,
}

/// Uniform(-0.01, 0.01) initialization for one level.
pub fn initial_features(n: usize, cfg: &TrainConfig, level: usize) -> Matrix {
    let mut rng = rng_for(cfg.seed, tags::TRAIN_INIT, level as u64);
    let data = (0..n * cfg.dim).map(|_| rng.random_range(-0.01..0.01)).collect();
    Matrix::from_vec(n, cfg.dim, data)
}

/// Train one level's affinity features by SGD over randomly chosen views.
pub fn train(
    scene: &GaussianScene,
    cameras: &[Camera],
    masks: &[&MaskObservation],
    level: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut features = initial_features(scene.len(), cfg, level);
    let mut views: Vec<usize> = masks.iter().map(|m| m.view).collect();
    views.sort_unstable();
    views.dedup();
    if cfg.iterations == 0 || views.is_empty() {
        return Ok(TrainOutput {
            level,
            features,
            trace: Vec::new(),
        });
    }
    let mut rasters = Vec::with_capacity(views.len());
    for &v in &views {
        let cam = cameras
            .get(v)
            .ok_or_else(|| Error::InvalidInput(format!("mask references missing view {v}")))?;
        let raster = project(scene, cam)?;
        let covered: Vec<bool> = raster.pixels.iter().map(|p| p.is_covered()).collect();
        let view_masks: Vec<&BinaryMask> = masks.iter().filter(|m| m.view == v).map(|m| &m.mask).collect();
        rasters.push((raster, covered, view_masks));
    }
    let mut rng = rng_for(cfg.seed, tags::TRAIN_STEP, level as u64);
    let mut velocity = Matrix::zeros(features.rows(), features.cols());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let weights = LossWeights {
        rebalanced: 1.0,
        norm: cfg.norm_weight,
    };
    for iteration in 0..cfg.iterations {
        let (raster, covered, view_masks) = &rasters[rng.random_range(0..rasters.len())];
        let batch: Vec<MaskSample<'_>> = view_masks
            .iter()
            .filter_map(|m| sample_mask(m, covered, cfg.samples_per_mask, &mut rng))
            .collect();
        let obj = view_objective(raster, &features, &batch, weights, cfg.full_prototype_gradient)?;
        if !obj.total.is_finite() || !obj.grad.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                detail: format!("rebalanced={} norm={}", obj.rebalanced, obj.norm),
            });
        }
        trace.push(LossRecord {
            iteration,
            rebalanced: obj.rebalanced,
            norm: obj.norm,
        });
        let v = velocity.as_mut_slice();
        for (vi, gi) in v.iter_mut().zip(obj.grad.as_slice()) {
            *vi = cfg.momentum * *vi + gi;
        }
        axpy(-cfg.learning_rate, velocity.as_slice(), features.as_mut_slice());
    }
    Ok(TrainOutput {
        level,
        features,
        trace,
    })
}

/// Relative gradient error `|a - b| / max(|a|, |b|)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central finite-difference gradient of `view_loss` (sum of both terms).
pub fn finite_difference(
    raster: &Rasterization,
    features: &Matrix,
    batch: &[MaskSample<'_>],
    weights: LossWeights,
    frozen: Option<&[Vec<f64>]>,
    step: f64,
) -> Result<Matrix> {
    let mut grad = Matrix::zeros(features.rows(), features.cols());
    let mut f = features.clone();
    for i in 0..f.as_slice().len() {
        let orig = f.as_slice()[i];
        f.as_mut_slice()[i] = orig + step;
        let (a, b) = view_loss(raster, &f, batch, weights, frozen)?;
        f.as_mut_slice()[i] = orig - step;
        let (c, d) = view_loss(raster, &f, batch, weights, frozen)?;
        f.as_mut_slice()[i] = orig;
        grad.as_mut_slice()[i] = ((a + b) - (c + d)) / (2.0 * step);
    }
    Ok(grad)
}
