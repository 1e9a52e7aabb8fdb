//! Tile-free, per-pixel alpha-compositing rasterizer with exact feature
//! gradients.

use rayon::prelude::*;

use super::{Camera, GaussianScene};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};

/// Splats whose alpha at a pixel falls below this value are dropped.
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
/// Front-to-back traversal stops once transmittance falls below this value.
pub const TRANSMITTANCE_EPSILON: f64 = 1e-4;
const NEAR_PLANE: f64 = 1e-3;
const ROW_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub gaussian: u32,
    pub depth: f64,
    pub alpha: f64,
    /// Effective blending weight `alpha * prod_{j<i} (1 - alpha_j)`.
    pub weight: f64,
}

/// Depth-sorted splats covering one pixel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelList {
    pub splats: Vec<Splat>,
    /// Transmittance left after the last splat.
    pub transmittance: f64,
}

impl PixelList {
    fn from_sorted(mut entries: Vec<(f64, u32, f64)>) -> Self {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut t = 1.0;
        let mut splats = Vec::with_capacity(entries.len());
        for (depth, gaussian, alpha) in entries {
            splats.push(Splat {
                gaussian,
                depth,
                alpha,
                weight: alpha * t,
            });
            t *= 1.0 - alpha;
            if t < TRANSMITTANCE_EPSILON {
                break;
            }
        }
        Self {
            splats,
            transmittance: t,
        }
    }

    pub fn is_covered(&self) -> bool {
        !self.splats.is_empty()
    }
}

/// Per-pixel composite lists of one scene seen from one camera.
#[derive(Debug, Clone)]
pub struct Rasterization {
    pub width: usize,
    pub height: usize,
    pub num_gaussians: usize,
    pub pixels: Vec<PixelList>,
}

impl Rasterization {
    pub fn pixel(&self, x: usize, y: usize) -> &PixelList {
        &self.pixels[y * self.width + x]
    }

    pub fn num_pixels(&self) -> usize {
        self.pixels.len()
    }

    /// Composite one scalar per Gaussian (colors channel, indicator, ...).
    pub fn blend_scalar(&self, values: &[f64]) -> Vec<f64> {
        self.pixels
            .par_iter()
            .map(|px| {
                px.splats
                    .iter()
                    .map(|s| s.weight * values[s.gaussian as usize])
                    .sum()
            })
            .collect()
    }

    /// Label indicator map: selected Gaussians contribute 1, others 0.
    pub fn label_map(&self, selected: &[bool]) -> Vec<f64> {
        let values: Vec<f64> = selected.iter().map(|&s| f64::from(u8::from(s))).collect();
        self.blend_scalar(&values)
    }
}

/// Project and sort every Gaussian into per-pixel composite lists.
pub fn project(scene: &GaussianScene, cam: &Camera) -> Result<Rasterization> {
    cam.validate()?;
    if scene.is_empty() {
        return Err(Error::InvalidInput("scene has no gaussians".into()));
    }
    let (w, h) = (cam.width, cam.height);
    let mut buckets: Vec<Vec<(f64, u32, f64)>> = vec![Vec::new(); w * h];
    for (i, g) in scene.gaussians.iter().enumerate() {
        let pc = cam.to_camera(&g.position);
        if pc.z <= NEAR_PLANE {
            continue;
        }
        let sx = g.radius * cam.fx / pc.z;
        let sy = g.radius * cam.fy / pc.z;
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(Error::DegenerateFootprint(i));
        }
        if g.opacity < ALPHA_CUTOFF {
            continue;
        }
        let u = cam.fx * pc.x / pc.z + cam.cx;
        let v = cam.fy * pc.y / pc.z + cam.cy;
        let reach = (2.0 * (g.opacity / ALPHA_CUTOFF).ln()).max(0.0).sqrt();
        let x0 = (u - reach * sx).ceil().max(0.0);
        let x1 = (u + reach * sx).floor().min(w as f64 - 1.0);
        let y0 = (v - reach * sy).ceil().max(0.0);
        let y1 = (v + reach * sy).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for py in y0 as usize..=y1 as usize {
            let dy = (py as f64 - v) / sy;
            for px in x0 as usize..=x1 as usize {
                let dx = (px as f64 - u) / sx;
                let alpha = (g.opacity * (-0.5 * (dx * dx + dy * dy)).exp()).min(1.0);
                if alpha < ALPHA_CUTOFF {
                    continue;
                }
                buckets[py * w + px].push((pc.z, i as u32, alpha));
            }
        }
    }
    let pixels = buckets.into_par_iter().map(PixelList::from_sorted).collect();
    Ok(Rasterization {
        width: w,
        height: h,
        num_gaussians: scene.len(),
        pixels,
    })
}

/// Front-to-back alpha blending of `values` (each of length `dim`).
pub fn composite(values: &[Vec<f64>], alphas: &[f64], dim: usize) -> Vec<f64> {
    assert_eq!(values.len(), alphas.len(), "values and alphas differ in length");
    let mut out = vec![0.0; dim];
    let mut t = 1.0;
    for (v, &a) in values.iter().zip(alphas) {
        axpy(a * t, v, &mut out);
        t *= 1.0 - a;
    }
    out
}

/// Blending of unit-normalized features; zero-norm features contribute zero.
pub fn composite_normalized(features: &[Vec<f64>], alphas: &[f64], dim: usize) -> Vec<f64> {
    let units: Vec<Vec<f64>> = features.iter().map(|f| unit_or_zero(f)).collect();
    composite(&units, alphas, dim)
}

fn unit_or_zero(f: &[f64]) -> Vec<f64> {
    let n = norm(f);
    if n == 0.0 {
        vec![0.0; f.len()]
    } else {
        f.iter().map(|x| x / n).collect()
    }
}

/// Rendered H x W grid of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub transmittance: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        Self {
            width,
            height,
            dim,
            data: vec![0.0; width * height * dim],
            transmittance: vec![1.0; width * height],
        }
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Render per-Gaussian features through precomputed composite lists.
pub fn render_features(raster: &Rasterization, features: &Matrix, normalized: bool) -> FeatureMap {
    let dim = features.cols();
    let table = if normalized {
        let mut m = features.clone();
        for i in 0..m.rows() {
            let u = unit_or_zero(m.row(i));
            m.row_mut(i).copy_from_slice(&u);
        }
        std::borrow::Cow::Owned(m)
    } else {
        std::borrow::Cow::Borrowed(features)
    };
    let mut map = FeatureMap::zeros(raster.width, raster.height, dim);
    map.data
        .par_chunks_mut(dim.max(1))
        .zip(raster.pixels.par_iter())
        .for_each(|(out, px)| {
            for s in &px.splats {
                axpy(s.weight, table.row(s.gaussian as usize), out);
            }
        });
    for (t, px) in map.transmittance.iter_mut().zip(&raster.pixels) {
        *t = px.transmittance;
    }
    map
}

/// Chain per-pixel upstream gradients `dL/dF(p)` back to per-Gaussian
/// features. With `normalized`, differentiates through `f / |f|`.
///
/// Pixels are reduced in fixed row blocks, so the result does not depend
/// on the thread count.
pub fn backprop_to_features(
    raster: &Rasterization,
    pixel_grads: &FeatureMap,
    features: &Matrix,
    normalized: bool,
) -> Result<Matrix> {
    let dim = features.cols();
    if pixel_grads.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: pixel_grads.dim,
            context: "pixel gradient feature dimension",
        });
    }
    if pixel_grads.num_pixels() != raster.num_pixels() {
        return Err(Error::DimensionMismatch {
            expected: raster.num_pixels(),
            actual: pixel_grads.num_pixels(),
            context: "pixel gradient resolution",
        });
    }
    if features.rows() != raster.num_gaussians {
        return Err(Error::DimensionMismatch {
            expected: raster.num_gaussians,
            actual: features.rows(),
            context: "feature rows vs scene size",
        });
    }
    let n = features.rows();
    let block_pixels = ROW_BLOCK * raster.width;
    let partials: Vec<Option<Vec<f64>>> = raster
        .pixels
        .par_chunks(block_pixels)
        .enumerate()
        .map(|(b, block)| {
            let mut acc: Option<Vec<f64>> = None;
            for (k, px) in block.iter().enumerate() {
                let g = pixel_grads.pixel(b * block_pixels + k);
                if px.splats.is_empty() || g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let acc = acc.get_or_insert_with(|| vec![0.0; n * dim]);
                for s in &px.splats {
                    let i = s.gaussian as usize;
                    axpy(s.weight, g, &mut acc[i * dim..(i + 1) * dim]);
                }
            }
            acc
        })
        .collect();
    let mut grad = Matrix::zeros(n, dim);
    for p in partials.into_iter().flatten() {
        axpy(1.0, &p, grad.as_mut_slice());
    }
    if normalized {
        for i in 0..n {
            let f = features.row(i);
            let nf = norm(f);
            let row = grad.row_mut(i);
            if nf == 0.0 {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            // (I - u u^T) g / |f|
            let proj = dot(f, row) / (nf * nf);
            for (r, fi) in row.iter_mut().zip(f) {
                *r = (*r - proj * fi) / nf;
            }
        }
    }
    Ok(grad)
}

/// Composite a 0/1 indicator of `selected` Gaussians for one view.
pub fn render_label_map(scene: &GaussianScene, cam: &Camera, selected: &[bool]) -> Result<Vec<f64>> {
    if selected.len() != scene.len() {
        return Err(Error::DimensionMismatch {
            expected: scene.len(),
            actual: selected.len(),
            context: "selection mask length",
        });
    }
    Ok(project(scene, cam)?.label_map(selected))
}
