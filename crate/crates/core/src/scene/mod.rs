//! Gaussian scene representation and pinhole cameras.

mod raster;

pub use raster::{
    backprop_to_features, composite, composite_normalized, project, render_features,
    render_label_map, FeatureMap, PixelList, Rasterization, Splat, ALPHA_CUTOFF,
    TRANSMITTANCE_EPSILON,
};

use nalgebra::{Matrix4, Point3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    /// Isotropic world-space standard deviation.
    pub radius: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub gt_label: Option<u32>,
}

impl Gaussian {
    pub fn new(position: [f64; 3], radius: f64, opacity: f64) -> Self {
        Self {
            position: Vector3::from(position),
            radius,
            opacity,
            color: [0.5; 3],
            gt_label: None,
        }
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.gt_label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.gaussians
            .iter()
            .map(|g| [g.position.x, g.position.y, g.position.z])
            .collect()
    }

    /// Ground-truth labels; `None` if any Gaussian lacks one.
    pub fn gt_labels(&self) -> Option<Vec<u32>> {
        self.gaussians.iter().map(|g| g.gt_label).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if !(0.0..=1.0).contains(&g.opacity) {
                return Err(Error::InvalidInput(format!(
                    "gaussian {i}: opacity {} outside [0,1]",
                    g.opacity
                )));
            }
            if !g.position.iter().all(|v| v.is_finite()) || !g.radius.is_finite() {
                return Err(Error::InvalidInput(format!("gaussian {i}: non-finite")));
            }
        }
        Ok(())
    }
}

/// Pinhole camera. Camera space looks down +z, image x right, image y down;
/// integer pixel coordinates are pixel centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Row-major 4x4 world-to-camera rigid transform.
    pub world_to_camera: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`. `up` must not be parallel to the
    /// viewing direction.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let eye = Point3::from(eye);
        let target = Point3::from(target);
        let forward = (target - eye).normalize();
        let mut up = Vector3::from(up);
        if forward.cross(&up).norm() < 1e-6 {
            up = if forward.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::z()
            };
        }
        // camera y points down in the image
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = nalgebra::Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let t = -(rot * eye.coords);
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = rot[(r, c)];
            }
            m[r][3] = t[r];
        }
        m[3][3] = 1.0;
        Self {
            world_to_camera: m,
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("camera resolution must be >= 1".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be > 0".into()));
        }
        let finite = self.world_to_camera.iter().flatten().all(|v| v.is_finite())
            && self.cx.is_finite()
            && self.cy.is_finite();
        if !finite {
            return Err(Error::InvalidInput("camera has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn extrinsic(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|r, c| self.world_to_camera[r][c])
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let v = self.extrinsic() * Vector4::new(p.x, p.y, p.z, 1.0);
        Vector3::new(v.x, v.y, v.z)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        let m = self.extrinsic();
        let rot = m.fixed_view::<3, 3>(0, 0);
        let t = m.fixed_view::<3, 1>(0, 3);
        -(rot.transpose() * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_puts_target_on_optical_axis() {
        let cam = Camera::look_at([0.0, 0.0, -5.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 50.0, 9, 9);
        let p = cam.to_camera(&Vector3::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z - 5.0).abs() < 1e-12);
        let c = cam.center();
        assert!((c - Vector3::new(0.0, 0.0, -5.0)).norm() < 1e-12);
    }

    #[test]
    fn camera_validation() {
        let mut cam = Camera::look_at([0.0, 0.0, -5.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 9, 9);
        assert!(cam.validate().is_ok());
        cam.fx = 0.0;
        assert!(cam.validate().is_err());
        cam.fx = 1.0;
        cam.width = 0;
        assert!(cam.validate().is_err());
    }
}
