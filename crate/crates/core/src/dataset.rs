//! The in-memory bundle every pipeline stage consumes: scene, cameras and
//! per-level mask observations with semantic features.

use crate::error::{Error, Result};
use crate::mask::MaskObservation;
use crate::scene::{Camera, GaussianScene};
use crate::synth::AspectModel;

/// Ground truth kept for oracle checks; absent for external data.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    /// Per level, the unit label of every Gaussian.
    pub level_labels: Vec<Vec<u32>>,
    /// Per level, the aspect model used to synthesize mask semantics.
    pub aspects: Vec<AspectModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene: GaussianScene,
    pub cameras: Vec<Camera>,
    pub masks: Vec<MaskObservation>,
    pub num_levels: usize,
    pub feature_dim: usize,
    pub oracle: Option<Oracle>,
}

impl Dataset {
    /// Indices into `masks` for one granularity level, in id order.
    pub fn mask_indices(&self, level: usize) -> Vec<usize> {
        (0..self.masks.len())
            .filter(|&i| self.masks[i].level == level)
            .collect()
    }

    pub fn level_labels(&self, level: usize) -> Option<&[u32]> {
        self.oracle
            .as_ref()
            .and_then(|o| o.level_labels.get(level))
            .map(Vec::as_slice)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        for cam in &self.cameras {
            cam.validate()?;
        }
        for m in &self.masks {
            let cam = self.cameras.get(m.view).ok_or_else(|| {
                Error::InvalidInput(format!("mask {} references missing view {}", m.id, m.view))
            })?;
            if m.mask.width != cam.width || m.mask.height != cam.height {
                return Err(Error::InvalidInput(format!(
                    "mask {} resolution {}x{} differs from camera {}x{}",
                    m.id, m.mask.width, m.mask.height, cam.width, cam.height
                )));
            }
            if m.level >= self.num_levels {
                return Err(Error::InvalidInput(format!(
                    "mask {} has level {} but dataset has {} levels",
                    m.id, m.level, self.num_levels
                )));
            }
            if m.feature.len() != self.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.feature_dim,
                    actual: m.feature.len(),
                    context: "mask semantic feature",
                });
            }
        }
        Ok(())
    }
}

/// Names of granularity levels, finest first, ending with "whole".
pub fn level_names(num_levels: usize) -> Vec<&'static str> {
    const ALL: [&str; 3] = ["subpart", "part", "whole"];
    let n = num_levels.clamp(1, 3);
    ALL[3 - n..].to_vec()
}
