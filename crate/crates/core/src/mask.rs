//! Binary masks, their run-length encoding, and mask observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    /// Pixels where `values > threshold`.
    pub fn from_threshold(width: usize, height: usize, values: &[f64], threshold: f64) -> Self {
        Self::new(width, height, values.iter().map(|v| *v > threshold).collect())
    }

    pub fn get(&self, index: usize) -> bool {
        self.bits[index]
    }

    pub fn set(&mut self, index: usize, on: bool) {
        self.bits[index] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn on_pixels(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn off_pixels(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| !self.bits[i]).collect()
    }

    pub fn intersection(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn union(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    /// Uncompressed row-major run lengths, starting with a run of zeros.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        counts
    }

    pub fn from_rle(width: usize, height: usize, counts: &[u32]) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        let mut value = false;
        for &c in counts {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        if bits.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "rle covers {} pixels, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self::new(width, height, bits))
    }
}

/// One 2D mask in one view with its semantic feature.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskObservation {
    pub id: u32,
    pub view: usize,
    pub level: usize,
    pub mask: BinaryMask,
    /// Semantic embedding (unit norm for well-formed inputs).
    pub feature: Vec<f64>,
    /// Source object at this level; only known for synthetic data.
    pub source: Option<u32>,
}

/// Serialized RLE form used in per-view mask files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleMask {
    pub id: u32,
    pub counts: Vec<u32>,
}
