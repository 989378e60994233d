//! Spatial feature maps and masked feature pooling.
//!
//! A proposal mask is resized to the feature grid by block averaging and
//! used as a soft weight over cells: `pooled_c = sum_hw m(h,w) f(c,h,w) /
//! sum_hw m(h,w)`. The pooled vectors from each backbone are later fed
//! through per-backbone projection MLPs and summed into entity tokens; the
//! maps themselves are inputs, not parameters, so pooling needs no
//! backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{resize_soft, ProposalSet, SoftMask};

/// Dense per-cell feature grid over `gh x gw` cells, stored as one
/// row-major plane per channel: `data[(c * gh + y) * gw + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub gh: usize,
    pub gw: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, gh: usize, gw: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || gh == 0 || gw == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map dimensions must be positive, got {channels}x{gh}x{gw}"
            )));
        }
        if data.len() != channels * gh * gw {
            return Err(Error::DimensionMismatch(format!(
                "feature data length {} != {channels}x{gh}x{gw}",
                data.len()
            )));
        }
        Ok(Self { channels, gh, gw, data })
    }

    pub fn zeros(channels: usize, gh: usize, gw: usize) -> Self {
        Self { channels, gh, gw, data: vec![0.0; channels * gh * gw] }
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.gh + row) * self.gw + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        self.data[(c * self.gh + row) * self.gw + col] = v;
    }

    /// The row-major plane of one channel.
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.gh * self.gw..(c + 1) * self.gh * self.gw]
    }
}

/// Which backbone's pooled features feed the entity tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Color-histogram backbone only.
    Color,
    /// Structure backbone only (occupancy, edges, region).
    Structure,
    /// Sum of both projected backbones.
    #[default]
    Both,
}

impl FeatureSource {
    pub fn uses_color(&self) -> bool {
        matches!(self, FeatureSource::Color | FeatureSource::Both)
    }

    pub fn uses_structure(&self) -> bool {
        matches!(self, FeatureSource::Structure | FeatureSource::Both)
    }
}

/// Soft-weighted average of the feature map under the mask. The mask must
/// already live on the feature grid; its mass must be positive.
pub fn mask_pool(map: &FeatureMap, mask: &SoftMask) -> Result<Vec<f64>> {
    if map.gh != mask.height || map.gw != mask.width {
        return Err(Error::DimensionMismatch(format!(
            "feature grid {}x{} vs mask {}x{}",
            map.gh, map.gw, mask.height, mask.width
        )));
    }
    let mass: f64 = mask.probs.iter().sum();
    if mass <= 0.0 {
        return Err(Error::DegenerateMask(
            "mask has zero mass on the feature grid".into(),
        ));
    }
    let mut pooled = Vec::with_capacity(map.channels);
    for c in 0..map.channels {
        let plane = map.plane(c);
        let mut acc = 0.0;
        for (&m, &f) in mask.probs.iter().zip(plane) {
            acc += m * f;
        }
        pooled.push(acc / mass);
    }
    Ok(pooled)
}

/// Pooled feature vector for every proposal: each proposal mask is block
/// resized to the map grid, then [`mask_pool`]ed.
pub fn pool_proposals(map: &FeatureMap, proposals: &ProposalSet) -> Result<Vec<Vec<f64>>> {
    proposals
        .masks()
        .iter()
        .map(|m| {
            let resized = resize_soft(m, map.gh, map.gw)?;
            mask_pool(map, &resized)
        })
        .collect()
}
