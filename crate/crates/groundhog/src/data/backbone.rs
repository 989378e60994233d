//! Two deterministic feature encoders over scenes, standing in for the
//! pair of pretrained vision backbones whose features entity tokens fuse.
//!
//! Both produce an 8x8 grid (one cell per 4x4 pixel block):
//! - the color backbone: an 8-channel color histogram, channel c holding
//!   the fraction of the block's pixels with color id c;
//! - the structure backbone: 4 channels {entity occupancy fraction,
//!   horizontal occupancy changes / 16, vertical occupancy changes / 16,
//!   region id (0 sky, 1 ground)}. Edge counts only consider pixel pairs
//!   fully inside the block.

use crate::data::scene::{Region, Scene, BLOCK, COLOR_NAMES, GRID_H, GRID_W};
use crate::feature::FeatureMap;

/// Channel count of the color backbone.
pub const COLOR_CHANNELS: usize = COLOR_NAMES.len();
/// Channel count of the structure backbone.
pub const STRUCTURE_CHANNELS: usize = 4;

/// Per-block color histogram.
pub fn encode_color(scene: &Scene) -> FeatureMap {
    let raster = scene.color_raster();
    let mut map = FeatureMap::zeros(COLOR_CHANNELS, GRID_H, GRID_W);
    let norm = (BLOCK * BLOCK) as f64;
    for gy in 0..GRID_H {
        for gx in 0..GRID_W {
            let mut counts = [0usize; COLOR_CHANNELS];
            for y in gy * BLOCK..(gy + 1) * BLOCK {
                for x in gx * BLOCK..(gx + 1) * BLOCK {
                    counts[raster[y * scene.w + x]] += 1;
                }
            }
            for (c, &n) in counts.iter().enumerate() {
                map.set(c, gy, gx, n as f64 / norm);
            }
        }
    }
    map
}

/// Per-block occupancy, edge, and region statistics.
pub fn encode_structure(scene: &Scene) -> FeatureMap {
    let occ = scene.occupancy();
    let mut map = FeatureMap::zeros(STRUCTURE_CHANNELS, GRID_H, GRID_W);
    let norm = (BLOCK * BLOCK) as f64;
    for gy in 0..GRID_H {
        for gx in 0..GRID_W {
            let (y0, x0) = (gy * BLOCK, gx * BLOCK);
            let mut filled = 0usize;
            let mut h_edges = 0usize;
            let mut v_edges = 0usize;
            for y in y0..y0 + BLOCK {
                for x in x0..x0 + BLOCK {
                    filled += occ.get(y, x) as usize;
                    if x + 1 < x0 + BLOCK && occ.get(y, x) != occ.get(y, x + 1) {
                        h_edges += 1;
                    }
                    if y + 1 < y0 + BLOCK && occ.get(y, x) != occ.get(y + 1, x) {
                        v_edges += 1;
                    }
                }
            }
            map.set(0, gy, gx, filled as f64 / norm);
            map.set(1, gy, gx, h_edges as f64 / norm);
            map.set(2, gy, gx, v_edges as f64 / norm);
            let region = match Region::of_row(y0) {
                Region::Sky => 0.0,
                Region::Ground => 1.0,
            };
            map.set(3, gy, gx, region);
        }
    }
    map
}

/// Both backbones at once: (color, structure).
pub fn encode_backbones(scene: &Scene) -> (FeatureMap, FeatureMap) {
    (encode_color(scene), encode_structure(scene))
}
