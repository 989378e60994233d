//! NetPBM P6 rendering of scenes, proposal overlays, and merged masks.

use std::path::Path;

use groundhog::data::scene::Scene;
use groundhog::mask::SoftMask;

use crate::CliError;

/// Fixed palette matching the scene color ids.
const PALETTE: [[u8; 3]; 8] = [
    [200, 40, 40],   // red
    [40, 160, 60],   // green
    [60, 90, 200],   // blue
    [220, 200, 40],  // yellow
    [150, 60, 180],  // purple
    [230, 140, 30],  // orange
    [40, 190, 190],  // cyan
    [240, 130, 180], // pink
];

pub const OVERLAY_GREEN: [u8; 3] = [0, 255, 0];
pub const OVERLAY_RED: [u8; 3] = [255, 0, 0];

/// Binary P6 bytes for an RGB raster.
pub fn p6_bytes(h: usize, w: usize, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), 3 * h * w);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Scene pixels in palette colors.
pub fn render_scene(scene: &Scene) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(3 * scene.h * scene.w);
    for color in scene.color_raster() {
        rgb.extend_from_slice(&PALETTE[color]);
    }
    rgb
}

/// Blend `tint` over the scene wherever the mask has mass; opacity
/// follows the mask probability (half strength at 1.0).
pub fn render_overlay(scene: &Scene, mask: &SoftMask, tint: [u8; 3]) -> Vec<u8> {
    let mut rgb = render_scene(scene);
    for (i, &p) in mask.probs.iter().enumerate() {
        let a = 0.5 * p;
        for c in 0..3 {
            let base = rgb[3 * i + c] as f64;
            rgb[3 * i + c] = (base * (1.0 - a) + tint[c] as f64 * a).round() as u8;
        }
    }
    rgb
}

/// Grayscale view of a probability raster.
pub fn render_gray(mask: &SoftMask) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(3 * mask.probs.len());
    for &p in &mask.probs {
        let v = (p * 255.0).round() as u8;
        rgb.extend_from_slice(&[v, v, v]);
    }
    rgb
}

pub fn write_p6(path: &Path, h: usize, w: usize, rgb: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, p6_bytes(h, w, rgb))
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
