//! Mask and box losses with analytic gradients.
//!
//! Mask-supervised phrases pay a dice term plus a down-weighted pixel BCE
//! term against the merged prediction. Box-supervised phrases pay a
//! projection loss instead: the predicted mask is collapsed to per-column
//! and per-row max profiles and each profile is scored with a 1D dice
//! against the box indicator, so a box alone can supervise a mask without
//! dictating its interior. Every `*_grad` function accumulates
//! `scale * dL/dpred` into the caller's buffer and returns the loss value.

use serde::{Deserialize, Serialize};

use crate::mask::{BoundingBox, SoftMask};

/// Smoothing constant in both the 2D and 1D dice ratios.
pub const DICE_EPS: f64 = 1e-6;

/// Predictions are clamped to `[BCE_DELTA, 1 - BCE_DELTA]` inside the BCE
/// logs; pixels outside the clamp receive zero gradient.
pub const BCE_DELTA: f64 = 1e-7;

/// Relative weights of the loss components in the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
    pub projection: f64,
    pub lm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dice: 1.0, bce: 0.1, projection: 1.0, lm: 1.0 }
    }
}

/// Per-component loss means over one batch. Components with no
/// contributing phrases (or tokens) report zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub dice: f64,
    pub bce: f64,
    pub projection: f64,
    pub lm: f64,
}

impl LossBundle {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.dice * self.dice + w.bce * self.bce + w.projection * self.projection + w.lm * self.lm
    }
}

/// `1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps)`. Zero for a perfect
/// binary match, including the all-empty case.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    for (&p, &g) in pred.iter().zip(target) {
        inter += p * g;
        psum += p;
        gsum += g;
    }
    1.0 - (2.0 * inter + DICE_EPS) / (psum + gsum + DICE_EPS)
}

/// Dice loss plus gradient accumulation: `dpred += scale * dL/dpred`.
pub fn dice_loss_grad(pred: &[f64], target: &[f64], scale: f64, dpred: &mut [f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    for (&p, &g) in pred.iter().zip(target) {
        inter += p * g;
        psum += p;
        gsum += g;
    }
    let n = 2.0 * inter + DICE_EPS;
    let d = psum + gsum + DICE_EPS;
    for (dp, &g) in dpred.iter_mut().zip(target) {
        *dp += scale * (n - 2.0 * g * d) / (d * d);
    }
    1.0 - n / d
}

/// Mean binary cross-entropy with clamped predictions.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut sum = 0.0;
    for (&p, &g) in pred.iter().zip(target) {
        let p = p.clamp(BCE_DELTA, 1.0 - BCE_DELTA);
        sum -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
    }
    sum / n
}

/// BCE loss plus gradient accumulation. Pixels whose raw prediction lies
/// outside the clamp interval contribute loss but no gradient.
pub fn bce_loss_grad(pred: &[f64], target: &[f64], scale: f64, dpred: &mut [f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut sum = 0.0;
    for ((&p, &g), dp) in pred.iter().zip(target).zip(dpred.iter_mut()) {
        let pc = p.clamp(BCE_DELTA, 1.0 - BCE_DELTA);
        sum -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
        if (BCE_DELTA..=1.0 - BCE_DELTA).contains(&p) {
            *dp += scale * (-g / pc + (1.0 - g) / (1.0 - pc)) / n;
        }
    }
    sum / n
}

fn dice_1d(profile: &[f64], indicator: &[f64]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    for (&p, &g) in profile.iter().zip(indicator) {
        inter += p * g;
        psum += p;
        gsum += g;
    }
    let n = 2.0 * inter + DICE_EPS;
    let d = psum + gsum + DICE_EPS;
    (1.0 - n / d, n, d)
}

fn box_profiles(pred: &SoftMask, gt: &BoundingBox) -> (Vec<f64>, Vec<usize>, Vec<f64>, Vec<f64>, Vec<usize>, Vec<f64>) {
    let (h, w) = (pred.height, pred.width);
    // per-column max over rows, remembering the first row attaining it
    let mut col_max = vec![f64::NEG_INFINITY; w];
    let mut col_arg = vec![0usize; w];
    for y in 0..h {
        for x in 0..w {
            let v = pred.get(y, x);
            if v > col_max[x] {
                col_max[x] = v;
                col_arg[x] = y;
            }
        }
    }
    let col_ind: Vec<f64> = (0..w)
        .map(|x| if x >= gt.x0 && x < gt.x1.min(w) { 1.0 } else { 0.0 })
        .collect();
    // per-row max over columns, remembering the first column attaining it
    let mut row_max = vec![f64::NEG_INFINITY; h];
    let mut row_arg = vec![0usize; h];
    for y in 0..h {
        for x in 0..w {
            let v = pred.get(y, x);
            if v > row_max[y] {
                row_max[y] = v;
                row_arg[y] = x;
            }
        }
    }
    let row_ind: Vec<f64> = (0..h)
        .map(|y| if y >= gt.y0 && y < gt.y1.min(h) { 1.0 } else { 0.0 })
        .collect();
    (col_max, col_arg, col_ind, row_max, row_arg, row_ind)
}

/// Box projection loss: mean of the 1D dice losses between the predicted
/// mask's per-column / per-row max profiles and the box indicator
/// profiles.
pub fn projection_loss(pred: &SoftMask, gt: &BoundingBox) -> f64 {
    let (col_max, _, col_ind, row_max, _, row_ind) = box_profiles(pred, gt);
    let (lx, _, _) = dice_1d(&col_max, &col_ind);
    let (ly, _, _) = dice_1d(&row_max, &row_ind);
    0.5 * (lx + ly)
}

/// Projection loss plus gradient accumulation. The max in each profile is
/// given the subgradient of its first maximal pixel in scan order.
pub fn projection_loss_grad(
    pred: &SoftMask,
    gt: &BoundingBox,
    scale: f64,
    dpred: &mut [f64],
) -> f64 {
    let (col_max, col_arg, col_ind, row_max, row_arg, row_ind) = box_profiles(pred, gt);
    let (lx, nx, dx) = dice_1d(&col_max, &col_ind);
    let (ly, ny, dy) = dice_1d(&row_max, &row_ind);
    let w = pred.width;
    for x in 0..w {
        let dprofile = (nx - 2.0 * col_ind[x] * dx) / (dx * dx);
        dpred[col_arg[x] * w + x] += scale * 0.5 * dprofile;
    }
    for y in 0..pred.height {
        let dprofile = (ny - 2.0 * row_ind[y] * dy) / (dy * dy);
        dpred[y * w + row_arg[y]] += scale * 0.5 * dprofile;
    }
    0.5 * (lx + ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_perfect_and_disjoint() {
        let t = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(dice_loss(&t, &t), 0.0);
        let flipped = [0.0, 1.0, 0.0, 1.0];
        // 1 - eps / (4 + eps)
        let expect = 1.0 - DICE_EPS / (4.0 + DICE_EPS);
        assert!((dice_loss(&flipped, &t) - expect).abs() < 1e-12);
    }

    #[test]
    fn dice_all_empty_is_zero() {
        let z = [0.0; 4];
        assert_eq!(dice_loss(&z, &z), 0.0);
    }

    #[test]
    fn dice_half_overlap_value() {
        // pred = {a}, target = {a, b}: 1 - (2 + eps)/(3 + eps)
        let pred = [1.0, 0.0];
        let target = [1.0, 1.0];
        let expect = 1.0 - (2.0 + DICE_EPS) / (3.0 + DICE_EPS);
        assert!((dice_loss(&pred, &target) - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_reference_values() {
        let half = [0.5, 0.5];
        let t = [1.0, 0.0];
        assert!((bce_loss(&half, &t) - std::f64::consts::LN_2).abs() < 1e-12);

        // fully wrong saturated prediction hits the clamp
        let wrong = [0.0];
        let one = [1.0];
        assert!((bce_loss(&wrong, &one) - (-(BCE_DELTA.ln()))).abs() < 1e-9);
    }

    #[test]
    fn bce_grad_is_zero_outside_clamp() {
        let pred = [0.0, 1.0, 0.5];
        let t = [1.0, 0.0, 1.0];
        let mut g = [0.0; 3];
        bce_loss_grad(&pred, &t, 1.0, &mut g);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        // interior pixel: (-1/0.5)/3
        assert!((g[2] + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dice_grad_matches_finite_difference() {
        let pred = [0.2, 0.7, 0.05, 0.9];
        let target = [0.0, 1.0, 0.0, 1.0];
        let mut g = [0.0; 4];
        dice_loss_grad(&pred, &target, 1.0, &mut g);
        let eps = 1e-7;
        for i in 0..4 {
            let mut p = pred;
            p[i] += eps;
            let up = dice_loss(&p, &target);
            p[i] -= 2.0 * eps;
            let down = dice_loss(&p, &target);
            let fd = (up - down) / (2.0 * eps);
            assert!((g[i] - fd).abs() < 1e-6, "i={i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn bce_grad_matches_finite_difference() {
        let pred = [0.2, 0.7, 0.05, 0.9];
        let target = [0.0, 1.0, 0.0, 1.0];
        let mut g = [0.0; 4];
        bce_loss_grad(&pred, &target, 1.0, &mut g);
        let eps = 1e-7;
        for i in 0..4 {
            let mut p = pred;
            p[i] += eps;
            let up = bce_loss(&p, &target);
            p[i] -= 2.0 * eps;
            let down = bce_loss(&p, &target);
            let fd = (up - down) / (2.0 * eps);
            assert!((g[i] - fd).abs() < 1e-5, "i={i}: {} vs {fd}", g[i]);
        }
    }

    fn soft(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> SoftMask {
        let mut probs = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                probs.push(f(y, x));
            }
        }
        SoftMask::new(h, w, probs).unwrap()
    }

    #[test]
    fn projection_zero_for_exact_box() {
        let b = BoundingBox::new(1, 1, 3, 4).unwrap();
        let pred = soft(4, 4, |y, x| if x >= 1 && x < 3 && y >= 1 { 1.0 } else { 0.0 });
        assert!(projection_loss(&pred, &b) < 1e-6);
    }

    #[test]
    fn projection_half_box_value() {
        // box covers columns 0..4, rows 0..2 of a 2x4 raster; prediction
        // fills only columns 0..2. column profile: [1,1,0,0] vs [1,1,1,1]
        // -> 1 - (4+eps)/(6+eps); row profile exact -> ~0.
        let b = BoundingBox::new(0, 0, 4, 2).unwrap();
        let pred = soft(2, 4, |_, x| if x < 2 { 1.0 } else { 0.0 });
        let lx = 1.0 - (4.0 + DICE_EPS) / (6.0 + DICE_EPS);
        let got = projection_loss(&pred, &b);
        assert!((got - 0.5 * lx).abs() < 1e-9, "{got}");
    }

    #[test]
    fn projection_grad_matches_finite_difference() {
        let b = BoundingBox::new(1, 0, 3, 2).unwrap();
        // distinct values so the max is unique everywhere
        let pred = soft(3, 3, |y, x| 0.05 + 0.07 * (y * 3 + x) as f64);
        let mut g = vec![0.0; 9];
        projection_loss_grad(&pred, &b, 1.0, &mut g);
        let eps = 1e-7;
        for i in 0..9 {
            let mut p = pred.clone();
            p.probs[i] += eps;
            let up = projection_loss(&p, &b);
            p.probs[i] -= 2.0 * eps;
            let down = projection_loss(&p, &b);
            let fd = (up - down) / (2.0 * eps);
            assert!((g[i] - fd).abs() < 1e-5, "i={i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn projection_ties_route_to_first_pixel() {
        // single column with equal maxima at rows 0 and 2: the column
        // profile subgradient must land on row 0 only. The per-row profile
        // gradient is identical across rows (the indicator covers all
        // three), so rows 1 and 2 end up equal and row 0 strictly lower.
        let b = BoundingBox::new(0, 0, 1, 3).unwrap();
        let pred = soft(3, 1, |y, _| if y == 1 { 0.2 } else { 0.8 });
        let mut g = vec![0.0; 3];
        projection_loss_grad(&pred, &b, 1.0, &mut g);
        assert_eq!(g[1], g[2]);
        assert!(g[0] < g[1]);
    }
}
