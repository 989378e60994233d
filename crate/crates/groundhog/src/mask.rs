//! Raster mask and box algebra.
//!
//! Everything in this module is a pure function on immutable values: IoU,
//! bounding boxes, block resizing, the pixel-wise max merge of scored
//! proposals, RLE serialization, and pointer-to-proposal matching. All
//! rasters are row-major. Boxes are half-open: `[x0, x1) x [y0, y1)` in
//! pixel coordinates, `x` along columns and `y` along rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary raster, row-major, `bits.len() == height * width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

/// Probability raster, row-major, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f64>,
}

/// Half-open pixel box: covers columns `x0..x1` and rows `y0..y1`.
/// Serializes as the array `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[usize; 4]>::deserialize(d)?;
        BoundingBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
    }
}

/// Run-length encoded binary raster. Runs alternate over the row-major
/// scan and the first run counts zeros; it may itself be zero only when
/// the raster starts with a set pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub h: usize,
    pub w: usize,
    pub runs: Vec<usize>,
}

impl Serialize for BinaryMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        rle_encode(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rle = RleMask::deserialize(d)?;
        rle_decode(&rle).map_err(serde::de::Error::custom)
    }
}

/// Where a proposal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Oracle,
    Distractor,
}

/// An ordered set of entity mask proposals, all sharing one raster size.
#[derive(Debug, Clone)]
pub struct ProposalSet {
    masks: Vec<SoftMask>,
    provenance: Vec<Provenance>,
}

/// A spatial prompt: either a box or a binary mask.
#[derive(Debug, Clone)]
pub enum Pointer {
    Box(BoundingBox),
    Mask(BinaryMask),
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask bits length {} != {height}x{width}",
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    /// Set-pixel count.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    /// View as probabilities 0.0 / 1.0.
    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            probs: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Pixel-wise union, in place.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        check_dims(self.height, self.width, other.height, other.width)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// True when every set pixel of `self` is set in `other`.
    pub fn subset_of(&self, other: &BinaryMask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

impl SoftMask {
    pub fn new(height: usize, width: usize, probs: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if probs.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "mask probs length {} != {height}x{width}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "mask probability {p} outside [0,1]"
            )));
        }
        Ok(Self { height, width, probs })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, probs: vec![0.0; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.width + col]
    }

    /// Pixel set iff probability strictly exceeds `tau`.
    pub fn binarize(&self, tau: f64) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.probs.iter().map(|&p| p > tau).collect(),
        }
    }
}

/// Default binarization threshold.
pub const BINARIZE_TAU: f64 = 0.5;

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidArgument(format!(
                "degenerate box [{x0},{y0},{x1},{y1}]"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Fill the box on a fresh raster.
    pub fn rasterize(&self, height: usize, width: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(height, width);
        for y in self.y0..self.y1.min(height) {
            for x in self.x0..self.x1.min(width) {
                m.set(y, x, true);
            }
        }
        m
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

impl ProposalSet {
    pub fn new(masks: Vec<SoftMask>, provenance: Vec<Provenance>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::InvalidArgument("empty proposal set".into()));
        }
        if masks.len() != provenance.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} proposals but {} provenance tags",
                masks.len(),
                provenance.len()
            )));
        }
        let (h, w) = (masks[0].height, masks[0].width);
        for m in &masks[1..] {
            check_dims(h, w, m.height, m.width)?;
        }
        Ok(Self { masks, provenance })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn height(&self) -> usize {
        self.masks[0].height
    }

    pub fn width(&self) -> usize {
        self.masks[0].width
    }

    pub fn mask(&self, q: usize) -> &SoftMask {
        &self.masks[q]
    }

    pub fn masks(&self) -> &[SoftMask] {
        &self.masks
    }

    pub fn provenance(&self, q: usize) -> Provenance {
        self.provenance[q]
    }
}

/// Wire form of a proposal set: binary RLE masks plus provenance tags.
/// Serializing binarizes each proposal at [`BINARIZE_TAU`]; generator
/// output is already 0/1-valued, so its round trip is exact.
#[derive(Serialize, Deserialize)]
struct ProposalSetWire {
    masks: Vec<BinaryMask>,
    provenance: Vec<Provenance>,
}

impl Serialize for ProposalSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = ProposalSetWire {
            masks: self.masks.iter().map(|m| m.binarize(BINARIZE_TAU)).collect(),
            provenance: self.provenance.clone(),
        };
        wire.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProposalSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = ProposalSetWire::deserialize(d)?;
        ProposalSet::new(wire.masks.iter().map(|m| m.to_soft()).collect(), wire.provenance)
            .map_err(serde::de::Error::custom)
    }
}

fn check_dims(h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if h != oh || w != ow {
        return Err(Error::DimensionMismatch(format!(
            "{h}x{w} vs {oh}x{ow}"
        )));
    }
    Ok(())
}

/// Mask IoU. Both masks empty counts as a perfect match (IoU 1); this is
/// what makes correctly-empty no-target predictions score 1 under mIoU.
pub fn iou_mask(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a.height, a.width, b.height, b.width)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Box IoU under half-open semantics.
pub fn iou_box(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0));
    let iy = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0));
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Tightest half-open bounding box of the set pixels.
pub fn mask_to_box(m: &BinaryMask) -> Result<BoundingBox> {
    let mut min_x = usize::MAX;
    let mut min_y = usize::MAX;
    let mut max_x = 0usize;
    let mut max_y = 0usize;
    let mut any = false;
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(y, x) {
                any = true;
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
    }
    if !any {
        return Err(Error::EmptyMask("mask_to_box on an empty mask".into()));
    }
    Ok(BoundingBox { x0: min_x, y0: min_y, x1: max_x + 1, y1: max_y + 1 })
}

/// Downsample by integer-block area averaging to a `gh x gw` grid.
/// `height` and `width` must be divisible by `gh` and `gw`.
pub fn resize_mask(m: &BinaryMask, gh: usize, gw: usize) -> Result<SoftMask> {
    resize_soft(&m.to_soft(), gh, gw)
}

/// Block-mean downsampling of a probability raster; same divisor rule as
/// [`resize_mask`].
pub fn resize_soft(m: &SoftMask, gh: usize, gw: usize) -> Result<SoftMask> {
    if gh == 0 || gw == 0 || gh > m.height || gw > m.width || m.height % gh != 0 || m.width % gw != 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot block-resize {}x{} to {gh}x{gw}",
            m.height, m.width
        )));
    }
    let bh = m.height / gh;
    let bw = m.width / gw;
    let block = (bh * bw) as f64;
    let mut probs = Vec::with_capacity(gh * gw);
    for gy in 0..gh {
        for gx in 0..gw {
            let mut sum = 0.0;
            for y in gy * bh..(gy + 1) * bh {
                for x in gx * bw..(gx + 1) * bw {
                    sum += m.get(y, x);
                }
            }
            probs.push(sum / block);
        }
    }
    Ok(SoftMask { height: gh, width: gw, probs })
}

/// Pixel-wise max merge of scored proposals:
/// `out(h,w) = max_q scores[q] * proposals[q](h,w)`.
pub fn merge_proposals(scores: &[f64], proposals: &ProposalSet) -> Result<SoftMask> {
    if scores.len() != proposals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} proposals",
            scores.len(),
            proposals.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidArgument(format!("score {s} outside [0,1]")));
    }
    let mut out = SoftMask::zeros(proposals.height(), proposals.width());
    for (q, mask) in proposals.masks.iter().enumerate() {
        let s = scores[q];
        for (o, &p) in out.probs.iter_mut().zip(&mask.probs) {
            let v = s * p;
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}

/// For each pixel of the merged mask, which proposal attains the max.
/// Ties go to the lowest index. Pixels where every product is zero
/// report the lowest index as well (the gradient there is zero anyway).
pub fn merge_argmax(scores: &[f64], proposals: &ProposalSet) -> Result<Vec<usize>> {
    if scores.len() != proposals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} proposals",
            scores.len(),
            proposals.len()
        )));
    }
    let n = proposals.height() * proposals.width();
    let mut best = vec![0usize; n];
    let mut best_val = vec![f64::NEG_INFINITY; n];
    for (q, mask) in proposals.masks.iter().enumerate() {
        let s = scores[q];
        for (i, &p) in mask.probs.iter().enumerate() {
            let v = s * p;
            if v > best_val[i] {
                best_val[i] = v;
                best[i] = q;
            }
        }
    }
    Ok(best)
}

/// Index of the proposal with maximal IoU against the pointer; proposals
/// are binarized at 0.5 and box pointers are rasterized first. Ties break
/// to the lowest index.
pub fn best_match(pointer: &Pointer, proposals: &ProposalSet) -> Result<usize> {
    if proposals.is_empty() {
        return Err(Error::InvalidArgument("empty proposal set".into()));
    }
    let raster = match pointer {
        Pointer::Mask(m) => m.clone(),
        Pointer::Box(b) => b.rasterize(proposals.height(), proposals.width()),
    };
    let mut best = 0usize;
    let mut best_iou = f64::NEG_INFINITY;
    for (q, mask) in proposals.masks.iter().enumerate() {
        let iou = iou_mask(&raster, &mask.binarize(BINARIZE_TAU))?;
        if iou > best_iou {
            best_iou = iou;
            best = q;
        }
    }
    Ok(best)
}

/// Canonical RLE encoding: first run counts zeros, no zero-length interior
/// runs (a leading zero appears only when the raster starts with a one).
pub fn rle_encode(m: &BinaryMask) -> RleMask {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &b in &m.bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    RleMask { h: m.height, w: m.width, runs }
}

/// Decode an RLE raster; fails when the run sum disagrees with `h*w`.
pub fn rle_decode(r: &RleMask) -> Result<BinaryMask> {
    let total: usize = r.runs.iter().sum();
    if total != r.h * r.w {
        return Err(Error::Schema(format!(
            "rle run sum {total} != {}x{}",
            r.h, r.w
        )));
    }
    let mut bits = Vec::with_capacity(total);
    let mut value = false;
    for &run in &r.runs {
        bits.extend(std::iter::repeat(value).take(run));
        value = !value;
    }
    BinaryMask::new(r.h, r.w, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, set: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for &(r, c) in set {
            m.set(r, c, true);
        }
        m
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = mask(3, 3, &[(0, 0), (1, 1)]);
        assert_eq!(iou_mask(&a, &a).unwrap(), 1.0);
        let b = mask(3, 3, &[(2, 2)]);
        assert_eq!(iou_mask(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // Derived by pixel enumeration: |a n b| = 1, |a u b| = 3.
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(0, 1), (1, 1)]);
        assert!((iou_mask(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_both_empty_is_one() {
        let a = BinaryMask::empty(2, 2);
        assert_eq!(iou_mask(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_dim_mismatch() {
        let a = BinaryMask::empty(2, 2);
        let b = BinaryMask::empty(2, 3);
        assert!(iou_mask(&a, &b).is_err());
    }

    #[test]
    fn box_iou_cases() {
        let a = BoundingBox::new(0, 0, 2, 2).unwrap();
        assert_eq!(iou_box(&a, &a), 1.0);
        let b = BoundingBox::new(2, 2, 4, 4).unwrap();
        assert_eq!(iou_box(&a, &b), 0.0);
        // areas 4 and 4, intersection 1, union 7
        let c = BoundingBox::new(1, 1, 3, 3).unwrap();
        assert!((iou_box(&a, &c) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn mask_to_box_cases() {
        let single = mask(3, 4, &[(1, 2)]);
        assert_eq!(mask_to_box(&single).unwrap(), BoundingBox { x0: 2, y0: 1, x1: 3, y1: 2 });

        let full = BinaryMask::new(3, 4, vec![true; 12]).unwrap();
        assert_eq!(mask_to_box(&full).unwrap(), BoundingBox { x0: 0, y0: 0, x1: 4, y1: 3 });

        // min/max scan over {(0,0),(2,3)} on 4x4
        let two = mask(4, 4, &[(0, 0), (2, 3)]);
        assert_eq!(mask_to_box(&two).unwrap(), BoundingBox { x0: 0, y0: 0, x1: 4, y1: 3 });

        assert!(matches!(mask_to_box(&BinaryMask::empty(2, 2)), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn mask_to_box_is_tight() {
        let m = mask(5, 6, &[(1, 1), (3, 4), (2, 2)]);
        let b = mask_to_box(&m).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                if m.get(y, x) {
                    assert!(x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1);
                }
            }
        }
        // no tighter box: every edge touches a set pixel
        assert!((b.x0..b.x1).any(|x| m.get(b.y0, x)));
        assert!((b.x0..b.x1).any(|x| m.get(b.y1 - 1, x)));
        assert!((b.y0..b.y1).any(|y| m.get(y, b.x0)));
        assert!((b.y0..b.y1).any(|y| m.get(y, b.x1 - 1)));
    }

    #[test]
    fn resize_block_means() {
        let ones = BinaryMask::new(4, 4, vec![true; 16]).unwrap();
        let r = resize_mask(&ones, 2, 2).unwrap();
        assert_eq!(r.probs, vec![1.0; 4]);

        let mut top_left = BinaryMask::empty(4, 4);
        for y in 0..2 {
            for x in 0..2 {
                top_left.set(y, x, true);
            }
        }
        let r = resize_mask(&top_left, 2, 2).unwrap();
        assert_eq!(r.probs, vec![1.0, 0.0, 0.0, 0.0]);

        // half-set block -> 0.5
        let half = mask(2, 2, &[(0, 0), (0, 1)]);
        let r = resize_mask(&half, 1, 1).unwrap();
        assert_eq!(r.probs, vec![0.5]);

        assert!(resize_mask(&ones, 3, 2).is_err());
    }

    #[test]
    fn resize_preserves_mean() {
        let m = mask(4, 6, &[(0, 1), (1, 1), (2, 5), (3, 0), (3, 1)]);
        let r = resize_mask(&m, 2, 3).unwrap();
        let mean_in = m.area() as f64 / 24.0;
        let mean_out = r.probs.iter().sum::<f64>() / r.probs.len() as f64;
        assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn merge_cases() {
        let p1 = SoftMask::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let p2 = SoftMask::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let set = ProposalSet::new(vec![p1.clone(), p2], vec![Provenance::Oracle; 2]).unwrap();

        let merged = merge_proposals(&[0.8, 0.5], &set).unwrap();
        assert_eq!(merged.probs, vec![0.8, 0.5, 0.0, 0.0]);

        let single = ProposalSet::new(vec![p1.clone()], vec![Provenance::Oracle]).unwrap();
        assert_eq!(merge_proposals(&[1.0], &single).unwrap(), p1);

        let zeros = merge_proposals(&[0.0], &single).unwrap();
        assert!(zeros.probs.iter().all(|&p| p == 0.0));

        assert!(merge_proposals(&[0.5, 0.5], &single).is_err());
        assert!(merge_proposals(&[1.5], &single).is_err());
    }

    #[test]
    fn binarize_threshold_is_strict() {
        let m = SoftMask::new(1, 3, vec![0.4, 0.5, 0.6]).unwrap();
        assert_eq!(m.binarize(0.5).bits, vec![false, false, true]);
        let zeros = SoftMask::zeros(2, 2);
        assert!(zeros.binarize(0.0).is_empty());
    }

    #[test]
    fn best_match_cases() {
        let gt = mask(8, 8, &[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let mut shifted = BinaryMask::empty(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                if y >= 2 && x >= 2 && gt.get(y - 2, x - 2) {
                    shifted.set(y, x, true);
                }
            }
        }
        let other = mask(8, 8, &[(6, 6)]);
        let set = ProposalSet::new(
            vec![other.to_soft(), shifted.to_soft(), gt.to_soft()],
            vec![Provenance::Distractor, Provenance::Distractor, Provenance::Oracle],
        )
        .unwrap();
        assert_eq!(best_match(&Pointer::Mask(gt.clone()), &set).unwrap(), 2);

        // tie between identical proposals -> lowest index
        let dup = ProposalSet::new(
            vec![gt.to_soft(), gt.to_soft()],
            vec![Provenance::Oracle, Provenance::Oracle],
        )
        .unwrap();
        assert_eq!(best_match(&Pointer::Mask(gt.clone()), &dup).unwrap(), 0);

        // box pointer rasterized before matching
        let b = mask_to_box(&gt).unwrap();
        assert_eq!(best_match(&Pointer::Box(b), &set).unwrap(), 2);
    }

    #[test]
    fn rle_known_values() {
        let empty = BinaryMask::empty(2, 2);
        assert_eq!(rle_encode(&empty).runs, vec![4]);
        let full = BinaryMask::new(2, 2, vec![true; 4]).unwrap();
        assert_eq!(rle_encode(&full).runs, vec![0, 4]);

        let bad = RleMask { h: 2, w: 2, runs: vec![1, 2] };
        assert!(rle_decode(&bad).is_err());
    }

    #[test]
    fn rle_json_shape() {
        let m = mask(2, 3, &[(0, 1), (0, 2), (1, 0)]);
        let json = serde_json::to_value(rle_encode(&m)).unwrap();
        assert_eq!(json, serde_json::json!({"h": 2, "w": 3, "runs": [1, 3, 2]}));
    }
}
