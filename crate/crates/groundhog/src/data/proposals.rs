//! Entity mask proposals: the scene's ground-truth masks plus
//! deterministic distractors.
//!
//! Proposal order is fixed: every entity mask in entity order, then every
//! part mask in (entity, part) order, then distractors. Grounding never
//! sees this ordering contract, but tests and diagnosis rely on it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::scene::Scene;
use crate::error::Result;
use crate::mask::{mask_to_box, BinaryMask, ProposalSet, Provenance};
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    /// Max absolute pixel shift for shifted distractors; 0 disables them.
    pub shift_px: usize,
    /// Allow one-step dilated/eroded distractors.
    pub dilate: bool,
    /// Allow half-split distractors (proper subsets of their parent).
    pub split: bool,
    /// Total number of distractors to add.
    pub n_distractors: usize,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self { shift_px: 2, dilate: true, split: true, n_distractors: 4 }
    }
}

impl PerturbSpec {
    /// No distractors at all: proposals are exactly the GT masks.
    pub fn disabled() -> Self {
        Self { shift_px: 0, dilate: false, split: false, n_distractors: 0 }
    }
}

fn translate(m: &BinaryMask, dy: isize, dx: isize) -> BinaryMask {
    let mut out = BinaryMask::empty(m.height, m.width);
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.get(y, x) {
                continue;
            }
            let (ny, nx) = (y as isize + dy, x as isize + dx);
            if ny >= 0 && nx >= 0 && (ny as usize) < m.height && (nx as usize) < m.width {
                out.set(ny as usize, nx as usize, true);
            }
        }
    }
    out
}

fn dilate(m: &BinaryMask) -> BinaryMask {
    let mut out = m.clone();
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.get(y, x) {
                continue;
            }
            if y > 0 {
                out.set(y - 1, x, true);
            }
            if y + 1 < m.height {
                out.set(y + 1, x, true);
            }
            if x > 0 {
                out.set(y, x - 1, true);
            }
            if x + 1 < m.width {
                out.set(y, x + 1, true);
            }
        }
    }
    out
}

fn erode(m: &BinaryMask) -> BinaryMask {
    let mut out = BinaryMask::empty(m.height, m.width);
    for y in 0..m.height {
        for x in 0..m.width {
            let interior = m.get(y, x)
                && y > 0
                && y + 1 < m.height
                && x > 0
                && x + 1 < m.width
                && m.get(y - 1, x)
                && m.get(y + 1, x)
                && m.get(y, x - 1)
                && m.get(y, x + 1);
            if interior {
                out.set(y, x, true);
            }
        }
    }
    out
}

/// Keep the left or top half of the parent's bounding box; always a
/// proper non-empty subset when the parent spans at least two columns or
/// rows in the split direction.
fn split_half(m: &BinaryMask, vertical: bool) -> Option<BinaryMask> {
    let b = mask_to_box(m).ok()?;
    let mut out = BinaryMask::empty(m.height, m.width);
    for y in 0..m.height {
        for x in 0..m.width {
            if !m.get(y, x) {
                continue;
            }
            let keep = if vertical { x < (b.x0 + b.x1) / 2 } else { y < (b.y0 + b.y1) / 2 };
            if keep {
                out.set(y, x, true);
            }
        }
    }
    if out.is_empty() || out.area() == m.area() {
        None
    } else {
        Some(out)
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Shift,
    DilateErode,
    Split,
}

/// GT masks (entities, then parts) plus `spec.n_distractors` seeded
/// distractors cycling over the GT masks.
pub fn gen_proposals(scene: &Scene, spec: &PerturbSpec, seed: u64) -> Result<ProposalSet> {
    let mut masks: Vec<BinaryMask> = Vec::new();
    for e in &scene.entities {
        masks.push(e.mask.clone());
    }
    for e in &scene.entities {
        for p in &e.parts {
            masks.push(p.mask.clone());
        }
    }
    let n_oracle = masks.len();
    let mut provenance = vec![Provenance::Oracle; n_oracle];

    let mut kinds = Vec::new();
    if spec.shift_px > 0 {
        kinds.push(Kind::Shift);
    }
    if spec.dilate {
        kinds.push(Kind::DilateErode);
    }
    if spec.split {
        kinds.push(Kind::Split);
    }

    let mut rng = seeds::rng(seed, "distractors");
    if !kinds.is_empty() {
        for i in 0..spec.n_distractors {
            let base = &masks[i % n_oracle];
            let kind = kinds[rng.gen_range(0..kinds.len())];
            let d = match kind {
                Kind::Shift => {
                    let s = spec.shift_px as isize;
                    let mut shifted = None;
                    for _ in 0..16 {
                        let dy = rng.gen_range(-s..=s);
                        let dx = rng.gen_range(-s..=s);
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let t = translate(base, dy, dx);
                        if !t.is_empty() {
                            shifted = Some(t);
                            break;
                        }
                    }
                    shifted.unwrap_or_else(|| dilate(base))
                }
                Kind::DilateErode => {
                    if rng.gen_bool(0.5) {
                        dilate(base)
                    } else {
                        let e = erode(base);
                        if e.is_empty() {
                            dilate(base)
                        } else {
                            e
                        }
                    }
                }
                Kind::Split => {
                    let vertical = rng.gen_bool(0.5);
                    split_half(base, vertical)
                        .or_else(|| split_half(base, !vertical))
                        .unwrap_or_else(|| dilate(base))
                }
            };
            masks.push(d);
            provenance.push(Provenance::Distractor);
        }
    }

    ProposalSet::new(masks.iter().map(|m| m.to_soft()).collect(), provenance)
}
