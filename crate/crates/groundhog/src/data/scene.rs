//! Synthetic grounded scenes.
//!
//! A scene is a 32x32 raster split into a sky band (rows 0..16) and a
//! ground band (rows 16..32), populated with colored shapes that never
//! overlap. Each entity carries its own binary mask, attributes (color,
//! shape, region), and optionally part masks (a triangle's tip). Scenes
//! are generated deterministically from a seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::seeds;

pub const SCENE_H: usize = 32;
pub const SCENE_W: usize = 32;
/// Rows strictly below this are sky; the rest is ground.
pub const SKY_END_ROW: usize = 16;
/// Feature grids are 8x8: one cell per 4x4 pixel block.
pub const GRID_H: usize = 8;
pub const GRID_W: usize = 8;
pub const BLOCK: usize = 4;

pub const COLOR_NAMES: [&str; 8] =
    ["red", "green", "blue", "yellow", "purple", "orange", "cyan", "pink"];
/// Background color id of the sky band.
pub const SKY_COLOR: usize = 2;
/// Background color id of the ground band.
pub const GROUND_COLOR: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Disc,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Disc, Shape::Triangle];

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Disc => "disc",
            Shape::Triangle => "triangle",
        }
    }

    pub fn plural(&self) -> &'static str {
        match self {
            Shape::Square => "squares",
            Shape::Disc => "discs",
            Shape::Triangle => "triangles",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Sky,
    Ground,
}

impl Region {
    pub const ALL: [Region; 2] = [Region::Sky, Region::Ground];

    /// The rows this band covers.
    pub fn rows(&self) -> std::ops::Range<usize> {
        match self {
            Region::Sky => 0..SKY_END_ROW,
            Region::Ground => SKY_END_ROW..SCENE_H,
        }
    }

    pub fn of_row(y: usize) -> Region {
        if y < SKY_END_ROW {
            Region::Sky
        } else {
            Region::Ground
        }
    }

    /// The locative phrase used in conversation text.
    pub fn phrase(&self) -> &'static str {
        match self {
            Region::Sky => "in the sky",
            Region::Ground => "on the ground",
        }
    }
}

/// A named sub-mask of an entity, strictly contained in the parent mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartMask {
    pub name: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Entity {
    pub mask: BinaryMask,
    pub color: usize,
    pub shape: Shape,
    pub region: Region,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<PartMask>,
}

impl Entity {
    pub fn color_name(&self) -> &'static str {
        COLOR_NAMES[self.color]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub h: usize,
    pub w: usize,
    pub entities: Vec<Entity>,
}

impl Scene {
    /// Per-pixel color ids: band background overpainted by entities.
    pub fn color_raster(&self) -> Vec<usize> {
        let mut colors = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            let bg = match Region::of_row(y) {
                Region::Sky => SKY_COLOR,
                Region::Ground => GROUND_COLOR,
            };
            colors.extend(std::iter::repeat(bg).take(self.w));
        }
        for e in &self.entities {
            for (i, &set) in e.mask.bits.iter().enumerate() {
                if set {
                    colors[i] = e.color;
                }
            }
        }
        colors
    }

    /// Union of all entity masks.
    pub fn occupancy(&self) -> BinaryMask {
        let mut occ = BinaryMask::empty(self.h, self.w);
        for e in &self.entities {
            occ.union_with(&e.mask).expect("entity masks share scene dims");
        }
        occ
    }

    /// (color, shape) pairs present in the scene.
    pub fn present_pairs(&self) -> Vec<(usize, Shape)> {
        self.entities.iter().map(|e| (e.color, e.shape)).collect()
    }

    /// (color, shape) pairs NOT present, in a fixed scan order.
    pub fn absent_pairs(&self) -> Vec<(usize, Shape)> {
        let present = self.present_pairs();
        let mut out = Vec::new();
        for color in 0..COLOR_NAMES.len() {
            for shape in Shape::ALL {
                if !present.contains(&(color, shape)) {
                    out.push((color, shape));
                }
            }
        }
        out
    }

    /// Structural invariants: masks in-band, non-empty, pairwise disjoint,
    /// parts strictly inside their parent.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BinaryMask::empty(self.h, self.w);
        for (i, e) in self.entities.iter().enumerate() {
            if e.mask.height != self.h || e.mask.width != self.w {
                return Err(Error::DimensionMismatch(format!(
                    "entity {i} mask {}x{} in {}x{} scene",
                    e.mask.height, e.mask.width, self.h, self.w
                )));
            }
            if e.mask.is_empty() {
                return Err(Error::EmptyMask(format!("entity {i} has an empty mask")));
            }
            for (p, &set) in e.mask.bits.iter().enumerate() {
                if set {
                    if seen.bits[p] {
                        return Err(Error::InvalidArgument(format!(
                            "entity {i} overlaps a previous entity at pixel {p}"
                        )));
                    }
                    if Region::of_row(p / self.w) != e.region {
                        return Err(Error::InvalidArgument(format!(
                            "entity {i} leaves its {:?} band",
                            e.region
                        )));
                    }
                }
            }
            seen.union_with(&e.mask)?;
            for part in &e.parts {
                if part.mask.is_empty() || !part.mask.subset_of(&e.mask) {
                    return Err(Error::InvalidArgument(format!(
                        "part {:?} of entity {i} is not a non-empty subset of its parent",
                        part.name
                    )));
                }
                if part.mask.area() == e.mask.area() {
                    return Err(Error::InvalidArgument(format!(
                        "part {:?} of entity {i} equals the whole entity",
                        part.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_entities: usize,
    /// Give triangles a "tip" part mask.
    pub allow_parts: bool,
    /// Permit conversations about absent attribute combinations.
    pub allow_negatives: bool,
    /// Force entities 0 and 1 to share (color, shape) across the two
    /// regions, for two-target referring expressions. All other pairs stay
    /// unique, so (color, shape, region) is unique throughout.
    pub duplicate_pair: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { n_entities: 3, allow_parts: false, allow_negatives: true, duplicate_pair: false }
    }
}

fn shape_mask(shape: Shape, size: usize, top: usize, left: usize) -> BinaryMask {
    let mut m = BinaryMask::empty(SCENE_H, SCENE_W);
    match shape {
        Shape::Square => {
            for y in top..top + size {
                for x in left..left + size {
                    m.set(y, x, true);
                }
            }
        }
        Shape::Disc => {
            // size is the diameter; the disc lives in a size x size box
            let r = (size as f64 - 1.0) / 2.0;
            let (cy, cx) = (top as f64 + r, left as f64 + r);
            for y in top..top + size {
                for x in left..left + size {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    if dy * dy + dx * dx <= r * r + 0.5 {
                        m.set(y, x, true);
                    }
                }
            }
        }
        Shape::Triangle => {
            // apex at the top, row i spans i+1 pixels, base width = size
            for i in 0..size {
                let x0 = left + (size - 1 - i) / 2;
                for x in x0..x0 + i + 1 {
                    m.set(top + i, x, true);
                }
            }
        }
    }
    m
}

fn triangle_tip(size: usize, top: usize, left: usize) -> BinaryMask {
    let mut m = BinaryMask::empty(SCENE_H, SCENE_W);
    let tip_rows = size.div_ceil(3);
    for i in 0..tip_rows {
        let x0 = left + (size - 1 - i) / 2;
        for x in x0..x0 + i + 1 {
            m.set(top + i, x, true);
        }
    }
    m
}

/// True when `m` dilated by one pixel stays disjoint from `occupied`.
fn fits(m: &BinaryMask, occupied: &BinaryMask) -> bool {
    for y in 0..SCENE_H {
        for x in 0..SCENE_W {
            if !m.get(y, x) {
                continue;
            }
            let y0 = y.saturating_sub(1);
            let x0 = x.saturating_sub(1);
            for yy in y0..=(y + 1).min(SCENE_H - 1) {
                for xx in x0..=(x + 1).min(SCENE_W - 1) {
                    if occupied.get(yy, xx) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Deterministic scene generation. Attribute combinations are unique per
/// scene (pairs, or triples under `duplicate_pair`); placement rejection
/// samples inside the region band with a one-pixel gap between entities.
pub fn gen_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene> {
    if cfg.n_entities == 0 {
        return Err(Error::InvalidArgument("a scene needs at least one entity".into()));
    }
    if cfg.duplicate_pair && cfg.n_entities < 2 {
        return Err(Error::InvalidArgument(
            "duplicate_pair needs at least two entities".into(),
        ));
    }
    let max_unique = COLOR_NAMES.len() * Shape::ALL.len();
    if cfg.n_entities > 6 || cfg.n_entities > max_unique {
        return Err(Error::InvalidArgument(format!(
            "cannot place {} entities",
            cfg.n_entities
        )));
    }

    let mut attr_rng = seeds::rng(seed, "scene/attrs");
    let mut place_rng = seeds::rng(seed, "scene/place");

    // attribute draw: unique (color, shape) pairs, except the optional
    // duplicated leading pair which is split across regions
    let mut used_pairs: Vec<(usize, Shape)> = Vec::new();
    let mut attrs: Vec<(usize, Shape, Region)> = Vec::new();
    let draw_pair = |rng: &mut rand_chacha::ChaCha8Rng, used: &mut Vec<(usize, Shape)>| {
        loop {
            let color = rng.gen_range(0..COLOR_NAMES.len());
            let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
            if !used.contains(&(color, shape)) {
                used.push((color, shape));
                return (color, shape);
            }
        }
    };
    if cfg.duplicate_pair {
        let (color, shape) = draw_pair(&mut attr_rng, &mut used_pairs);
        attrs.push((color, shape, Region::Sky));
        attrs.push((color, shape, Region::Ground));
    }
    while attrs.len() < cfg.n_entities {
        let (color, shape) = draw_pair(&mut attr_rng, &mut used_pairs);
        let region = Region::ALL[attr_rng.gen_range(0..2)];
        attrs.push((color, shape, region));
    }

    // placement
    let mut occupied = BinaryMask::empty(SCENE_H, SCENE_W);
    let mut entities = Vec::with_capacity(cfg.n_entities);
    for (color, shape, region) in attrs {
        let mut placed = false;
        for _ in 0..200 {
            let size = match shape {
                Shape::Square => place_rng.gen_range(5..=8),
                Shape::Disc => place_rng.gen_range(7..=9),
                Shape::Triangle => place_rng.gen_range(6..=8),
            };
            let rows = region.rows();
            let top = place_rng.gen_range(rows.start..=rows.end - size);
            let left = place_rng.gen_range(0..=SCENE_W - size);
            let mask = shape_mask(shape, size, top, left);
            if fits(&mask, &occupied) {
                occupied.union_with(&mask)?;
                let parts = if cfg.allow_parts && shape == Shape::Triangle {
                    vec![PartMask { name: "tip".into(), mask: triangle_tip(size, top, left) }]
                } else {
                    Vec::new()
                };
                entities.push(Entity { mask, color, shape, region, parts });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!(
                "could not place a {} {} after 200 tries (seed {seed})",
                COLOR_NAMES[color],
                shape.name()
            )));
        }
    }

    let scene = Scene { h: SCENE_H, w: SCENE_W, entities };
    scene.validate()?;
    Ok(scene)
}
