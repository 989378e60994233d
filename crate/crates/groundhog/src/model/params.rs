//! Flat parameter storage with a fixed, documented enumeration order.
//!
//! All parameters live in one `Vec<f32>`; math runs on f64 snapshots and
//! gradients are accumulated in flat f64 vectors of the same length, so
//! finite-difference checks and the optimizer address parameters by flat
//! index. The enumeration order (stable across versions — checkpoints
//! depend on it) is:
//!
//! 1. `tok_emb` (V×d), `pos_emb` (N×d)
//! 2. per block `l`: `block{l}.ln1.{gain,bias}`,
//!    `block{l}.attn.{wq,bq,wk,bk,wv,bv,wo,bo}`, `block{l}.ln2.{gain,bias}`,
//!    `block{l}.ffn.{w1,b1,w2,b2}`
//! 3. `final_ln.{gain,bias}`, `lm_head.{w,b}`
//! 4. `proj.color.{w1,b1,w2,b2}`, `proj.structure.{w1,b1,w2,b2}`
//! 5. `ground.{w1,b1,w2,b2}`
//!
//! Initialization: matrices (anything 2-D, embeddings included) draw
//! uniform(−1/√d, 1/√d) in enumeration order from one seeded stream;
//! biases start at zero, norm gains at one. Weight decay applies to
//! matrices only.

use std::ops::Range;

use rand::Rng;

use crate::data::backbone::{COLOR_CHANNELS, STRUCTURE_CHANNELS};
use crate::error::{Error, Result};
use crate::grounding;
use crate::model::config::ModelConfig;
use crate::nn::{MlpGrads, MlpParams, MlpShape};
use crate::seeds;

/// Initial grounding-head output bias; scores start near
/// `sigmoid(GROUND_BIAS_INIT)` ~ 0.12 rather than 0.5.
pub const GROUND_BIAS_INIT: f32 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Matrix,
    Bias,
    Gain,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ranges of one two-layer MLP inside the flat vector; the four pieces
/// are contiguous in (w1, b1, w2, b2) order.
#[derive(Debug, Clone)]
pub struct MlpRanges {
    pub shape: MlpShape,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

impl MlpRanges {
    pub fn params<'a>(&self, flat: &'a [f64]) -> MlpParams<'a> {
        MlpParams {
            w1: &flat[self.w1.clone()],
            b1: &flat[self.b1.clone()],
            w2: &flat[self.w2.clone()],
            b2: &flat[self.b2.clone()],
        }
    }

    pub fn grads<'a>(&self, flat: &'a mut [f64]) -> MlpGrads<'a> {
        let seg = &mut flat[self.w1.start..self.b2.end];
        let (w1, rest) = seg.split_at_mut(self.w1.len());
        let (b1, rest) = rest.split_at_mut(self.b1.len());
        let (w2, b2) = rest.split_at_mut(self.w2.len());
        MlpGrads { w1, b1, w2, b2 }
    }
}

#[derive(Debug, Clone)]
pub struct BlockRanges {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub ffn_w1: Range<usize>,
    pub ffn_b1: Range<usize>,
    pub ffn_w2: Range<usize>,
    pub ffn_b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct ParamIndex {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub blocks: Vec<BlockRanges>,
    pub final_ln_gain: Range<usize>,
    pub final_ln_bias: Range<usize>,
    pub lm_w: Range<usize>,
    pub lm_b: Range<usize>,
    pub proj_color: MlpRanges,
    pub proj_structure: MlpRanges,
    pub ground: MlpRanges,
}

/// The enumeration: names, shapes, kinds, offsets, plus fast ranges.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub index: ParamIndex,
    pub total: usize,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.offset..self.offset + len;
        self.specs.push(ParamSpec { name, shape, kind, offset: self.offset });
        self.offset += len;
        range
    }

    fn mlp(&mut self, prefix: &str, shape: MlpShape) -> MlpRanges {
        MlpRanges {
            shape,
            w1: self.push(
                format!("{prefix}.w1"),
                vec![shape.hidden, shape.input],
                ParamKind::Matrix,
            ),
            b1: self.push(format!("{prefix}.b1"), vec![shape.hidden], ParamKind::Bias),
            w2: self.push(
                format!("{prefix}.w2"),
                vec![shape.output, shape.hidden],
                ParamKind::Matrix,
            ),
            b2: self.push(format!("{prefix}.b2"), vec![shape.output], ParamKind::Bias),
        }
    }
}

pub fn projection_shape(cfg: &ModelConfig, input: usize) -> MlpShape {
    MlpShape::new(input, 2 * cfg.d_model, cfg.d_model)
}

pub fn build_layout(cfg: &ModelConfig, vocab_size: usize) -> ParamLayout {
    let d = cfg.d_model;
    let mut b = LayoutBuilder { specs: Vec::new(), offset: 0 };
    let tok_emb = b.push("tok_emb".into(), vec![vocab_size, d], ParamKind::Matrix);
    let pos_emb = b.push("pos_emb".into(), vec![cfg.max_seq, d], ParamKind::Matrix);
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = format!("block{l}");
        blocks.push(BlockRanges {
            ln1_gain: b.push(format!("{p}.ln1.gain"), vec![d], ParamKind::Gain),
            ln1_bias: b.push(format!("{p}.ln1.bias"), vec![d], ParamKind::Bias),
            wq: b.push(format!("{p}.attn.wq"), vec![d, d], ParamKind::Matrix),
            bq: b.push(format!("{p}.attn.bq"), vec![d], ParamKind::Bias),
            wk: b.push(format!("{p}.attn.wk"), vec![d, d], ParamKind::Matrix),
            bk: b.push(format!("{p}.attn.bk"), vec![d], ParamKind::Bias),
            wv: b.push(format!("{p}.attn.wv"), vec![d, d], ParamKind::Matrix),
            bv: b.push(format!("{p}.attn.bv"), vec![d], ParamKind::Bias),
            wo: b.push(format!("{p}.attn.wo"), vec![d, d], ParamKind::Matrix),
            bo: b.push(format!("{p}.attn.bo"), vec![d], ParamKind::Bias),
            ln2_gain: b.push(format!("{p}.ln2.gain"), vec![d], ParamKind::Gain),
            ln2_bias: b.push(format!("{p}.ln2.bias"), vec![d], ParamKind::Bias),
            ffn_w1: b.push(format!("{p}.ffn.w1"), vec![cfg.ffn_dim(), d], ParamKind::Matrix),
            ffn_b1: b.push(format!("{p}.ffn.b1"), vec![cfg.ffn_dim()], ParamKind::Bias),
            ffn_w2: b.push(format!("{p}.ffn.w2"), vec![d, cfg.ffn_dim()], ParamKind::Matrix),
            ffn_b2: b.push(format!("{p}.ffn.b2"), vec![d], ParamKind::Bias),
        });
    }
    let final_ln_gain = b.push("final_ln.gain".into(), vec![d], ParamKind::Gain);
    let final_ln_bias = b.push("final_ln.bias".into(), vec![d], ParamKind::Bias);
    let lm_w = b.push("lm_head.w".into(), vec![vocab_size, d], ParamKind::Matrix);
    let lm_b = b.push("lm_head.b".into(), vec![vocab_size], ParamKind::Bias);
    let proj_color = b.mlp("proj.color", projection_shape(cfg, COLOR_CHANNELS));
    let proj_structure = b.mlp("proj.structure", projection_shape(cfg, STRUCTURE_CHANNELS));
    let ground = b.mlp("ground", grounding::head_shape(d));
    let total = b.offset;
    ParamLayout {
        specs: b.specs,
        index: ParamIndex {
            tok_emb,
            pos_emb,
            blocks,
            final_ln_gain,
            final_ln_bias,
            lm_w,
            lm_b,
            proj_color,
            proj_structure,
            ground,
        },
        total,
    }
}

/// The model's trainable state: f32 values under a [`ParamLayout`].
#[derive(Debug, Clone)]
pub struct ParamStore {
    pub layout: ParamLayout,
    pub data: Vec<f32>,
}

impl ParamStore {
    pub fn init(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let layout = build_layout(cfg, vocab_size);
        let bound = 1.0 / (cfg.d_model as f64).sqrt();
        let mut rng = seeds::rng(seed, "init");
        let mut data = vec![0.0f32; layout.total];
        for spec in &layout.specs {
            match spec.kind {
                ParamKind::Matrix => {
                    for v in &mut data[spec.range()] {
                        *v = rng.gen_range(-bound..bound) as f32;
                    }
                }
                ParamKind::Bias => {}
                ParamKind::Gain => data[spec.range()].fill(1.0),
            }
        }
        // Start grounding scores near sigmoid(GROUND_BIAS_INIT) instead of
        // 0.5: with most proposals being wrong answers, a low prior keeps
        // early false positives out of the merged mask and the sigmoid in
        // its responsive range while score/query coupling is learned.
        data[layout.index.ground.b2.clone()].fill(GROUND_BIAS_INIT);
        Self { layout, data }
    }

    /// f64 working copy for forward/backward math.
    pub fn snapshot(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Store back an updated f64 vector, quantizing to f32.
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.data.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameter value {v}")));
        }
        for (dst, &src) in self.data.iter_mut().zip(values) {
            *dst = src as f32;
        }
        Ok(())
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.layout.specs.iter().find(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.spec(name).map(|s| &self.data[s.range()])
    }

    /// Per-element weight-decay mask (true = decayed, i.e. matrix).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.layout.total];
        for spec in &self.layout.specs {
            if spec.kind == ParamKind::Matrix {
                mask[spec.range()].fill(true);
            }
        }
        mask
    }
}
