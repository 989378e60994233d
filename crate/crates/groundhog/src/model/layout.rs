//! Sequence layout: one corpus sample made model-ready.
//!
//! The sequence is an entity-token prefix (one slot per mask proposal, in
//! proposal order) followed by the rendered conversation wire. `<PTR>`
//! positions are bound to the entity token of the proposal best matching
//! the pointer. Grounded spans are mapped to wire positions and their
//! supervision collapsed to one training target (multi-mask spans take
//! the pixel union). LM supervision covers assistant-turn tokens and the
//! closing `</s>` only.

use crate::data::backbone::encode_backbones;
use crate::data::conversation::{render_prompt, render_wire, Role, Supervision};
use crate::data::corpus::CorpusSample;
use crate::data::scene::{GRID_H, GRID_W};
use crate::error::{Error, Result};
use crate::feature::pool_proposals;
use crate::mask::{best_match, resize_soft, BinaryMask, BoundingBox};
use crate::model::config::ModelConfig;
use crate::model::vocab::Vocabulary;

/// What occupies one sequence position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Item {
    /// Entity token of proposal `q` (prefix slots and bound `<PTR>` slots).
    Entity(usize),
    /// Vocabulary word id.
    Word(usize),
}

/// Per-span training target.
#[derive(Debug, Clone)]
pub enum SpanTarget {
    /// Union of the span's ground-truth masks; empty for no-target spans.
    Mask(BinaryMask),
    Box(BoundingBox),
    None,
}

#[derive(Debug, Clone)]
pub struct LayoutSpan {
    pub open_pos: usize,
    pub close_pos: usize,
    pub target: SpanTarget,
}

#[derive(Debug, Clone)]
pub struct SequenceLayout {
    pub items: Vec<Item>,
    /// Prefix length: positions `0..n_entities` hold the proposal tokens.
    pub n_entities: usize,
    /// `(position, target id)`: logits at `position` predict the token at
    /// `position + 1`, which is `target`.
    pub lm_targets: Vec<(usize, usize)>,
    pub spans: Vec<LayoutSpan>,
    /// Bound `<PTR>` slots as `(position, proposal index)`.
    pub pointers: Vec<(usize, usize)>,
    /// Per-proposal pooled backbone features at the feature grid.
    pub pooled_color: Vec<Vec<f64>>,
    pub pooled_structure: Vec<Vec<f64>>,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn build(sample: &CorpusSample, vocab: &Vocabulary, cfg: &ModelConfig) -> Result<Self> {
        let proposals = &sample.proposals;
        let n_entities = proposals.len();
        let (color_map, structure_map) = encode_backbones(&sample.scene);
        let pooled_color = pool_proposals(&color_map, proposals)?;
        let pooled_structure = pool_proposals(&structure_map, proposals)?;

        let (wire, offsets) = render_wire(&sample.conversation);
        let total = n_entities + wire.len();
        if total > cfg.max_seq {
            return Err(Error::InvalidArgument(format!(
                "sequence of {total} tokens exceeds the maximum {}",
                cfg.max_seq
            )));
        }

        let mut items: Vec<Item> = (0..n_entities).map(Item::Entity).collect();
        for w in &wire {
            let id = vocab
                .id(w)
                .ok_or_else(|| Error::Vocabulary(format!("out-of-vocabulary word {w:?}")))?;
            items.push(Item::Word(id));
        }

        let mut pointers = Vec::new();
        let mut spans = Vec::new();
        let mut lm_targets = Vec::new();
        for (ti, turn) in sample.conversation.turns.iter().enumerate() {
            let tokens = turn.tokens();
            let base = n_entities + offsets[ti];
            if !turn.pointers.is_empty() {
                let slots: Vec<usize> = tokens
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| **t == crate::data::conversation::PTR_TOKEN)
                    .map(|(j, _)| base + j)
                    .collect();
                if slots.len() != turn.pointers.len() {
                    return Err(Error::Schema(format!(
                        "turn {ti}: {} pointers for {} slots",
                        turn.pointers.len(),
                        slots.len()
                    )));
                }
                for (pos, pin) in slots.into_iter().zip(&turn.pointers) {
                    let q = best_match(&pin.to_pointer(), proposals)?;
                    items[pos] = Item::Entity(q);
                    pointers.push((pos, q));
                }
            }
            for span in &turn.spans {
                let target = match &span.supervision {
                    Supervision::Masks(masks) => {
                        let mut union =
                            BinaryMask::empty(sample.scene.h, sample.scene.w);
                        for m in masks {
                            union.union_with(m)?;
                        }
                        SpanTarget::Mask(union)
                    }
                    Supervision::Box(b) => SpanTarget::Box(*b),
                    Supervision::None => SpanTarget::None,
                };
                spans.push(LayoutSpan {
                    open_pos: base + span.start,
                    close_pos: base + span.end,
                    target,
                });
            }
            if turn.role == Role::Assistant {
                for (j, w) in tokens.iter().enumerate() {
                    let id = vocab.id(w).expect("wire words already resolved");
                    lm_targets.push((base + j - 1, id));
                }
            }
        }
        // closing </s> is supervised
        lm_targets.push((total - 2, crate::model::vocab::EOS_ID));

        Ok(Self {
            items,
            n_entities,
            lm_targets,
            spans,
            pointers,
            pooled_color,
            pooled_structure,
        })
    }

    /// Model-ready generation prompt: the entity prefix plus the wire up
    /// to and including the assistant role marker. Carries no
    /// supervision; the decoder extends `items` token by token.
    pub fn build_prompt(
        sample: &CorpusSample,
        vocab: &Vocabulary,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let proposals = &sample.proposals;
        let n_entities = proposals.len();
        let (color_map, structure_map) = encode_backbones(&sample.scene);
        let pooled_color = pool_proposals(&color_map, proposals)?;
        let pooled_structure = pool_proposals(&structure_map, proposals)?;

        let (wire, offsets) = render_prompt(&sample.conversation);
        let total = n_entities + wire.len();
        if total >= cfg.max_seq {
            return Err(Error::InvalidArgument(format!(
                "prompt of {total} tokens leaves no room under the maximum {}",
                cfg.max_seq
            )));
        }

        let mut items: Vec<Item> = (0..n_entities).map(Item::Entity).collect();
        for w in &wire {
            let id = vocab
                .id(w)
                .ok_or_else(|| Error::Vocabulary(format!("out-of-vocabulary word {w:?}")))?;
            items.push(Item::Word(id));
        }

        let mut pointers = Vec::new();
        for (ti, turn) in sample.conversation.turns.iter().enumerate() {
            if turn.role == Role::Assistant {
                break;
            }
            if turn.pointers.is_empty() {
                continue;
            }
            let base = n_entities + offsets[ti];
            let slots: Vec<usize> = turn
                .tokens()
                .iter()
                .enumerate()
                .filter(|(_, t)| **t == crate::data::conversation::PTR_TOKEN)
                .map(|(j, _)| base + j)
                .collect();
            if slots.len() != turn.pointers.len() {
                return Err(Error::Schema(format!(
                    "turn {ti}: {} pointers for {} slots",
                    turn.pointers.len(),
                    slots.len()
                )));
            }
            for (pos, pin) in slots.into_iter().zip(&turn.pointers) {
                let q = best_match(&pin.to_pointer(), proposals)?;
                items[pos] = Item::Entity(q);
                pointers.push((pos, q));
            }
        }

        Ok(Self {
            items,
            n_entities,
            lm_targets: Vec::new(),
            spans: Vec::new(),
            pointers,
            pooled_color,
            pooled_structure,
        })
    }
}

/// Resize every proposal to the feature grid — shared by layout
/// construction and tests that reason about pooled masks.
pub fn proposal_grid_masks(
    sample: &CorpusSample,
) -> Result<Vec<crate::mask::SoftMask>> {
    sample
        .proposals
        .masks()
        .iter()
        .map(|m| resize_soft(m, GRID_H, GRID_W))
        .collect()
}
