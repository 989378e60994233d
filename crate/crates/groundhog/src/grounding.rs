//! Grounding query formation, per-entity scoring, and phrase grounding.
//!
//! A groundable phrase is delimited by the special tokens `<GRD>` and
//! `</GRD>`. Their final-layer hidden states combine into a grounding
//! query; each candidate entity is scored by a small MLP over the
//! concatenated (query, entity hidden) pair through a sigmoid, and the
//! scored proposals are max-merged into the phrase's mask. Scores are
//! independent sigmoids rather than a softmax so several entities can be
//! selected at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{merge_proposals, ProposalSet, SoftMask};
use crate::nn::{mlp_backward, mlp_forward, sigmoid, MlpGrads, MlpParams, MlpShape, MlpTrace};

/// Entities whose score strictly exceeds this are reported as selected.
pub const SELECT_TAU: f64 = 0.5;

/// How the two grounding-token hidden states combine into the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Use only the `<GRD>` hidden state.
    StartOnly,
    /// Use only the `</GRD>` hidden state.
    EndOnly,
    /// Elementwise sum of both.
    #[default]
    Sum,
}

impl QueryMode {
    pub fn combine(&self, h_start: &[f64], h_end: &[f64]) -> Result<Vec<f64>> {
        if h_start.len() != h_end.len() {
            return Err(Error::DimensionMismatch(format!(
                "grounding token hidden dims {} vs {}",
                h_start.len(),
                h_end.len()
            )));
        }
        Ok(match self {
            QueryMode::StartOnly => h_start.to_vec(),
            QueryMode::EndOnly => h_end.to_vec(),
            QueryMode::Sum => h_start.iter().zip(h_end).map(|(a, b)| a + b).collect(),
        })
    }
}

/// Shape of the scoring head for LM hidden size `d`:
/// concat(query, entity) of width 2d, one hidden layer of width 2d, scalar out.
pub fn head_shape(d: usize) -> MlpShape {
    MlpShape::new(2 * d, 2 * d, 1)
}

/// Elementwise sum of the grounding-token hidden states.
pub fn grounding_query(h_start: &[f64], h_end: &[f64]) -> Result<Vec<f64>> {
    QueryMode::Sum.combine(h_start, h_end)
}

/// Sigmoid score of every entity against the query. Also returns the MLP
/// traces so training can run the backward pass.
pub fn score_entities_traced(
    query: &[f64],
    entity_hiddens: &[Vec<f64>],
    shape: MlpShape,
    head: MlpParams<'_>,
) -> Result<(Vec<f64>, Vec<MlpTrace>)> {
    if entity_hiddens.is_empty() {
        return Err(Error::InvalidArgument("no entities to score".into()));
    }
    let mut scores = Vec::with_capacity(entity_hiddens.len());
    let mut traces = Vec::with_capacity(entity_hiddens.len());
    for h in entity_hiddens {
        if query.len() + h.len() != shape.input {
            return Err(Error::DimensionMismatch(format!(
                "query {} + entity {} != head input {}",
                query.len(),
                h.len(),
                shape.input
            )));
        }
        let mut x = Vec::with_capacity(shape.input);
        x.extend_from_slice(query);
        x.extend_from_slice(h);
        let trace = mlp_forward(shape, head, &x);
        scores.push(sigmoid(trace.out[0]));
        traces.push(trace);
    }
    Ok((scores, traces))
}

/// Sigmoid score of every entity against the query.
pub fn score_entities(
    query: &[f64],
    entity_hiddens: &[Vec<f64>],
    shape: MlpShape,
    head: MlpParams<'_>,
) -> Result<Vec<f64>> {
    score_entities_traced(query, entity_hiddens, shape, head).map(|(s, _)| s)
}

/// Backward of [`score_entities_traced`] given `dL/dscore` per entity.
/// Accumulates head gradients and returns (`dL/dquery`, per-entity
/// `dL/dhidden`).
pub fn score_backward(
    shape: MlpShape,
    head: MlpParams<'_>,
    traces: &[MlpTrace],
    scores: &[f64],
    dscores: &[f64],
    grads: &mut MlpGrads<'_>,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    debug_assert_eq!(traces.len(), dscores.len());
    debug_assert_eq!(traces.len(), scores.len());
    let d = shape.input / 2;
    let mut dquery = vec![0.0; d];
    let mut dhiddens = Vec::with_capacity(traces.len());
    for ((trace, &s), &ds) in traces.iter().zip(scores).zip(dscores) {
        let dlogit = [ds * s * (1.0 - s)];
        let dx = mlp_backward(shape, head, trace, &dlogit, grads);
        for (dq, dxq) in dquery.iter_mut().zip(&dx[..d]) {
            *dq += dxq;
        }
        dhiddens.push(dx[d..].to_vec());
    }
    (dquery, dhiddens)
}

/// Backward of the pixel-wise max merge `M(px) = max_q s_q·M̂_q(px)`:
/// given `dL/dM` and the per-pixel winners from
/// [`merge_argmax`](crate::mask::merge_argmax), the subgradient routes
/// each pixel to its winning proposal, `dL/ds_w += dL/dM(px) · M̂_w(px)`.
pub fn merge_backward(dmerged: &[f64], proposals: &ProposalSet, winners: &[usize]) -> Vec<f64> {
    debug_assert_eq!(dmerged.len(), winners.len());
    let mut dscores = vec![0.0; proposals.len()];
    for (px, (&dm, &w)) in dmerged.iter().zip(winners).enumerate() {
        dscores[w] += dm * proposals.mask(w).probs[px];
    }
    dscores
}

/// Everything known about one grounded phrase.
#[derive(Debug, Clone)]
pub struct GroundedPhrase {
    pub scores: Vec<f64>,
    pub merged: SoftMask,
    pub selected: Vec<usize>,
}

/// Score all proposals against the query, max-merge them (unthresholded),
/// and report the selected index set `{q : s_q > 0.5}`.
pub fn ground_phrase(
    query: &[f64],
    entity_hiddens: &[Vec<f64>],
    shape: MlpShape,
    head: MlpParams<'_>,
    proposals: &ProposalSet,
) -> Result<GroundedPhrase> {
    if entity_hiddens.len() != proposals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} entity hiddens for {} proposals",
            entity_hiddens.len(),
            proposals.len()
        )));
    }
    let scores = score_entities(query, entity_hiddens, shape, head)?;
    let merged = merge_proposals(&scores, proposals)?;
    let selected = (0..scores.len()).filter(|&q| scores[q] > SELECT_TAU).collect();
    Ok(GroundedPhrase { scores, merged, selected })
}
