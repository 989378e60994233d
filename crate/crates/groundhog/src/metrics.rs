//! Evaluation protocols: cumulative and mean IoU, proposal-coverage
//! Any-IoU, merged-box top-1 recall, phrase grounding F1, and binary-QA
//! rates. All values are fractions in `[0, 1]`; every protocol is
//! invariant to dataset order and reduces in fixed order, so reports are
//! bit-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{iou_box, iou_mask, mask_to_box, BinaryMask, BoundingBox, ProposalSet};

/// One named metric with its dataset size and optional per-sample terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    /// Secondary numbers for multi-valued protocols (precision, recall,
    /// yes-rate, ...), keyed by component name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<(String, f64)>,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<f64>>,
}

impl MetricReport {
    pub fn scalar(metric: &str, value: f64, n_samples: usize) -> Self {
        Self { metric: metric.into(), value, components: Vec::new(), n_samples, per_sample: None }
    }
}

fn require_pairs(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{what} on an empty dataset")));
    }
    Ok(())
}

/// Cumulative IoU: total intersection over total union across the
/// dataset. An all-empty dataset (every union zero) scores 1, matching
/// the per-pair empty-vs-empty convention.
pub fn ciou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64> {
    require_pairs(pairs.len(), "ciou")?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (pred, gt) in pairs {
        if pred.height != gt.height || pred.width != gt.width {
            return Err(Error::DimensionMismatch(format!(
                "pred {}x{} vs gt {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
            inter += (p && g) as usize;
            union += (p || g) as usize;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean per-pair IoU. A no-target pair where both masks are empty
/// contributes 1 (a correctly empty prediction).
pub fn miou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64> {
    require_pairs(pairs.len(), "miou")?;
    let mut sum = 0.0;
    for (pred, gt) in pairs {
        sum += iou_mask(pred, gt)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Proposal coverage: for each ground-truth mask take the best IoU any
/// proposal achieves, then average. Measures how much the proposal set
/// itself caps downstream grounding quality.
pub fn any_iou(gt_masks: &[BinaryMask], proposals: &ProposalSet) -> Result<f64> {
    require_pairs(gt_masks.len(), "any_iou")?;
    if proposals.len() == 0 {
        return Err(Error::InvalidArgument("any_iou with no proposals".into()));
    }
    let hard: Vec<BinaryMask> =
        proposals.masks().iter().map(|m| m.binarize(crate::mask::BINARIZE_TAU)).collect();
    let mut sum = 0.0;
    for gt in gt_masks {
        let mut best = 0.0f64;
        for h in &hard {
            best = best.max(iou_mask(h, gt)?);
        }
        sum += best;
    }
    Ok(sum / gt_masks.len() as f64)
}

/// Merged-box top-1 recall: the predicted mask's tight box must reach
/// IoU ≥ 0.5 against the single box enclosing all of the phrase's
/// ground-truth boxes. An empty predicted mask is an automatic miss.
pub fn box_recall_at1_merged(
    preds: &[BinaryMask],
    gts: &[Vec<BoundingBox>],
) -> Result<f64> {
    require_pairs(preds.len(), "box_recall_at1_merged")?;
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} phrases",
            preds.len(),
            gts.len()
        )));
    }
    let mut hits = 0usize;
    for (pred, boxes) in preds.iter().zip(gts) {
        let Some((first, rest)) = boxes.split_first() else {
            return Err(Error::InvalidArgument("phrase without ground-truth boxes".into()));
        };
        if pred.area() == 0 {
            continue;
        }
        let merged = rest.iter().fold(*first, |acc, b| acc.enclosing(b));
        if iou_box(&mask_to_box(pred)?, &merged) >= 0.5 {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// One phrase for the grounding-F1 protocol: its text and a box set
/// (selected proposal boxes on the prediction side, annotation boxes on
/// the ground-truth side).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhraseBoxes {
    pub text: String,
    pub boxes: Vec<BoundingBox>,
}

/// Text normalization used for phrase matching: lowercase, whitespace
/// collapsed to single spaces. This is the normative definition here.
pub fn normalize_phrase(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Matching core of the grounding-F1 protocol: `(true positives,
/// predictions, ground-truth phrases)`. A prediction matches when its
/// normalized text equals a not-yet-matched ground-truth phrase's and any
/// of its boxes reaches IoU ≥ 0.5 with one of that phrase's boxes; each
/// ground-truth phrase can be matched once. Corpus-level scores
/// micro-average these counts.
pub fn grounding_match_counts(
    preds: &[PhraseBoxes],
    gts: &[PhraseBoxes],
) -> (usize, usize, usize) {
    let mut taken = vec![false; gts.len()];
    let mut tp = 0usize;
    for pred in preds {
        let text = normalize_phrase(&pred.text);
        let hit = gts.iter().enumerate().find(|(i, gt)| {
            !taken[*i]
                && normalize_phrase(&gt.text) == text
                && pred
                    .boxes
                    .iter()
                    .any(|pb| gt.boxes.iter().any(|gb| iou_box(pb, gb) >= 0.5))
        });
        if let Some((i, _)) = hit {
            taken[i] = true;
            tp += 1;
        }
    }
    (tp, preds.len(), gts.len())
}

/// Phrase grounding precision, recall, and F1. With zero predictions,
/// precision is reported as 0.
pub fn grounding_f1(preds: &[PhraseBoxes], gts: &[PhraseBoxes]) -> (f64, f64, f64) {
    let (tp, n_pred, n_gt) = grounding_match_counts(preds, gts);
    let p = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
    let r = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Binary-QA rates with "yes" as the positive class.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BinaryQa {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yes_rate: f64,
}

impl BinaryQa {
    /// The five headline numbers as percentages rounded to 2 decimals:
    /// accuracy, precision, recall, F1, yes-rate.
    pub fn percent_row(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.yes_rate]
            .map(|v| (v * 10_000.0).round() / 100.0)
    }
}

/// Accuracy, precision, recall, F1, and yes-rate of yes/no predictions.
/// Degenerate ratios (no predicted or no actual positives) report 0.
pub fn binary_qa_metrics(preds: &[bool], gts: &[bool]) -> Result<BinaryQa> {
    require_pairs(preds.len(), "binary_qa_metrics")?;
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} answers",
            preds.len(),
            gts.len()
        )));
    }
    let n = preds.len() as f64;
    let mut tp = 0.0;
    let mut tn = 0.0;
    let mut yes = 0.0;
    for (&p, &g) in preds.iter().zip(gts) {
        yes += p as u8 as f64;
        match (p, g) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            _ => {}
        }
    }
    let gt_yes: f64 = gts.iter().map(|&g| g as u8 as f64).sum();
    let precision = if yes == 0.0 { 0.0 } else { tp / yes };
    let recall = if gt_yes == 0.0 { 0.0 } else { tp / gt_yes };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BinaryQa { accuracy: (tp + tn) / n, precision, recall, f1, yes_rate: yes / n })
}

/// Fraction of pairs at or above the IoU threshold; `tau` must lie
/// strictly inside `(0, 1)`.
pub fn recall_at_iou(pairs: &[(BinaryMask, BinaryMask)], tau: f64) -> Result<f64> {
    require_pairs(pairs.len(), "recall_at_iou")?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside (0,1)")));
    }
    let mut hits = 0usize;
    for (pred, gt) in pairs {
        if iou_mask(pred, gt)? >= tau {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}
