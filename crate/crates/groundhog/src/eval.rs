//! Corpus evaluation: decode every sample, collect per-phrase prediction
//! records, and route them through the metric protocols.
//!
//! Predictions are pure data — every metric here can be recomputed from
//! the prediction records plus the ground-truth corpus, with no hidden
//! state carried over from decoding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::conversation::{Role, Supervision, Task};
use crate::data::corpus::CorpusSample;
use crate::error::{Error, Result};
use crate::mask::{
    mask_to_box, rle_decode, rle_encode, BinaryMask, BoundingBox, RleMask, BINARIZE_TAU,
};
use crate::metrics::{
    any_iou, binary_qa_metrics, box_recall_at1_merged, ciou, grounding_match_counts, miou,
    MetricReport, PhraseBoxes,
};
use crate::model::config::ModelConfig;
use crate::model::decode::decode;
use crate::model::params::ParamStore;
use crate::model::vocab::Vocabulary;

/// Decoding budget for one assistant answer during evaluation.
pub const EVAL_MAX_NEW_TOKENS: usize = 48;

/// One decoded grounding span, serialized per the prediction schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// `"{sample}/{ordinal}"` — sample index in the corpus and the
    /// phrase's position within the decoded answer.
    pub phrase_id: String,
    pub text: String,
    /// Merged grounding mask, binarized at the standard threshold.
    pub mask: RleMask,
    pub selected_boxes: Vec<BoundingBox>,
    /// Per-proposal grounding scores, proposal order.
    pub score_vector: Vec<f64>,
}

/// Full decode outcome for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub sample: usize,
    pub task: String,
    /// The decoded answer text (special tokens included).
    pub text: String,
    pub records: Vec<PredictionRecord>,
    pub warnings: Vec<String>,
}

/// Ground truth for one grounded span, extracted from a corpus sample.
#[derive(Debug, Clone)]
pub struct GtSpan {
    pub text: String,
    /// Pixel union of the span's target masks (empty for no-target and
    /// rasterized for box supervision).
    pub mask: BinaryMask,
    pub boxes: Vec<BoundingBox>,
}

/// The assistant-turn spans of a sample as evaluation targets.
pub fn gt_spans(sample: &CorpusSample) -> Result<Vec<GtSpan>> {
    let conv = &sample.conversation;
    let (h, w) = (sample.scene.h, sample.scene.w);
    let mut out = Vec::new();
    for (ti, span) in conv.spans() {
        let text = conv.span_text(ti, span);
        let (mask, boxes) = match &span.supervision {
            Supervision::Masks(masks) => {
                let mut union = BinaryMask::empty(h, w);
                let mut boxes = Vec::new();
                for m in masks {
                    union.union_with(m)?;
                    boxes.push(mask_to_box(m)?);
                }
                (union, boxes)
            }
            Supervision::Box(b) => (b.rasterize(h, w), vec![*b]),
            Supervision::None => (BinaryMask::empty(h, w), Vec::new()),
        };
        out.push(GtSpan { text, mask, boxes });
    }
    Ok(out)
}

/// Decode one sample into prediction records.
pub fn predict_sample(
    store: &ParamStore,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    sample: &CorpusSample,
    sample_idx: usize,
) -> Result<SamplePrediction> {
    let out = decode(store, cfg, vocab, sample, EVAL_MAX_NEW_TOKENS)?;
    let records = out
        .phrases
        .iter()
        .enumerate()
        .map(|(i, ph)| {
            let hard = ph.grounding.merged.binarize(BINARIZE_TAU);
            let selected_boxes = ph
                .grounding
                .selected
                .iter()
                .filter_map(|&q| {
                    mask_to_box(&sample.proposals.mask(q).binarize(BINARIZE_TAU)).ok()
                })
                .collect();
            PredictionRecord {
                phrase_id: format!("{sample_idx}/{i}"),
                text: ph.text.clone(),
                mask: rle_encode(&hard),
                selected_boxes,
                score_vector: ph.grounding.scores.clone(),
            }
        })
        .collect();
    Ok(SamplePrediction {
        sample: sample_idx,
        task: sample.conversation.task.name().to_string(),
        text: out.text,
        records,
        warnings: out.warnings,
    })
}

/// Decode a whole corpus, in parallel, results in corpus order.
pub fn predict_corpus(
    store: &ParamStore,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    samples: &[CorpusSample],
) -> Result<Vec<SamplePrediction>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| predict_sample(store, cfg, vocab, s, i))
        .collect()
}

/// The metric protocols `evaluate` can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Ciou,
    Miou,
    F1,
    AnyIou,
    Pope,
    RecallAt1,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Ciou,
        MetricKind::Miou,
        MetricKind::F1,
        MetricKind::AnyIou,
        MetricKind::Pope,
        MetricKind::RecallAt1,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Ciou => "ciou",
            MetricKind::Miou => "miou",
            MetricKind::F1 => "f1",
            MetricKind::AnyIou => "anyiou",
            MetricKind::Pope => "pope",
            MetricKind::RecallAt1 => "recall@1",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {name:?}")))
    }
}

/// Per-ordinal alignment of decoded phrases to ground-truth spans: the
/// i-th decoded phrase answers the i-th span; a missing phrase predicts
/// an empty mask.
fn aligned_mask(pred: &SamplePrediction, ordinal: usize, h: usize, w: usize) -> Result<BinaryMask> {
    match pred.records.get(ordinal) {
        Some(r) => rle_decode(&r.mask),
        None => Ok(BinaryMask::empty(h, w)),
    }
}

fn first_word_yes(text: &str) -> bool {
    text.split_whitespace().next() == Some("Yes")
}

/// Compute the requested metric over the corpus and its predictions.
pub fn evaluate(
    samples: &[CorpusSample],
    preds: &[SamplePrediction],
    metric: MetricKind,
) -> Result<MetricReport> {
    if samples.len() != preds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    match metric {
        MetricKind::Ciou | MetricKind::Miou | MetricKind::RecallAt1 => {
            let mut pairs = Vec::new();
            let mut recall_preds = Vec::new();
            let mut recall_gts = Vec::new();
            for (sample, pred) in samples.iter().zip(preds) {
                for (i, gt) in gt_spans(sample)?.into_iter().enumerate() {
                    let mask = aligned_mask(pred, i, sample.scene.h, sample.scene.w)?;
                    if !gt.boxes.is_empty() {
                        recall_preds.push(mask.clone());
                        recall_gts.push(gt.boxes.clone());
                    }
                    pairs.push((mask, gt.mask));
                }
            }
            let (value, n) = match metric {
                MetricKind::Ciou => (ciou(&pairs)?, pairs.len()),
                MetricKind::Miou => (miou(&pairs)?, pairs.len()),
                _ => (
                    box_recall_at1_merged(&recall_preds, &recall_gts)?,
                    recall_preds.len(),
                ),
            };
            Ok(MetricReport::scalar(metric.name(), value, n))
        }
        MetricKind::F1 => {
            let mut tp = 0usize;
            let mut n_pred = 0usize;
            let mut n_gt = 0usize;
            for (sample, pred) in samples.iter().zip(preds) {
                // phrases with an empty box set predict (or demand)
                // nothing groundable and stay out of the protocol
                let gts: Vec<PhraseBoxes> = gt_spans(sample)?
                    .into_iter()
                    .filter(|g| !g.boxes.is_empty())
                    .map(|g| PhraseBoxes { text: g.text, boxes: g.boxes })
                    .collect();
                let ps: Vec<PhraseBoxes> = pred
                    .records
                    .iter()
                    .filter(|r| !r.selected_boxes.is_empty())
                    .map(|r| PhraseBoxes {
                        text: r.text.clone(),
                        boxes: r.selected_boxes.clone(),
                    })
                    .collect();
                let (t, p, g) = grounding_match_counts(&ps, &gts);
                tp += t;
                n_pred += p;
                n_gt += g;
            }
            let p = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
            let r = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            Ok(MetricReport {
                metric: metric.name().into(),
                value: f1,
                components: vec![("precision".into(), p), ("recall".into(), r)],
                n_samples: n_gt,
                per_sample: None,
            })
        }
        MetricKind::AnyIou => {
            // mean over every ground-truth entity mask in the corpus of
            // the best IoU its sample's proposal set achieves
            let mut sum = 0.0;
            let mut count = 0usize;
            for sample in samples {
                for e in &sample.scene.entities {
                    sum += any_iou(std::slice::from_ref(&e.mask), &sample.proposals)?;
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::InvalidArgument("anyiou on a corpus with no masks".into()));
            }
            Ok(MetricReport::scalar(metric.name(), sum / count as f64, count))
        }
        MetricKind::Pope => {
            let mut p = Vec::new();
            let mut g = Vec::new();
            for (sample, pred) in samples.iter().zip(preds) {
                if sample.conversation.task != Task::Gvqa {
                    continue;
                }
                let gold = sample
                    .conversation
                    .turns
                    .iter()
                    .rev()
                    .find(|t| t.role == Role::Assistant)
                    .map(|t| t.text.clone())
                    .unwrap_or_default();
                // presence questions answer yes/no; count questions answer
                // with a number and stay out of the binary protocol
                let gold_first = gold.split_whitespace().next().unwrap_or_default();
                if gold_first != "Yes" && gold_first != "No" {
                    continue;
                }
                p.push(first_word_yes(&pred.text));
                g.push(first_word_yes(&gold));
            }
            let qa = binary_qa_metrics(&p, &g)?;
            Ok(MetricReport {
                metric: metric.name().into(),
                value: qa.accuracy,
                components: vec![
                    ("accuracy".into(), qa.accuracy),
                    ("precision".into(), qa.precision),
                    ("recall".into(), qa.recall),
                    ("f1".into(), qa.f1),
                    ("yes_rate".into(), qa.yes_rate),
                ],
                n_samples: p.len(),
                per_sample: None,
            })
        }
    }
}

/// Decode the corpus and compute every requested metric.
pub fn evaluate_corpus(
    store: &ParamStore,
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    samples: &[CorpusSample],
    metrics: &[MetricKind],
) -> Result<(Vec<SamplePrediction>, Vec<MetricReport>)> {
    let preds = predict_corpus(store, cfg, vocab, samples)?;
    let reports = metrics
        .iter()
        .map(|&m| evaluate(samples, &preds, m))
        .collect::<Result<Vec<_>>>()?;
    Ok((preds, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::{gen_corpus, GenConfig};

    fn corpus(tasks: Vec<Task>, n: usize, seed: u64) -> Vec<CorpusSample> {
        gen_corpus(&GenConfig {
            n_samples: n,
            seed,
            tasks,
            negative_fraction: 0.0,
            ..GenConfig::default()
        })
        .unwrap()
    }

    /// Perfect predictions synthesized from the ground truth itself.
    fn echo_predictions(samples: &[CorpusSample]) -> Vec<SamplePrediction> {
        samples
            .iter()
            .enumerate()
            .map(|(si, sample)| {
                let records = gt_spans(sample)
                    .unwrap()
                    .into_iter()
                    .enumerate()
                    .map(|(i, gt)| PredictionRecord {
                        phrase_id: format!("{si}/{i}"),
                        text: gt.text,
                        mask: rle_encode(&gt.mask),
                        selected_boxes: gt.boxes,
                        score_vector: Vec::new(),
                    })
                    .collect();
                SamplePrediction {
                    sample: si,
                    task: sample.conversation.task.name().to_string(),
                    text: sample.conversation.turns.last().unwrap().text.clone(),
                    records,
                    warnings: Vec::new(),
                }
            })
            .collect()
    }

    #[test]
    fn perfect_predictions_score_one_on_every_metric() {
        let samples = corpus(vec![Task::Res, Task::Gcap, Task::Gvqa], 24, 50);
        let preds = echo_predictions(&samples);
        for metric in MetricKind::ALL {
            let report = evaluate(&samples, &preds, metric).unwrap();
            assert!(
                (report.value - 1.0).abs() < 1e-12,
                "{}: {}",
                metric.name(),
                report.value
            );
            assert!(report.n_samples > 0, "{} saw no data", metric.name());
        }
    }

    #[test]
    fn pope_covers_only_presence_questions() {
        let samples = corpus(vec![Task::Gvqa], 30, 51);
        let presence = samples
            .iter()
            .filter(|s| s.conversation.turns[1].text.starts_with("Is "))
            .count();
        assert!(presence > 0 && presence < samples.len(), "want a mixed subset");
        let preds = echo_predictions(&samples);
        let report = evaluate(&samples, &preds, MetricKind::Pope).unwrap();
        assert_eq!(report.n_samples, presence);
        assert_eq!(report.components.len(), 5);
    }

    #[test]
    fn missing_phrases_predict_empty_masks() {
        let samples = corpus(vec![Task::Res], 6, 52);
        let mut preds = echo_predictions(&samples);
        for p in &mut preds {
            p.records.clear();
        }
        // positive RES spans with empty predictions: IoU 0 each
        assert_eq!(evaluate(&samples, &preds, MetricKind::Miou).unwrap().value, 0.0);
        assert_eq!(evaluate(&samples, &preds, MetricKind::F1).unwrap().value, 0.0);
        assert_eq!(
            evaluate(&samples, &preds, MetricKind::RecallAt1).unwrap().value,
            0.0
        );
    }

    #[test]
    fn no_target_spans_reward_empty_predictions() {
        let samples = gen_corpus(&GenConfig {
            n_samples: 5,
            seed: 53,
            tasks: vec![Task::Res],
            negative_fraction: 1.0,
            ..GenConfig::default()
        })
        .unwrap();
        let mut preds = echo_predictions(&samples);
        for p in &mut preds {
            p.records.clear();
        }
        assert_eq!(evaluate(&samples, &preds, MetricKind::Miou).unwrap().value, 1.0);
    }

    #[test]
    fn metric_names_round_trip_and_reject_unknowns() {
        for m in MetricKind::ALL {
            assert_eq!(MetricKind::parse(m.name()).unwrap(), m);
        }
        assert!(MetricKind::parse("bleu").is_err());
    }

    #[test]
    fn untrained_model_evaluates_deterministically() {
        let samples = corpus(vec![Task::Res, Task::Gvqa], 6, 54);
        let vocab = Vocabulary::standard();
        let cfg = ModelConfig::default();
        let store = ParamStore::init(&cfg, vocab.len(), 9);
        let a = predict_corpus(&store, &cfg, &vocab, &samples).unwrap();
        let b = predict_corpus(&store, &cfg, &vocab, &samples).unwrap();
        let dump = |p: &[SamplePrediction]| serde_json::to_string(p).unwrap();
        assert_eq!(dump(&a), dump(&b));
        // miou stays defined even on garbage output
        let report = evaluate(&samples, &a, MetricKind::Miou).unwrap();
        assert!((0.0..=1.0).contains(&report.value));
    }
}
