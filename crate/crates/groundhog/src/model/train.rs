//! Hybrid-loss training: LM cross-entropy on assistant tokens plus dice,
//! BCE, and box-projection losses on grounded spans, with exact analytic
//! gradients and AdamW under a cosine schedule.
//!
//! Loss normalization is batch-wide per component: the LM term averages
//! over all supervised tokens in the batch, each grounding term over the
//! spans in the batch that produce it. Batch elements are processed in
//! parallel but reduced in index order, so results are bit-stable.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::corpus::CorpusSample;
use crate::error::{Error, Result};
use crate::grounding::{merge_backward, score_backward, QueryMode};
use crate::loss::{bce_loss_grad, dice_loss_grad, projection_loss_grad, LossBundle};
use crate::mask::{merge_argmax, merge_proposals};
use crate::model::config::{cosine_lr, TrainConfig};
use crate::model::forward::{forward, log_softmax, ForwardTrace};
use crate::model::layout::{SequenceLayout, SpanTarget};
use crate::model::params::ParamStore;
use crate::model::vocab::Vocabulary;
use crate::seeds;

/// One loss-log line, emitted every `log_every` steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossBundle,
    pub total: f64,
}

/// Batch-wide normalization constants, computed before the parallel pass
/// so per-sample gradients are independent of reduction order.
#[derive(Debug, Clone, Copy)]
struct BatchNorms {
    lm_tokens: f64,
    mask_spans: f64,
    box_spans: f64,
}

fn batch_norms(batch: &[(&CorpusSample, &SequenceLayout)]) -> BatchNorms {
    let mut lm = 0usize;
    let mut masks = 0usize;
    let mut boxes = 0usize;
    for (_, layout) in batch {
        lm += layout.lm_targets.len();
        for span in &layout.spans {
            match span.target {
                SpanTarget::Mask(_) => masks += 1,
                SpanTarget::Box(_) => boxes += 1,
                SpanTarget::None => {}
            }
        }
    }
    BatchNorms { lm_tokens: lm as f64, mask_spans: masks as f64, box_spans: boxes as f64 }
}

/// Per-sample unnormalized loss sums.
#[derive(Debug, Clone, Copy, Default)]
struct SampleSums {
    lm: f64,
    dice: f64,
    bce: f64,
    projection: f64,
}

fn sample_gradients(
    flat: &[f64],
    store: &ParamStore,
    config: &TrainConfig,
    sample: &CorpusSample,
    layout: &SequenceLayout,
    norms: BatchNorms,
) -> Result<(SampleSums, Vec<f64>)> {
    let cfg = &config.model;
    let w = &config.loss_weights;
    let idx = &store.layout.index;
    let d = cfg.d_model;
    let vocab = idx.lm_b.len();
    let trace: ForwardTrace = forward(flat, idx, cfg, layout)?;
    let mut grads = vec![0.0; flat.len()];
    let mut sums = SampleSums::default();

    // LM cross-entropy on supervised positions
    let mut dlogits = vec![0.0; layout.len() * vocab];
    let lm_scale = if norms.lm_tokens > 0.0 { w.lm / norms.lm_tokens } else { 0.0 };
    for &(pos, target) in &layout.lm_targets {
        let ls = log_softmax(trace.logits_at(pos, vocab));
        sums.lm += -ls[target];
        let drow = &mut dlogits[pos * vocab..(pos + 1) * vocab];
        for (v, &l) in ls.iter().enumerate() {
            drow[v] += lm_scale * l.exp();
        }
        drow[target] -= lm_scale;
    }

    // grounding losses span by span
    let mut dhidden = vec![0.0; layout.len() * d];
    let proposals = &sample.proposals;
    let n_px = sample.scene.h * sample.scene.w;
    for span in &layout.spans {
        if matches!(span.target, SpanTarget::None) {
            continue;
        }
        let query = cfg.query_mode.combine(
            trace.hidden_at(span.open_pos, d),
            trace.hidden_at(span.close_pos, d),
        )?;
        let hiddens = trace.entity_hiddens(layout.n_entities, d);
        let (scores, traces) = crate::grounding::score_entities_traced(
            &query,
            &hiddens,
            idx.ground.shape,
            idx.ground.params(flat),
        )?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite grounding scores".into()));
        }
        let merged = merge_proposals(&scores, proposals)?;
        let mut dmerged = vec![0.0; n_px];
        match &span.target {
            SpanTarget::Mask(union) => {
                let target: Vec<f64> =
                    union.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                let dice_scale =
                    if norms.mask_spans > 0.0 { w.dice / norms.mask_spans } else { 0.0 };
                let bce_scale =
                    if norms.mask_spans > 0.0 { w.bce / norms.mask_spans } else { 0.0 };
                sums.dice += dice_loss_grad(&merged.probs, &target, dice_scale, &mut dmerged);
                sums.bce += bce_loss_grad(&merged.probs, &target, bce_scale, &mut dmerged);
            }
            SpanTarget::Box(gt) => {
                let scale =
                    if norms.box_spans > 0.0 { w.projection / norms.box_spans } else { 0.0 };
                sums.projection += projection_loss_grad(&merged, gt, scale, &mut dmerged);
            }
            SpanTarget::None => unreachable!(),
        }
        let winners = merge_argmax(&scores, proposals)?;
        let dscores = merge_backward(&dmerged, proposals, &winners);
        let (dquery, dhiddens) = score_backward(
            idx.ground.shape,
            idx.ground.params(flat),
            &traces,
            &scores,
            &dscores,
            &mut idx.ground.grads(&mut grads),
        );
        match cfg.query_mode {
            QueryMode::Sum => {
                for i in 0..d {
                    dhidden[span.open_pos * d + i] += dquery[i];
                    dhidden[span.close_pos * d + i] += dquery[i];
                }
            }
            QueryMode::StartOnly => {
                for i in 0..d {
                    dhidden[span.open_pos * d + i] += dquery[i];
                }
            }
            QueryMode::EndOnly => {
                for i in 0..d {
                    dhidden[span.close_pos * d + i] += dquery[i];
                }
            }
        }
        for (q, dh) in dhiddens.iter().enumerate() {
            for i in 0..d {
                dhidden[q * d + i] += dh[i];
            }
        }
    }

    crate::model::backward::backward(flat, idx, cfg, layout, &trace, &dlogits, &dhidden, &mut grads);
    Ok((sums, grads))
}

/// Compute the batch loss bundle and total gradient (fixed reduction
/// order) without touching parameters.
pub fn batch_gradients(
    store: &ParamStore,
    config: &TrainConfig,
    batch: &[(&CorpusSample, &SequenceLayout)],
) -> Result<(LossBundle, Vec<f64>)> {
    let flat = store.snapshot();
    let norms = batch_norms(batch);
    let results: Result<Vec<(SampleSums, Vec<f64>)>> = batch
        .par_iter()
        .map(|(sample, layout)| sample_gradients(&flat, store, config, sample, layout, norms))
        .collect();
    let results = results?;
    let mut grads = vec![0.0; flat.len()];
    let mut sums = SampleSums::default();
    for (s, g) in &results {
        sums.lm += s.lm;
        sums.dice += s.dice;
        sums.bce += s.bce;
        sums.projection += s.projection;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let div = |x: f64, n: f64| if n > 0.0 { x / n } else { 0.0 };
    let losses = LossBundle {
        dice: div(sums.dice, norms.mask_spans),
        bce: div(sums.bce, norms.mask_spans),
        projection: div(sums.projection, norms.box_spans),
        lm: div(sums.lm, norms.lm_tokens),
    };
    Ok((losses, grads))
}

/// Training state: parameters plus AdamW moments and the step counter.
pub struct Trainer {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub step: usize,
    /// Steps the cosine schedule anneals over; 0 keeps the rate constant.
    pub total_steps: usize,
    opt_m: Vec<f64>,
    opt_v: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::init(&config.model, vocab.len(), config.seed);
        Ok(Self::with_store(config, vocab, store, 0))
    }

    /// Resume from loaded parameters; optimizer moments start fresh.
    pub fn with_store(
        config: TrainConfig,
        vocab: Vocabulary,
        store: ParamStore,
        step: usize,
    ) -> Self {
        let n = store.layout.total;
        Self { config, vocab, store, step, total_steps: 0, opt_m: vec![0.0; n], opt_v: vec![0.0; n] }
    }

    pub fn prepare(&self, samples: &[CorpusSample]) -> Result<Vec<SequenceLayout>> {
        samples
            .iter()
            .map(|s| SequenceLayout::build(s, &self.vocab, &self.config.model))
            .collect()
    }

    /// One gradient step on a batch. Errors with a numeric failure if any
    /// loss or updated parameter is non-finite.
    pub fn train_step(
        &mut self,
        batch: &[(&CorpusSample, &SequenceLayout)],
    ) -> Result<LossBundle> {
        let (losses, grads) = batch_gradients(&self.store, &self.config, batch)?;
        let total = losses.total(&self.config.loss_weights);
        if !total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {}", self.step)));
        }
        let lr = cosine_lr(self.config.lr, self.step, self.total_steps);
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let decay = self.store.decay_mask();
        let mut values = self.store.snapshot();
        for i in 0..values.len() {
            let g = grads[i];
            self.opt_m[i] = b1 * self.opt_m[i] + (1.0 - b1) * g;
            self.opt_v[i] = b2 * self.opt_v[i] + (1.0 - b2) * g * g;
            let mhat = self.opt_m[i] / c1;
            let vhat = self.opt_v[i] / c2;
            let mut update = mhat / (vhat.sqrt() + self.config.eps);
            if decay[i] {
                update += self.config.weight_decay * values[i];
            }
            values[i] -= lr * update;
        }
        self.store.assign(&values)?;
        self.step += 1;
        Ok(losses)
    }

    /// Full training loop: seeded per-epoch shuffles, fixed batch
    /// partitioning, a log record every `log_every` steps and at the end.
    pub fn train(
        &mut self,
        samples: &[CorpusSample],
        mut on_log: impl FnMut(&TrainLogRecord),
    ) -> Result<LossBundle> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty training corpus".into()));
        }
        let layouts = self.prepare(samples)?;
        let bs = self.config.batch_size;
        let batches_per_epoch = samples.len().div_ceil(bs);
        self.total_steps = self.step + self.config.epochs * batches_per_epoch;
        let mut last = LossBundle::default();
        for epoch in 0..self.config.epochs {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng = seeds::rng_indexed(self.config.seed, "epoch", epoch as u64);
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                let batch: Vec<(&CorpusSample, &SequenceLayout)> =
                    chunk.iter().map(|&i| (&samples[i], &layouts[i])).collect();
                let losses = self.train_step(&batch)?;
                let done = self.step;
                if done % self.config.log_every == 0 || done == self.total_steps {
                    let record = TrainLogRecord {
                        step: done,
                        epoch,
                        lr: cosine_lr(self.config.lr, done - 1, self.total_steps),
                        total: losses.total(&self.config.loss_weights),
                        losses: losses.clone(),
                    };
                    on_log(&record);
                }
                last = losses;
            }
        }
        Ok(last)
    }
}
