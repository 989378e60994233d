//! Causal transformer forward pass with full activation caches.
//!
//! Pre-norm blocks: `x += attn(ln1(x)); x += ffn(ln2(x))`, learned
//! positions, GELU feed-forward of width 4d, untied LM head. The
//! "hidden state" exposed per position — consumed by both the LM head
//! and the grounding head — is the post-final-layer-norm vector. All
//! math is f64 over an f32-quantized parameter snapshot.

use crate::error::{Error, Result};
use crate::feature::FeatureSource;
use crate::model::config::ModelConfig;
use crate::model::layout::{Item, SequenceLayout};
use crate::model::params::{MlpRanges, ParamIndex};
use crate::nn::{gelu, linear, mlp_forward, MlpTrace};

pub const LN_EPS: f64 = 1e-5;

/// Layer-norm activations kept for backward: per-position reciprocal
/// std, normalized input, and the gained+shifted output.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub rstd: Vec<f64>,
    pub xhat: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], d: usize) -> LnCache {
    let t = x.len() / d;
    let mut rstd = vec![0.0; t];
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for p in 0..t {
        let row = &x[p * d..(p + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[p] = r;
        for i in 0..d {
            let xh = (row[i] - mean) * r;
            xhat[p * d + i] = xh;
            out[p * d + i] = gain[i] * xh + bias[i];
        }
    }
    LnCache { rstd, xhat, out }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub ln1: LnCache,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Attention weights, `[head][query][key]` flattened, zero above the
    /// diagonal.
    pub probs: Vec<f64>,
    /// Head-concatenated attention context, before the output projection.
    pub ctx: Vec<f64>,
    /// Residual stream after attention.
    pub x_mid: Vec<f64>,
    pub ln2: LnCache,
    pub ffn_pre: Vec<f64>,
    pub ffn_act: Vec<f64>,
    /// Residual stream after the feed-forward.
    pub x_out: Vec<f64>,
}

/// Projection traces for one entity token (absent branches were disabled
/// by the feature-source mode).
#[derive(Debug, Clone)]
pub struct EntityTokenTrace {
    pub color: Option<MlpTrace>,
    pub structure: Option<MlpTrace>,
    pub token: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub seq_len: usize,
    pub entity_tokens: Vec<EntityTokenTrace>,
    pub x0: Vec<f64>,
    pub blocks: Vec<BlockCache>,
    pub final_ln: LnCache,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    /// Post-final-norm hidden vector at one position.
    pub fn hidden_at(&self, pos: usize, d: usize) -> &[f64] {
        &self.final_ln.out[pos * d..(pos + 1) * d]
    }

    pub fn logits_at(&self, pos: usize, vocab: usize) -> &[f64] {
        &self.logits[pos * vocab..(pos + 1) * vocab]
    }

    /// Hidden vectors at the entity prefix, for the grounding head.
    pub fn entity_hiddens(&self, n_entities: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n_entities).map(|q| self.hidden_at(q, d).to_vec()).collect()
    }
}

/// Project pooled features into entity tokens, per the feature-source
/// mode; tokens sum the enabled backbone projections.
pub fn entity_tokens(
    flat: &[f64],
    layout: &SequenceLayout,
    proj_color: &MlpRanges,
    proj_structure: &MlpRanges,
    source: FeatureSource,
    d: usize,
) -> Vec<EntityTokenTrace> {
    (0..layout.pooled_color.len())
        .map(|q| {
            let mut token = vec![0.0; d];
            let color = source.uses_color().then(|| {
                let t = mlp_forward(
                    proj_color.shape,
                    proj_color.params(flat),
                    &layout.pooled_color[q],
                );
                for (acc, v) in token.iter_mut().zip(&t.out) {
                    *acc += v;
                }
                t
            });
            let structure = source.uses_structure().then(|| {
                let t = mlp_forward(
                    proj_structure.shape,
                    proj_structure.params(flat),
                    &layout.pooled_structure[q],
                );
                for (acc, v) in token.iter_mut().zip(&t.out) {
                    *acc += v;
                }
                t
            });
            EntityTokenTrace { color, structure, token }
        })
        .collect()
}

pub fn forward(
    flat: &[f64],
    idx: &ParamIndex,
    cfg: &ModelConfig,
    layout: &SequenceLayout,
) -> Result<ForwardTrace> {
    let d = cfg.d_model;
    let t_len = layout.len();
    if t_len > cfg.max_seq {
        return Err(Error::InvalidArgument(format!(
            "sequence of {t_len} tokens exceeds the maximum {}",
            cfg.max_seq
        )));
    }
    let vocab = idx.lm_b.len();
    let tok_emb = &flat[idx.tok_emb.clone()];
    let pos_emb = &flat[idx.pos_emb.clone()];

    let ent = entity_tokens(
        flat,
        layout,
        &idx.proj_color,
        &idx.proj_structure,
        cfg.feature_source,
        d,
    );

    let mut x0 = vec![0.0; t_len * d];
    for (p, item) in layout.items.iter().enumerate() {
        let content: &[f64] = match *item {
            Item::Entity(q) => &ent[q].token,
            Item::Word(id) => {
                if id >= vocab {
                    return Err(Error::Vocabulary(format!("token id {id} out of range")));
                }
                &tok_emb[id * d..(id + 1) * d]
            }
        };
        for i in 0..d {
            x0[p * d + i] = content[i] + pos_emb[p * d + i];
        }
    }

    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let f = cfg.ffn_dim();

    let mut x = x0.clone();
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for b in &idx.blocks {
        let ln1 = layer_norm(&x, &flat[b.ln1_gain.clone()], &flat[b.ln1_bias.clone()], d);
        let mut q = vec![0.0; t_len * d];
        let mut k = vec![0.0; t_len * d];
        let mut v = vec![0.0; t_len * d];
        for p in 0..t_len {
            let inp = &ln1.out[p * d..(p + 1) * d];
            linear(&flat[b.wq.clone()], &flat[b.bq.clone()], inp, &mut q[p * d..(p + 1) * d]);
            linear(&flat[b.wk.clone()], &flat[b.bk.clone()], inp, &mut k[p * d..(p + 1) * d]);
            linear(&flat[b.wv.clone()], &flat[b.bv.clone()], inp, &mut v[p * d..(p + 1) * d]);
        }
        let mut probs = vec![0.0; heads * t_len * t_len];
        let mut ctx = vec![0.0; t_len * d];
        for h in 0..heads {
            let hoff = h * dh;
            for p in 0..t_len {
                let qv = &q[p * d + hoff..p * d + hoff + dh];
                let row = &mut probs[(h * t_len + p) * t_len..(h * t_len + p + 1) * t_len];
                let mut max = f64::NEG_INFINITY;
                for u in 0..=p {
                    let kv = &k[u * d + hoff..u * d + hoff + dh];
                    let s: f64 = qv.iter().zip(kv).map(|(a, b)| a * b).sum::<f64>() * scale;
                    row[u] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut z = 0.0;
                for item in row.iter_mut().take(p + 1) {
                    *item = (*item - max).exp();
                    z += *item;
                }
                for item in row.iter_mut().take(p + 1) {
                    *item /= z;
                }
                let out = &mut ctx[p * d + hoff..p * d + hoff + dh];
                for u in 0..=p {
                    let w = row[u];
                    let vv = &v[u * d + hoff..u * d + hoff + dh];
                    for i in 0..dh {
                        out[i] += w * vv[i];
                    }
                }
            }
        }
        let mut x_mid = vec![0.0; t_len * d];
        for p in 0..t_len {
            let mut o = vec![0.0; d];
            linear(&flat[b.wo.clone()], &flat[b.bo.clone()], &ctx[p * d..(p + 1) * d], &mut o);
            for i in 0..d {
                x_mid[p * d + i] = x[p * d + i] + o[i];
            }
        }
        let ln2 = layer_norm(&x_mid, &flat[b.ln2_gain.clone()], &flat[b.ln2_bias.clone()], d);
        let mut ffn_pre = vec![0.0; t_len * f];
        let mut ffn_act = vec![0.0; t_len * f];
        let mut x_out = vec![0.0; t_len * d];
        for p in 0..t_len {
            linear(
                &flat[b.ffn_w1.clone()],
                &flat[b.ffn_b1.clone()],
                &ln2.out[p * d..(p + 1) * d],
                &mut ffn_pre[p * f..(p + 1) * f],
            );
            for i in 0..f {
                ffn_act[p * f + i] = gelu(ffn_pre[p * f + i]);
            }
            let mut o = vec![0.0; d];
            linear(&flat[b.ffn_w2.clone()], &flat[b.ffn_b2.clone()], &ffn_act[p * f..(p + 1) * f], &mut o);
            for i in 0..d {
                x_out[p * d + i] = x_mid[p * d + i] + o[i];
            }
        }
        x = x_out.clone();
        blocks.push(BlockCache { ln1, q, k, v, probs, ctx, x_mid, ln2, ffn_pre, ffn_act, x_out });
    }

    let final_ln =
        layer_norm(&x, &flat[idx.final_ln_gain.clone()], &flat[idx.final_ln_bias.clone()], d);
    let mut logits = vec![0.0; t_len * vocab];
    for p in 0..t_len {
        linear(
            &flat[idx.lm_w.clone()],
            &flat[idx.lm_b.clone()],
            &final_ln.out[p * d..(p + 1) * d],
            &mut logits[p * vocab..(p + 1) * vocab],
        );
    }

    Ok(ForwardTrace { seq_len: t_len, entity_tokens: ent, x0, blocks, final_ln, logits })
}

/// Log-softmax over one logit row (stable).
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + z.ln();
    logits.iter().map(|l| l - log_z).collect()
}

/// Greedy pick: highest logit, lowest index on exact ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// Run [`ground_phrase`](crate::grounding::ground_phrase) on a trace's
/// hidden states for the span delimited by `open_pos`/`close_pos`.
pub fn ground_span(
    flat: &[f64],
    idx: &ParamIndex,
    cfg: &ModelConfig,
    trace: &ForwardTrace,
    n_entities: usize,
    open_pos: usize,
    close_pos: usize,
    proposals: &crate::mask::ProposalSet,
) -> Result<crate::grounding::GroundedPhrase> {
    let d = cfg.d_model;
    let query = cfg.query_mode.combine(
        trace.hidden_at(open_pos, d),
        trace.hidden_at(close_pos, d),
    )?;
    let hiddens = trace.entity_hiddens(n_entities, d);
    crate::grounding::ground_phrase(
        &query,
        &hiddens,
        idx.ground.shape,
        idx.ground.params(flat),
        proposals,
    )
}
