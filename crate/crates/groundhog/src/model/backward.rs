//! Exact backward pass through the transformer and entity projections.
//!
//! Inputs are the forward trace plus two upstream gradients: `dlogits`
//! (T×V, from the LM loss) and `dhidden` (T×d, gradients w.r.t. the
//! post-final-norm hidden states accumulated by the grounding losses).
//! Parameter gradients accumulate into one flat f64 vector aligned with
//! the parameter enumeration.

use crate::model::config::ModelConfig;
use crate::model::forward::{BlockCache, ForwardTrace, LnCache};
use crate::model::layout::{Item, SequenceLayout};
use crate::model::params::ParamIndex;
use crate::nn::{gelu_grad, linear_backward, mlp_backward};

/// Backward of [`layer_norm`](crate::model::forward::layer_norm) for one
/// whole sequence; accumulates into `dgain`, `dbias`, `dx`.
pub fn layer_norm_backward(
    cache: &LnCache,
    gain: &[f64],
    dy: &[f64],
    d: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let t = cache.rstd.len();
    for p in 0..t {
        let xhat = &cache.xhat[p * d..(p + 1) * d];
        let dyp = &dy[p * d..(p + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            let dxh = dyp[i] * gain[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i];
            dgain[i] += dyp[i] * xhat[i];
            dbias[i] += dyp[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let r = cache.rstd[p];
        for i in 0..d {
            let dxh = dyp[i] * gain[i];
            dx[p * d + i] += r * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }
}

fn block_backward(
    flat: &[f64],
    b: &crate::model::params::BlockRanges,
    cache: &BlockCache,
    dx_out: &[f64],
    cfg: &ModelConfig,
    t_len: usize,
    grads: &mut [f64],
) -> Vec<f64> {
    let d = cfg.d_model;
    let f = cfg.ffn_dim();
    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // x_out = x_mid + ffn(ln2(x_mid))
    let mut dx_mid = dx_out.to_vec();
    let mut dln2_out = vec![0.0; t_len * d];
    {
        let w1 = &flat[b.ffn_w1.clone()];
        let w2 = &flat[b.ffn_w2.clone()];
        for p in 0..t_len {
            let dffn = &dx_out[p * d..(p + 1) * d];
            let mut dact = vec![0.0; f];
            {
                let (gw2, gb2) = {
                    let seg = &mut grads[b.ffn_w2.start..b.ffn_b2.end];
                    seg.split_at_mut(b.ffn_w2.len())
                };
                linear_backward(
                    w2,
                    &cache.ffn_act[p * f..(p + 1) * f],
                    dffn,
                    gw2,
                    gb2,
                    &mut dact,
                );
            }
            let dpre: Vec<f64> = (0..f)
                .map(|i| dact[i] * gelu_grad(cache.ffn_pre[p * f + i]))
                .collect();
            let (gw1, gb1) = {
                let seg = &mut grads[b.ffn_w1.start..b.ffn_b1.end];
                seg.split_at_mut(b.ffn_w1.len())
            };
            linear_backward(
                w1,
                &cache.ln2.out[p * d..(p + 1) * d],
                &dpre,
                gw1,
                gb1,
                &mut dln2_out[p * d..(p + 1) * d],
            );
        }
    }
    {
        let (g2g, g2b) = {
            let seg = &mut grads[b.ln2_gain.start..b.ln2_bias.end];
            seg.split_at_mut(b.ln2_gain.len())
        };
        layer_norm_backward(&cache.ln2, &flat[b.ln2_gain.clone()], &dln2_out, d, g2g, g2b, &mut dx_mid);
    }

    // x_mid = x_in + wo·ctx + bo
    let mut dx_in = dx_mid.clone();
    let mut dctx = vec![0.0; t_len * d];
    {
        let wo = &flat[b.wo.clone()];
        for p in 0..t_len {
            let (gwo, gbo) = {
                let seg = &mut grads[b.wo.start..b.bo.end];
                seg.split_at_mut(b.wo.len())
            };
            linear_backward(
                wo,
                &cache.ctx[p * d..(p + 1) * d],
                &dx_mid[p * d..(p + 1) * d],
                gwo,
                gbo,
                &mut dctx[p * d..(p + 1) * d],
            );
        }
    }

    // attention: ctx_p^h = Σ_{u≤p} probs_{p,u} v_u^h
    let mut dq = vec![0.0; t_len * d];
    let mut dk = vec![0.0; t_len * d];
    let mut dv = vec![0.0; t_len * d];
    for h in 0..heads {
        let hoff = h * dh;
        for p in 0..t_len {
            let row = &cache.probs[(h * t_len + p) * t_len..(h * t_len + p + 1) * t_len];
            let dctx_p = &dctx[p * d + hoff..p * d + hoff + dh];
            let mut dprobs = vec![0.0; p + 1];
            for (u, dp) in dprobs.iter_mut().enumerate() {
                let vv = &cache.v[u * d + hoff..u * d + hoff + dh];
                *dp = dctx_p.iter().zip(vv).map(|(a, b)| a * b).sum();
                let w = row[u];
                let dvu = &mut dv[u * d + hoff..u * d + hoff + dh];
                for i in 0..dh {
                    dvu[i] += w * dctx_p[i];
                }
            }
            // softmax backward
            let dot: f64 = dprobs.iter().zip(row).map(|(a, b)| a * b).sum();
            let qv = &cache.q[p * d + hoff..p * d + hoff + dh];
            for u in 0..=p {
                let dscore = row[u] * (dprobs[u] - dot) * scale;
                let kv = &cache.k[u * d + hoff..u * d + hoff + dh];
                let dqp = &mut dq[p * d + hoff..p * d + hoff + dh];
                for i in 0..dh {
                    dqp[i] += dscore * kv[i];
                }
                let dku = &mut dk[u * d + hoff..u * d + hoff + dh];
                for i in 0..dh {
                    dku[i] += dscore * qv[i];
                }
            }
        }
    }

    // q/k/v projections share the ln1 output as input
    let mut dln1_out = vec![0.0; t_len * d];
    for p in 0..t_len {
        let inp = &cache.ln1.out[p * d..(p + 1) * d];
        let dst = &mut dln1_out[p * d..(p + 1) * d];
        for (w_range, b_range, dvec) in [
            (&b.wq, &b.bq, &dq),
            (&b.wk, &b.bk, &dk),
            (&b.wv, &b.bv, &dv),
        ] {
            let w = &flat[w_range.clone()];
            let (gw, gb) = {
                let seg = &mut grads[w_range.start..b_range.end];
                seg.split_at_mut(w_range.len())
            };
            linear_backward(w, inp, &dvec[p * d..(p + 1) * d], gw, gb, dst);
        }
    }
    {
        let (g1g, g1b) = {
            let seg = &mut grads[b.ln1_gain.start..b.ln1_bias.end];
            seg.split_at_mut(b.ln1_gain.len())
        };
        layer_norm_backward(&cache.ln1, &flat[b.ln1_gain.clone()], &dln1_out, d, g1g, g1b, &mut dx_in);
    }
    dx_in
}

/// Backpropagate `dlogits` (T×V) and `dhidden` (T×d, post-final-norm)
/// through the whole model, accumulating into `grads`.
pub fn backward(
    flat: &[f64],
    idx: &ParamIndex,
    cfg: &ModelConfig,
    layout: &SequenceLayout,
    trace: &ForwardTrace,
    dlogits: &[f64],
    dhidden: &[f64],
    grads: &mut [f64],
) {
    let d = cfg.d_model;
    let t_len = trace.seq_len;
    let vocab = idx.lm_b.len();
    debug_assert_eq!(dlogits.len(), t_len * vocab);
    debug_assert_eq!(dhidden.len(), t_len * d);
    debug_assert_eq!(grads.len(), flat.len());

    // LM head
    let mut dfinal = dhidden.to_vec();
    {
        let w = &flat[idx.lm_w.clone()];
        for p in 0..t_len {
            let drow = &dlogits[p * vocab..(p + 1) * vocab];
            if drow.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (gw, gb) = {
                let seg = &mut grads[idx.lm_w.start..idx.lm_b.end];
                seg.split_at_mut(idx.lm_w.len())
            };
            linear_backward(
                w,
                trace.hidden_at(p, d),
                drow,
                gw,
                gb,
                &mut dfinal[p * d..(p + 1) * d],
            );
        }
    }

    // final layer norm
    let mut dx = vec![0.0; t_len * d];
    {
        let (gg, gb) = {
            let seg = &mut grads[idx.final_ln_gain.start..idx.final_ln_bias.end];
            seg.split_at_mut(idx.final_ln_gain.len())
        };
        layer_norm_backward(&trace.final_ln, &flat[idx.final_ln_gain.clone()], &dfinal, d, gg, gb, &mut dx);
    }

    // blocks, last to first
    for (l, b) in idx.blocks.iter().enumerate().rev() {
        dx = block_backward(flat, b, &trace.blocks[l], &dx, cfg, t_len, grads);
    }

    // embeddings and entity tokens
    let mut dtokens = vec![vec![0.0; d]; trace.entity_tokens.len()];
    for (p, item) in layout.items.iter().enumerate() {
        let dxp = &dx[p * d..(p + 1) * d];
        for i in 0..d {
            grads[idx.pos_emb.start + p * d + i] += dxp[i];
        }
        match *item {
            Item::Entity(q) => {
                for i in 0..d {
                    dtokens[q][i] += dxp[i];
                }
            }
            Item::Word(id) => {
                for i in 0..d {
                    grads[idx.tok_emb.start + id * d + i] += dxp[i];
                }
            }
        }
    }
    for (q, dtok) in dtokens.iter().enumerate() {
        if dtok.iter().all(|&v| v == 0.0) {
            continue;
        }
        let ent = &trace.entity_tokens[q];
        if let Some(t) = &ent.color {
            let p = idx.proj_color.params(flat);
            let mut g = idx.proj_color.grads(grads);
            mlp_backward(idx.proj_color.shape, p, t, dtok, &mut g);
        }
        if let Some(t) = &ent.structure {
            let p = idx.proj_structure.params(flat);
            let mut g = idx.proj_structure.grads(grads);
            mlp_backward(idx.proj_structure.shape, p, t, dtok, &mut g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::conversation::Task;
    use crate::data::corpus::{gen_corpus, GenConfig};
    use crate::model::forward::forward;
    use crate::model::params::ParamStore;
    use crate::model::vocab::Vocabulary;
    use rand::Rng;

    fn setup(task: Task) -> (ModelConfig, ParamStore, SequenceLayout) {
        let cfg = ModelConfig::default();
        let vocab = Vocabulary::standard();
        let store = ParamStore::init(&cfg, vocab.len(), 11);
        let gen = GenConfig {
            n_samples: 1,
            seed: 21,
            tasks: vec![task],
            negative_fraction: 0.0,
            ..GenConfig::default()
        };
        let sample = gen_corpus(&gen).unwrap().remove(0);
        let layout = SequenceLayout::build(&sample, &vocab, &cfg).unwrap();
        (cfg, store, layout)
    }

    /// Scalar functional: fixed random linear combination of logits and
    /// hidden states, so its gradient exercises every model path.
    fn functional(
        flat: &[f64],
        store: &ParamStore,
        cfg: &ModelConfig,
        layout: &SequenceLayout,
        dlogits: &[f64],
        dhidden: &[f64],
    ) -> f64 {
        let trace = forward(flat, &store.layout.index, cfg, layout).unwrap();
        let a: f64 = trace.logits.iter().zip(dlogits).map(|(x, d)| x * d).sum();
        let b: f64 = trace.final_ln.out.iter().zip(dhidden).map(|(x, d)| x * d).sum();
        a + b
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let (cfg, store, layout) = setup(Task::Rd);
        let flat = store.snapshot();
        let vocab = store.layout.index.lm_b.len();
        let t_len = layout.len();
        let mut rng = crate::seeds::rng(3, "fd");
        let dlogits: Vec<f64> =
            (0..t_len * vocab).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dhidden: Vec<f64> =
            (0..t_len * cfg.d_model).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let trace = forward(&flat, &store.layout.index, &cfg, &layout).unwrap();
        let mut grads = vec![0.0; flat.len()];
        backward(&flat, &store.layout.index, &cfg, &layout, &trace, &dlogits, &dhidden, &mut grads);

        // a handful of indices from every parameter group
        let mut picks = Vec::new();
        for spec in &store.layout.specs {
            let r = spec.range();
            picks.push(r.start);
            picks.push(r.start + r.len() / 2);
            picks.push(r.end - 1);
        }
        let eps = 1e-5;
        for &i in &picks {
            let mut plus = flat.clone();
            plus[i] += eps;
            let mut minus = flat.clone();
            minus[i] -= eps;
            let fd = (functional(&plus, &store, &cfg, &layout, &dlogits, &dhidden)
                - functional(&minus, &store, &cfg, &layout, &dlogits, &dhidden))
                / (2.0 * eps);
            let denom = fd.abs().max(grads[i].abs()).max(1e-4);
            assert!(
                (grads[i] - fd).abs() / denom < 1e-4,
                "param {i}: analytic {} vs fd {fd}",
                grads[i]
            );
        }
    }

    #[test]
    fn zero_upstream_means_zero_grads() {
        let (cfg, store, layout) = setup(Task::Res);
        let flat = store.snapshot();
        let vocab = store.layout.index.lm_b.len();
        let trace = forward(&flat, &store.layout.index, &cfg, &layout).unwrap();
        let mut grads = vec![0.0; flat.len()];
        backward(
            &flat,
            &store.layout.index,
            &cfg,
            &layout,
            &trace,
            &vec![0.0; layout.len() * vocab],
            &vec![0.0; layout.len() * cfg.d_model],
            &mut grads,
        );
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn entity_gradients_reach_projections() {
        let (cfg, store, layout) = setup(Task::Res);
        let flat = store.snapshot();
        let vocab = store.layout.index.lm_b.len();
        let trace = forward(&flat, &store.layout.index, &cfg, &layout).unwrap();
        let mut grads = vec![0.0; flat.len()];
        // gradient only at an entity-prefix hidden state
        let mut dhidden = vec![0.0; layout.len() * cfg.d_model];
        dhidden[0] = 1.0;
        backward(
            &flat,
            &store.layout.index,
            &cfg,
            &layout,
            &trace,
            &vec![0.0; layout.len() * vocab],
            &dhidden,
            &mut grads,
        );
        let idx = &store.layout.index;
        let sum_abs = |r: std::ops::Range<usize>| grads[r].iter().map(|g| g.abs()).sum::<f64>();
        assert!(sum_abs(idx.proj_color.w1.clone()) > 0.0);
        assert!(sum_abs(idx.proj_structure.w1.clone()) > 0.0);
        assert!(sum_abs(idx.pos_emb.clone()) > 0.0);
        // untouched by a hidden-only functional at position 0: no LM grads
        assert_eq!(sum_abs(idx.lm_w.clone()), 0.0);
    }
}
