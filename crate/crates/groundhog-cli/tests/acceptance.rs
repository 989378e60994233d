//! Acceptance gate: analytic-gradient fidelity, brute-force oracles,
//! metric identities, end-to-end training quality, ablation plumbing,
//! byte-level determinism, and failure diagnosability.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use groundhog::data::corpus::{gen_corpus, read_jsonl, write_jsonl, CorpusSample, GenConfig};
use groundhog::data::conversation::Task;
use groundhog::data::proposals::PerturbSpec;
use groundhog::eval::{evaluate_corpus, gt_spans, predict_corpus, MetricKind};
use groundhog::io::load_checkpoint;
use groundhog::loss::{
    bce_loss, bce_loss_grad, dice_loss, dice_loss_grad, projection_loss, projection_loss_grad,
    BCE_DELTA,
};
use groundhog::mask::{
    best_match, iou_mask, mask_to_box, merge_proposals, rle_decode, BinaryMask, BoundingBox,
    Pointer, ProposalSet, Provenance, SoftMask, BINARIZE_TAU,
};
use groundhog::metrics::{
    any_iou, binary_qa_metrics, ciou, grounding_f1, miou, PhraseBoxes,
};
use groundhog::model::config::TrainConfig;
use groundhog::model::train::{batch_gradients, Trainer};
use groundhog::model::vocab::Vocabulary;

/// Wall-clock budgets are measured in isolation: every timed test holds
/// this lock so concurrent tests cannot steal its cores.
static TIMED: Mutex<()> = Mutex::new(());

fn timed_guard() -> std::sync::MutexGuard<'static, ()> {
    TIMED.lock().unwrap_or_else(|e| e.into_inner())
}

fn groundhog_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groundhog"))
}

fn res_corpus(n: usize, seed: u64, f: impl FnOnce(&mut GenConfig)) -> Vec<CorpusSample> {
    let mut cfg = GenConfig {
        n_samples: n,
        seed,
        tasks: vec![Task::Res],
        ..GenConfig::default()
    };
    f(&mut cfg);
    gen_corpus(&cfg).expect("corpus generation")
}

// --- 1. gradient fidelity ---------------------------------------------------

fn rand_soft(rng: &mut StdRng, h: usize, w: usize) -> SoftMask {
    SoftMask::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn rand_target(rng: &mut StdRng, h: usize, w: usize) -> Vec<f64> {
    (0..h * w).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

/// Central finite difference of `f` in coordinate `i` of `x`.
fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[test]
fn loss_gradients_match_finite_differences() {
    let _guard = timed_guard();
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(11);
    let h = 1e-4;
    let mut checked = [0usize; 3];

    for _instance in 0..120 {
        let (rows, cols) = (rng.gen_range(3..9), rng.gen_range(3..9));
        let pred = rand_soft(&mut rng, rows, cols);
        let target = rand_target(&mut rng, rows, cols);

        let mut dpred = vec![0.0; pred.probs.len()];
        let dice_val = dice_loss_grad(&pred.probs, &target, 1.0, &mut dpred);
        assert!((dice_val - dice_loss(&pred.probs, &target)).abs() < 1e-12);
        let mut p = pred.probs.clone();
        for _ in 0..3 {
            let i = rng.gen_range(0..p.len());
            let fd = central_diff(&mut p, i, h, |x| dice_loss(x, &target));
            assert!(rel_err(fd, dpred[i]) < 1e-4, "dice grad {} vs fd {}", dpred[i], fd);
            checked[0] += 1;
        }

        let mut dpred = vec![0.0; pred.probs.len()];
        let bce_val = bce_loss_grad(&pred.probs, &target, 1.0, &mut dpred);
        assert!((bce_val - bce_loss(&pred.probs, &target)).abs() < 1e-12);
        let mut p = pred.probs.clone();
        for _ in 0..3 {
            let i = rng.gen_range(0..p.len());
            // documented exclusion: the clamp region, where the loss is flat
            let margin = p[i].min(1.0 - p[i]);
            if margin < BCE_DELTA + 1e-4 {
                continue;
            }
            // the log curvature is ~1/margin^2, so the step must shrink
            // with the margin for the central difference to stay accurate
            let hb = 1e-3 * margin;
            let fd = central_diff(&mut p, i, hb, |x| bce_loss(x, &target));
            assert!(rel_err(fd, dpred[i]) < 1e-4, "bce grad {} vs fd {}", dpred[i], fd);
            checked[1] += 1;
        }

        let gt_mask = BinaryMask::new(
            rows,
            cols,
            target.iter().map(|&t| t == 1.0).collect(),
        )
        .unwrap();
        if gt_mask.is_empty() {
            continue;
        }
        let gt = mask_to_box(&gt_mask).unwrap();
        let mut dpred = vec![0.0; pred.probs.len()];
        let proj_val = projection_loss_grad(&pred, &gt, 1.0, &mut dpred);
        assert!((proj_val - projection_loss(&pred, &gt)).abs() < 1e-12);
        let mut work = pred.clone();
        for _ in 0..3 {
            let i = rng.gen_range(0..work.probs.len());
            let (y, x) = (i / cols, i % cols);
            // documented non-smooth points: profile-max ties, where the
            // subgradient picks the first maximal pixel
            let col_gap = (0..rows)
                .filter(|&r| r != y)
                .map(|r| (work.probs[r * cols + x] - work.probs[i]).abs())
                .fold(f64::INFINITY, f64::min);
            let row_gap = (0..cols)
                .filter(|&c| c != x)
                .map(|c| (work.probs[y * cols + c] - work.probs[i]).abs())
                .fold(f64::INFINITY, f64::min);
            if col_gap < 4.0 * h || row_gap < 4.0 * h {
                continue;
            }
            let orig = work.probs[i];
            work.probs[i] = orig + h;
            let plus = projection_loss(&work, &gt);
            work.probs[i] = orig - h;
            let minus = projection_loss(&work, &gt);
            work.probs[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            assert!(rel_err(fd, dpred[i]) < 1e-4, "proj grad {} vs fd {}", dpred[i], fd);
            checked[2] += 1;
        }
    }

    for (name, n) in ["dice", "bce", "projection"].iter().zip(checked) {
        assert!(n >= 100, "only {n} {name} coordinates checked");
    }
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let _guard = timed_guard();
    let start = Instant::now();

    let samples = res_corpus(4, 42, |c| {
        c.negative_fraction = 0.25;
        c.box_fraction = 0.5;
    });
    let config = TrainConfig { seed: 9, ..TrainConfig::default() };
    let trainer = Trainer::new(config.clone(), Vocabulary::standard()).unwrap();
    let layouts = trainer.prepare(&samples).unwrap();
    let batch: Vec<_> = samples.iter().zip(&layouts).collect();

    let mut store = trainer.store;
    let (_, grads) = batch_gradients(&store, &config, &batch).unwrap();
    let total = |store: &_| {
        let (bundle, _) = batch_gradients(store, &config, &batch).unwrap();
        bundle.total(&config.loss_weights)
    };

    let mut rng = StdRng::seed_from_u64(3);
    let mut checked = 0usize;
    let specs: Vec<(String, std::ops::Range<usize>)> =
        store.layout.specs.iter().map(|s| (s.name.clone(), s.range())).collect();
    for (name, range) in &specs {
        for _ in 0..6 {
            let i = rng.gen_range(range.clone());
            let orig = store.data[i];
            let h = (orig.abs() * 1e-3).max(1e-3) as f32;
            store.data[i] = orig + h;
            let up = store.data[i] as f64;
            let plus = total(&store);
            store.data[i] = orig - h;
            let down = store.data[i] as f64;
            let minus = total(&store);
            store.data[i] = orig;
            let fd = (plus - minus) / (up - down);

            // exclude non-smooth points: a merge or pointer argmax switching
            // winners between theta-h and theta+h makes the two one-sided
            // slopes visibly disagree
            let mid = total(&store);
            let d_plus = (plus - mid) / (up - orig as f64);
            let d_minus = (mid - minus) / (orig as f64 - down);
            if (d_plus - d_minus).abs() > 1e-2 * d_plus.abs().max(d_minus.abs()).max(1.0) {
                continue;
            }

            let err = rel_err(fd, grads[i]);
            assert!(
                err < 1e-3,
                "{name}[{i}]: analytic {} vs fd {fd} (rel {err:.2e})",
                grads[i]
            );
            checked += 1;
        }
    }
    assert!(checked >= 100, "only {checked} parameters checked");
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
}
