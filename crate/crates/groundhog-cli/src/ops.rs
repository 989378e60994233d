//! The five commands: corpus generation, training, evaluation, single
//! prompt grounding, and per-proposal diagnosis.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use groundhog::data::conversation::{
    GroundedConversation, Role, Task, Turn, ASSISTANT_MARK, BOS, EOS, GRD_CLOSE, GRD_OPEN, PAD,
    PTR_TOKEN, USER_MARK,
};
use groundhog::data::corpus::{
    gen_corpus, read_jsonl, write_jsonl, CorpusSample, CorpusStats, SCHEMA,
};
use groundhog::data::scene::Scene;
use groundhog::eval::{evaluate_corpus, predict_sample, MetricKind, SamplePrediction};
use groundhog::io::{load_checkpoint, save_checkpoint, Checkpoint};
use groundhog::mask::{rle_encode, ProposalSet, RleMask, BINARIZE_TAU};
use groundhog::model::train::Trainer;
use groundhog::model::vocab::Vocabulary;

use crate::config::RunConfig;
use crate::ppm;
use crate::CliError;

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn gen_data(
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    n: Option<usize>,
) -> Result<(), CliError> {
    let mut run = RunConfig::load(config)?;
    if let Some(s) = seed {
        run.gen.seed = s;
    }
    if let Some(n) = n {
        run.gen.n_samples = n;
    }
    log::info!("generating {} samples with seed {}", run.gen.n_samples, run.gen.seed);
    let samples = gen_corpus(&run.gen)?;
    write_jsonl(out, &samples)?;
    let mut stats = CorpusStats::default();
    for s in &samples {
        stats.record(s);
    }
    let summary = json!({
        "n_samples": samples.len(),
        "seed": run.gen.seed,
        "out": out,
        "stats": stats,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("stats serialize"));
    Ok(())
}

pub fn train(
    corpus: &Path,
    config: Option<&Path>,
    out_ckpt: &Path,
    resume: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<(), CliError> {
    let run = RunConfig::load(config)?;
    let samples = read_jsonl(corpus)?;
    log::info!("loaded {} samples from {}", samples.len(), corpus.display());

    let mut trainer = match resume {
        Some(stem) => {
            let ck = load_checkpoint(stem)?;
            log::info!("resuming from {} at step {}", stem.display(), ck.step);
            Trainer::with_store(ck.config, ck.vocab, ck.store, ck.step)
        }
        None => Trainer::new(run.train.clone(), Vocabulary::standard())?,
    };

    let log_path: PathBuf = match log_path {
        Some(p) => p.to_path_buf(),
        None => out_ckpt.with_extension("log.jsonl"),
    };
    let mut log_file = BufWriter::new(File::create(&log_path).map_err(|e| {
        CliError::Data(format!("cannot create log {}: {e}", log_path.display()))
    })?);

    let mut io_err = None;
    let final_losses = trainer.train(&samples, |rec| {
        log::debug!("step {} total {:.4}", rec.step, rec.total);
        let line = serde_json::to_string(rec).expect("log record serialize");
        if let Err(e) = writeln!(log_file, "{line}") {
            io_err.get_or_insert(e);
        }
    })?;
    log_file.flush().map_err(|e| CliError::Data(format!("log write failed: {e}")))?;
    if let Some(e) = io_err {
        return Err(CliError::Data(format!("log write failed: {e}")));
    }

    save_checkpoint(out_ckpt, &trainer.config, &trainer.vocab, &trainer.store, trainer.step)?;
    let summary = json!({
        "steps": trainer.step,
        "checkpoint": out_ckpt,
        "log": log_path,
        "final_losses": final_losses,
        "final_total": final_losses.total(&trainer.config.loss_weights),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialize"));
    Ok(())
}

fn parse_metrics(list: &str) -> Result<Vec<MetricKind>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| MetricKind::parse(name).map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

pub fn eval(
    ckpt: &Path,
    corpus: &Path,
    metrics: &str,
    out: Option<&Path>,
    predictions: Option<&Path>,
) -> Result<(), CliError> {
    let kinds = parse_metrics(metrics)?;
    if kinds.is_empty() {
        return Err(CliError::Usage("no metrics requested".into()));
    }
    let ck = load_checkpoint(ckpt)?;
    let samples = read_jsonl(corpus)?;
    log::info!("evaluating {} samples against {}", samples.len(), ckpt.display());
    let (preds, reports) =
        evaluate_corpus(&ck.store, &ck.config.model, &ck.vocab, &samples, &kinds)?;

    if let Some(path) = predictions {
        let mut w = BufWriter::new(File::create(path).map_err(|e| {
            CliError::Data(format!("cannot create {}: {e}", path.display()))
        })?);
        for p in &preds {
            let line = serde_json::to_string(p).expect("prediction serialize");
            writeln!(w, "{line}")
                .map_err(|e| CliError::Data(format!("prediction write failed: {e}")))?;
        }
        w.flush().map_err(|e| CliError::Data(format!("prediction write failed: {e}")))?;
    }

    let report = json!({
        "checkpoint": ckpt,
        "corpus": corpus,
        "n_samples": samples.len(),
        "metrics": reports,
    });
    write_or_print(out, &serde_json::to_string_pretty(&report).expect("report serialize"))
}

/// A grounding scene on disk: the image stand-in plus its mask
/// proposals. Corpus JSONL lines parse as scene files too.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene: Scene,
    pub proposals: ProposalSet,
}

fn read_scene(path: &Path) -> Result<SceneFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read scene {}: {e}", path.display())))?;
    let file: SceneFile = serde_json::from_str(text.trim())
        .map_err(|e| CliError::Data(format!("invalid scene {}: {e}", path.display())))?;
    file.scene
        .validate()
        .map_err(|e| CliError::Data(format!("invalid scene {}: {e}", path.display())))?;
    Ok(file)
}

const RESERVED: [&str; 8] =
    [GRD_OPEN, GRD_CLOSE, PTR_TOKEN, BOS, EOS, PAD, USER_MARK, ASSISTANT_MARK];

/// Build a single-user-turn sample around a free-text prompt.
fn prompt_sample(file: SceneFile, vocab: &Vocabulary, text: &str) -> Result<CorpusSample, CliError> {
    for word in text.split_whitespace() {
        if RESERVED.contains(&word) {
            return Err(CliError::Usage(format!("reserved token {word:?} in prompt")));
        }
        if vocab.id(word).is_none() {
            return Err(CliError::Usage(format!("out-of-vocabulary word {word:?} in prompt")));
        }
    }
    Ok(CorpusSample {
        schema: SCHEMA.to_string(),
        seed: 0,
        scene: file.scene,
        proposals: file.proposals,
        conversation: GroundedConversation {
            task: Task::Res,
            source: "cli".into(),
            turns: vec![Turn {
                role: Role::User,
                text: text.to_string(),
                spans: vec![],
                pointers: vec![],
            }],
        },
    })
}

fn grounded_prediction(
    ck: &Checkpoint,
    scene: &Path,
    text: &str,
) -> Result<(CorpusSample, SamplePrediction), CliError> {
    let file = read_scene(scene)?;
    let sample = prompt_sample(file, &ck.vocab, text)?;
    let pred = predict_sample(&ck.store, &ck.config.model, &ck.vocab, &sample, 0)?;
    Ok((sample, pred))
}

pub fn ground(
    ckpt: &Path,
    scene: &Path,
    text: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ck = load_checkpoint(ckpt)?;
    let (_, pred) = grounded_prediction(&ck, scene, text)?;
    log::info!("decoded {} grounded phrases", pred.records.len());
    let report = json!({
        "prompt": text,
        "text": pred.text,
        "phrases": pred.records,
        "warnings": pred.warnings,
    });
    write_or_print(out, &serde_json::to_string_pretty(&report).expect("report serialize"))
}

/// One scored proposal in a diagnosis, ranked by score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosisEntry {
    pub proposal: usize,
    pub score: f64,
    pub provenance: String,
    pub selected: bool,
    pub mask: RleMask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhraseDiagnosis {
    pub text: String,
    pub topk: usize,
    pub entries: Vec<DiagnosisEntry>,
    pub merged: RleMask,
}

pub fn diagnose(
    ckpt: &Path,
    scene: &Path,
    text: &str,
    topk: usize,
    ppm_dir: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if topk == 0 {
        return Err(CliError::Usage("--topk must be at least 1".into()));
    }
    let ck = load_checkpoint(ckpt)?;
    let (sample, pred) = grounded_prediction(&ck, scene, text)?;

    let mut notices = Vec::new();
    let k = topk.min(sample.proposals.len());
    if k < topk {
        let n = sample.proposals.len();
        notices.push(format!("topk {topk} clamped to the {n} available proposals"));
        log::info!("topk {topk} clamped to {n}");
    }

    if let Some(dir) = ppm_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }

    let mut phrases = Vec::new();
    for (i, rec) in pred.records.iter().enumerate() {
        let mut order: Vec<usize> = (0..rec.score_vector.len()).collect();
        order.sort_by(|&a, &b| {
            rec.score_vector[b].partial_cmp(&rec.score_vector[a]).expect("finite scores")
        });
        order.truncate(k);

        let mut entries = Vec::new();
        for (rank, &q) in order.iter().enumerate() {
            let selected = rec.score_vector[q] > groundhog::grounding::SELECT_TAU;
            entries.push(DiagnosisEntry {
                proposal: q,
                score: rec.score_vector[q],
                provenance: format!("{:?}", sample.proposals.provenance(q)).to_lowercase(),
                selected,
                mask: rle_encode(&sample.proposals.mask(q).binarize(BINARIZE_TAU)),
            });
            if let Some(dir) = ppm_dir {
                let tint = if selected { ppm::OVERLAY_GREEN } else { ppm::OVERLAY_RED };
                let rgb = ppm::render_overlay(&sample.scene, sample.proposals.mask(q), tint);
                let verdict = if selected { "selected" } else { "rejected" };
                let name = format!("phrase{i}_rank{rank}_proposal{q}_{verdict}.ppm");
                ppm::write_p6(&dir.join(name), sample.scene.h, sample.scene.w, &rgb)?;
            }
        }
        if let Some(dir) = ppm_dir {
            let merged = groundhog::mask::rle_decode(&rec.mask)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let rgb = ppm::render_gray(&merged.to_soft());
            ppm::write_p6(
                &dir.join(format!("phrase{i}_merged.ppm")),
                sample.scene.h,
                sample.scene.w,
                &rgb,
            )?;
        }
        phrases.push(PhraseDiagnosis {
            text: rec.text.clone(),
            topk: k,
            entries,
            merged: rec.mask.clone(),
        });
    }

    let report = json!({
        "prompt": text,
        "text": pred.text,
        "topk_requested": topk,
        "phrases": phrases,
        "notices": notices,
        "warnings": pred.warnings,
    });
    write_or_print(out, &serde_json::to_string_pretty(&report).expect("report serialize"))
}
