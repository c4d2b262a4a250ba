//! Config-driven runs: data preparation, both training phases, evaluation,
//! sweeps and report regeneration.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! data-<id>/   tokenizer.txt segments.csv train.bin val.bin manifest.json
//! run-<id>/    config.toml recon.ckpt recon_metrics.csv recon_timing.csv
//!              lm.ckpt lm_metrics.csv lm_timing.csv
//!              eval_{recon,lm}.json rows_{recon,lm}.json results_*.{csv,md}
//!              manifest.json
//! sweep-<id>/  config.toml rows_{recon,lm}.json baselines.json
//!              results_*.{csv,md} manifest.json
//! ```
//!
//! Ids are content hashes of the config, seed and code version, so a
//! directory never holds artifacts from two different configs.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{encode_documents, load_documents, make_segments, segment_manifest, to_task, CorpusError, Segment, TaskExample, TaskKind, Tokenizer};
use crate::encoders::{compression_ratio, context_token_count, EncoderKind};
use crate::evaluation::{emit_results, perplexity, EvalError, EvalResult, ResultRow, TableFormat};
use crate::model::{Model, ModelError};
use crate::params::ParamGroup;
use crate::training::{load_params, metrics_csv, timing_csv, train_lm, train_reconstruction, Checkpoint, StepMetrics, TrainError, TrainOutcome};

pub use config::{CorpusSection, DecoderChoice, ExperimentConfig, SweepSection, TaskSection, TrainSection, CODE_VERSION};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {detail}", path.display())]
    Artifact { path: PathBuf, detail: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io { path: path.to_path_buf(), source }
    }
}

/// Progress sink for long-running steps.
pub type Log<'a> = &'a mut dyn FnMut(&str);

/// Directory description written next to the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub kind: String,
    pub code_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Artifact file name to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| ExperimentError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ExperimentError::io(path, e))
}

fn read(path: &Path, hint: &str) -> Result<Vec<u8>, ExperimentError> {
    if !path.exists() {
        return Err(ExperimentError::MissingArtifact { path: path.to_path_buf(), hint: hint.to_string() });
    }
    fs::read(path).map_err(|e| ExperimentError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T, ExperimentError> {
    let bytes = read(path, hint)?;
    serde_json::from_slice(&bytes).map_err(|e| ExperimentError::Artifact { path: path.to_path_buf(), detail: e.to_string() })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes to JSON");
    s.push('\n');
    write(path, s)
}

fn mkdir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))
}

/// Rewrites `dir/manifest.json`, hashing every listed artifact present.
fn update_manifest(dir: &Path, kind: &str, id: &str, cfg: &ExperimentConfig, config: serde_json::Value, data_dir: Option<PathBuf>) -> Result<Manifest, ExperimentError> {
    let mut artifacts = BTreeMap::new();
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| ExperimentError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json" && !n.ends_with(".partial"))
        .collect();
    names.sort();
    for n in names {
        let bytes = fs::read(dir.join(&n)).map_err(|e| ExperimentError::io(&dir.join(&n), e))?;
        artifacts.insert(n, hex::encode(Sha256::digest(&bytes)));
    }
    let m = Manifest { id: id.to_string(), kind: kind.to_string(), code_version: CODE_VERSION.to_string(), seed: cfg.seed, config, data_dir, artifacts };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(m)
}

fn tokens_to_bytes(segs: &[Segment]) -> Vec<u8> {
    segs.iter().flat_map(|s| s.tokens.iter().flat_map(|t| t.to_le_bytes())).collect()
}

fn segments_from(path: &Path, bytes: &[u8], offsets: &[usize], seg_len: usize) -> Result<Vec<Segment>, ExperimentError> {
    if bytes.len() != offsets.len() * seg_len * 4 {
        return Err(ExperimentError::Artifact {
            path: path.to_path_buf(),
            detail: format!("{} bytes, expected {} segments of {seg_len} tokens", bytes.len(), offsets.len()),
        });
    }
    let ids: Vec<u32> = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(ids.chunks(seg_len).zip(offsets).map(|(t, &o)| Segment { tokens: t.to_vec(), source_offset: o }).collect())
}

/// Tokenizer plus train and validation segments.
pub struct PreparedData {
    pub dir: PathBuf,
    pub tokenizer: Tokenizer,
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
}

/// Trains the tokenizer, encodes the corpus and cuts segments. Reuses an
/// existing data directory for the same data id.
pub fn prepare_data(cfg: &ExperimentConfig, log: Log) -> Result<PreparedData, ExperimentError> {
    let dir = cfg.data_dir();
    if dir.join("manifest.json").exists() {
        log(&format!("data: reusing {}", dir.display()));
        return load_data(cfg);
    }
    mkdir(&dir)?;
    let docs = load_documents(&cfg.corpus.paths)?;
    let mut text = docs.join("\n");
    if let Some(limit) = cfg.corpus.tokenizer_bytes {
        let mut cut = limit.min(text.len());
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        text.truncate(cut);
    }
    log(&format!("data: training tokenizer on {} bytes, target vocab {}", text.len(), cfg.corpus.vocab));
    let tokenizer = Tokenizer::train(&text, cfg.corpus.vocab)?;
    drop(text);
    let tokens = encode_documents(&tokenizer, &docs);
    log(&format!("data: {} documents, {} tokens, vocab {}", docs.len(), tokens.len(), tokenizer.vocab_size()));
    let (train, val) = make_segments(&tokens, cfg.task.seg_len, cfg.task.n_train, cfg.task.n_val, cfg.seed)?;
    write(&dir.join("tokenizer.txt"), tokenizer.to_text())?;
    write(&dir.join("segments.csv"), segment_manifest(&train, &val))?;
    write(&dir.join("train.bin"), tokens_to_bytes(&train))?;
    write(&dir.join("val.bin"), tokens_to_bytes(&val))?;
    let corpus_sha = hex::encode(docs.iter().fold(Sha256::new(), |h, d| h.chain_update(d.as_bytes())).finalize());
    let config = serde_json::json!({
        "corpus": cfg.corpus,
        "seg_len": cfg.task.seg_len,
        "n_train": cfg.task.n_train,
        "n_val": cfg.task.n_val,
        "corpus_sha256": corpus_sha,
        "corpus_tokens": tokens.len(),
    });
    update_manifest(&dir, "data", &cfg.data_id(), cfg, config, None)?;
    Ok(PreparedData { dir, tokenizer, train, val })
}

/// Loads a prepared data directory.
pub fn load_data(cfg: &ExperimentConfig) -> Result<PreparedData, ExperimentError> {
    let dir = cfg.data_dir();
    let hint = "run `detour prepare-data` with this config first";
    let tok_path = dir.join("tokenizer.txt");
    let tokenizer = Tokenizer::from_text(&String::from_utf8_lossy(&read(&tok_path, hint)?))?;
    let seg_path = dir.join("segments.csv");
    let seg_text = String::from_utf8(read(&seg_path, hint)?).map_err(|e| ExperimentError::Artifact { path: seg_path.clone(), detail: e.to_string() })?;
    let (mut train_off, mut val_off) = (Vec::new(), Vec::new());
    for (i, line) in seg_text.lines().enumerate().skip(1) {
        let bad = || ExperimentError::Artifact { path: seg_path.clone(), detail: format!("line {}: {line:?}", i + 1) };
        let (off, split) = line.split_once(',').ok_or_else(bad)?;
        let off: usize = off.parse().map_err(|_| bad())?;
        match split {
            "train" => train_off.push(off),
            "val" => val_off.push(off),
            _ => return Err(bad()),
        }
    }
    let train_path = dir.join("train.bin");
    let val_path = dir.join("val.bin");
    let train = segments_from(&train_path, &read(&train_path, hint)?, &train_off, cfg.task.seg_len)?;
    let val = segments_from(&val_path, &read(&val_path, hint)?, &val_off, cfg.task.seg_len)?;
    Ok(PreparedData { dir, tokenizer, train, val })
}

/// Task examples for `phase`. LM continuations are cut to
/// `task.continuation` tokens.
pub fn task_examples(cfg: &ExperimentConfig, segs: &[Segment], phase: TaskKind) -> Result<Vec<TaskExample>, ExperimentError> {
    let t = &cfg.task;
    segs.iter()
        .map(|s| {
            let k = if phase == TaskKind::Lm { t.k } else { 0 };
            let mut ex = to_task(s, phase, t.m, k)?;
            ex.continuation.truncate(t.continuation);
            Ok(ex)
        })
        .collect()
}

fn phase_name(p: TaskKind) -> &'static str {
    match p {
        TaskKind::Recon => "recon",
        TaskKind::Lm => "lm",
    }
}

fn run_manifest(cfg: &ExperimentConfig) -> Result<Manifest, ExperimentError> {
    let dir = cfg.run_dir();
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let config = serde_json::to_value(cfg).expect("config serializes to JSON");
    update_manifest(&dir, "run", &cfg.run_id(), cfg, config, Some(cfg.data_dir()))
}

fn progress<'a>(log: &'a mut dyn FnMut(&str), phase: &'static str, total: usize) -> impl FnMut(&StepMetrics) + 'a {
    let every = (total / 20).max(1);
    move |m: &StepMetrics| {
        if m.step % every == 0 || m.step == total {
            log(&format!("{phase}: step {}/{total} loss {:.4} lr {:.3e} grad_norm {:.3}", m.step, m.loss, m.lr, m.grad_norm));
        }
    }
}

fn save_outcome(dir: &Path, phase: &str, out: &TrainOutcome) -> Result<(), ExperimentError> {
    write(&dir.join(format!("{phase}.ckpt")), out.checkpoint.to_bytes())?;
    write(&dir.join(format!("{phase}_metrics.csv")), metrics_csv(&out.metrics))?;
    write(&dir.join(format!("{phase}_timing.csv")), timing_csv(&out.metrics, &out.wallclock))
}

fn handle_divergence(dir: &Path, phase: &str, err: TrainError) -> ExperimentError {
    if let TrainError::Diverged { last_good, .. } = &err {
        let path = dir.join(format!("{phase}.diverged.ckpt"));
        if let Err(e) = write(&path, last_good.to_bytes()) {
            return e;
        }
    }
    err.into()
}

/// Reconstruction phase: writes `recon.ckpt` and its metrics.
pub fn train_recon_phase(cfg: &ExperimentConfig, log: Log) -> Result<Manifest, ExperimentError> {
    if cfg.encoder.kind() == EncoderKind::Truncation {
        return Err(ExperimentError::Config {
            field: "encoder.kind".into(),
            message: "truncation has no encoder output to reconstruct from; run train-lm directly".into(),
        });
    }
    let data = load_data(cfg)?;
    let dir = cfg.run_dir();
    mkdir(&dir)?;
    let examples = task_examples(cfg, &data.train, TaskKind::Recon)?;
    let mut model = Model::<f32>::new(&cfg.decoder_spec()?, &cfg.encoder, cfg.seed)?;
    let tc = cfg.recon_train();
    let total = tc.total_steps(examples.len());
    log(&format!("recon: {} examples, {total} steps, run {}", examples.len(), dir.display()));
    let out = train_reconstruction(&mut model, &examples, &tc, &cfg.run_id(), progress(log, "recon", total))
        .map_err(|e| handle_divergence(&dir, "recon", e))?;
    save_outcome(&dir, "recon", &out)?;
    run_manifest(cfg)
}

/// LM phase: starts from `recon.ckpt` (fresh decoder for truncation) and
/// writes `lm.ckpt` and its metrics.
pub fn train_lm_phase(cfg: &ExperimentConfig, log: Log) -> Result<Manifest, ExperimentError> {
    let data = load_data(cfg)?;
    let dir = cfg.run_dir();
    mkdir(&dir)?;
    let init = if cfg.encoder.kind() == EncoderKind::Truncation {
        None
    } else {
        let path = dir.join("recon.ckpt");
        let ckpt = Checkpoint::from_bytes(&read(&path, "run `detour train-recon` with this config first")?)?;
        check_fingerprint(&path, &ckpt, cfg)?;
        Some(ckpt)
    };
    let examples = task_examples(cfg, &data.train, TaskKind::Lm)?;
    let mut model = Model::<f32>::new(&cfg.decoder_spec()?, &cfg.encoder, cfg.seed)?;
    let tc = cfg.lm_train();
    let total = tc.total_steps(examples.len());
    log(&format!("lm: {} examples, {total} steps, k={}", examples.len(), cfg.task.k));
    let groups = [ParamGroup::Encoder, ParamGroup::Decoder];
    let out = train_lm(&mut model, &examples, &tc, init.as_ref().map(|c| (c, &groups[..])), &cfg.run_id(), progress(log, "lm", total))
        .map_err(|e| handle_divergence(&dir, "lm", e))?;
    save_outcome(&dir, "lm", &out)?;
    run_manifest(cfg)
}

fn check_fingerprint(path: &Path, ckpt: &Checkpoint, cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    if ckpt.fingerprint != cfg.run_id() {
        return Err(ExperimentError::Artifact {
            path: path.to_path_buf(),
            detail: format!("checkpoint fingerprint {} does not match run {}", ckpt.fingerprint, cfg.run_id()),
        });
    }
    Ok(())
}

/// Result row for a finished phase of a single-encoder run.
pub fn result_row(cfg: &ExperimentConfig, model: &Model<f32>, phase: TaskKind, eval: &EvalResult) -> ResultRow {
    let m = cfg.task.m;
    let truncation = cfg.encoder.kind() == EncoderKind::Truncation;
    let k = if phase == TaskKind::Lm { cfg.task.k } else { 0 };
    let ctx_tokens = context_token_count(&cfg.encoder, m, k);
    let mut config = cfg.encoder.describe(m);
    if k > 0 && !truncation {
        config.push_str(&format!(",TT={k}"));
    }
    let (enc_init, dec_init) = match (phase, truncation) {
        (TaskKind::Recon, _) => ("scratch", "scratch"),
        (TaskKind::Lm, false) => ("recon", "recon"),
        (TaskKind::Lm, true) => ("-", "scratch"),
    };
    let tc = if phase == TaskKind::Recon { cfg.recon_train() } else { cfg.lm_train() };
    let params = if tc.freeze.contains(&ParamGroup::Encoder) { 0 } else { model.params.count(Some(ParamGroup::Encoder)) };
    ResultRow {
        id: format!("{}/{}", cfg.run_id(), phase_name(phase)),
        encoder: cfg.encoder.kind(),
        enc_init: enc_init.into(),
        dec_init: dec_init.into(),
        config,
        ctx_tokens,
        compression: compression_ratio(m, ctx_tokens),
        params,
        ppl: eval.ppl,
        delta_ppl: None,
    }
}

/// Validation perplexity for every phase checkpoint present in the run
/// directory. Writes `eval_<phase>.json` and `rows_<phase>.json`.
pub fn evaluate(cfg: &ExperimentConfig, log: Log) -> Result<Vec<ResultRow>, ExperimentError> {
    let data = load_data(cfg)?;
    let dir = cfg.run_dir();
    let mut rows = Vec::new();
    for phase in [TaskKind::Recon, TaskKind::Lm] {
        let name = phase_name(phase);
        let path = dir.join(format!("{name}.ckpt"));
        if !path.exists() {
            continue;
        }
        let ckpt = Checkpoint::load(&path)?;
        check_fingerprint(&path, &ckpt, cfg)?;
        let mut model = Model::<f32>::new(&cfg.decoder_spec()?, &cfg.encoder, cfg.seed)?;
        load_params(&mut model.params, &ckpt.params, &[ParamGroup::Encoder, ParamGroup::Decoder])?;
        let examples = task_examples(cfg, &data.val, phase)?;
        let eval = perplexity(&model, &examples, phase, "val")?;
        log(&format!("eval {name}: ppl {:.4} over {} tokens", eval.ppl, eval.n_tokens_scored));
        let row = result_row(cfg, &model, phase, &eval);
        write_json(&dir.join(format!("eval_{name}.json")), &eval)?;
        write_json(&dir.join(format!("rows_{name}.json")), &vec![row.clone()])?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ExperimentError::MissingArtifact {
            path: dir.join("lm.ckpt"),
            hint: "train a phase (`detour train-recon` or `detour train-lm`) before evaluating".into(),
        });
    }
    run_manifest(cfg)?;
    Ok(rows)
}

/// Baseline registry: phase name to the id of its ΔPPL baseline row.
pub type Baselines = BTreeMap<String, String>;

/// Rebuilds `results_<phase>.<ext>` from the stored rows and baselines of
/// `dir`. Returns the written paths with their contents.
pub fn report(dir: &Path, formats: &[TableFormat]) -> Result<Vec<(PathBuf, String)>, ExperimentError> {
    let baselines: Baselines = if dir.join("baselines.json").exists() { read_json(&dir.join("baselines.json"), "")? } else { Baselines::new() };
    let mut written = Vec::new();
    for phase in ["recon", "lm"] {
        let path = dir.join(format!("rows_{phase}.json"));
        if !path.exists() {
            continue;
        }
        let mut rows: Vec<ResultRow> = read_json(&path, "")?;
        if let Some(base_id) = baselines.get(phase) {
            let base = rows.iter().find(|r| &r.id == base_id).cloned().ok_or_else(|| ExperimentError::Artifact {
                path: dir.join("baselines.json"),
                detail: format!("baseline {base_id} is not among the {phase} rows"),
            })?;
            for r in &mut rows {
                r.delta_ppl = Some(crate::evaluation::delta_ppl(r, &base));
            }
        }
        for &f in formats {
            let ext = match f {
                TableFormat::Csv => "csv",
                TableFormat::Markdown => "md",
            };
            let out = dir.join(format!("results_{phase}.{ext}"));
            let text = emit_results(&rows, f)?;
            write(&out, &text)?;
            written.push((out, text));
        }
    }
    if written.is_empty() {
        return Err(ExperimentError::MissingArtifact {
            path: dir.join("rows_lm.json"),
            hint: "run `detour eval` or `detour sweep` first".into(),
        });
    }
    Ok(written)
}

/// Runs every stage a single-encoder config needs, skipping stages whose
/// outputs already exist.
pub fn run_all(cfg: &ExperimentConfig, log: Log) -> Result<Vec<ResultRow>, ExperimentError> {
    prepare_data(cfg, log)?;
    let dir = cfg.run_dir();
    if cfg.encoder.kind() != EncoderKind::Truncation && !dir.join("recon.ckpt").exists() {
        train_recon_phase(cfg, log)?;
    }
    if !dir.join("lm.ckpt").exists() {
        train_lm_phase(cfg, log)?;
    }
    evaluate(cfg, log)
}

/// Runs every sweep member in order, then writes the combined rows,
/// baseline registry and tables to the sweep directory.
pub fn sweep(cfg: &ExperimentConfig, log: Log) -> Result<PathBuf, ExperimentError> {
    let members = cfg.sweep_members()?;
    let mut recon_rows = Vec::new();
    let mut lm_rows = Vec::new();
    let mut ids = Vec::new();
    for (i, member) in members.iter().enumerate() {
        log(&format!("sweep: member {}/{} {} {}", i + 1, members.len(), member.encoder.kind(), member.encoder.describe(member.task.m)));
        let rows = run_all(member, log)?;
        for r in rows {
            if r.id.ends_with("/recon") {
                recon_rows.push(r);
            } else {
                lm_rows.push(r);
            }
        }
        ids.push(member.run_id());
    }
    let dir = cfg.run_dir();
    mkdir(&dir)?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let mut baselines = Baselines::new();
    if let Some(b) = cfg.sweep.as_ref().and_then(|s| s.baseline) {
        let id = &ids[b];
        for (phase, rows) in [("recon", &recon_rows), ("lm", &lm_rows)] {
            if let Some(r) = rows.iter().find(|r| r.id.starts_with(id.as_str())) {
                baselines.insert(phase.to_string(), r.id.clone());
            }
        }
    }
    write_json(&dir.join("baselines.json"), &baselines)?;
    if !recon_rows.is_empty() {
        write_json(&dir.join("rows_recon.json"), &recon_rows)?;
    }
    write_json(&dir.join("rows_lm.json"), &lm_rows)?;
    report(&dir, &[TableFormat::Csv, TableFormat::Markdown])?;
    let config = serde_json::json!({ "sweep": serde_json::to_value(cfg).expect("config serializes"), "members": ids });
    update_manifest(&dir, "sweep", &cfg.run_id(), cfg, config, Some(cfg.data_dir()))?;
    Ok(dir)
}
