use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::MIN_VOCAB;
use crate::decoder::DecoderSpec;
use crate::encoders::{EncoderConfig, EncoderKind};
use crate::training::TrainConfig;

use super::ExperimentError;

/// Code version folded into every content hash.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Text files, `.jsonl` files or directories of them.
    pub paths: Vec<PathBuf>,
    /// Target tokenizer vocabulary; also the decoder vocabulary.
    pub vocab: usize,
    /// Train the tokenizer on at most this many leading corpus bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer_bytes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub seg_len: usize,
    /// Context tokens handed to the encoder.
    pub m: usize,
    /// Continuation tokens scored in the LM phase.
    pub continuation: usize,
    /// Uncompressed text tail in the LM phase.
    #[serde(default)]
    pub k: usize,
    pub n_train: usize,
    pub n_val: usize,
}

/// Either a named spec (`"desk"`, `"full"`) or an inline table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecoderChoice {
    Named(String),
    Inline(DecoderSpec),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub recon: TrainConfig,
    pub lm: TrainConfig,
    /// LM settings for truncation runs, which have no reconstruction phase
    /// and start from a fresh decoder. Falls back to `lm`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_lm: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub encoders: Vec<EncoderConfig>,
    /// Index into `encoders` of the row that ΔPPL is measured against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<usize>,
}

/// One experiment. The top-level `seed` drives segmentation, parameter
/// init and data order; `seed` inside the train sections is overwritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub task: TaskSection,
    pub encoder: EncoderConfig,
    pub decoder: DecoderChoice,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn field(name: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Config { field: name.to_string(), message: message.into() }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" at bytes {}..{}", s.start, s.end)).unwrap_or_default();
            ExperimentError::Parse(format!("{}{span}", e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes to TOML")
    }

    /// Named specs take their vocabulary from `corpus.vocab`.
    pub fn decoder_spec(&self) -> Result<DecoderSpec, ExperimentError> {
        match &self.decoder {
            DecoderChoice::Named(name) => {
                let mut spec = DecoderSpec::named(name).ok_or_else(|| field("decoder", format!("unknown spec name {name:?}; expected \"desk\" or \"full\"")))?;
                spec.vocab = self.corpus.vocab;
                Ok(spec)
            }
            DecoderChoice::Inline(spec) => Ok(spec.clone()),
        }
    }

    /// Train settings for `phase` with the experiment seed applied.
    pub fn recon_train(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.recon.clone() }
    }

    pub fn lm_train(&self) -> TrainConfig {
        let base = match (&self.train.truncation_lm, self.encoder.kind()) {
            (Some(t), EncoderKind::Truncation) => t,
            _ => &self.train.lm,
        };
        TrainConfig { seed: self.seed, ..base.clone() }
    }

    /// Cross-field checks. Errors name the offending field.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let t = &self.task;
        if self.corpus.paths.is_empty() {
            return Err(field("corpus.paths", "at least one path is required"));
        }
        if self.corpus.vocab < MIN_VOCAB {
            return Err(field("corpus.vocab", format!("must be >= {MIN_VOCAB}, got {}", self.corpus.vocab)));
        }
        if t.seg_len == 0 {
            return Err(field("task.seg_len", "must be >= 1"));
        }
        if t.m == 0 || t.m > t.seg_len {
            return Err(field("task.m", format!("must be in 1..={}, got {}", t.seg_len, t.m)));
        }
        if t.continuation == 0 || t.m + t.continuation > t.seg_len {
            return Err(field("task.continuation", format!("m + continuation must be in {}..={}, got {}", t.m + 1, t.seg_len, t.m + t.continuation)));
        }
        if t.k > t.m {
            return Err(field("task.k", format!("text tail {} exceeds context m={}", t.k, t.m)));
        }
        if t.n_train == 0 {
            return Err(field("task.n_train", "must be >= 1"));
        }
        if t.n_val == 0 {
            return Err(field("task.n_val", "must be >= 1"));
        }
        let spec = self.decoder_spec()?;
        spec.validate().map_err(|e| field("decoder", e.to_string()))?;
        if spec.vocab != self.corpus.vocab {
            return Err(field("decoder.vocab", format!("{} differs from corpus.vocab {}", spec.vocab, self.corpus.vocab)));
        }
        check_encoder(&self.encoder, "encoder", spec.d, spec.vocab, t.m)?;
        self.train.recon.validate().map_err(|e| field("train.recon", e.to_string()))?;
        self.train.lm.validate().map_err(|e| field("train.lm", e.to_string()))?;
        if let Some(tl) = &self.train.truncation_lm {
            tl.validate().map_err(|e| field("train.truncation_lm", e.to_string()))?;
        }
        if let Some(sw) = &self.sweep {
            if sw.encoders.is_empty() {
                return Err(field("sweep.encoders", "must list at least one encoder"));
            }
            for (i, e) in sw.encoders.iter().enumerate() {
                check_encoder(e, &format!("sweep.encoders[{i}]"), spec.d, spec.vocab, t.m)?;
            }
            if let Some(b) = sw.baseline {
                if b >= sw.encoders.len() {
                    return Err(field("sweep.baseline", format!("index {b} is out of range for {} encoders", sw.encoders.len())));
                }
            }
        }
        Ok(())
    }

    fn hash(&self, value: serde_json::Value) -> String {
        let body = serde_json::json!({ "code_version": CODE_VERSION, "config": value });
        sha_hex(body.to_string().as_bytes())[..16].to_string()
    }

    /// Content hash of everything that shapes the prepared data.
    pub fn data_id(&self) -> String {
        self.hash(serde_json::json!({
            "seed": self.seed,
            "corpus": self.corpus,
            "seg_len": self.task.seg_len,
            "n_train": self.task.n_train,
            "n_val": self.task.n_val,
        }))
    }

    /// Content hash of the config (output directory excluded), seed and
    /// code version.
    pub fn run_id(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes to JSON");
        v.as_object_mut().expect("config is an object").remove("output_dir");
        self.hash(v)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join(format!("data-{}", self.data_id()))
    }

    pub fn run_dir(&self) -> PathBuf {
        let prefix = if self.sweep.is_some() { "sweep" } else { "run" };
        self.output_dir.join(format!("{prefix}-{}", self.run_id()))
    }

    /// One single-encoder config per sweep entry.
    pub fn sweep_members(&self) -> Result<Vec<ExperimentConfig>, ExperimentError> {
        let sw = self.sweep.as_ref().ok_or_else(|| field("sweep", "the sweep command needs a [sweep] section"))?;
        Ok(sw.encoders.iter().map(|e| ExperimentConfig { encoder: e.clone(), sweep: None, ..self.clone() }).collect())
    }
}

fn check_encoder(e: &EncoderConfig, name: &str, d: usize, vocab: usize, m: usize) -> Result<(), ExperimentError> {
    e.validate(d, vocab).map_err(|err| field(name, err.to_string()))?;
    if let EncoderConfig::Optical(o) = e {
        if o.capacity() < m {
            return Err(field(&format!("{name}.tier"), format!("canvas holds {} tokens, fewer than m={m}", o.capacity())));
        }
    }
    if let EncoderConfig::Truncation { n_keep } = e {
        if *n_keep > m {
            return Err(field(&format!("{name}.n_keep"), format!("{n_keep} exceeds context m={m}")));
        }
    }
    Ok(())
}
