//! Perplexity, comparative metrics and result tables.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TaskExample, TaskKind};
use crate::encoders::{format_ratio, EncoderKind};
use crate::model::{decoder_input, Model, ModelError};
use crate::numerics::{Graph, Real};
use crate::params::ParamGroup;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no positions to score")]
    EmptyMask,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("writing results: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ppl: f64,
    pub nll_sum: f64,
    pub n_tokens_scored: usize,
    pub split: String,
    pub phase: TaskKind,
}

/// `exp(nll_sum / count)`.
pub fn pooled_perplexity(nll_sum: f64, count: usize) -> Result<f64, EvalError> {
    if count == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok((nll_sum / count as f64).exp())
}

/// Pooled perplexity over every scored token of `examples`: one global
/// token mean, not a mean of per-sequence perplexities. NLL is summed in
/// f64 in example order.
pub fn perplexity<T: Real>(
    model: &Model<T>,
    examples: &[TaskExample],
    task: TaskKind,
    split: &str,
) -> Result<EvalResult, EvalError> {
    let frozen = BTreeSet::from([ParamGroup::Encoder, ParamGroup::Decoder]);
    let mut nll_sum = 0.0;
    let mut count = 0;
    for ex in examples {
        let input = decoder_input(model.encoder.config(), ex, task)?;
        let mut g = Graph::new();
        let bound = model.bind(&mut g, &frozen);
        let fwd = model.forward(&mut g, &bound, &input, None)?;
        nll_sum += fwd.loss.per_token.data().iter().map(|&v| Real::to_f64(v)).sum::<f64>();
        count += fwd.loss.count;
    }
    Ok(EvalResult { ppl: pooled_perplexity(nll_sum, count)?, nll_sum, n_tokens_scored: count, split: split.into(), phase: task })
}

/// Pooled perplexity of the same model with the compressed prefix removed:
/// the decoder sees only `[BOS, tail, ...]`. Measures how much the encoder
/// output is worth.
pub fn perplexity_without_context<T: Real>(model: &Model<T>, examples: &[TaskExample], task: TaskKind) -> Result<f64, EvalError> {
    let frozen = BTreeSet::from([ParamGroup::Encoder, ParamGroup::Decoder]);
    let mut nll_sum = 0.0;
    let mut count = 0;
    for ex in examples {
        let input = decoder_input(model.encoder.config(), ex, task)?;
        let mut g = Graph::new();
        let bound = model.bind(&mut g, &frozen);
        let logits = model.decoder.forward(&mut g, &bound, None, &input.token_ids).map_err(ModelError::from)?;
        let ce = g.cross_entropy(logits, &input.targets, &input.loss_mask).map_err(ModelError::from)?;
        nll_sum += ce.per_token.data().iter().map(|&v| Real::to_f64(v)).sum::<f64>();
        count += ce.count;
    }
    pooled_perplexity(nll_sum, count)
}

/// One experiment outcome, shaped like a row of the reference result tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub id: String,
    pub encoder: EncoderKind,
    pub enc_init: String,
    pub dec_init: String,
    pub config: String,
    pub ctx_tokens: usize,
    pub compression: f64,
    /// Trainable encoder parameters.
    pub params: usize,
    pub ppl: f64,
    pub delta_ppl: Option<f64>,
}

/// `row.ppl - baseline.ppl`.
pub fn delta_ppl(row: &ResultRow, baseline: &ResultRow) -> f64 {
    row.ppl - baseline.ppl
}

/// `(pure_ppl - hybrid_ppl) / expected_gain`.
pub fn hybrid_efficiency(pure_ppl: f64, hybrid_ppl: f64, expected_gain: f64) -> Result<f64, EvalError> {
    if !(expected_gain > 0.0) {
        return Err(EvalError::Invalid(format!("expected gain must be positive, got {expected_gain}")));
    }
    Ok((pure_ppl - hybrid_ppl) / expected_gain)
}

/// PPL improvement expected from keeping `kept_tokens` of `full_tokens` if
/// every token were worth the same: `(deletion - full) * kept / (full_tokens - kept)`.
pub fn expected_gain(full_ppl: f64, deletion_ppl: f64, full_tokens: usize, kept_tokens: usize) -> Result<f64, EvalError> {
    if full_tokens <= kept_tokens {
        return Err(EvalError::Invalid(format!("full_tokens {full_tokens} must exceed kept_tokens {kept_tokens}")));
    }
    Ok((deletion_ppl - full_ppl) * kept_tokens as f64 / (full_tokens - kept_tokens) as f64)
}

/// Compares strings with digit runs ordered by value, so `w=2` < `w=10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn parts(s: &str) -> Vec<Result<u128, &str>> {
        let mut out = Vec::new();
        let mut rest = s;
        while !rest.is_empty() {
            let digits = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
            if digits > 0 {
                out.push(Ok(rest[..digits].parse().unwrap_or(u128::MAX)));
                rest = &rest[digits..];
            } else {
                let text = rest.find(|c: char| c.is_ascii_digit()).unwrap_or(rest.len());
                out.push(Err(&rest[..text]));
                rest = &rest[text..];
            }
        }
        out
    }
    let (pa, pb) = (parts(a), parts(b));
    for (x, y) in pa.iter().zip(&pb) {
        let o = match (x, y) {
            (Ok(m), Ok(n)) => m.cmp(n),
            (Err(s), Err(t)) => s.cmp(t),
            (Ok(_), Err(_)) => Ordering::Less,
            (Err(_), Ok(_)) => Ordering::Greater,
        };
        if o != Ordering::Equal {
            return o;
        }
    }
    pa.len().cmp(&pb.len()).then_with(|| a.cmp(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

pub const COLUMNS: [&str; 9] = ["encoder", "enc_init", "dec_init", "config", "tokens", "comp", "params_M", "ppl", "delta_ppl"];

fn cells(r: &ResultRow) -> [String; 9] {
    [
        r.encoder.label().to_string(),
        r.enc_init.clone(),
        r.dec_init.clone(),
        r.config.clone(),
        r.ctx_tokens.to_string(),
        format_ratio(r.compression),
        format!("{:.3}", r.params as f64 / 1e6),
        format!("{:.2}", r.ppl),
        r.delta_ppl.map_or("-".to_string(), |d| format!("{d:+.2}")),
    ]
}

/// Rows sorted by encoder kind, then config in natural order (stable).
pub fn sorted_rows(rows: &[ResultRow]) -> Vec<&ResultRow> {
    let mut v: Vec<&ResultRow> = rows.iter().collect();
    v.sort_by(|a, b| a.encoder.cmp(&b.encoder).then_with(|| natural_cmp(&a.config, &b.config)));
    v
}

/// Renders a results table.
pub fn emit_results(rows: &[ResultRow], format: TableFormat) -> Result<String, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Invalid("no result rows to emit".into()));
    }
    let sorted = sorted_rows(rows);
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(COLUMNS)?;
            for r in sorted {
                w.write_record(cells(r))?;
            }
            let bytes = w.into_inner().map_err(|e| EvalError::Invalid(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        TableFormat::Markdown => {
            let mut s = format!("| {} |\n", COLUMNS.join(" | "));
            s.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
            for r in sorted {
                s.push_str(&format!("| {} |\n", cells(r).join(" | ")));
            }
            Ok(s)
        }
    }
}
