use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Fixed-length window of the token stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub tokens: Vec<u32>,
    pub source_offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Recon,
    Lm,
}

/// One training or evaluation example.
///
/// `context` is what the encoder sees. For LM examples the last `k` context
/// tokens are also handed to the decoder as plain text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskExample {
    pub context: Vec<u32>,
    pub continuation: Vec<u32>,
    pub k: usize,
}

impl TaskExample {
    pub fn tail(&self) -> &[u32] {
        &self.context[self.context.len() - self.k..]
    }
}

/// Splits `tokens` into non-overlapping `seg_len` windows and deals a seeded
/// random subset into train and validation. Each split is returned in
/// corpus order.
pub fn make_segments(
    tokens: &[u32],
    seg_len: usize,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<(Vec<Segment>, Vec<Segment>), CorpusError> {
    if seg_len == 0 {
        return Err(CorpusError::Task("seg_len must be positive".into()));
    }
    let windows = tokens.len() / seg_len;
    let wanted = n_train + n_val;
    if wanted > windows {
        return Err(CorpusError::InsufficientCorpus { required: wanted * seg_len, available: tokens.len() });
    }
    let mut order: Vec<usize> = (0..windows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|w| Segment { tokens: tokens[w * seg_len..(w + 1) * seg_len].to_vec(), source_offset: w * seg_len })
            .collect::<Vec<_>>()
    };
    Ok((take(&order[..n_train]), take(&order[n_train..wanted])))
}

/// One `offset,split` line per segment.
pub fn segment_manifest(train: &[Segment], val: &[Segment]) -> String {
    let mut s = String::from("offset,split\n");
    for seg in train {
        writeln!(s, "{},train", seg.source_offset).unwrap();
    }
    for seg in val {
        writeln!(s, "{},val", seg.source_offset).unwrap();
    }
    s
}

/// Cuts a segment into a task example. LM continuations take the rest of the
/// segment after the `m` context tokens.
pub fn to_task(seg: &Segment, task: TaskKind, m: usize, k: usize) -> Result<TaskExample, CorpusError> {
    let n = seg.tokens.len();
    if m == 0 || m > n {
        return Err(CorpusError::Task(format!("context length m={m} must be in 1..={n}")));
    }
    if k > m {
        return Err(CorpusError::Task(format!("text tail k={k} exceeds context length m={m}")));
    }
    let context = seg.tokens[..m].to_vec();
    match task {
        TaskKind::Recon => {
            if k != 0 {
                return Err(CorpusError::Task(format!("reconstruction examples take k=0, got k={k}")));
            }
            Ok(TaskExample { context, continuation: Vec::new(), k: 0 })
        }
        TaskKind::Lm => {
            if m == n {
                return Err(CorpusError::Task(format!("m={m} leaves no continuation in a {n}-token segment")));
            }
            Ok(TaskExample { context, continuation: seg.tokens[m..].to_vec(), k })
        }
    }
}

/// Reconstruction examples of `len` uniform random ids in
/// `[BYTE_OFFSET, vocab)`: a memorizable set with no structure beyond the
/// examples themselves.
pub fn copy_task(vocab: usize, len: usize, count: usize, seed: u64) -> Result<Vec<TaskExample>, CorpusError> {
    use rand::Rng;
    if vocab <= super::BYTE_OFFSET as usize || len == 0 {
        return Err(CorpusError::Task(format!("copy task needs vocab > {} and len >= 1", super::BYTE_OFFSET)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| TaskExample {
            context: (0..len).map(|_| rng.random_range(super::BYTE_OFFSET..vocab as u32)).collect(),
            continuation: Vec::new(),
            k: 0,
        })
        .collect())
}
