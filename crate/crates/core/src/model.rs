//! Encoder + decoder pair sharing one parameter store, and the mapping from
//! task examples to decoder sequences.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{TaskExample, TaskKind, BOS};
use crate::decoder::{Decoder, DecoderError, DecoderSpec};
use crate::encoders::{CompressedContext, Encoder, EncoderConfig, EncoderError, EncoderKind};
use crate::numerics::{grad_check_with_step, CrossEntropy, GradReport, Graph, NumericsError, Real, Var};
use crate::params::{Bound, ParamGroup, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{0}")]
    Task(String),
}

impl ModelError {
    /// True when a NaN or infinity surfaced in the forward or backward pass.
    pub fn is_non_finite(&self) -> bool {
        matches!(
            self,
            ModelError::Numerics(NumericsError::NonFinite { .. })
                | ModelError::Encoder(EncoderError::Numerics(NumericsError::NonFinite { .. }))
                | ModelError::Decoder(DecoderError::NonFiniteLayer { .. })
                | ModelError::Decoder(DecoderError::Numerics(NumericsError::NonFinite { .. }))
        )
    }
}

/// Decoder token ids, next-token targets and loss mask for one example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderInput {
    /// Context tokens handed to the encoder (empty for truncation).
    pub encoder_context: Vec<u32>,
    /// `[BOS, tail, ...]` teacher-forced tokens.
    pub token_ids: Vec<u32>,
    pub targets: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

/// Lays out an example for the decoder.
///
/// Reconstruction: tokens `[BOS, x1..x(n-1)]`, targets `x1..xn`, all scored.
/// LM: tokens `[BOS, tail, y1..y(c-1)]`, targets `[tail, y1..yc]`, only the
/// continuation scored. Truncation replaces the tail with the last `n_keep`
/// context tokens and sends nothing to the encoder.
pub fn decoder_input(cfg: &EncoderConfig, ex: &TaskExample, task: TaskKind) -> Result<DecoderInput, ModelError> {
    match task {
        TaskKind::Recon => {
            if cfg.kind() == EncoderKind::Truncation {
                return Err(ModelError::Task("truncation has nothing to reconstruct from; use it in the LM phase only".into()));
            }
            if !ex.continuation.is_empty() || ex.k != 0 {
                return Err(ModelError::Task("reconstruction examples carry no continuation and k=0".into()));
            }
            let n = ex.context.len();
            let mut token_ids = vec![BOS];
            token_ids.extend_from_slice(&ex.context[..n - 1]);
            Ok(DecoderInput {
                encoder_context: ex.context.clone(),
                token_ids,
                targets: ex.context.clone(),
                loss_mask: vec![true; n],
            })
        }
        TaskKind::Lm => {
            if ex.continuation.is_empty() {
                return Err(ModelError::Task("LM examples need a continuation".into()));
            }
            let (encoder_context, tail) = match cfg {
                EncoderConfig::Truncation { n_keep } => {
                    let keep = (*n_keep).min(ex.context.len());
                    (Vec::new(), &ex.context[ex.context.len() - keep..])
                }
                _ => (ex.context.clone(), ex.tail()),
            };
            let c = ex.continuation.len();
            let mut token_ids = Vec::with_capacity(1 + tail.len() + c);
            token_ids.push(BOS);
            token_ids.extend_from_slice(tail);
            token_ids.extend_from_slice(&ex.continuation[..c - 1]);
            let mut targets = tail.to_vec();
            targets.extend_from_slice(&ex.continuation);
            let mut loss_mask = vec![false; tail.len()];
            loss_mask.extend(std::iter::repeat_n(true, c));
            Ok(DecoderInput { encoder_context, token_ids, targets, loss_mask })
        }
    }
}

/// Encoder and decoder with their parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub params: ParamStore<T>,
}

/// Output of [`Model::forward`] on one example.
pub struct Forward<T> {
    pub compressed: CompressedContext,
    pub logits: Var,
    pub loss: CrossEntropy<T>,
}

impl<T: Real> Model<T> {
    /// Initialises decoder then encoder parameters from one seeded stream.
    pub fn new(spec: &DecoderSpec, encoder: &EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let decoder = Decoder::new(spec, &mut params, &mut rng)?;
        let encoder = Encoder::new(encoder, spec.d, spec.vocab, &mut params, &mut rng)?;
        Ok(Model { encoder, decoder, params })
    }

    pub fn bind(&self, g: &mut Graph<T>, frozen: &BTreeSet<ParamGroup>) -> Bound {
        self.params.bind(g, frozen)
    }

    /// Encodes the example, runs the decoder and scores the masked targets.
    /// With `denominator` set, the loss is the masked NLL sum divided by it,
    /// so losses from a batch add up to a per-token mean.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        params: &Bound,
        input: &DecoderInput,
        denominator: Option<usize>,
    ) -> Result<Forward<T>, ModelError> {
        let table = params.var(self.decoder.embedding());
        let compressed = if self.encoder.kind() == EncoderKind::Truncation {
            crate::encoders::truncation_encode(&input.encoder_context, 0).0
        } else {
            self.encoder.encode(g, params, &input.encoder_context, table)?
        };
        let logits = self.decoder.forward(g, params, compressed.vectors, &input.token_ids)?;
        let loss = g.cross_entropy_with_denominator(logits, &input.targets, &input.loss_mask, denominator)?;
        Ok(Forward { compressed, logits, loss })
    }

    /// Greedy reconstruction or continuation of `len` tokens. Recomputes
    /// the full sequence each step.
    pub fn greedy(&self, encoder_context: &[u32], tail: &[u32], len: usize) -> Result<Vec<u32>, ModelError> {
        let mut tokens = vec![BOS];
        tokens.extend_from_slice(tail);
        let frozen = BTreeSet::from([ParamGroup::Encoder, ParamGroup::Decoder]);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let mut g = Graph::new();
            let params = self.bind(&mut g, &frozen);
            let table = params.var(self.decoder.embedding());
            let prefix = if self.encoder.kind() == EncoderKind::Truncation {
                None
            } else {
                self.encoder.encode(&mut g, &params, encoder_context, table)?.vectors
            };
            let logits = self.decoder.forward(&mut g, &params, prefix, &tokens)?;
            let last = g.value(logits).row(tokens.len() - 1);
            let next = last
                .iter()
                .enumerate()
                .fold((0usize, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0 as u32;
            out.push(next);
            tokens.push(next);
        }
        Ok(out)
    }
}

/// Relative finite-difference step for whole-model gradient checks.
pub const MODEL_FD_STEP: f64 = 1e-5;

impl Model<f64> {
    /// Finite-difference check of the loss gradient with respect to every
    /// parameter, encoder and decoder together. Uses a relative step of
    /// [`MODEL_FD_STEP`]: the single-op step of 1e-3 leaves O(h^2) truncation
    /// errors above 1e-3 on weights of scale 0.02 that feed a normalization.
    pub fn gradient_check(&self, name: &str, input: &DecoderInput, tolerance: f64) -> Result<GradReport, ModelError> {
        let inputs: Vec<_> = self.params.iter().map(|(_, p)| p.value.clone()).collect();
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let bound = Bound::from_vars(vars.to_vec());
            self.forward(g, &bound, input, None).map(|f| f.loss.loss).map_err(into_numerics)
        };
        Ok(grad_check_with_step(name, f, &inputs, tolerance, MODEL_FD_STEP)?)
    }
}

/// Two-layer, d=16 model at its normal init and one random reconstruction
/// example, for whole-graph gradient checks.
pub fn gradcheck_instance(encoder: &EncoderConfig, seed: u64) -> Result<(Model<f64>, DecoderInput), ModelError> {
    use rand::Rng;
    let spec = DecoderSpec {
        layers: 2,
        d: 16,
        heads: 2,
        head_dim: 8,
        ffn_dim: 32,
        rope_base: 10000.0,
        vocab: 11,
        ffn: crate::decoder::FfnKind::SiluGated,
    };
    let model = Model::<f64>::new(&spec, encoder, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let ex = TaskExample { context: (0..8).map(|_| rng.random_range(3..11)).collect(), continuation: Vec::new(), k: 0 };
    let input = decoder_input(encoder, &ex, TaskKind::Recon)?;
    Ok((model, input))
}

fn into_numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(e) | ModelError::Encoder(EncoderError::Numerics(e)) | ModelError::Decoder(DecoderError::Numerics(e)) => e,
        ModelError::Decoder(DecoderError::NonFiniteLayer { .. }) => NumericsError::NonFinite { op: "decoder" },
        other => NumericsError::Config { op: "model", detail: other.to_string() },
    }
}
