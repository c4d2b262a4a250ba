//! Dense pre-norm transformer decoder with RoPE and RMSNorm.
//!
//! The input sequence is `[BOS, prefix vectors, tokens[1..]]`: the prefix
//! (compressed context plus separator) sits right after BOS and takes
//! ordinary sequential positions. Logit row `j` is read at the position
//! just before `tokens[j + 1]`, so row 0 is the last prefix vector (or BOS
//! when there is no prefix) and the rows line up with next-token targets.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Graph, NumericsError, Real, Var};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

const NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum DecoderError {
    #[error("decoder spec: {0}")]
    Config(String),
    /// `layer == layers` is the output head.
    #[error("non-finite activation in layer {layer} ({op})")]
    NonFiniteLayer { layer: usize, op: &'static str },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    /// `W2 (SiLU(W1 h) * W3 h)`.
    #[default]
    SiluGated,
    /// `W2 GELU(W1 h)`.
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSpec {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub rope_base: f64,
    pub vocab: usize,
    #[serde(default)]
    pub ffn: FfnKind,
}

impl DecoderSpec {
    /// Desk default: 4 layers, d=256, 4 heads of 64, FFN 1024, V=4096.
    pub fn desk() -> Self {
        DecoderSpec { layers: 4, d: 256, heads: 4, head_dim: 64, ffn_dim: 1024, rope_base: 10000.0, vocab: 4096, ffn: FfnKind::SiluGated }
    }

    /// Full-scale dense decoder: 12 layers, d=1280,
    /// 10 heads of 128, FFN 6848. Meant for shape checks, not training.
    pub fn full() -> Self {
        DecoderSpec { layers: 12, d: 1280, heads: 10, head_dim: 128, ffn_dim: 6848, rope_base: 10000.0, vocab: 4096, ffn: FfnKind::SiluGated }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(DecoderSpec::desk()),
            "full" => Some(DecoderSpec::full()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        let bad = |s: String| Err(DecoderError::Config(s));
        if self.layers == 0 || self.d == 0 || self.heads == 0 || self.ffn_dim == 0 || self.vocab == 0 {
            return bad("layers, d, heads, ffn_dim and vocab must be >= 1".into());
        }
        if self.heads * self.head_dim != self.d {
            return bad(format!("heads * head_dim = {} * {} must equal d = {}", self.heads, self.head_dim, self.d));
        }
        if self.head_dim % 2 != 0 {
            return bad(format!("head_dim {} must be even for RoPE", self.head_dim));
        }
        if !(self.rope_base > 0.0) {
            return bad(format!("rope_base must be positive, got {}", self.rope_base));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layer {
    attn_norm: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ffn_norm: ParamId,
    w1: ParamId,
    w3: Option<ParamId>,
    w2: ParamId,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    spec: DecoderSpec,
    embedding: ParamId,
    layers: Vec<Layer>,
    final_norm: ParamId,
    unembedding: ParamId,
}

/// RoPE applied to `q` and `k` (`[n x heads*head_dim]`) at `positions`.
pub fn rope_apply<T: Real>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    heads: usize,
    positions: &[usize],
    base: f64,
) -> Result<(Var, Var), NumericsError> {
    Ok((g.rope(q, heads, positions, base)?, g.rope(k, heads, positions, base)?))
}

fn in_layer(layer: usize) -> impl Fn(NumericsError) -> DecoderError {
    move |e| match e {
        NumericsError::NonFinite { op } => DecoderError::NonFiniteLayer { layer, op },
        other => DecoderError::Numerics(other),
    }
}

impl Decoder {
    /// Registers decoder parameters: normal(0, 0.02) weights, with the
    /// attention and FFN output projections scaled by `1/sqrt(2 * layers)`,
    /// unit norm gains, untied input and output embeddings.
    pub fn new<T: Real>(spec: &DecoderSpec, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self, DecoderError> {
        spec.validate()?;
        let dg = ParamGroup::Decoder;
        let (d, f) = (spec.d, spec.ffn_dim);
        let out_std = INIT_STD / ((2 * spec.layers) as f64).sqrt();
        let embedding = store.normal("decoder.embedding", dg, &[spec.vocab, d], INIT_STD, rng);
        let layers = (0..spec.layers)
            .map(|i| {
                let p = format!("decoder.layer{i}");
                Layer {
                    attn_norm: store.ones(format!("{p}.attn_norm"), dg, &[d]),
                    wq: store.normal(format!("{p}.wq"), dg, &[d, d], INIT_STD, rng),
                    wk: store.normal(format!("{p}.wk"), dg, &[d, d], INIT_STD, rng),
                    wv: store.normal(format!("{p}.wv"), dg, &[d, d], INIT_STD, rng),
                    wo: store.normal(format!("{p}.wo"), dg, &[d, d], out_std, rng),
                    ffn_norm: store.ones(format!("{p}.ffn_norm"), dg, &[d]),
                    w1: store.normal(format!("{p}.w1"), dg, &[d, f], INIT_STD, rng),
                    w3: (spec.ffn == FfnKind::SiluGated).then(|| store.normal(format!("{p}.w3"), dg, &[d, f], INIT_STD, rng)),
                    w2: store.normal(format!("{p}.w2"), dg, &[f, d], out_std, rng),
                }
            })
            .collect();
        let final_norm = store.ones("decoder.final_norm", dg, &[d]);
        let unembedding = store.normal("decoder.unembedding", dg, &[d, spec.vocab], INIT_STD, rng);
        Ok(Decoder { spec: spec.clone(), embedding, layers, final_norm, unembedding })
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    /// The `[V x d]` input embedding table.
    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    /// Attention and FFN output projections of every layer.
    pub fn output_projections(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.wo, l.w2]).collect()
    }

    /// Logits `[tokens.len() x V]` for `[BOS, prefix, tokens[1..]]`.
    ///
    /// `tokens[0]` is expected to be BOS. `prefix` is `[p x d]` or `None`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &Bound, prefix: Option<Var>, tokens: &[u32]) -> Result<Var, DecoderError> {
        let s = &self.spec;
        if tokens.is_empty() {
            return Err(DecoderError::Config("token sequence must start with BOS".into()));
        }
        let emb = g.embedding(params.var(self.embedding), tokens)?;
        let first = g.slice_rows(emb, 0, 1)?;
        let rest = g.slice_rows(emb, 1, tokens.len() - 1)?;
        let p = match prefix {
            Some(v) => {
                let shape = g.shape(v);
                if shape.len() != 2 || shape[1] != s.d {
                    return Err(DecoderError::Config(format!("prefix shape {shape:?}, expected [p x {}]", s.d)));
                }
                shape[0]
            }
            None => 0,
        };
        let mut x = match prefix {
            Some(v) => g.concat_rows(&[first, v, rest])?,
            None => emb,
        };
        let n = p + tokens.len();
        let positions: Vec<usize> = (0..n).collect();
        for (i, l) in self.layers.iter().enumerate() {
            x = self.block(g, params, l, x, &positions).map_err(in_layer(i))?;
        }
        let out = (|| {
            let h = g.slice_rows(x, p, tokens.len())?;
            let h = g.rms_norm(h, params.var(self.final_norm), NORM_EPS)?;
            g.matmul(h, params.var(self.unembedding))
        })()
        .map_err(in_layer(s.layers))?;
        Ok(out)
    }

    fn block<T: Real>(&self, g: &mut Graph<T>, params: &Bound, l: &Layer, x: Var, positions: &[usize]) -> Result<Var, NumericsError> {
        let s = &self.spec;
        let h = g.rms_norm(x, params.var(l.attn_norm), NORM_EPS)?;
        let q = g.matmul(h, params.var(l.wq))?;
        let k = g.matmul(h, params.var(l.wk))?;
        let v = g.matmul(h, params.var(l.wv))?;
        let (q, k) = rope_apply(g, q, k, s.heads, positions, s.rope_base)?;
        let a = g.causal_attention(q, k, v, s.heads)?;
        let a = g.matmul(a, params.var(l.wo))?;
        let x = g.add(x, a)?;
        let h = g.rms_norm(x, params.var(l.ffn_norm), NORM_EPS)?;
        let up = g.matmul(h, params.var(l.w1))?;
        let act = match l.w3 {
            Some(w3) => {
                let gate = g.silu(up)?;
                let lin = g.matmul(h, params.var(w3))?;
                g.mul(gate, lin)?
            }
            None => g.gelu(up)?,
        };
        let f = g.matmul(act, params.var(l.w2))?;
        g.add(x, f)
    }
}
