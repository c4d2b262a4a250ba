//! Context encoders: mean pooling, hierarchical convolution, the toy
//! render-then-encode optical path, and truncation.
//!
//! All of them map a context to vectors in the decoder's embedding space,
//! followed by one learned separator. Truncation compresses nothing and
//! passes a text tail instead.

mod hierarchical;
mod mean_pool;
mod optical;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Graph, NumericsError, Real, Var};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

pub use hierarchical::{hier_out_len, HierBlock, HierConfig, Hierarchical};
pub use mean_pool::{mean_pool_encode, mean_pool_ranges, mean_pool_z_len, MeanPoolConfig};
pub use optical::{glyph_bits, render_tokens, Bitmap, CanvasOverflow, Optical, OpticalConfig, Tier, TierTable};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Canvas(#[from] CanvasOverflow),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    MeanPool,
    Hierarchical,
    Optical,
    Truncation,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::MeanPool => "mean_pool",
            EncoderKind::Hierarchical => "hierarchical",
            EncoderKind::Optical => "optical",
            EncoderKind::Truncation => "truncation",
        }
    }

    /// Name used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            EncoderKind::MeanPool => "Mean pool",
            EncoderKind::Hierarchical => "Hierarchical",
            EncoderKind::Optical => "Optical",
            EncoderKind::Truncation => "Truncation",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderConfig {
    MeanPool { w: usize, s: usize },
    Hierarchical {
        levels: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        widths: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        groups: Option<usize>,
    },
    Optical(OpticalConfig),
    Truncation { n_keep: usize },
}

impl EncoderConfig {
    pub fn mean_pool(w: usize, s: usize) -> Self {
        EncoderConfig::MeanPool { w, s }
    }

    pub fn hierarchical(levels: usize) -> Self {
        EncoderConfig::Hierarchical { levels, widths: None, groups: None }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderConfig::MeanPool { .. } => EncoderKind::MeanPool,
            EncoderConfig::Hierarchical { .. } => EncoderKind::Hierarchical,
            EncoderConfig::Optical(_) => EncoderKind::Optical,
            EncoderConfig::Truncation { .. } => EncoderKind::Truncation,
        }
    }

    pub fn hier_config(&self) -> Option<HierConfig> {
        match self {
            EncoderConfig::Hierarchical { levels, widths, groups } => {
                Some(HierConfig { levels: *levels, widths: widths.clone(), groups: *groups })
            }
            _ => None,
        }
    }

    /// Short description for result tables, e.g. `w=4,s=4` or `t=32`.
    /// `n` is the context length, needed for the hierarchical target.
    pub fn describe(&self, n: usize) -> String {
        match self {
            EncoderConfig::MeanPool { w, s } => format!("w={w},s={s}"),
            EncoderConfig::Hierarchical { levels, .. } => format!("t={}", hier_out_len(n, *levels)),
            EncoderConfig::Optical(o) => o.tier.to_string(),
            EncoderConfig::Truncation { n_keep } => format!("n={n_keep}"),
        }
    }

    pub fn validate(&self, d: usize, vocab: usize) -> Result<(), EncoderError> {
        match self {
            EncoderConfig::MeanPool { w, s } => MeanPoolConfig { w: *w, s: *s }.validate(),
            EncoderConfig::Hierarchical { .. } => self.hier_config().expect("hierarchical").validate(d),
            EncoderConfig::Optical(o) => o.validate(vocab),
            EncoderConfig::Truncation { .. } => Ok(()),
        }
        .map_err(EncoderError::Config)
    }

    /// Compressed vectors for an `n`-token context, separator included.
    pub fn z_len(&self, n: usize) -> usize {
        match self {
            EncoderConfig::MeanPool { w, s } => mean_pool_z_len(n, MeanPoolConfig { w: *w, s: *s }),
            EncoderConfig::Hierarchical { levels, .. } => hier_out_len(n, *levels) + 1,
            EncoderConfig::Optical(o) => o.z_len(),
            EncoderConfig::Truncation { .. } => 0,
        }
    }
}

/// Decoder-visible prefix length for an `n`-token context with a `k`-token
/// text tail: BOS + compressed vectors (separator included) + tail. For
/// truncation the tail is `min(n_keep, n)` and `k` is ignored.
pub fn context_token_count(cfg: &EncoderConfig, n: usize, k: usize) -> usize {
    match cfg {
        EncoderConfig::Truncation { n_keep } => 1 + (*n_keep).min(n),
        _ => 1 + cfg.z_len(n) + k,
    }
}

/// Context tokens replaced per decoder-visible token: `n / ctx_tokens`.
pub fn compression_ratio(n: usize, ctx_tokens: usize) -> f64 {
    n as f64 / ctx_tokens as f64
}

/// Ratio of input tokens to compressed vectors, separator excluded.
pub fn encoder_ratio(cfg: &EncoderConfig, n: usize) -> Option<f64> {
    match cfg.z_len(n) {
        0 | 1 => None,
        z => Some(n as f64 / (z - 1) as f64),
    }
}

/// One decimal followed by `×`, e.g. `9.8×`.
pub fn format_ratio(r: f64) -> String {
    format!("{r:.1}×")
}

/// Encoder output on a graph.
#[derive(Clone, Copy, Debug)]
pub struct CompressedContext {
    /// `[z_len x d]`, `None` when `z_len == 0`.
    pub vectors: Option<Var>,
    pub z_len: usize,
    pub includes_separator: bool,
    pub kind: EncoderKind,
    pub source_len: usize,
}

/// Truncation: nothing compressed, the last `n_keep` tokens kept as text.
pub fn truncation_encode(tokens: &[u32], n_keep: usize) -> (CompressedContext, Vec<u32>) {
    let keep = n_keep.min(tokens.len());
    let ctx = CompressedContext {
        vectors: None,
        z_len: 0,
        includes_separator: false,
        kind: EncoderKind::Truncation,
        source_len: tokens.len(),
    };
    (ctx, tokens[tokens.len() - keep..].to_vec())
}

#[derive(Clone, Debug)]
enum Body {
    MeanPool(MeanPoolConfig),
    Hierarchical(Hierarchical),
    Optical(Optical),
    Truncation,
}

/// A configured encoder whose parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    body: Body,
    separator: Option<ParamId>,
}

impl Encoder {
    /// Registers parameters in the encoder group. `d` and `vocab` come from
    /// the decoder the encoder feeds.
    pub fn new<T: Real>(
        config: &EncoderConfig,
        d: usize,
        vocab: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self, EncoderError> {
        config.validate(d, vocab)?;
        let body = match config {
            EncoderConfig::MeanPool { w, s } => Body::MeanPool(MeanPoolConfig { w: *w, s: *s }),
            EncoderConfig::Hierarchical { .. } => {
                let hc = config.hier_config().expect("hierarchical");
                Body::Hierarchical(Hierarchical::new(&hc, d, store, rng).map_err(EncoderError::Config)?)
            }
            EncoderConfig::Optical(o) => Body::Optical(Optical::new(o, d, store, rng)),
            EncoderConfig::Truncation { .. } => Body::Truncation,
        };
        let separator = match config {
            EncoderConfig::Truncation { .. } => None,
            _ => Some(store.normal("encoder.separator", ParamGroup::Encoder, &[1, d], 0.02, rng)),
        };
        Ok(Encoder { config: config.clone(), body, separator })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn kind(&self) -> EncoderKind {
        self.config.kind()
    }

    pub fn separator(&self) -> Option<ParamId> {
        self.separator
    }

    /// Encodes `context`. Embedding-space encoders look tokens up in
    /// `embedding_table`, the decoder's `[V x d]` input table.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &Bound,
        context: &[u32],
        embedding_table: Var,
    ) -> Result<CompressedContext, EncoderError> {
        let n = context.len();
        let sep = self.separator.map(|s| params.var(s));
        let vectors = match &self.body {
            Body::Truncation => return Ok(truncation_encode(context, 0).0),
            Body::MeanPool(cfg) => {
                let e = g.embedding(embedding_table, context)?;
                mean_pool_encode(g, e, *cfg, sep.expect("separator"))?
            }
            Body::Hierarchical(h) => {
                let e = g.embedding(embedding_table, context)?;
                let y = h.forward(g, params, e)?;
                g.concat_rows(&[y, sep.expect("separator")])?
            }
            Body::Optical(o) => {
                let EncoderConfig::Optical(cfg) = &self.config else { unreachable!() };
                let bmp = render_tokens(context, cfg)?;
                let y = o.forward(g, params, &bmp)?;
                g.concat_rows(&[y, sep.expect("separator")])?
            }
        };
        let z_len = g.shape(vectors)[0];
        debug_assert_eq!(z_len, self.config.z_len(n));
        Ok(CompressedContext { vectors: Some(vectors), z_len, includes_separator: true, kind: self.kind(), source_len: n })
    }
}
