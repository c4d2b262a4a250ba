use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NumericsError, Real, Tensor, Unfold2d, Var};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Tiny,
    Small,
    Base,
    Large,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::Tiny, Tier::Small, Tier::Base, Tier::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Tiny => "tiny",
            Tier::Small => "small",
            Tier::Base => "base",
            Tier::Large => "large",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output vector count per tier, separator excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierTable {
    pub tiny: usize,
    pub small: usize,
    pub base: usize,
    pub large: usize,
}

impl TierTable {
    /// Desk defaults for 128-token contexts.
    pub const DESK: TierTable = TierTable { tiny: 18, small: 28, base: 68, large: 105 };
    /// Vision token counts for 1000-token contexts.
    pub const FULL: TierTable = TierTable { tiny: 73, small: 111, base: 273, large: 421 };

    pub fn get(&self, tier: Tier) -> usize {
        match tier {
            Tier::Tiny => self.tiny,
            Tier::Small => self.small,
            Tier::Base => self.base,
            Tier::Large => self.large,
        }
    }
}

impl Default for TierTable {
    fn default() -> Self {
        TierTable::DESK
    }
}

fn default_glyph() -> usize {
    5
}
fn default_tokens_per_row() -> usize {
    16
}
fn default_rows() -> usize {
    8
}
fn default_patch() -> usize {
    3
}
fn default_channels() -> [usize; 2] {
    [64, 128]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalConfig {
    pub tier: Tier,
    #[serde(default)]
    pub tiers: TierTable,
    /// Glyphs are `glyph x glyph` pixels inside `(glyph+1)`-pixel cells.
    #[serde(default = "default_glyph")]
    pub glyph: usize,
    #[serde(default = "default_tokens_per_row")]
    pub tokens_per_row: usize,
    #[serde(default = "default_rows")]
    pub rows: usize,
    /// Square patch side in pixels; must divide the cell side.
    #[serde(default = "default_patch")]
    pub patch: usize,
    /// Patch-embedding width, then strided-conv width.
    #[serde(default = "default_channels")]
    pub channels: [usize; 2],
}

impl OpticalConfig {
    pub fn new(tier: Tier) -> Self {
        OpticalConfig {
            tier,
            tiers: TierTable::DESK,
            glyph: default_glyph(),
            tokens_per_row: default_tokens_per_row(),
            rows: default_rows(),
            patch: default_patch(),
            channels: default_channels(),
        }
    }

    pub fn cell(&self) -> usize {
        self.glyph + 1
    }

    pub fn capacity(&self) -> usize {
        self.tokens_per_row * self.rows
    }

    pub fn canvas_size(&self) -> (usize, usize) {
        (self.cell() * self.tokens_per_row, self.cell() * self.rows)
    }

    fn patch_grid(&self) -> Unfold2d {
        let (w, h) = self.canvas_size();
        Unfold2d { height: h / self.patch, width: w / self.patch, kernel: 3, stride: 2, padding: 1 }
    }

    /// Positions left after the strided conv, before tier pooling.
    pub fn grid_positions(&self) -> usize {
        let g = self.patch_grid();
        g.out_height() * g.out_width()
    }

    pub fn z_len(&self) -> usize {
        self.tiers.get(self.tier) + 1
    }

    pub fn validate(&self, vocab: usize) -> Result<(), String> {
        if self.glyph == 0 || self.tokens_per_row == 0 || self.rows == 0 || self.patch == 0 {
            return Err("optical glyph, tokens_per_row, rows and patch must be >= 1".into());
        }
        if self.cell() % self.patch != 0 {
            return Err(format!("optical patch {} does not tile {}-pixel cells", self.patch, self.cell()));
        }
        let bits = self.glyph * self.glyph;
        if bits < 64 && vocab as u64 > 1u64 << bits {
            return Err(format!("optical glyph {0}x{0} cannot give {vocab} distinct bitmaps", self.glyph));
        }
        let t = self.tiers.get(self.tier);
        if t == 0 || t > self.grid_positions() {
            return Err(format!("optical tier {} wants {t} vectors from a {}-position grid", self.tier, self.grid_positions()));
        }
        Ok(())
    }
}

/// 8-bit grayscale image, row-major, 255 = ink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Bitmap {
    pub fn blank(width: usize, height: usize) -> Self {
        Bitmap { width, height, pixels: vec![0; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Glyph bits for `id`: a bijection on `bits`-bit integers, so distinct ids
/// below `2^bits` get distinct glyphs. Id 0 (PAD) is blank.
pub fn glyph_bits(id: u32, bits: usize) -> u64 {
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let mut x = id as u64 & mask;
    // odd multipliers and right xor-shifts are both invertible mod 2^bits
    x = x.wrapping_mul(0x9E37_79B9_7F4A_7C15) & mask;
    x ^= x >> (bits / 2).max(1);
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9) & mask;
    x ^= x >> (bits / 3).max(1);
    x
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("{len} tokens overflow the {capacity}-token canvas ({tokens_per_row} per row x {rows} rows)")]
pub struct CanvasOverflow {
    pub len: usize,
    pub capacity: usize,
    pub tokens_per_row: usize,
    pub rows: usize,
}

/// Draws each token's glyph into its cell, row-major.
pub fn render_tokens(tokens: &[u32], cfg: &OpticalConfig) -> Result<Bitmap, CanvasOverflow> {
    if tokens.len() > cfg.capacity() {
        return Err(CanvasOverflow {
            len: tokens.len(),
            capacity: cfg.capacity(),
            tokens_per_row: cfg.tokens_per_row,
            rows: cfg.rows,
        });
    }
    let (w, h) = cfg.canvas_size();
    let mut bmp = Bitmap::blank(w, h);
    let gsz = cfg.glyph;
    for (i, &id) in tokens.iter().enumerate() {
        let bits = glyph_bits(id, gsz * gsz);
        let (cx, cy) = ((i % cfg.tokens_per_row) * cfg.cell(), (i / cfg.tokens_per_row) * cfg.cell());
        for b in 0..gsz * gsz {
            if bits >> b & 1 == 1 {
                bmp.pixels[(cy + b / gsz) * w + cx + b % gsz] = 255;
            }
        }
    }
    Ok(bmp)
}

/// Non-overlapping `p x p` patches as rows, pixel values scaled to [0, 1].
fn patchify<T: Real>(bmp: &Bitmap, p: usize) -> Tensor<T> {
    let (gw, gh) = (bmp.width / p, bmp.height / p);
    let mut data = Vec::with_capacity(gw * gh * p * p);
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..p {
                for x in 0..p {
                    data.push(T::from_f64(bmp.get(px * p + x, py * p + y) as f64 / 255.0));
                }
            }
        }
    }
    Tensor::new(vec![gw * gh, p * p], data).expect("patch grid shape")
}

#[derive(Clone, Debug)]
pub struct Optical {
    cfg: OpticalConfig,
    patch_w: ParamId,
    patch_b: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    proj: ParamId,
}

impl Optical {
    pub fn new<T: Real>(cfg: &OpticalConfig, d: usize, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Self {
        let e = ParamGroup::Encoder;
        let pp = cfg.patch * cfg.patch;
        let [c1, c2] = cfg.channels;
        Optical {
            cfg: cfg.clone(),
            patch_w: store.normal("encoder.patch.weight", e, &[pp, c1], 1.0 / (pp as f64).sqrt(), rng),
            patch_b: store.zeros("encoder.patch.bias", e, &[c1]),
            conv_w: store.normal("encoder.conv.weight", e, &[9 * c1, c2], 1.0 / ((9 * c1) as f64).sqrt(), rng),
            conv_b: store.zeros("encoder.conv.bias", e, &[c2]),
            proj: store.normal("encoder.proj.weight", e, &[c2, d], 0.02, rng),
        }
    }

    /// Patch embedding, one stride-2 3x3 conv, pooling to the tier count,
    /// projection to `d`. Returns `[tier x d]`, separator not included.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, bmp: &Bitmap) -> Result<Var, NumericsError> {
        let (w, h) = self.cfg.canvas_size();
        if (bmp.width, bmp.height) != (w, h) {
            return Err(NumericsError::shape(
                "optical_encode",
                format!("bitmap is {}x{}, tier canvas is {w}x{h}", bmp.width, bmp.height),
            ));
        }
        let patches = g.leaf(patchify(bmp, self.cfg.patch));
        let x = g.linear(patches, p.var(self.patch_w), Some(p.var(self.patch_b)))?;
        let x = g.gelu(x)?;
        let cols = g.unfold2d(x, self.cfg.patch_grid())?;
        let x = g.linear(cols, p.var(self.conv_w), Some(p.var(self.conv_b)))?;
        let x = g.gelu(x)?;
        let x = g.adaptive_avg_pool(x, self.cfg.tiers.get(self.cfg.tier))?;
        g.matmul(x, p.var(self.proj))
    }
}
