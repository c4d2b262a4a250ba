use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NumericsError, Real, Var};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};

const GN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierConfig {
    /// Number of halving blocks.
    pub levels: usize,
    /// Output width of each block. Default: double from `d` per block,
    /// capped at `4d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    /// GroupNorm groups. Default: 8, or 1 for widths below 8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
}

impl HierConfig {
    pub fn new(levels: usize) -> Self {
        HierConfig { levels, widths: None, groups: None }
    }

    pub fn block_widths(&self, d: usize) -> Vec<usize> {
        match &self.widths {
            Some(w) => w.clone(),
            None => (0..self.levels).map(|i| d << (i + 1).min(2)).collect(),
        }
    }

    pub fn groups_for(&self, width: usize) -> usize {
        match self.groups {
            Some(g) => g,
            None if width >= 8 && width % 8 == 0 => 8,
            None => 1,
        }
    }

    pub fn validate(&self, d: usize) -> Result<(), String> {
        if self.levels == 0 {
            return Err("hierarchical levels must be >= 1".into());
        }
        let widths = self.block_widths(d);
        if widths.len() != self.levels {
            return Err(format!("hierarchical widths lists {} entries for {} levels", widths.len(), self.levels));
        }
        for w in widths {
            let g = self.groups_for(w);
            if w == 0 || g == 0 || w % g != 0 {
                return Err(format!("hierarchical width {w} is not divisible by {g} groups"));
            }
        }
        Ok(())
    }
}

/// Output length after `levels` halvings: `ceil(n / 2^levels)`.
pub fn hier_out_len(n: usize, levels: usize) -> usize {
    n.div_ceil(1 << levels)
}

/// Parameters of one halving block mapping `c_in` to `c_out` channels.
#[derive(Clone, Debug)]
pub struct HierBlock {
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    conv5: ParamId,
    conv5_bias: ParamId,
    norm1_gain: ParamId,
    norm1_shift: ParamId,
    conv3: ParamId,
    conv3_bias: ParamId,
    norm2_gain: ParamId,
    norm2_shift: ParamId,
    skip: Option<ParamId>,
}

impl HierBlock {
    pub fn new<T: Real>(
        prefix: &str,
        c_in: usize,
        c_out: usize,
        groups: usize,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Self {
        let e = ParamGroup::Encoder;
        let std5 = 1.0 / ((c_in * 5) as f64).sqrt();
        let std3 = 1.0 / ((c_out * 3) as f64).sqrt();
        HierBlock {
            c_in,
            c_out,
            groups,
            conv5: store.normal(format!("{prefix}.conv5.weight"), e, &[c_out, c_in, 5], std5, rng),
            conv5_bias: store.zeros(format!("{prefix}.conv5.bias"), e, &[c_out]),
            norm1_gain: store.ones(format!("{prefix}.norm1.gain"), e, &[c_out]),
            norm1_shift: store.zeros(format!("{prefix}.norm1.shift"), e, &[c_out]),
            conv3: store.normal(format!("{prefix}.conv3.weight"), e, &[c_out, c_out, 3], std3, rng),
            conv3_bias: store.zeros(format!("{prefix}.conv3.bias"), e, &[c_out]),
            norm2_gain: store.ones(format!("{prefix}.norm2.gain"), e, &[c_out]),
            norm2_shift: store.zeros(format!("{prefix}.norm2.shift"), e, &[c_out]),
            skip: (c_in != c_out).then(|| {
                store.normal(format!("{prefix}.skip.weight"), e, &[c_in, c_out], 1.0 / (c_in as f64).sqrt(), rng)
            }),
        }
    }

    /// `x: [len x c_in] -> [ceil(len/2) x c_out]`:
    ///
    /// ```text
    /// h = GELU(GN(conv_k5_s1_p2(x)))
    /// m = GN(conv_k3_s2_p1(h))
    /// y = GELU(m + skip(x))
    /// ```
    ///
    /// where `skip` is adaptive average pooling to `ceil(len/2)`, followed by
    /// a bias-free 1x1 projection when the widths differ.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let len = g.shape(x)[0];
        let c = g.conv1d(x, p.var(self.conv5), Some(p.var(self.conv5_bias)), 1, 2)?;
        let c = g.group_norm(c, self.groups, GN_EPS, p.var(self.norm1_gain), p.var(self.norm1_shift))?;
        let h = g.gelu(c)?;
        let m = g.conv1d(h, p.var(self.conv3), Some(p.var(self.conv3_bias)), 2, 1)?;
        let m = g.group_norm(m, self.groups, GN_EPS, p.var(self.norm2_gain), p.var(self.norm2_shift))?;
        let mut skip = g.adaptive_avg_pool(x, len.div_ceil(2))?;
        if let Some(w) = self.skip {
            skip = g.matmul(skip, p.var(w))?;
        }
        let y = g.add(m, skip)?;
        g.gelu(y)
    }
}

#[derive(Clone, Debug)]
pub struct Hierarchical {
    pub blocks: Vec<HierBlock>,
    proj: ParamId,
}

impl Hierarchical {
    pub fn new<T: Real>(cfg: &HierConfig, d: usize, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self, String> {
        cfg.validate(d)?;
        let mut blocks = Vec::new();
        let mut c_in = d;
        for (i, w) in cfg.block_widths(d).into_iter().enumerate() {
            blocks.push(HierBlock::new(&format!("encoder.block{i}"), c_in, w, cfg.groups_for(w), store, rng));
            c_in = w;
        }
        let proj = store.normal("encoder.proj.weight", ParamGroup::Encoder, &[c_in, d], 0.02, rng);
        Ok(Hierarchical { blocks, proj })
    }

    /// Runs every block on `e: [n x d]` and projects back to `d`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, e: Var) -> Result<Var, NumericsError> {
        let mut x = e;
        for b in &self.blocks {
            x = b.forward(g, p, x)?;
        }
        g.matmul(x, p.var(self.proj))
    }
}
