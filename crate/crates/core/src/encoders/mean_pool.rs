use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NumericsError, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeanPoolConfig {
    pub w: usize,
    pub s: usize,
}

impl MeanPoolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.s == 0 || self.s > self.w {
            return Err(format!("mean pool needs 1 <= s <= w, got w={}, s={}", self.w, self.s));
        }
        Ok(())
    }
}

/// Row ranges averaged by mean pooling over `n` embeddings.
///
/// Full windows start at `0, s, 2s, ...` while they fit. Tokens after the
/// last full window, or the whole input when `n < w`, form one extra range.
pub fn mean_pool_ranges(n: usize, w: usize, s: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut covered = 0;
    if n >= w {
        let windows = (n - w) / s + 1;
        out.extend((0..windows).map(|i| (i * s, i * s + w)));
        covered = (windows - 1) * s + w;
    }
    if covered < n {
        out.push((covered, n));
    }
    out
}

/// Pooled vectors plus the separator.
pub fn mean_pool_z_len(n: usize, cfg: MeanPoolConfig) -> usize {
    mean_pool_ranges(n, cfg.w, cfg.s).len() + 1
}

/// Averages windows of `e: [n x d]` and appends `sep: [1 x d]`.
pub fn mean_pool_encode<T: Real>(g: &mut Graph<T>, e: Var, cfg: MeanPoolConfig, sep: Var) -> Result<Var, NumericsError> {
    let n = g.shape(e)[0];
    if n == 0 {
        return Err(NumericsError::Range { op: "mean_pool", detail: "empty input".into() });
    }
    let pooled = g.row_means(e, mean_pool_ranges(n, cfg.w, cfg.s))?;
    g.concat_rows(&[pooled, sep])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_remainder() {
        assert_eq!(mean_pool_ranges(4, 2, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(mean_pool_ranges(5, 2, 2), vec![(0, 2), (2, 4), (4, 5)]);
        assert_eq!(mean_pool_ranges(3, 5, 5), vec![(0, 3)]);
        assert_eq!(mean_pool_ranges(9, 4, 2), vec![(0, 4), (2, 6), (4, 8), (8, 9)]);
    }
}
