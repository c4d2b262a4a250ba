use crate::numerics::graph::{Graph, Op, Var};
use crate::numerics::{NumericsError, Real, Tensor};

/// Result of [`Graph::cross_entropy`].
pub struct CrossEntropy<T> {
    /// `[1]`-shaped loss node.
    pub loss: Var,
    /// Per-position `-log p(target)`; zero where the mask is off.
    pub per_token: Tensor<T>,
    /// Number of masked-in positions.
    pub count: usize,
}

impl<T: Real> Graph<T> {
    /// Masked token-mean of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], mask: &[bool]) -> Result<CrossEntropy<T>, NumericsError> {
        self.cross_entropy_with_denominator(logits, targets, mask, None)
    }

    /// Like [`cross_entropy`](Self::cross_entropy) but divides the summed
    /// NLL by `denominator` instead of the local mask count, so several
    /// sequences can share one per-token average.
    pub fn cross_entropy_with_denominator(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[bool],
        denominator: Option<usize>,
    ) -> Result<CrossEntropy<T>, NumericsError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 {
            return Err(NumericsError::shape("cross_entropy", format!("logits must be [n x V], got {s:?}")));
        }
        let (n, vocab) = (s[0], s[1]);
        if targets.len() != n || mask.len() != n {
            return Err(NumericsError::shape(
                "cross_entropy",
                format!("{n} logit rows but {} targets and {} mask entries", targets.len(), mask.len()),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let denom = denominator.unwrap_or(count);
        if count == 0 || denom == 0 {
            return Err(NumericsError::EmptyMask);
        }
        let xs = self.value(logits).data();
        let mut probs = vec![T::zero(); n * vocab];
        let mut per_token = vec![T::zero(); n];
        let mut total = T::zero();
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let t = targets[i] as usize;
            if t >= vocab {
                return Err(NumericsError::Range { op: "cross_entropy", detail: format!("target {t} at position {i} outside vocabulary of {vocab}") });
            }
            let row = &xs[i * vocab..(i + 1) * vocab];
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut sum = T::zero();
            let p = &mut probs[i * vocab..(i + 1) * vocab];
            for (dst, &x) in p.iter_mut().zip(row) {
                *dst = (x - max).exp();
                sum = sum + *dst;
            }
            for v in p.iter_mut() {
                *v = *v / sum;
            }
            let nll = max + sum.ln() - row[t];
            per_token[i] = nll;
            total = total + nll;
        }
        let denom = T::from_usize(denom);
        let loss = self.push(
            "cross_entropy",
            Tensor::scalar(total / denom),
            Op::CrossEntropy { logits, targets: targets.iter().map(|&t| t as usize).collect(), mask: mask.to_vec(), probs, denom },
        )?;
        Ok(CrossEntropy { loss, per_token: Tensor::vector(per_token), count })
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn cross_entropy_backward<T: Real>(
    g: &Graph<T>,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
    probs: &[T],
    denom: T,
    gy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let shape = g.shape(logits).to_vec();
    let vocab = shape[1];
    let scale = gy.item() / denom;
    let mut d = vec![T::zero(); shape[0] * vocab];
    for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let row = &mut d[i * vocab..(i + 1) * vocab];
        for (dst, &p) in row.iter_mut().zip(&probs[i * vocab..(i + 1) * vocab]) {
            *dst = p * scale;
        }
        row[t] = row[t] - scale;
    }
    g.accumulate(grads, logits, Tensor::from_parts(shape, d));
}
