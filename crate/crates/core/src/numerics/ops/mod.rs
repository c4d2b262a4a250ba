//! Forward definitions and pullbacks for every recorded op.

pub(crate) mod activation;
mod attention;
mod basic;
mod conv;
mod loss;
mod norm;

pub use attention::rope_angle;
pub use conv::{adaptive_pool_ranges, conv1d_out_len};
pub use loss::CrossEntropy;

use super::graph::{Graph, Op};
use super::{Real, Tensor};

pub(crate) fn backward<T: Real>(g: &Graph<T>, i: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let node = &g.nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => basic::matmul_backward(g, *a, *b, gy, grads),
        Op::Add { a, b } => {
            g.accumulate(grads, *a, gy.clone());
            g.accumulate(grads, *b, gy.clone());
        }
        Op::AddBias { x, bias } => basic::add_bias_backward(g, *x, *bias, gy, grads),
        Op::Mul { a, b } => basic::mul_backward(g, *a, *b, gy, grads),
        Op::Scale { x, factor } => g.accumulate(grads, *x, gy.map(|v| v * *factor)),
        Op::Sum { x } => {
            let shape = g.value(*x).shape().to_vec();
            g.accumulate(grads, *x, Tensor::full(&shape, gy.item()));
        }
        Op::Gelu { x } => activation::gelu_backward(g, *x, gy, grads),
        Op::Silu { x } => activation::silu_backward(g, *x, gy, grads),
        Op::RmsNorm { x, gain, inv_rms } => norm::rms_norm_backward(g, *x, *gain, inv_rms, gy, grads),
        Op::GroupNorm { x, gain, shift, groups, normalized, inv_std } => {
            norm::group_norm_backward(g, *x, *gain, *shift, *groups, normalized, inv_std, gy, grads)
        }
        Op::Conv1d { x, kernel, bias, stride, padding, cols } => {
            conv::conv1d_backward(g, *x, *kernel, *bias, *stride, *padding, cols, gy, grads)
        }
        Op::RowMeans { x, ranges } => conv::row_means_backward(g, *x, ranges, gy, grads),
        Op::Embedding { table, ids } => basic::embedding_backward(g, *table, ids, gy, grads),
        Op::ConcatRows { parts } => basic::concat_rows_backward(g, parts, gy, grads),
        Op::SliceRows { x, start } => basic::slice_rows_backward(g, *x, *start, gy, grads),
        Op::Rope { x, heads, positions, base } => attention::rope_backward(g, *x, *heads, positions, *base, gy, grads),
        Op::Attention { q, k, v, heads, probs } => attention::attention_backward(g, *q, *k, *v, *heads, probs, gy, grads),
        Op::Unfold2d { x, geom } => conv::unfold2d_backward(g, *x, geom, gy, grads),
        Op::CrossEntropy { logits, targets, mask, probs, denom } => {
            loss::cross_entropy_backward(g, *logits, targets, mask, probs, *denom, gy, grads)
        }
    }
}
