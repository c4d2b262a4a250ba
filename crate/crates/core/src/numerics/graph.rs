use super::ops;
use super::{NumericsError, Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Geometry of a 2-D patch unfold (im2col) over a `height x width` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unfold2d {
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Unfold2d {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }
    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    Gelu { x: Var },
    Silu { x: Var },
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    GroupNorm { x: Var, gain: Var, shift: Var, groups: usize, normalized: Vec<T>, inv_std: Vec<T> },
    Conv1d { x: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize, cols: Vec<T> },
    RowMeans { x: Var, ranges: Vec<(usize, usize)> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    Rope { x: Var, heads: usize, positions: Vec<usize>, base: f64 },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    Unfold2d { x: Var, geom: Unfold2d },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<T>, denom: T },
}

/// Reverse-mode tape.
///
/// Every op evaluates eagerly and records what its backward pass needs.
/// Values are checked for NaN/Inf as they are recorded, so a non-finite
/// activation surfaces at the op that produced it. A graph is single-owner;
/// build one per forward pass.
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `v`, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Constant input; never receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Backpropagates from a scalar (`[1]`-shaped) root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, NumericsError> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(NumericsError::NotScalar { shape: root_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            ops::backward(self, i, &gy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
        Op::AddBias { x, bias } => vec![*x, *bias],
        Op::Scale { x, .. }
        | Op::Sum { x }
        | Op::Gelu { x }
        | Op::Silu { x }
        | Op::RowMeans { x, .. }
        | Op::SliceRows { x, .. }
        | Op::Rope { x, .. }
        | Op::Unfold2d { x, .. } => vec![*x],
        Op::RmsNorm { x, gain, .. } => vec![*x, *gain],
        Op::GroupNorm { x, gain, shift, .. } => vec![*x, *gain, *shift],
        Op::Conv1d { x, kernel, bias, .. } => {
            let mut v = vec![*x, *kernel];
            v.extend(bias.iter().copied());
            v
        }
        Op::Embedding { table, .. } => vec![*table],
        Op::ConcatRows { parts } => parts.clone(),
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}
