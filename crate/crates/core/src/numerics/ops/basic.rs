use crate::numerics::graph::{Graph, Op, Var};
use crate::numerics::scalar::{gemm, MatMut, MatRef};
use crate::numerics::{NumericsError, Real, Tensor};

fn require_2d<T: Real>(g: &Graph<T>, op: &'static str, v: Var, what: &str) -> Result<(usize, usize), NumericsError> {
    let s = g.shape(v);
    if s.len() != 2 {
        return Err(NumericsError::shape(op, format!("{what} must be 2-D, got shape {s:?}")));
    }
    Ok((s[0], s[1]))
}

impl<T: Real> Graph<T> {
    /// `[n x k] * [k x m] -> [n x m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (n, k) = require_2d(self, "matmul", a, "lhs")?;
        let (k2, m) = require_2d(self, "matmul", b, "rhs")?;
        if k != k2 {
            return Err(NumericsError::shape("matmul", format!("inner dimension: lhs has {k} columns, rhs has {k2} rows")));
        }
        let mut out = vec![T::zero(); n * m];
        gemm(
            T::one(),
            MatRef::dense(self.value(a).data(), n, k),
            MatRef::dense(self.value(b).data(), k, m),
            T::zero(),
            MatMut::dense(&mut out, n, m),
        );
        self.push("matmul", Tensor::from_parts(vec![n, m], out), Op::MatMul { a, b })
    }

    /// `x * w + bias` for a row-major batch `x`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var, NumericsError> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor::from_parts(shape, data), Op::Add { a, b })
    }

    /// Adds a per-column bias `[c]` to every row of `[n x c]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (n, c) = require_2d(self, "add_bias", x, "input")?;
        if self.shape(bias) != [c] {
            return Err(NumericsError::shape("add_bias", format!("bias shape {:?}, expected [{c}]", self.shape(bias))));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
        self.push("add_bias", Tensor::from_parts(vec![n, c], data), Op::AddBias { x, bias })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::shape("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", Tensor::from_parts(shape, data), Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, NumericsError> {
        let t = self.value(x).map(|v| v * factor);
        self.push("scale", t, Op::Scale { x, factor })
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.value(x).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push("sum", Tensor::scalar(s), Op::Sum { x })
    }

    /// Gathers rows of `table` (`[V x d]`) by id.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var, NumericsError> {
        let (vocab, d) = require_2d(self, "embedding", table, "table")?;
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        let mut idx = Vec::with_capacity(ids.len());
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(NumericsError::Range { op: "embedding", detail: format!("id {id} outside vocabulary of {vocab}") });
            }
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
            idx.push(id);
        }
        self.push("embedding", Tensor::from_parts(vec![ids.len(), d], data), Op::Embedding { table, ids: idx })
    }

    /// Stacks 2-D parts vertically; parts may have zero rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::shape("concat_rows", "no parts".into()));
        };
        let (_, c) = require_2d(self, "concat_rows", first, "part")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = require_2d(self, "concat_rows", p, "part")?;
            if pc != c {
                return Err(NumericsError::shape("concat_rows", format!("column count {pc} differs from {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push("concat_rows", Tensor::from_parts(vec![rows, c], data), Op::ConcatRows { parts: parts.to_vec() })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (n, c) = require_2d(self, "slice_rows", x, "input")?;
        if start + len > n {
            return Err(NumericsError::Range { op: "slice_rows", detail: format!("rows {start}..{} of {n}", start + len) });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", Tensor::from_parts(vec![len, c], data), Op::SliceRows { x, start })
    }
}

pub(super) fn matmul_backward<T: Real>(g: &Graph<T>, a: Var, b: Var, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let (n, k) = (g.shape(a)[0], g.shape(a)[1]);
    let m = g.shape(b)[1];
    if g.requires_grad(a) {
        let mut da = vec![T::zero(); n * k];
        gemm(
            T::one(),
            MatRef::dense(gy.data(), n, m),
            MatRef::dense(g.value(b).data(), k, m).t(),
            T::zero(),
            MatMut::dense(&mut da, n, k),
        );
        g.accumulate(grads, a, Tensor::from_parts(vec![n, k], da));
    }
    if g.requires_grad(b) {
        let mut db = vec![T::zero(); k * m];
        gemm(
            T::one(),
            MatRef::dense(g.value(a).data(), n, k).t(),
            MatRef::dense(gy.data(), n, m),
            T::zero(),
            MatMut::dense(&mut db, k, m),
        );
        g.accumulate(grads, b, Tensor::from_parts(vec![k, m], db));
    }
}

pub(super) fn add_bias_backward<T: Real>(g: &Graph<T>, x: Var, bias: Var, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    g.accumulate(grads, x, gy.clone());
    if g.requires_grad(bias) {
        let c = gy.cols();
        let mut db = vec![T::zero(); c];
        for row in gy.data().chunks(c) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
        g.accumulate(grads, bias, Tensor::vector(db));
    }
}

pub(super) fn mul_backward<T: Real>(g: &Graph<T>, a: Var, b: Var, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let shape = gy.shape().to_vec();
    if g.requires_grad(a) {
        let d = gy.data().iter().zip(g.value(b).data()).map(|(&u, &v)| u * v).collect();
        g.accumulate(grads, a, Tensor::from_parts(shape.clone(), d));
    }
    if g.requires_grad(b) {
        let d = gy.data().iter().zip(g.value(a).data()).map(|(&u, &v)| u * v).collect();
        g.accumulate(grads, b, Tensor::from_parts(shape, d));
    }
}

pub(super) fn embedding_backward<T: Real>(g: &Graph<T>, table: Var, ids: &[usize], gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    if !g.requires_grad(table) {
        return;
    }
    let shape = g.shape(table).to_vec();
    let d = shape[1];
    let mut dt = vec![T::zero(); shape[0] * d];
    for (row, &id) in ids.iter().enumerate() {
        for (acc, &v) in dt[id * d..(id + 1) * d].iter_mut().zip(gy.row(row)) {
            *acc = *acc + v;
        }
    }
    g.accumulate(grads, table, Tensor::from_parts(shape, dt));
}

pub(super) fn concat_rows_backward<T: Real>(g: &Graph<T>, parts: &[Var], gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let c = gy.cols();
    let mut offset = 0;
    for &p in parts {
        let r = g.shape(p)[0];
        if g.requires_grad(p) {
            let d = gy.data()[offset * c..(offset + r) * c].to_vec();
            g.accumulate(grads, p, Tensor::from_parts(vec![r, c], d));
        }
        offset += r;
    }
}

pub(super) fn slice_rows_backward<T: Real>(g: &Graph<T>, x: Var, start: usize, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    if !g.requires_grad(x) {
        return;
    }
    let shape = g.shape(x).to_vec();
    let c = shape[1];
    let mut dx = vec![T::zero(); shape[0] * c];
    dx[start * c..start * c + gy.len()].copy_from_slice(gy.data());
    g.accumulate(grads, x, Tensor::from_parts(shape, dx));
}
