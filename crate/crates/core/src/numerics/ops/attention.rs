use crate::numerics::graph::{Graph, Op, Var};
use crate::numerics::scalar::{gemm, MatMut, MatRef};
use crate::numerics::{NumericsError, Real, Tensor};

/// Rotation angle for pair `i` of a head at position `pos`:
/// `pos * base^(-2i / head_dim)`.
pub fn rope_angle(pos: usize, i: usize, head_dim: usize, base: f64) -> f64 {
    pos as f64 * base.powf(-2.0 * i as f64 / head_dim as f64)
}

/// Rotates each head's `(j, j + head_dim/2)` pairs; `sign = -1` undoes it.
fn rotate<T: Real>(src: &[T], dst: &mut [T], d: usize, heads: usize, positions: &[usize], base: f64, sign: f64) {
    let hd = d / heads;
    let half = hd / 2;
    for (r, &pos) in positions.iter().enumerate() {
        let row = &src[r * d..(r + 1) * d];
        let out = &mut dst[r * d..(r + 1) * d];
        for i in 0..half {
            let theta = sign * rope_angle(pos, i, hd, base);
            let (s, c) = (T::from_f64(theta.sin()), T::from_f64(theta.cos()));
            for h in 0..heads {
                let a = h * hd + i;
                let b = a + half;
                let (x1, x2) = (row[a], row[b]);
                out[a] = x1 * c - x2 * s;
                out[b] = x1 * s + x2 * c;
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Rotary position embedding over `[n x heads*head_dim]`.
    pub fn rope(&mut self, x: Var, heads: usize, positions: &[usize], base: f64) -> Result<Var, NumericsError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || positions.len() != s[0] {
            return Err(NumericsError::shape("rope", format!("input {s:?} with {} positions", positions.len())));
        }
        let d = s[1];
        if heads == 0 || d % heads != 0 || (d / heads) % 2 != 0 {
            return Err(NumericsError::Config { op: "rope", detail: format!("head_dim {}/{heads} must be even", d) });
        }
        if !(base > 0.0) {
            return Err(NumericsError::Config { op: "rope", detail: format!("base must be positive, got {base}") });
        }
        let mut out = vec![T::zero(); s[0] * d];
        rotate(self.value(x).data(), &mut out, d, heads, positions, base, 1.0);
        self.push("rope", Tensor::from_parts(s, out), Op::Rope { x, heads, positions: positions.to_vec(), base })
    }

    /// Multi-head causal softmax attention, `q, k, v: [n x heads*head_dim]`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, NumericsError> {
        let s = self.shape(q).to_vec();
        if s.len() != 2 || self.shape(k) != s.as_slice() || self.shape(v) != s.as_slice() {
            return Err(NumericsError::shape(
                "causal_attention",
                format!("q {:?}, k {:?}, v {:?} must match", s, self.shape(k), self.shape(v)),
            ));
        }
        let (n, d) = (s[0], s[1]);
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Config { op: "causal_attention", detail: format!("{d} not divisible by {heads} heads") });
        }
        let hd = d / heads;
        let scale = T::one() / T::from_usize(hd).sqrt();
        let (qs, ks, vs) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * n * n];
        let mut out = vec![T::zero(); n * d];
        for h in 0..heads {
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            let qh = MatRef { data: qs, offset: h * hd, rows: n, cols: hd, rs: d, cs: 1 };
            let kh = MatRef { data: ks, offset: h * hd, rows: n, cols: hd, rs: d, cs: 1 };
            gemm(scale, qh, kh.t(), T::zero(), MatMut::dense(p, n, n));
            for i in 0..n {
                let row = &mut p[i * n..(i + 1) * n];
                let max = row[..=i].iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let mut total = T::zero();
                for x in &mut row[..=i] {
                    *x = (*x - max).exp();
                    total = total + *x;
                }
                for x in &mut row[..=i] {
                    *x = *x / total;
                }
                for x in &mut row[i + 1..] {
                    *x = T::zero();
                }
            }
            let vh = MatRef { data: vs, offset: h * hd, rows: n, cols: hd, rs: d, cs: 1 };
            gemm(T::one(), MatRef::dense(p, n, n), vh, T::zero(), MatMut { data: &mut out, offset: h * hd, rows: n, cols: hd, rs: d });
        }
        self.push("causal_attention", Tensor::from_parts(vec![n, d], out), Op::Attention { q, k, v, heads, probs })
    }
}

pub(super) fn rope_backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    heads: usize,
    positions: &[usize],
    base: f64,
    gy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let d = gy.cols();
    let mut dx = vec![T::zero(); gy.len()];
    rotate(gy.data(), &mut dx, d, heads, positions, base, -1.0);
    g.accumulate(grads, x, Tensor::from_parts(gy.shape().to_vec(), dx));
}

#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward<T: Real>(
    g: &Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    probs: &[T],
    gy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let (n, d) = (gy.rows(), gy.cols());
    let hd = d / heads;
    let scale = T::one() / T::from_usize(hd).sqrt();
    let (qs, ks, vs) = (g.value(q).data(), g.value(k).data(), g.value(v).data());
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut ds = vec![T::zero(); n * n];
    for h in 0..heads {
        let p = &probs[h * n * n..(h + 1) * n * n];
        let doh = MatRef { data: gy.data(), offset: h * hd, rows: n, cols: hd, rs: d, cs: 1 };
        // dV = P^T dO
        gemm(T::one(), MatRef::dense(p, n, n).t(), doh, T::zero(), MatMut { data: &mut dv, offset: h * hd, rows: n, cols: hd, rs: d });
        // dP = dO V^T
        let vh = MatRef { data: vs, offset: h * hd, rows: n, cols: hd, rs: d, cs: 1 };
        gemm(T::one(), doh, vh.t(), T::zero(), MatMut::dense(&mut ds, n, n));
        for i in 0..n {
            let prow = &p[i * n..(i + 1) * n];
            let drow = &mut ds[i * n..(i + 1) * n];
            let dot = prow[..=i].iter().zip(&drow[..=i]).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            for j in 0..=i {
                drow[j] = prow[j] * (drow[j] - dot);
            }
            for x in &mut drow[i + 1..] {
                *x = T::zero();
            }
        }
        let qh = MatRef { data: qs, offset: h * hd, rows: n, cols: hd, rs: d, cs: 1 };
        let kh = MatRef { data: ks, offset: h * hd, rows: n, cols: hd, rs: d, cs: 1 };
        gemm(scale, MatRef::dense(&ds, n, n), kh, T::zero(), MatMut { data: &mut dq, offset: h * hd, rows: n, cols: hd, rs: d });
        gemm(scale, MatRef::dense(&ds, n, n).t(), qh, T::zero(), MatMut { data: &mut dk, offset: h * hd, rows: n, cols: hd, rs: d });
    }
    g.accumulate(grads, q, Tensor::from_parts(vec![n, d], dq));
    g.accumulate(grads, k, Tensor::from_parts(vec![n, d], dk));
    g.accumulate(grads, v, Tensor::from_parts(vec![n, d], dv));
}
