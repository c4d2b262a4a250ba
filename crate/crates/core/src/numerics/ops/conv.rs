use crate::numerics::graph::{Graph, Op, Unfold2d, Var};
use crate::numerics::scalar::{gemm, MatMut, MatRef};
use crate::numerics::{NumericsError, Real, Tensor};

/// Output length of a 1-D convolution: `floor((len + 2p - k) / s) + 1`.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || len + 2 * padding < kernel {
        return None;
    }
    Some((len + 2 * padding - kernel) / stride + 1)
}

/// Input slices averaged by adaptive average pooling:
/// `[floor(i * len / t), ceil((i + 1) * len / t))`.
pub fn adaptive_pool_ranges(len: usize, target: usize) -> Vec<(usize, usize)> {
    (0..target).map(|i| (i * len / target, ((i + 1) * len).div_ceil(target))).collect()
}

impl<T: Real> Graph<T> {
    /// 1-D convolution of `x: [len x c_in]` with `kernel: [c_out x c_in x k]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, NumericsError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(NumericsError::shape("conv1d", format!("input must be [len x c_in], got {xs:?}")));
        }
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 3 {
            return Err(NumericsError::shape("conv1d", format!("kernel must be [c_out x c_in x k], got {ks:?}")));
        }
        let (len, c_in) = (xs[0], xs[1]);
        let (c_out, k_in, k) = (ks[0], ks[1], ks[2]);
        if k_in != c_in {
            return Err(NumericsError::shape("conv1d", format!("c_in: input has {c_in} channels, kernel expects {k_in}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(NumericsError::shape("conv1d", format!("c_out: bias shape {:?}, expected [{c_out}]", self.shape(b))));
            }
        }
        if k == 0 || stride == 0 {
            return Err(NumericsError::Config { op: "conv1d", detail: format!("kernel {k} and stride {stride} must be >= 1") });
        }
        let out_len = conv1d_out_len(len, k, stride, padding).ok_or_else(|| {
            NumericsError::shape("conv1d", format!("len: {len} + 2*{padding} padding is shorter than kernel {k}"))
        })?;
        let width = c_in * k;
        let src = self.value(x).data();
        let mut cols = vec![T::zero(); out_len * width];
        for o in 0..out_len {
            for kk in 0..k {
                let pos = (o * stride + kk) as isize - padding as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let row = &src[pos as usize * c_in..(pos as usize + 1) * c_in];
                for (ci, &v) in row.iter().enumerate() {
                    cols[o * width + ci * k + kk] = v;
                }
            }
        }
        let mut out = vec![T::zero(); out_len * c_out];
        gemm(
            T::one(),
            MatRef::dense(&cols, out_len, width),
            MatRef::dense(self.value(kernel).data(), c_out, width).t(),
            T::zero(),
            MatMut::dense(&mut out, out_len, c_out),
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(c_out) {
                for (v, &bb) in row.iter_mut().zip(bv) {
                    *v = *v + bb;
                }
            }
        }
        self.push("conv1d", Tensor::from_parts(vec![out_len, c_out], out), Op::Conv1d { x, kernel, bias, stride, padding, cols })
    }

    /// Row `i` of the output is the mean of input rows `ranges[i].0..ranges[i].1`.
    pub fn row_means(&mut self, x: Var, ranges: Vec<(usize, usize)>) -> Result<Var, NumericsError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(NumericsError::shape("row_means", format!("input must be 2-D, got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(ranges.len() * c);
        for &(lo, hi) in &ranges {
            if lo >= hi || hi > n {
                return Err(NumericsError::Range { op: "row_means", detail: format!("rows {lo}..{hi} of {n}") });
            }
            let count = T::from_usize(hi - lo);
            for j in 0..c {
                let mut acc = T::zero();
                for r in lo..hi {
                    acc = acc + src[r * c + j];
                }
                out.push(acc / count);
            }
        }
        let rows = ranges.len();
        self.push("row_means", Tensor::from_parts(vec![rows, c], out), Op::RowMeans { x, ranges })
    }

    /// Adaptive average pooling of `[len x c]` down to `[target x c]`.
    pub fn adaptive_avg_pool(&mut self, x: Var, target: usize) -> Result<Var, NumericsError> {
        let len = self.shape(x).first().copied().unwrap_or(0);
        if target < 1 || target > len {
            return Err(NumericsError::Range {
                op: "adaptive_avg_pool",
                detail: format!("target length {target} outside 1..={len}"),
            });
        }
        self.row_means(x, adaptive_pool_ranges(len, target))
    }

    /// im2col over a row-major `height x width` grid stored as `[(h*w) x c]`.
    ///
    /// Output row `oy * out_w + ox` holds the `kernel x kernel` neighbourhood,
    /// column `(ky * kernel + kx) * c + ch`; out-of-grid taps are zero.
    pub fn unfold2d(&mut self, x: Var, geom: Unfold2d) -> Result<Var, NumericsError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != geom.height * geom.width {
            return Err(NumericsError::shape(
                "unfold2d",
                format!("input {s:?} does not hold a {}x{} grid", geom.height, geom.width),
            ));
        }
        if geom.kernel == 0 || geom.stride == 0 {
            return Err(NumericsError::Config { op: "unfold2d", detail: "kernel and stride must be >= 1".into() });
        }
        if geom.height + 2 * geom.padding < geom.kernel || geom.width + 2 * geom.padding < geom.kernel {
            return Err(NumericsError::shape("unfold2d", format!("grid {}x{} smaller than kernel {}", geom.height, geom.width, geom.kernel)));
        }
        let c = s[1];
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let width = geom.kernel * geom.kernel * c;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); oh * ow * width];
        for_each_tap(&geom, |orow, col, irow| {
            out[orow * width + col * c..orow * width + (col + 1) * c].copy_from_slice(&src[irow * c..(irow + 1) * c]);
        });
        self.push("unfold2d", Tensor::from_parts(vec![oh * ow, width], out), Op::Unfold2d { x, geom })
    }
}

fn for_each_tap(geom: &Unfold2d, mut f: impl FnMut(usize, usize, usize)) {
    let (oh, ow) = (geom.out_height(), geom.out_width());
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..geom.kernel {
                let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                if iy < 0 || iy as usize >= geom.height {
                    continue;
                }
                for kx in 0..geom.kernel {
                    let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                    if ix < 0 || ix as usize >= geom.width {
                        continue;
                    }
                    f(oy * ow + ox, ky * geom.kernel + kx, iy as usize * geom.width + ix as usize);
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv1d_backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
    cols: &[T],
    gy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let ks = g.shape(kernel).to_vec();
    let (c_out, c_in, k) = (ks[0], ks[1], ks[2]);
    let width = c_in * k;
    let out_len = gy.rows();
    if g.requires_grad(kernel) {
        let mut dk = vec![T::zero(); c_out * width];
        gemm(
            T::one(),
            MatRef::dense(gy.data(), out_len, c_out).t(),
            MatRef::dense(cols, out_len, width),
            T::zero(),
            MatMut::dense(&mut dk, c_out, width),
        );
        g.accumulate(grads, kernel, Tensor::from_parts(ks.clone(), dk));
    }
    if let Some(b) = bias {
        if g.requires_grad(b) {
            let mut db = vec![T::zero(); c_out];
            for row in gy.data().chunks(c_out) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
            g.accumulate(grads, b, Tensor::vector(db));
        }
    }
    if g.requires_grad(x) {
        let mut dcols = vec![T::zero(); out_len * width];
        gemm(
            T::one(),
            MatRef::dense(gy.data(), out_len, c_out),
            MatRef::dense(g.value(kernel).data(), c_out, width),
            T::zero(),
            MatMut::dense(&mut dcols, out_len, width),
        );
        let len = g.shape(x)[0];
        let mut dx = vec![T::zero(); len * c_in];
        for o in 0..out_len {
            for kk in 0..k {
                let pos = (o * stride + kk) as isize - padding as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let p = pos as usize;
                for ci in 0..c_in {
                    dx[p * c_in + ci] = dx[p * c_in + ci] + dcols[o * width + ci * k + kk];
                }
            }
        }
        g.accumulate(grads, x, Tensor::from_parts(vec![len, c_in], dx));
    }
}

pub(super) fn row_means_backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    ranges: &[(usize, usize)],
    gy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    if !g.requires_grad(x) {
        return;
    }
    let shape = g.shape(x).to_vec();
    let c = shape[1];
    let mut dx = vec![T::zero(); shape[0] * c];
    for (i, &(lo, hi)) in ranges.iter().enumerate() {
        let count = T::from_usize(hi - lo);
        for r in lo..hi {
            for j in 0..c {
                dx[r * c + j] = dx[r * c + j] + gy.data()[i * c + j] / count;
            }
        }
    }
    g.accumulate(grads, x, Tensor::from_parts(shape, dx));
}

pub(super) fn unfold2d_backward<T: Real>(g: &Graph<T>, x: Var, geom: &Unfold2d, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    if !g.requires_grad(x) {
        return;
    }
    let shape = g.shape(x).to_vec();
    let c = shape[1];
    let width = geom.kernel * geom.kernel * c;
    let mut dx = vec![T::zero(); shape[0] * c];
    let src = gy.data();
    for_each_tap(geom, |orow, col, irow| {
        for ch in 0..c {
            dx[irow * c + ch] = dx[irow * c + ch] + src[orow * width + col * c + ch];
        }
    });
    g.accumulate(grads, x, Tensor::from_parts(shape, dx));
}
