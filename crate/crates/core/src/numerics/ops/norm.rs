use crate::numerics::graph::{Graph, Op, Var};
use crate::numerics::{NumericsError, Real, Tensor};

impl<T: Real> Graph<T> {
    /// Row-wise RMS normalisation with a learned per-column gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var, NumericsError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(NumericsError::shape("rms_norm", format!("input must be 2-D, got {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        if self.shape(gain) != [d] {
            return Err(NumericsError::shape("rms_norm", format!("gain shape {:?}, expected [{d}]", self.shape(gain))));
        }
        let xs = self.value(x).data();
        let gs = self.value(gain).data();
        let eps = T::from_f64(eps);
        let inv_d = T::one() / T::from_usize(d);
        let mut out = Vec::with_capacity(n * d);
        let mut inv_rms = Vec::with_capacity(n);
        for row in xs.chunks(d) {
            let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) * inv_d;
            let r = T::one() / (ms + eps).sqrt();
            inv_rms.push(r);
            out.extend(row.iter().zip(gs).map(|(&v, &gv)| v * r * gv));
        }
        self.push("rms_norm", Tensor::from_parts(s, out), Op::RmsNorm { x, gain, inv_rms })
    }

    /// Group normalisation of a `[len x c]` sequence.
    ///
    /// Statistics are taken per position over the `c / groups` channels of
    /// each group, then the per-channel affine `gain`, `shift` is applied.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64, gain: Var, shift: Var) -> Result<Var, NumericsError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(NumericsError::shape("group_norm", format!("input must be 2-D, got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if groups == 0 || c % groups != 0 {
            return Err(NumericsError::Config {
                op: "group_norm",
                detail: format!("{c} channels not divisible into {groups} groups"),
            });
        }
        if !(eps > 0.0) {
            return Err(NumericsError::Config { op: "group_norm", detail: format!("eps must be positive, got {eps}") });
        }
        if self.shape(gain) != [c] || self.shape(shift) != [c] {
            return Err(NumericsError::shape(
                "group_norm",
                format!("gain {:?} / shift {:?}, expected [{c}]", self.shape(gain), self.shape(shift)),
            ));
        }
        let gsize = c / groups;
        let xs = self.value(x).data();
        let gain_v = self.value(gain).data();
        let shift_v = self.value(shift).data();
        let eps = T::from_f64(eps);
        let inv_g = T::one() / T::from_usize(gsize);
        let mut normalized = Vec::with_capacity(n * c);
        let mut inv_std = Vec::with_capacity(n * groups);
        let mut out = Vec::with_capacity(n * c);
        for row in xs.chunks(c) {
            for grp in row.chunks(gsize) {
                let mean = grp.iter().fold(T::zero(), |a, &v| a + v) * inv_g;
                let var = grp.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_g;
                let inv = T::one() / (var + eps).sqrt();
                inv_std.push(inv);
                normalized.extend(grp.iter().map(|&v| (v - mean) * inv));
            }
        }
        for row in normalized.chunks(c) {
            out.extend(row.iter().zip(gain_v).zip(shift_v).map(|((&h, &gv), &sv)| h * gv + sv));
        }
        self.push("group_norm", Tensor::from_parts(s, out), Op::GroupNorm { x, gain, shift, groups, normalized, inv_std })
    }
}

pub(super) fn rms_norm_backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    gain: Var,
    inv_rms: &[T],
    gy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let xs = g.value(x);
    let d = xs.cols();
    let gs = g.value(gain).data();
    let inv_d = T::one() / T::from_usize(d);
    if g.requires_grad(x) {
        let mut dx = Vec::with_capacity(xs.len());
        for ((row, dy), &r) in xs.data().chunks(d).zip(gy.data().chunks(d)).zip(inv_rms) {
            let dot = row.iter().zip(dy).zip(gs).fold(T::zero(), |acc, ((&xv, &dv), &gv)| acc + xv * dv * gv);
            let coef = r * r * r * dot * inv_d;
            dx.extend(row.iter().zip(dy).zip(gs).map(|((&xv, &dv), &gv)| r * gv * dv - coef * xv));
        }
        g.accumulate(grads, x, Tensor::from_parts(xs.shape().to_vec(), dx));
    }
    if g.requires_grad(gain) {
        let mut dg = vec![T::zero(); d];
        for ((row, dy), &r) in xs.data().chunks(d).zip(gy.data().chunks(d)).zip(inv_rms) {
            for ((acc, &xv), &dv) in dg.iter_mut().zip(row).zip(dy) {
                *acc = *acc + dv * xv * r;
            }
        }
        g.accumulate(grads, gain, Tensor::vector(dg));
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn group_norm_backward<T: Real>(
    g: &Graph<T>,
    x: Var,
    gain: Var,
    shift: Var,
    groups: usize,
    normalized: &[T],
    inv_std: &[T],
    gy: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) {
    let c = gy.cols();
    let gsize = c / groups;
    let gain_v = g.value(gain).data();
    if g.requires_grad(x) {
        let inv_g = T::one() / T::from_usize(gsize);
        let mut dx = vec![T::zero(); gy.len()];
        for (r, (dy_row, h_row)) in gy.data().chunks(c).zip(normalized.chunks(c)).enumerate() {
            for gi in 0..groups {
                let lo = gi * gsize;
                let inv = inv_std[r * groups + gi];
                let mut mean_a = T::zero();
                let mut mean_ah = T::zero();
                for j in lo..lo + gsize {
                    let a = dy_row[j] * gain_v[j];
                    mean_a = mean_a + a;
                    mean_ah = mean_ah + a * h_row[j];
                }
                mean_a = mean_a * inv_g;
                mean_ah = mean_ah * inv_g;
                for j in lo..lo + gsize {
                    let a = dy_row[j] * gain_v[j];
                    dx[r * c + j] = inv * (a - mean_a - h_row[j] * mean_ah);
                }
            }
        }
        g.accumulate(grads, x, Tensor::from_parts(gy.shape().to_vec(), dx));
    }
    if g.requires_grad(gain) {
        let mut dg = vec![T::zero(); c];
        for (dy_row, h_row) in gy.data().chunks(c).zip(normalized.chunks(c)) {
            for ((acc, &dv), &h) in dg.iter_mut().zip(dy_row).zip(h_row) {
                *acc = *acc + dv * h;
            }
        }
        g.accumulate(grads, gain, Tensor::vector(dg));
    }
    if g.requires_grad(shift) {
        let mut ds = vec![T::zero(); c];
        for dy_row in gy.data().chunks(c) {
            for (acc, &dv) in ds.iter_mut().zip(dy_row) {
                *acc = *acc + dv;
            }
        }
        g.accumulate(grads, shift, Tensor::vector(ds));
    }
}
