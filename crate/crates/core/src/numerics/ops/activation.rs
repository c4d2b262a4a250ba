use crate::numerics::graph::{Graph, Op, Var};
use crate::numerics::{NumericsError, Real, Tensor};

fn std_normal_cdf<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn std_normal_pdf<T: Real>(x: T) -> T {
    T::from_f64(0.398_942_280_401_432_7) * (-(x * x) * T::from_f64(0.5)).exp()
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Exact GELU, `x * Phi(x)`.
pub fn gelu<T: Real>(x: T) -> T {
    x * std_normal_cdf(x)
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

impl<T: Real> Graph<T> {
    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x).map(gelu);
        self.push("gelu", t, Op::Gelu { x })
    }

    pub fn silu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x).map(silu);
        self.push("silu", t, Op::Silu { x })
    }
}

pub(super) fn gelu_backward<T: Real>(g: &Graph<T>, x: Var, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let xs = g.value(x);
    let d = xs
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &u)| u * (std_normal_cdf(v) + v * std_normal_pdf(v)))
        .collect();
    g.accumulate(grads, x, Tensor::from_parts(xs.shape().to_vec(), d));
}

pub(super) fn silu_backward<T: Real>(g: &Graph<T>, x: Var, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let xs = g.value(x);
    let d = xs
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &u)| {
            let s = sigmoid(v);
            u * s * (T::one() + v * (T::one() - s))
        })
        .collect();
    g.accumulate(grads, x, Tensor::from_parts(xs.shape().to_vec(), d));
}
