//! Finite-difference verification of reverse-mode gradients.

use super::{Graph, NumericsError, Tensor, Var};

/// Denominator floor for relative errors, so entries whose true gradient is
/// (numerically) zero are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Outcome of one [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub op_name: String,
    pub max_rel_err: f64,
    pub per_input_errs: Vec<f64>,
    pub pass: bool,
}

/// Relative step of [`fd_step`].
pub const FD_REL_STEP: f64 = 1e-3;

/// Central-difference step for an input value.
pub fn fd_step(x: f64) -> f64 {
    FD_REL_STEP * x.abs().max(1.0)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(NumericsError::NotScalar { shape: v.shape().to_vec() });
    }
    Ok(v.item())
}

/// Reverse-mode gradients of `f` at `inputs`.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Central finite differences with step [`fd_step`].
pub fn numeric_gradients<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    numeric_gradients_with_step(f, inputs, FD_REL_STEP)
}

/// Central finite differences with step `rel_step * max(1, |x|)`.
pub fn numeric_gradients_with_step<F>(f: &F, inputs: &[Tensor<f64>], rel_step: f64) -> Result<Vec<Tensor<f64>>, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            let h = rel_step * x.abs().max(1.0);
            work[i].data_mut()[j] = x + h;
            let plus = eval_scalar(f, &work)?;
            work[i].data_mut()[j] = x - h;
            let minus = eval_scalar(f, &work)?;
            work[i].data_mut()[j] = x;
            grad.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compares two gradient sets element-wise.
pub fn compare_gradients(op_name: &str, analytic: &[Tensor<f64>], numeric: &[Tensor<f64>], tolerance: f64) -> GradReport {
    let per_input_errs: Vec<f64> = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            a.data()
                .iter()
                .zip(n.data())
                .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_ERR_FLOOR))
                .fold(0.0, f64::max)
        })
        .collect();
    let max_rel_err = per_input_errs.iter().copied().fold(0.0, f64::max);
    GradReport { op_name: op_name.to_string(), max_rel_err, per_input_errs, pass: max_rel_err <= tolerance }
}

/// Checks reverse-mode gradients of a scalar-valued closure against central
/// finite differences in `f64`.
pub fn grad_check<F>(op_name: &str, f: F, inputs: &[Tensor<f64>], tolerance: f64) -> Result<GradReport, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    grad_check_with_step(op_name, f, inputs, tolerance, FD_REL_STEP)
}

/// [`grad_check`] with a chosen relative finite-difference step.
pub fn grad_check_with_step<F>(op_name: &str, f: F, inputs: &[Tensor<f64>], tolerance: f64, rel_step: f64) -> Result<GradReport, NumericsError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(NumericsError::NonFinite { op: "grad_check input" });
    }
    let analytic = analytic_gradients(&f, inputs)?;
    let numeric = numeric_gradients_with_step(&f, inputs, rel_step)?;
    Ok(compare_gradients(op_name, &analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::vector(vec![3.0]);
        let report = grad_check("square", |g, v| g.mul(v[0], v[0]), &[x.clone()], 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
        let numeric = numeric_gradients(&|g: &mut Graph<f64>, v: &[Var]| g.mul(v[0], v[0]), &[x]).unwrap();
        let h = fd_step(3.0);
        assert!((numeric[0].item() - 6.0).abs() <= h * h);
    }

    #[test]
    fn non_scalar_output_is_a_usage_error() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check("identity", |g, v| g.scale(v[0], 1.0), &[x], 1e-4).unwrap_err();
        assert!(matches!(err, NumericsError::NotScalar { .. }));
    }

    #[test]
    fn doubled_gradient_fails() {
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.gelu(v[0])?;
            g.sum(y)
        };
        let analytic: Vec<_> = analytic_gradients(&f, &[x.clone()]).unwrap().into_iter().map(|t| t.map(|v| 2.0 * v)).collect();
        let numeric = numeric_gradients(&f, &[x]).unwrap();
        let report = compare_gradients("gelu (corrupted)", &analytic, &numeric, 1e-4);
        assert!(!report.pass);
        assert!(report.max_rel_err > 0.4);
    }
}
