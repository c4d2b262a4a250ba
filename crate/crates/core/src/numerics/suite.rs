//! Gradient checks for every differentiable op on random small inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{grad_check, GradReport, Graph, NumericsError, Tensor, Unfold2d, Var};

/// Tolerance on max relative error for single ops.
pub const OP_TOLERANCE: f64 = 1e-4;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}

/// Reduces `y` to a scalar through fixed random weights so every output
/// element carries a distinct upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var, NumericsError> {
    let w = g.leaf(weights.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Case = (String, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>>);

fn cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Case> = Vec::new();

    let w = randn(&mut rng, &[3, 5], 1.0);
    out.push((
        "matmul".into(),
        vec![randn(&mut rng, &[3, 4], 1.0), randn(&mut rng, &[4, 5], 1.0)],
        Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[3, 4], 1.0);
    out.push((
        "add+mul".into(),
        vec![randn(&mut rng, &[3, 4], 1.0), randn(&mut rng, &[3, 4], 1.0)],
        Box::new(move |g, v| {
            let s = g.add(v[0], v[1])?;
            let p = g.mul(s, v[1])?;
            let y = g.scale(p, 0.7)?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[4, 3], 1.0);
    out.push((
        "add_bias".into(),
        vec![randn(&mut rng, &[4, 3], 1.0), randn(&mut rng, &[3], 1.0)],
        Box::new(move |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[5, 4], 1.0);
    out.push((
        "gelu".into(),
        vec![randn(&mut rng, &[5, 4], 1.5)],
        Box::new(move |g, v| {
            let y = g.gelu(v[0])?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[5, 4], 1.0);
    out.push((
        "silu".into(),
        vec![randn(&mut rng, &[5, 4], 1.5)],
        Box::new(move |g, v| {
            let y = g.silu(v[0])?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[4, 6], 1.0);
    out.push((
        "rms_norm".into(),
        vec![randn(&mut rng, &[4, 6], 1.0), randn(&mut rng, &[6], 1.0)],
        Box::new(move |g, v| {
            let y = g.rms_norm(v[0], v[1], 1e-6)?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[3, 8], 1.0);
    out.push((
        "group_norm".into(),
        vec![randn(&mut rng, &[3, 8], 1.0), randn(&mut rng, &[8], 1.0), randn(&mut rng, &[8], 1.0)],
        Box::new(move |g, v| {
            let y = g.group_norm(v[0], 2, 1e-5, v[1], v[2])?;
            project(g, y, &w)
        }),
    ));

    for (k, stride, padding) in [(5usize, 1usize, 2usize), (3, 2, 1), (1, 1, 0)] {
        let len = 7;
        let out_len = (len + 2 * padding - k) / stride + 1;
        let w = randn(&mut rng, &[out_len, 3], 1.0);
        out.push((
            format!("conv1d k={k} s={stride} p={padding}"),
            vec![randn(&mut rng, &[len, 2], 1.0), randn(&mut rng, &[3, 2, k], 0.5), randn(&mut rng, &[3], 0.5)],
            Box::new(move |g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), stride, padding)?;
                project(g, y, &w)
            }),
        ));
    }

    let w = randn(&mut rng, &[3, 2], 1.0);
    out.push((
        "adaptive_avg_pool".into(),
        vec![randn(&mut rng, &[7, 2], 1.0)],
        Box::new(move |g, v| {
            let y = g.adaptive_avg_pool(v[0], 3)?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[4, 3], 1.0);
    out.push((
        "embedding+concat+slice".into(),
        vec![randn(&mut rng, &[5, 3], 1.0), randn(&mut rng, &[2, 3], 1.0)],
        Box::new(move |g, v| {
            let e = g.embedding(v[0], &[4, 1, 1])?;
            let c = g.concat_rows(&[v[1], e])?;
            let y = g.slice_rows(c, 1, 4)?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[4, 8], 1.0);
    out.push((
        "rope".into(),
        vec![randn(&mut rng, &[4, 8], 1.0)],
        Box::new(move |g, v| {
            let y = g.rope(v[0], 2, &[0, 3, 4, 9], 10000.0)?;
            project(g, y, &w)
        }),
    ));

    let w = randn(&mut rng, &[5, 6], 1.0);
    out.push((
        "causal_attention".into(),
        vec![randn(&mut rng, &[5, 6], 1.0), randn(&mut rng, &[5, 6], 1.0), randn(&mut rng, &[5, 6], 1.0)],
        Box::new(move |g, v| {
            let y = g.causal_attention(v[0], v[1], v[2], 2)?;
            project(g, y, &w)
        }),
    ));

    let geom = Unfold2d { height: 4, width: 5, kernel: 3, stride: 2, padding: 1 };
    let w = randn(&mut rng, &[geom.out_height() * geom.out_width(), 18], 1.0);
    out.push((
        "unfold2d".into(),
        vec![randn(&mut rng, &[20, 2], 1.0)],
        Box::new(move |g, v| {
            let y = g.unfold2d(v[0], geom)?;
            project(g, y, &w)
        }),
    ));

    let targets = [2u32, 0, 4, 1];
    out.push((
        "cross_entropy".into(),
        vec![randn(&mut rng, &[4, 5], 2.0)],
        Box::new(move |g, v| Ok(g.cross_entropy(v[0], &targets, &[true, false, true, true])?.loss)),
    ));

    // conv1d -> gelu -> cross-entropy on a 7x4 input.
    let targets = [0u32, 2, 1, 2, 0, 1, 2];
    out.push((
        "conv1d+gelu+cross_entropy".into(),
        vec![randn(&mut rng, &[7, 4], 1.0), randn(&mut rng, &[3, 4, 3], 0.5), randn(&mut rng, &[3], 0.5)],
        Box::new(move |g, v| {
            let h = g.conv1d(v[0], v[1], Some(v[2]), 1, 1)?;
            let a = g.gelu(h)?;
            Ok(g.cross_entropy(a, &targets, &[true; 7])?.loss)
        }),
    ));

    out
}

/// Runs every op check for each seed.
pub fn op_gradient_suite(seeds: &[u64], tolerance: f64) -> Result<Vec<(u64, GradReport)>, NumericsError> {
    let mut reports = Vec::new();
    for &seed in seeds {
        for (name, inputs, f) in cases(seed) {
            let report = grad_check(&name, f, &inputs, tolerance)?;
            reports.push((seed, report));
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_passes() {
        let reports = op_gradient_suite(&[11], OP_TOLERANCE).unwrap();
        for (_, r) in &reports {
            assert!(r.pass, "{r:?}");
        }
    }
}
