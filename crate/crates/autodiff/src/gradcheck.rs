//! Finite-difference checks of reverse-mode gradients.
//!
//! Each check returns the largest relative error over the inputs, where the
//! error of one input is `||analytic - numeric|| / max(||numeric||, 1e-10)`
//! and the numeric gradient uses central differences with step
//! [`FD_STEP`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{grad, Result, Tensor};

pub const FD_STEP: f64 = 1e-4;

/// A scalar-valued function of several tensors.
pub type ScalarFn<'a> = dyn Fn(&[Tensor]) -> Result<Tensor> + 'a;

/// Uniform tensor on `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape)
        .expect("shape with positive extents")
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(1e-10)
}

/// Central differences of `f` with respect to every element of every input.
pub fn numeric_grads(f: &ScalarFn<'_>, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut g = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                // leaves, so functions that call `grad` themselves still work
                let mut moved: Vec<Tensor> = inputs.iter().map(Tensor::requires_grad).collect();
                let mut d = input.to_vec();
                d[i] += delta;
                moved[k] = Tensor::new(d, input.shape())?.requires_grad();
                f(&moved)?.item()
            };
            g.push((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    Ok(out)
}

pub fn analytic_grads(f: &ScalarFn<'_>, inputs: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::requires_grad).collect();
    let out = f(&leaves)?;
    let refs: Vec<&Tensor> = leaves.iter().collect();
    Ok(grad(&out, &refs, false)?.iter().map(Tensor::to_vec).collect())
}

/// Largest relative error between the reverse-mode and finite-difference
/// gradients of `f`.
pub fn first_order_error(f: &ScalarFn<'_>, inputs: &[Tensor]) -> Result<f64> {
    let a = analytic_grads(f, inputs)?;
    let n = numeric_grads(f, inputs)?;
    Ok(a.iter()
        .zip(&n)
        .map(|(ga, gn)| relative_error(ga, gn))
        .fold(0.0, f64::max))
}

/// Same as [`first_order_error`] for `sum_k <grad_k f, p_k>` with random
/// probes `p_k`, which differentiates the recorded backward pass.
pub fn second_order_error(f: &ScalarFn<'_>, inputs: &[Tensor], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Tensor> = inputs
        .iter()
        .map(|t| uniform(&mut rng, t.shape(), -1.0, 1.0))
        .collect();
    let g_dot = |xs: &[Tensor]| -> Result<Tensor> {
        let out = f(xs)?;
        let refs: Vec<&Tensor> = xs.iter().collect();
        let mut acc = Tensor::scalar(0.0);
        for (g, p) in grad(&out, &refs, true)?.iter().zip(&probes) {
            acc = acc.add(&g.mul(p)?.sum())?;
        }
        Ok(acc)
    };
    first_order_error(&g_dot, inputs)
}
