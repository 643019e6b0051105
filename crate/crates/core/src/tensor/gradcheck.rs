//! Central finite differences, used as an independent oracle for the
//! analytic gradients produced by [`Graph::backward`](super::Graph::backward).

use super::{Graph, Tensor, Var};
use crate::error::Result;
use crate::params::{Ctx, ParamStore, Phase};

/// Step used throughout the gradient checks.
pub const STEP: f64 = 1e-5;

/// Numerical gradient of `eval` at `point` by central differences.
pub fn central_difference(
    point: &[f64],
    step: f64,
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = eval(&x)?;
        x[i] = orig - step;
        let fm = eval(&x)?;
        x[i] = orig;
        out.push((fp - fm) / (2.0 * step));
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vectors are negligibly small.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares analytic and numerical gradients of a scalar function of
/// several tensors. Returns the relative error for each input.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<Vec<f64>>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.value().len()]))
        .collect();

    let mut errors = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let numeric = central_difference(input.data(), STEP, |x| {
            let g = Graph::new();
            let vs: Vec<Var<'_>> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if j == k {
                        g.constant(Tensor::new(t.shape().to_vec(), x.to_vec()).expect("same shape"))
                    } else {
                        g.constant(t.clone())
                    }
                })
                .collect();
            Ok(f(&g, &vs)?.value().data()[0])
        })?;
        errors.push(relative_error(&analytic[k], &numeric));
    }
    Ok(errors)
}

/// Contracts any output with a fixed pseudo-random tensor, giving a scalar
/// whose gradient reaches every output entry with a distinct weight.
pub fn probe<'g>(y: Var<'g>) -> Result<Var<'g>> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let w = y.graph().constant(Tensor::new(shape, w)?);
    Ok(y.mul(w)?.sum())
}

/// Relative error of the analytic gradient for every input (named
/// `input{k}`) and every trainable parameter of `store` reached by `f`.
///
/// `f` must return a scalar and must not draw random numbers, so repeated
/// evaluations see the same function.
pub fn check_with_params<F>(
    store: &ParamStore,
    phase: Phase,
    inputs: &[Tensor],
    f: F,
) -> Result<Vec<(String, f64)>>
where
    F: for<'g, 's> Fn(&Ctx<'g, 's>, &[Var<'g>]) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let ctx = Ctx::new(&graph, store, phase);
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&ctx, &vars)?;
    graph.backward(loss)?;
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.value().len()]))
        .collect();
    let param_grads = ctx.finish().grads;

    let eval = |s: &ParamStore, xs: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let c = Ctx::new(&g, s, phase);
        let vs: Vec<Var<'_>> = xs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&c, &vs)?.value().data()[0])
    };

    let mut out = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let mut xs = inputs.to_vec();
        let numeric = central_difference(input.data(), STEP, |x| {
            xs[k] = Tensor::new(input.shape().to_vec(), x.to_vec())?;
            eval(store, &xs)
        })?;
        out.push((format!("input{k}"), relative_error(&input_grads[k], &numeric)));
    }
    let mut scratch = store.clone();
    for (path, analytic) in &param_grads {
        let p = store.get(path)?;
        if !p.trainable {
            continue;
        }
        let numeric = central_difference(p.value.data(), STEP, |x| {
            scratch.get_mut(path)?.value.data_mut().copy_from_slice(x);
            eval(&scratch, inputs)
        })?;
        scratch.get_mut(path)?.value = p.value.clone();
        out.push((path.clone(), relative_error(analytic, &numeric)));
    }
    Ok(out)
}
