use std::collections::BTreeMap;

use super::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compare the reverse-mode gradient of a scalar function at `theta` with
/// central finite differences of step `eps`; returns the largest relative
/// error over all components.
pub fn grad_check<F>(f: F, theta: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.param(theta.clone());
    let y = f(&tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads.get_or_zeros(x);

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(t);
        let y = f(&tape, x)?;
        let v = y.value().item();
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += eps;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check of a loss over named parameters, on a spread of
/// up to `per_tensor` coordinates per tensor whose analytic gradient is at
/// least `min_abs` in magnitude (smaller ones are dominated by round-off).
///
/// Returns the worst relative error per tensor; tensors with no eligible
/// coordinate are absent from the map.
pub fn grad_check_params<F>(
    f: F,
    params: &ParamStore<f64>,
    per_tensor: usize,
    min_abs: f64,
    eps: f64,
) -> Result<BTreeMap<String, f64>>
where
    F: for<'t> Fn(&'t Tape<f64>, &BoundParams<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let y = f(&tape, &bound)?;
    let grads = bound.gradients(&tape.backward(y)?);

    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let bound = p.bind(&tape, false);
        let v = f(&tape, &bound)?.value().item();
        Ok(v)
    };

    let mut out = BTreeMap::new();
    let mut work = params.clone();
    for (name, g) in &grads {
        let eligible: Vec<usize> = (0..g.len()).filter(|&i| g.data()[i].abs() >= min_abs).collect();
        if eligible.is_empty() {
            continue;
        }
        let picks = per_tensor.min(eligible.len()).max(1);
        let mut worst: f64 = 0.0;
        for j in 0..picks {
            let i = eligible[j * eligible.len() / picks];
            let orig = params.require(name)?.data()[i];
            work.get_mut(name).expect("same names").data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(name).expect("same names").data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(name).expect("same names").data_mut()[i] = orig;
            worst = worst.max(relative_error(g.data()[i], (plus - minus) / (2.0 * eps)));
        }
        out.insert(name.clone(), worst);
    }
    Ok(out)
}
