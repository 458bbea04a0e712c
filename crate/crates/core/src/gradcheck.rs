//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward values; it never touches the
//! backward rules it is used to validate.

use crate::error::Result;
use crate::tensor::{Tape, Tensor};

/// Relative error with a floor on the magnitude so that gradients near zero
/// are compared in absolute terms.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Central differences of `loss` with respect to every element of `params[which]`.
pub fn numeric_gradient<F>(loss: &F, params: &[Tensor], which: usize, eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let mut work: Vec<Tensor> = params.iter().map(|p| p.detach()).collect();
    let mut out = Vec::with_capacity(params[which].numel());
    for i in 0..params[which].numel() {
        let orig = params[which].values()[i];
        work[which].values_mut()[i] = orig + eps;
        let plus = loss(&Tape::new(), &work)?.item();
        work[which].values_mut()[i] = orig - eps;
        let minus = loss(&Tape::new(), &work)?.item();
        work[which].values_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Gradients from one backward pass; absent gradients are reported as zeros.
pub fn analytic_gradients<F>(loss: &F, params: &[Tensor]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let fresh: Vec<Tensor> = params
        .iter()
        .map(|p| Tensor::param(p.shape().to_vec(), p.values().to_vec()))
        .collect::<Result<_>>()?;
    let tape = Tape::new();
    let watched: Vec<Tensor> = fresh.iter().map(|p| tape.watch(p)).collect();
    loss(&tape, &watched)?.backward()?;
    Ok(fresh
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares backward-pass gradients with central differences for every
/// element of every parameter.
pub fn check<F>(loss: &F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let analytic = analytic_gradients(loss, params)?;
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_param: 0, worst_index: 0, checked: 0 };
    for (p, a) in analytic.iter().enumerate() {
        let n = numeric_gradient(loss, params, p, eps)?;
        for (i, (&av, &nv)) in a.iter().zip(&n).enumerate() {
            let e = relative_error(av, nv);
            report.checked += 1;
            if e > report.max_relative_error {
                report = GradCheckReport { max_relative_error: e, worst_param: p, worst_index: i, ..report };
            }
        }
    }
    Ok(report)
}
