//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over all entries.
    pub max_rel_error: f64,
    /// `(input, flat element)` where the maximum was attained.
    pub worst: Option<(usize, usize)>,
    pub entries_checked: usize,
}

/// Checks a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)
}

/// Checks a scalar function of several tensors against central differences
/// on every entry of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("grad_check", "eps must be positive"));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("grad_check", "inputs must be finite"));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if numel(g.shape(out)) != 1 {
        return Err(Error::NotScalar(g.shape(out).to_vec()));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().expect("param leaf has a gradient"))
        .collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let orig = probe[which].data()[i];
            probe[which].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((which, i));
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
