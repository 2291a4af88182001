use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic - numeric| / max(1, |numeric|)`
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Checks the gradient of a scalar function of `x` by central differences
/// with step `eps`, in 64-bit.
pub fn grad_check<Func>(f: Func, x: &Tensor<f64>, eps: f64) -> Result<GradCheckReport>
where
    Func: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("grad_check", "eps must be positive"));
    }
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&tape, leaf)?;
    if !out.item().is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    let analytic = tape.backward(out)?.wrt(leaf).to_vec();

    let eval = |v: Vec<f64>| -> Result<f64> {
        let tape = Tape::new();
        let leaf = tape.constant(Tensor::new(x.shape(), v)?);
        Ok(f(&tape, leaf)?.item())
    };
    let mut numeric = Vec::with_capacity(x.numel());
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: Vec::new(),
        numeric: Vec::new(),
    };
    for i in 0..x.numel() {
        let mut plus = x.to_vec();
        plus[i] += eps;
        let mut minus = x.to_vec();
        minus[i] -= eps;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        if !fp.is_finite() || !fm.is_finite() || !analytic[i].is_finite() {
            return Err(Error::NonFinite { index: i });
        }
        let num = (fp - fm) / (2.0 * eps);
        let err = (analytic[i] - num).abs() / num.abs().max(1.0);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
        }
        numeric.push(num);
    }
    report.analytic = analytic;
    report.numeric = numeric;
    Ok(report)
}
