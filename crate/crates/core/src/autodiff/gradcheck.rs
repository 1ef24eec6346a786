use super::{Tape, Tensor, Var};
use crate::{Result, VpnError};

/// Largest relative disagreement between the tape gradient of `f` at `theta`
/// and a central finite difference with step `h`.
///
/// `f` builds a scalar graph on the tape it is given from the leaf holding
/// `theta`; it is called once with a trainable leaf and then twice per
/// coordinate with perturbed constants. Per coordinate the error is
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(VpnError::Contract(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {h}"
        )));
    }
    let mut tape = Tape::new();
    let leaf = tape.param(theta.clone());
    let out = f(&mut tape, leaf)?;
    check_finite(tape.value(out).item()?)?;
    tape.backward(out)?;
    let analytic = tape.grad(leaf).cloned().expect("leaf requires grad");

    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(point);
        let out = f(&mut tape, leaf)?;
        check_finite(tape.value(out).item()?)
    };

    let mut worst = 0.0f64;
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let base = theta.data()[i];
        probe.data_mut()[i] = base + h;
        let plus = eval(probe.clone())?;
        probe.data_mut()[i] = base - h;
        let minus = eval(probe.clone())?;
        probe.data_mut()[i] = base;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(VpnError::Numeric(format!("objective evaluated to {v}")))
    }
}
