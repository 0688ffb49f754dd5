//! Finite-difference verification of reverse-mode gradients.

use super::{Result, Tape, Tensor, TensorError, Var};

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub passed: bool,
}

/// How the numeric derivative is formed at each coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Difference {
    /// `(f(x+h) − f(x−h)) / 2h`
    #[default]
    Central,
    /// Accept whichever of the forward or backward quotient is closer. Used at
    /// kinks, where the analytic value is a one-sided derivative.
    OneSided,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares the tape gradient of `f` at `point` against central finite
/// differences. `f` receives the tape and the leaf holding the (perturbed)
/// point and must return a single-element value.
pub fn gradient_check<F>(f: F, point: &Tensor<f64>, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    gradient_check_with(f, point, step, tolerance, Difference::Central)
}

pub fn gradient_check_with<F>(
    f: F,
    point: &Tensor<f64>,
    step: f64,
    tolerance: f64,
    mode: Difference,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |x: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.param(x);
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(TensorError::GradCheck(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaf = tape.param(point.clone());
    let out = f(&mut tape, leaf)?;
    let f0 = tape.value(out).item();
    if !f0.is_finite() {
        return Err(TensorError::GradCheck(format!("function value {f0} is not finite")));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = match grads.get(leaf) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; point.len()],
    };

    let mut numeric = Vec::with_capacity(point.len());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        let (n, err) = match mode {
            Difference::Central => {
                let n = (fp - fm) / (2.0 * step);
                (n, rel_error(analytic[i], n))
            }
            Difference::OneSided => {
                let fwd = (fp - f0) / step;
                let bwd = (f0 - fm) / step;
                let (ef, eb) = (rel_error(analytic[i], fwd), rel_error(analytic[i], bwd));
                if ef <= eb {
                    (fwd, ef)
                } else {
                    (bwd, eb)
                }
            }
        };
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
        numeric.push(n);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
        passed: max_rel_error <= tolerance,
    })
}
