//! Central finite-difference checks for tape gradients.

use super::array::Array2;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-3;

/// Largest relative error between `analytic` and `numeric`, where the
/// denominator is `max(|a|, |n|, REL_FLOOR)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Numeric gradient of a scalar function of several matrices.
pub fn numeric_grad<F>(f: &F, inputs: &[Array2]) -> Result<Vec<Array2>>
where
    F: Fn(&[Array2]) -> Result<f64>,
{
    let mut out = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut g = Array2::zeros(inputs[i].rows(), inputs[i].cols());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = f(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = f(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    Ok(out)
}

/// Builds `build` on a fresh tape with the inputs as leaves and returns the
/// analytic gradients with respect to every input.
pub fn analytic_grad<B>(build: &B, inputs: &[Array2]) -> Result<Vec<Array2>>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.grad(out, &vars)?;
    Ok(grads.iter().map(|g| tape.value(*g).clone()).collect())
}

/// Compares tape gradients of `build` against central differences and
/// returns the largest relative error over all inputs.
pub fn check<B>(build: B, inputs: &[Array2]) -> Result<f64>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grad(&build, inputs)?;
    let eval = |xs: &[Array2]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|a| tape.leaf(a.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };
    let numeric = numeric_grad(&eval, inputs)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_rel_error(a.data(), n.data()))
        .fold(0.0, f64::max))
}
