//! Finite-difference gradient checking.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn scalar_output(g: &Graph, out: Var) -> Result<f64> {
    let v = g.value(out);
    if v.len() != 1 {
        return Err(AutodiffError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Max relative error between reverse-mode and central-difference gradients
/// of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, xs| f(g, xs[0]), std::slice::from_ref(x), h)
}

/// As [`grad_check`], over several input tensors at once.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_output(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[which].rows(), inputs[which].cols()));
        for i in 0..inputs[which].len() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Checks gradients of a scalar model loss with respect to every parameter.
pub fn grad_check_params<F>(f: F, params: &ParamSet, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut work = params.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, &work)?;
    let grads = g.backward(out)?;
    grads.accumulate_into(&mut work);
    let analytic = work.clone();

    let mut worst: f64 = 0.0;
    for id in params.ids() {
        for i in 0..params.value(id).len() {
            let orig = params.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let mut g = Graph::new();
            let o = f(&mut g, &work)?;
            let plus = scalar_output(&g, o)?;
            work.value_mut(id).data_mut()[i] = orig - h;
            let mut g = Graph::new();
            let o = f(&mut g, &work)?;
            let minus = scalar_output(&g, o)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.grad(id).data()[i], numeric));
        }
    }
    Ok(worst)
}
