//! Central finite-difference checks of analytic gradients.

use serde::Serialize;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively. Rounding in the loss puts ~1e-10 of noise on a central
/// difference at `eps = 1e-5`, so gradients much smaller than this (and the
/// exact zeros of unused embedding rows) cannot be resolved relatively.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between the tape gradient of scalar `f` at `x` and
/// `(f(x+eps) - f(x-eps)) / (2 eps)`, taken over every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>>,
{
    let errs = grad_check_many(|vs| f(vs[0]), std::slice::from_ref(x), eps)?;
    Ok(errs[0])
}

/// Like [`grad_check`] for a function of several inputs; returns one max
/// relative error per input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&vars)?.value().item()
    };
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = f(&vars)?;
    let grads = tape.backward(loss)?;

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut worst: f64 = 0.0;
        for i in 0..inputs[k].numel() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * eps)));
        }
        out.push(worst);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GroupReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Checks every parameter of `store` element by element.
///
/// `analytic` must leave the tape gradient of the loss in each parameter's
/// `grad`; `eval` recomputes the same loss without recording gradients.
pub fn check_parameters<E, A>(
    store: &mut ParamStore,
    eval: E,
    analytic: A,
    eps: f64,
) -> Result<Vec<GroupReport>>
where
    E: Fn(&ParamStore) -> Result<f64>,
    A: FnOnce(&mut ParamStore) -> Result<()>,
{
    store.zero_grads();
    analytic(store)?;
    let ids: Vec<_> = store.ids().collect();
    let mut reports = Vec::with_capacity(ids.len());
    for id in ids {
        let (name, n) = {
            let p = store.get(id);
            (p.name.clone(), p.value.numel())
        };
        let grad = store
            .get(id)
            .grad
            .clone()
            .ok_or_else(|| Error::Contract(format!("no analytic gradient for {name}")))?;
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i];
            max_rel = max_rel.max(rel_err(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(GroupReport {
            name,
            numel: n,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(reports)
}
