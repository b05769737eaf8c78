//! Finite-difference gradient verification.
//!
//! The oracle is deliberately independent of the backward pass: it only uses
//! forward evaluations of the supplied graph builder.

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::{Error, Result};

/// Compare analytic gradients against central finite differences for every
/// element of every parameter bound by `build`.
///
/// Returns the maximum over elements of
/// |analytic − numeric| / max(1e-8, |analytic| + |numeric|).
pub fn grad_check<F>(store: &mut ParamStore, build: F, eps: f64) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Argument(format!(
            "grad_check eps must lie in (0, 1e-3], got {eps}"
        )));
    }

    // Analytic pass.
    store.zero_grads();
    let mut g = Graph::new();
    let loss = build(store, &mut g)?;
    let f0 = g.value(loss).item()?;
    if !f0.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss value {f0}")));
    }
    g.backward(loss, 1.0, store)?;
    let mut bound = g.bound_params();
    bound.sort_by_key(|p| p.0);
    bound.dedup();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(store, &mut g)?;
        let v = g.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss value {v}")));
        }
        Ok(v)
    };

    let mut max_rel = 0.0f64;
    for pid in bound {
        let n = store.value(pid).len();
        for i in 0..n {
            let orig = store.value(pid).data()[i];
            if !orig.is_finite() {
                let name = store.get(pid).name.clone();
                return Err(Error::Numeric(format!(
                    "non-finite value in parameter '{name}' at element {i}"
                )));
            }
            store.get_mut(pid).value.data_mut()[i] = orig + eps;
            let fp = eval(store).map_err(|e| annotate(e, &store.get(pid).name))?;
            store.get_mut(pid).value.data_mut()[i] = orig - eps;
            let fm = eval(store).map_err(|e| annotate(e, &store.get(pid).name))?;
            store.get_mut(pid).value.data_mut()[i] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = store.get(pid).grad.data()[i];
            let denom = (analytic.abs() + numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn annotate(e: Error, param: &str) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{msg} (while perturbing '{param}')")),
        other => other,
    }
}
