//! Central finite differences, used to verify the tape's analytic gradients.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference estimate of `∂loss/∂θ` for every parameter entry.
///
/// Each entry is perturbed in place and restored afterwards, so `store`
/// is unchanged on return.
pub fn finite_diff_gradient<F>(mut loss_fn: F, store: &mut ParamStore, eps: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut out = Vec::with_capacity(store.len());
    for pi in 0..store.len() {
        let id = super::ParamId(pi);
        let shape = store.get(id).value().shape().to_vec();
        let n = store.get(id).value().len();
        let mut grad = vec![0.0; n];
        for (k, g) in grad.iter_mut().enumerate() {
            let orig = store.get(id).value().data()[k];
            store.get_mut(id).value_mut().data_mut()[k] = orig + eps;
            let plus = loss_fn(store);
            store.get_mut(id).value_mut().data_mut()[k] = orig - eps;
            let minus = loss_fn(store);
            store.get_mut(id).value_mut().data_mut()[k] = orig;
            *g = (plus? - minus?) / (2.0 * eps);
        }
        out.push(Tensor::new(shape, grad)?);
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|)`, falling back to the absolute difference when
/// both magnitudes are below `floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Largest [`relative_error`] between the analytic gradients held in `store`
/// and a finite-difference estimate.
pub fn max_gradient_error(store: &ParamStore, numeric: &[Tensor], floor: f64) -> f64 {
    store
        .iter()
        .zip(numeric)
        .flat_map(|(p, n)| {
            p.grad()
                .data()
                .iter()
                .zip(n.data())
                .map(|(&a, &b)| relative_error(a, b, floor))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}
