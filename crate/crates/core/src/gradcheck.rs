//! Central-difference gradients, used to check the hand-derived backward pass.

use crate::error::{Error, Result};
use crate::model::ModelParameters;

/// `(loss(θ + h·eᵢ) − loss(θ − h·eᵢ)) / 2h` for every coordinate `i`.
pub fn finite_diff_gradient<F>(mut loss: F, params: &ModelParameters, h: f64) -> Result<ModelParameters>
where
    F: FnMut(&ModelParameters) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Validation(format!("step size must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let mut grad = ModelParameters::zeros(params.signature());
    for i in 0..params.num_scalars() {
        let orig = probe.get_flat(i);
        probe.set_flat(i, orig + h);
        let up = loss(&probe);
        probe.set_flat(i, orig - h);
        let down = loss(&probe);
        probe.set_flat(i, orig);
        if !up.is_finite() || !down.is_finite() {
            let (id, off) = params.locate_flat(i);
            return Err(Error::Numeric(format!(
                "non-finite loss probing {}[{off}] (flat index {i})",
                id.name()
            )));
        }
        grad.set_flat(i, (up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest `|a − b| / (|a| + |b| + 1e-8)` over all coordinates.
pub fn max_relative_error(analytic: &ModelParameters, numeric: &ModelParameters) -> f64 {
    (0..analytic.num_scalars())
        .map(|i| {
            let a = analytic.get_flat(i);
            let b = numeric.get_flat(i);
            (a - b).abs() / (a.abs() + b.abs() + 1e-8)
        })
        .fold(0.0, f64::max)
}
