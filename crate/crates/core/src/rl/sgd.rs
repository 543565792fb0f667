use crate::error::{Error, Result};
use crate::policy::ParamBlob;

/// `values ← values − learning_rate·grad`, returned as a new blob.
pub fn sgd_step(params: &ParamBlob, grad: &[f64], learning_rate: f64) -> Result<ParamBlob> {
    if grad.len() != params.values.len() {
        return Err(Error::LengthMismatch(format!(
            "gradient has {} entries, params have {}",
            grad.len(),
            params.values.len()
        )));
    }
    let values = params
        .values
        .iter()
        .zip(grad)
        .map(|(v, g)| v - learning_rate * g)
        .collect();
    ParamBlob::new(params.family, params.shape, values)
}
