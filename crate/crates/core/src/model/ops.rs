use super::ModelError;

/// `y * sigmoid(y)`.
pub fn silu(y: f64) -> f64 {
    y / (1.0 + (-y).exp())
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, ModelError> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Err(ModelError::EmptyInput("softmax"));
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    Ok(out)
}

/// Softmax over `v[..=last]`; entries after `last` get probability 0.
pub(crate) fn masked_softmax(v: &[f64], last: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let max = v[..=last].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out[..=last].iter_mut().zip(&v[..=last]) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in &mut out[..=last] {
        *o /= sum;
    }
    out
}
