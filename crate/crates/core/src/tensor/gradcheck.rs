use super::dense::Tensor;
use super::param::Parameter;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` with respect to every coordinate of `p`.
pub fn finite_diff_grad<F>(mut f: F, p: &Parameter, h: f64) -> Result<Tensor>
where
    F: FnMut(&Parameter) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = p.clone();
    let mut out = Tensor::zeros(p.value.shape());
    for i in 0..p.value.numel() {
        let orig = p.value.data()[i];
        probe.value.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.value.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.value.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Max over coordinates of `|a - b| / max(1, |b|)`.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> Result<f64> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape("max_relative_error", analytic.shape(), numeric.shape()));
    }
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max))
}
