use crate::error::{Error, Result};
use crate::numeric::ceil_tolerant;

/// Samples needed so that an ε-ball of mass `p` is hit at least once with
/// probability `1 - delta`: `ceil(ln(1/δ) / -ln(1-p))`.
pub fn mc_detection_sample_size(p: f64, delta: f64) -> Result<u64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must be in (0, 1), got {p}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    let m = (1.0 / delta).ln() / -(-p).ln_1p();
    Ok(ceil_tolerant(m) as u64)
}

/// Samples needed for relative standard error `eta`: `ceil((1-p) / (η² p))`.
pub fn mc_relse_sample_size(p: f64, eta: f64) -> Result<u64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must be in (0, 1), got {p}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    let m = (1.0 - p) / (eta * eta * p);
    Ok((ceil_tolerant(m) as u64).max(1))
}
