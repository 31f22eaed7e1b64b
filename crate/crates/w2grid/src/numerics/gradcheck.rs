//! Central finite-difference verification of analytic gradients.

use super::tensor::{NumericsError, Tensor};

/// Compares the analytic gradients stored in each tensor's `grad` buffer
/// against central differences of `f`, coordinate by coordinate.
///
/// Large tensors are subsampled with a fixed stride so at most
/// `max_coords_per_tensor` coordinates are probed per tensor. Returns the
/// maximum relative error, with denominator max(|analytic|, |numeric|, 1e-8).
pub fn finite_diff_check(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    params: &mut [Tensor],
    eps: f64,
    max_coords_per_tensor: usize,
) -> Result<f64, NumericsError> {
    assert!(eps > 0.0 && eps <= 1e-2, "eps must be in (0, 1e-2]");
    let mut max_rel = 0.0f64;
    for t in 0..params.len() {
        let numel = params[t].numel();
        let stride = numel.div_ceil(max_coords_per_tensor).max(1);
        for c in (0..numel).step_by(stride) {
            let orig = params[t].data[c];
            params[t].data[c] = orig + eps;
            let fp = f(params);
            params[t].data[c] = orig - eps;
            let fm = f(params);
            params[t].data[c] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(NumericsError::NonFinite(format!("finite_diff_check tensor {t}")));
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = params[t]
                .grad
                .as_ref()
                .map(|g| g[c])
                .ok_or_else(|| NumericsError::NonFinite(format!("tensor {t} has no grad")))?;
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}
