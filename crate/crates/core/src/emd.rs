//! One-dimensional Earth-Mover's Distance on a shared uniform grid.

use crate::error::{Error, Result};

/// Wasserstein-1 distance between two normalized histograms whose mass sits
/// at the centres of `p.len()` uniform bins of width `bin_width`.
///
/// In one dimension the optimal plan never crosses, so the cost is the L1
/// distance between the two cumulative distributions times the bin width.
pub fn emd_1d(p: &[f64], q: &[f64], bin_width: f64) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::EdgeMismatch);
    }
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidInput(format!("bin width {bin_width}")));
    }
    Ok(bin_width * cdf_l1(p, q))
}

/// Σ |P_i − Q_i| over prefix sums. Caller guarantees equal lengths.
#[inline]
pub(crate) fn cdf_l1(p: &[f64], q: &[f64]) -> f64 {
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        acc += (cp - cq).abs();
    }
    acc
}
