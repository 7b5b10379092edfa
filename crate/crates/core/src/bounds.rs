//! Closed-form discrimination limits for the BPSK pair `{|α⟩, |−α⟩}`.

use crate::error::{OimError, Result};

/// `|⟨−α|α⟩|² = e^(−4|α|²)`.
pub fn overlap_sq(alpha_sq: f64) -> f64 {
    (-4.0 * alpha_sq).exp()
}

/// Minimum-error (Helstrom) probability for priors `{p, 1 − p}`.
pub fn helstrom_error(alpha_sq: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(OimError::invalid("p", format!("{p} must lie in (0, 1)")));
    }
    if !(alpha_sq >= 0.0) {
        return Err(OimError::invalid(
            "alpha_sq",
            format!("{alpha_sq} must be >= 0"),
        ));
    }
    Ok(helstrom_error_unchecked(alpha_sq, p))
}

pub(crate) fn helstrom_error_unchecked(alpha_sq: f64, p: f64) -> f64 {
    let c = 4.0 * p * (1.0 - p);
    // 1 - c e^{-4a} written as (1-c) - c·expm1(-4a) to keep precision for small a.
    let radicand = (1.0 - c) - c * libm::expm1(-4.0 * alpha_sq);
    0.5 * (1.0 - radicand.max(0.0).sqrt())
}

/// Minimum inconclusive probability of unambiguous discrimination for
/// equal priors: `|⟨−α|α⟩| = e^(−2|α|²)`.
pub fn idp_bound(alpha_sq: f64) -> f64 {
    (-2.0 * alpha_sq).exp()
}

/// Error of ideal homodyne detection of equiprobable BPSK states.
pub fn homodyne_error(alpha_sq: f64) -> f64 {
    0.5 * libm::erfc((2.0 * alpha_sq).sqrt())
}
