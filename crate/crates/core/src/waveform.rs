//! LO displacement magnitude over the discretized pulse.
//!
//! The first mode (`t ≤ t1`) uses the Dolinar waveform for prior `p`, the
//! second mode the same shape for the effective prior `v` with its clock
//! restarted at `t1`. Signs are runtime state owned by the engines; the
//! table only carries magnitudes. The applied magnitude is clamped to
//! `sqrt(r_max · |α|²)` and then passed through the DAC model.

use serde::Serialize;

use crate::error::{OimError, Result};
use crate::model::{ImperfectionModel, StrategySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    First,
    Second,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::First => "first",
            Mode::Second => "second",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaveformBin {
    pub t_mid: f64,
    pub mag_ideal: f64,
    pub mag_applied: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveformTable {
    pub alpha_sq: f64,
    pub t1: f64,
    /// Upper end of the DAC range in field-amplitude units.
    pub full_scale: f64,
    pub bins: Vec<WaveformBin>,
}

impl WaveformTable {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.bins.len() as f64
    }

    /// Number of leading first-mode bins; the switch happens at this
    /// boundary index.
    pub fn switch_index(&self) -> usize {
        self.bins
            .iter()
            .take_while(|b| b.mode == Mode::First)
            .count()
    }
}

/// `sqrt(|α|²) / sqrt(1 − 4w(1−w) e^(−4|α|²τ))` for prior weight `w` and
/// elapsed time `τ` within the mode.
pub(crate) fn prior_weighted_magnitude(tau: f64, alpha_sq: f64, w: f64) -> f64 {
    let c = 4.0 * w * (1.0 - w);
    let denom = (1.0 - c) - c * libm::expm1(-4.0 * alpha_sq * tau);
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        (alpha_sq / denom).sqrt()
    }
}

/// First-mode (Dolinar) magnitude at time `t`. Infinite at `t = 0` for
/// equal priors.
pub fn dolinar_magnitude(t: f64, alpha_sq: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(OimError::invalid("t", format!("{t} must lie in [0, 1]")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(OimError::invalid("p", format!("{p} must lie in (0, 1)")));
    }
    Ok(prior_weighted_magnitude(t, alpha_sq, p))
}

/// Second-mode magnitude at time `t ∈ (t1, 1]`, evaluated at `t − t1`.
pub fn single_state_magnitude(t: f64, alpha_sq: f64, v: f64, t1: f64) -> Result<f64> {
    if !(t > t1 && t <= 1.0) {
        return Err(OimError::invalid(
            "t",
            format!("{t} must lie in (t1={t1}, 1]"),
        ));
    }
    if !(v > 0.0 && v < 1.0) {
        return Err(OimError::invalid("v", format!("{v} must lie in (0, 1)")));
    }
    Ok(prior_weighted_magnitude(t - t1, alpha_sq, v))
}

/// Uniform mid-rise quantizer over `[0, full_scale]` with `2^bits` levels
/// at `(k + ½)Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    bits: u32,
    full_scale: f64,
}

impl Quantizer {
    pub fn new(bits: u32, full_scale: f64) -> Result<Self> {
        if !(1..=24).contains(&bits) {
            return Err(OimError::invalid(
                "dac_bits",
                format!("{bits} must lie in 1..=24"),
            ));
        }
        if !(full_scale > 0.0 && full_scale.is_finite()) {
            return Err(OimError::invalid(
                "full_scale",
                format!("{full_scale} must be finite and > 0"),
            ));
        }
        Ok(Quantizer { bits, full_scale })
    }

    pub fn levels(&self) -> u32 {
        1 << self.bits
    }

    pub fn step(&self) -> f64 {
        self.full_scale / self.levels() as f64
    }

    /// Code of the nearest level; ties round up.
    pub fn quantize(&self, x: f64) -> u32 {
        let k = (x.max(0.0) / self.step()).floor();
        (k as u64).min(self.levels() as u64 - 1) as u32
    }

    pub fn dequantize(&self, code: u32) -> f64 {
        (code as f64 + 0.5) * self.step()
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.dequantize(self.quantize(x))
    }
}

/// Tabulate the waveform for `spec` at bin centers `(k + ½)/n_bins`.
///
/// With an unbounded `r_max` the DAC full scale is the largest ideal
/// magnitude in the table.
pub fn build_waveform(spec: &StrategySpec, imp: &ImperfectionModel) -> WaveformTable {
    let n = imp.n_bins;
    let a = spec.alpha_sq;
    let mut bins: Vec<WaveformBin> = (0..n)
        .map(|k| {
            let t_mid = (k as f64 + 0.5) / n as f64;
            let (mode, mag_ideal) = if t_mid <= spec.t1 {
                (Mode::First, prior_weighted_magnitude(t_mid, a, spec.p))
            } else {
                (
                    Mode::Second,
                    prior_weighted_magnitude(t_mid - spec.t1, a, spec.v),
                )
            };
            WaveformBin {
                t_mid,
                mag_ideal,
                mag_applied: mag_ideal,
                mode,
            }
        })
        .collect();

    let cap = (imp.r_max * a).sqrt();
    let full_scale = if cap.is_finite() {
        cap
    } else {
        bins.iter().map(|b| b.mag_ideal).fold(0.0, f64::max)
    };
    let quantizer = imp
        .dac_bits
        .and_then(|bits| Quantizer::new(bits, full_scale).ok());
    for b in &mut bins {
        let clamped = b.mag_ideal.min(cap);
        b.mag_applied = match &quantizer {
            Some(q) => q.apply(clamped),
            None => clamped,
        };
    }
    WaveformTable {
        alpha_sq: a,
        t1: spec.t1,
        full_scale,
        bins,
    }
}
