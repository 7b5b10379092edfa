//! Parameter sets shared by the waveform, evolution and Monte-Carlo engines.

use serde::{Deserialize, Serialize};

use crate::error::{OimError, Result};

/// Allowed deviation of a probability triple from the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Default time discretization: 1024 bins per pulse.
pub const DEFAULT_BINS: usize = 1024;

/// The defining parameters of one optimal inconclusive measurement.
///
/// `t1` is the switching time between the minimum-error first mode and the
/// single-state-domain second mode, `v` the effective prior seen by the
/// second mode and `n0` the LO parity at the switch (0 when `v > 0.5`).
/// `target_pi` is `None` for hand-specified strategies that were not
/// produced by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub alpha_sq: f64,
    pub p: f64,
    pub target_pi: Option<f64>,
    pub t1: f64,
    pub v: f64,
    pub n0: u8,
}

impl StrategySpec {
    pub fn new(alpha_sq: f64, p: f64, t1: f64, v: f64) -> Result<Self> {
        if !(alpha_sq > 0.0 && alpha_sq.is_finite()) {
            return Err(OimError::invalid(
                "alpha_sq",
                format!("{alpha_sq} must be > 0"),
            ));
        }
        if !(0.5..1.0).contains(&p) {
            return Err(OimError::invalid("p", format!("{p} must lie in [0.5, 1)")));
        }
        if !(t1 > 0.0 && t1 <= 1.0) {
            return Err(OimError::invalid("t1", format!("{t1} must lie in (0, 1]")));
        }
        if !(v > 0.0 && v < 1.0) {
            return Err(OimError::invalid("v", format!("{v} must lie in (0, 1)")));
        }
        Ok(StrategySpec {
            alpha_sq,
            p,
            target_pi: None,
            t1,
            v,
            n0: initial_parity(v),
        })
    }

    /// Pure Dolinar receiver: no second mode.
    pub fn dolinar(alpha_sq: f64, p: f64) -> Result<Self> {
        let mut spec = StrategySpec::new(alpha_sq, p, 1.0, p)?;
        spec.target_pi = Some(0.0);
        Ok(spec)
    }

    /// Attach the inconclusive target this strategy was solved for.
    pub fn with_target(mut self, target_pi: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&target_pi) {
            return Err(OimError::invalid(
                "target_pi",
                format!("{target_pi} must lie in [0, 1)"),
            ));
        }
        if target_pi == 0.0 && self.t1 != 1.0 {
            return Err(OimError::invalid("t1", "target_pi = 0 requires t1 = 1"));
        }
        self.target_pi = Some(target_pi);
        Ok(self)
    }
}

/// LO parity at the mode switch: 0 if `v > 0.5`, 1 otherwise.
pub fn initial_parity(v: f64) -> u8 {
    if v > 0.5 {
        0
    } else {
        1
    }
}

/// Detector and modulator non-idealities.
///
/// `nu` is the expected number of dark counts over the whole pulse, so a
/// single bin contributes `nu * dt`. `r_max` bounds the LO-to-signal power
/// ratio and may be infinite. `dac_bits = None` disables quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImperfectionModel {
    pub eta: f64,
    pub xi: f64,
    pub nu: f64,
    #[serde(with = "serde_r_max")]
    pub r_max: f64,
    pub dac_bits: Option<u32>,
    pub n_bins: usize,
}

impl ImperfectionModel {
    pub fn ideal(n_bins: usize) -> Self {
        ImperfectionModel {
            eta: 1.0,
            xi: 1.0,
            nu: 0.0,
            r_max: f64::INFINITY,
            dac_bits: None,
            n_bins,
        }
    }

    /// The laboratory operating point: eta = 0.72, xi = 0.998, nu = 0.03,
    /// R = 50 and an 8-bit DAC over 1024 bins.
    pub fn experimental() -> Self {
        ImperfectionModel {
            eta: 0.72,
            xi: 0.998,
            nu: 0.03,
            r_max: 50.0,
            dac_bits: Some(8),
            n_bins: DEFAULT_BINS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(OimError::invalid(
                "eta",
                format!("{} must lie in (0, 1]", self.eta),
            ));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(OimError::invalid(
                "xi",
                format!("{} must lie in (0, 1]", self.xi),
            ));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(OimError::invalid("nu", format!("{} must be >= 0", self.nu)));
        }
        if !(self.r_max > 0.0) {
            return Err(OimError::invalid(
                "r_max",
                format!("{} must be > 0", self.r_max),
            ));
        }
        if let Some(bits) = self.dac_bits {
            if !(1..=24).contains(&bits) {
                return Err(OimError::invalid(
                    "dac_bits",
                    format!("{bits} must lie in 1..=24"),
                ));
            }
        }
        if self.n_bins == 0 {
            return Err(OimError::invalid("n_bins", "must be >= 1"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_bins as f64
    }

    pub fn is_ideal(&self) -> bool {
        self.eta == 1.0
            && self.xi == 1.0
            && self.nu == 0.0
            && self.r_max.is_infinite()
            && self.dac_bits.is_none()
    }
}

/// Final or intermediate outcome probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTriple {
    pub p_c: f64,
    pub p_e: f64,
    pub p_i: f64,
}

impl ProbabilityTriple {
    pub fn new(p_c: f64, p_e: f64, p_i: f64) -> Result<Self> {
        let t = ProbabilityTriple { p_c, p_e, p_i };
        if t.on_simplex(SIMPLEX_TOL) {
            Ok(t)
        } else {
            Err(OimError::invalid(
                "probability triple",
                format!("({p_c}, {p_e}, {p_i}) is not a distribution"),
            ))
        }
    }

    pub fn on_simplex(&self, tol: f64) -> bool {
        let in_range = |x: f64| x.is_finite() && x >= -tol && x <= 1.0 + tol;
        in_range(self.p_c)
            && in_range(self.p_e)
            && in_range(self.p_i)
            && (self.p_c + self.p_e + self.p_i - 1.0).abs() <= tol
    }
}

/// `r_max` is frequently infinite; JSON has no infinity literal, so it is
/// written as the string `"inf"`.
mod serde_r_max {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct RMax;
        impl Visitor<'_> for RMax {
            type Value = f64;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                super::parse_r_max(v).map_err(E::custom)
            }
        }
        d.deserialize_any(RMax)
    }
}

/// Parse an LO ratio bound; accepts `inf`, `infinity` or a number.
pub fn parse_r_max(s: &str) -> std::result::Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "none" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|e| format!("cannot parse r_max {s:?}: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_follows_v() {
        assert_eq!(initial_parity(0.51), 0);
        assert_eq!(initial_parity(0.5), 1);
        assert_eq!(initial_parity(0.1), 1);
        let s = StrategySpec::new(0.2, 0.5, 0.6, 0.3).unwrap();
        assert_eq!(s.n0, 1);
    }

    #[test]
    fn zero_target_requires_full_first_mode() {
        let s = StrategySpec::new(0.2, 0.5, 0.6, 0.3).unwrap();
        assert!(s.with_target(0.0).is_err());
        assert!(s.with_target(0.2).is_ok());
        assert_eq!(StrategySpec::dolinar(0.2, 0.5).unwrap().t1, 1.0);
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(StrategySpec::new(0.2, 0.4, 0.5, 0.5).is_err());
        assert!(StrategySpec::new(0.2, 0.5, 0.0, 0.5).is_err());
        assert!(StrategySpec::new(0.2, 0.5, 0.5, 1.0).is_err());
        assert!(StrategySpec::new(0.0, 0.5, 0.5, 0.5).is_err());
        let mut imp = ImperfectionModel::ideal(16);
        imp.eta = 0.0;
        assert!(matches!(
            imp.validate(),
            Err(OimError::InvalidParameter { field: "eta", .. })
        ));
    }

    #[test]
    fn r_max_json_round_trip() {
        let imp = ImperfectionModel::ideal(8);
        let json = serde_json::to_string(&imp).unwrap();
        assert!(json.contains("\"r_max\":\"inf\""));
        let back: ImperfectionModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, imp);
        let exp: ImperfectionModel = serde_json::from_str(
            &serde_json::to_string(&ImperfectionModel::experimental()).unwrap(),
        )
        .unwrap();
        assert_eq!(exp.r_max, 50.0);
    }

    #[test]
    fn simplex_check() {
        assert!(ProbabilityTriple::new(0.5, 0.3, 0.2).is_ok());
        assert!(ProbabilityTriple::new(0.5, 0.3, 0.3).is_err());
        assert!(ProbabilityTriple::new(-0.1, 0.6, 0.5).is_err());
    }
}
