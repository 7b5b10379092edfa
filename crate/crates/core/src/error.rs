use thiserror::Error;

use crate::model::ProbabilityTriple;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OimError {
    /// A physical or numerical parameter is outside its domain. `field`
    /// names the offending parameter so front ends can report it.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// The deterministic evolution left the probability simplex.
    #[error("probability simplex violated at bin {bin}: {triple:?}")]
    SimplexViolation {
        bin: usize,
        triple: ProbabilityTriple,
    },

    /// No strategy in the searched family reaches the requested target.
    #[error("target inconclusive probability {target_pi} is infeasible: {reason}")]
    Infeasible { target_pi: f64, reason: String },

    /// The search stopped without meeting the tolerance; the best
    /// candidate seen is reported.
    #[error(
        "solver did not converge for target {target_pi}: best t1={t1}, v={v}, achieved P_I={achieved_pi}"
    )]
    NonConvergence {
        target_pi: f64,
        t1: f64,
        v: f64,
        achieved_pi: f64,
    },

    #[error("enumeration limit exceeded: m={m} (max {max})")]
    EnumerationLimit { m: usize, max: usize },
}

impl OimError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        OimError::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, OimError>;
