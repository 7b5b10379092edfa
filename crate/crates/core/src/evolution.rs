//! Deterministic time evolution of `(P_C, P_E, P_I)` through the pulse.
//!
//! Each bin applies a first-order update with the on/off click rates of the
//! nulled (`n₋`) and anti-nulled (`n₊`) hypotheses. In the first mode the
//! provisional guess flips between the two states; after the switch it
//! flips between the first-mode guess and "inconclusive". The second-mode
//! update is seeded with the probability `q` that the first-mode guess is
//! correct, taken from the evolved first-mode `P_C` so that imperfect
//! devices are treated exactly like the Monte-Carlo engine treats them.

use serde::Serialize;

use crate::bounds::helstrom_error_unchecked;
use crate::error::{OimError, Result};
use crate::model::{ImperfectionModel, ProbabilityTriple, StrategySpec, SIMPLEX_TOL};
use crate::waveform::{Mode, WaveformTable};

/// Expected click rates `(n₊, n₋)` per pulse for LO magnitude `beta_mag`:
/// `η(|α|² + |β|² ± 2ξ|β||α|) + ν`.
pub fn mean_counts(alpha_sq: f64, beta_mag: f64, imp: &ImperfectionModel) -> (f64, f64) {
    let base = alpha_sq + beta_mag * beta_mag;
    let cross = 2.0 * imp.xi * beta_mag * alpha_sq.sqrt();
    let n_plus = imp.eta * (base + cross) + imp.nu;
    // Clamp round-off when the LO nulls the signal exactly.
    let n_minus = (imp.eta * (base - cross)).max(0.0) + imp.nu;
    (n_plus, n_minus)
}

/// Helstrom error for the truncated pair `{|±√t1 α⟩}` reached at the switch.
pub fn helstrom_at_switch(alpha_sq: f64, p: f64, t1: f64) -> f64 {
    helstrom_error_unchecked(alpha_sq * t1, p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityTrace {
    /// Bin boundaries `k / n_bins`, `k = 0..=n_bins`.
    pub times: Vec<f64>,
    pub triples: Vec<ProbabilityTriple>,
    /// Boundary index of the mode switch (`n_bins` when there is none).
    pub t1_index: usize,
    /// Ideal Helstrom error at `t1`.
    pub p_prime: f64,
    /// Probability that the first-mode guess is correct, as used to seed
    /// the second mode (`1 − p_prime` for ideal devices up to
    /// discretization).
    pub seed_correct: f64,
}

impl ProbabilityTrace {
    pub fn final_triple(&self) -> ProbabilityTriple {
        *self
            .triples
            .last()
            .expect("trace has at least the initial boundary")
    }
}

/// Evolve the outcome probabilities over every bin of `wf`.
pub fn evolve(
    spec: &StrategySpec,
    wf: &WaveformTable,
    imp: &ImperfectionModel,
) -> Result<ProbabilityTrace> {
    let n = wf.n_bins();
    let mut times = Vec::with_capacity(n + 1);
    let mut triples = Vec::with_capacity(n + 1);
    let seed = propagate(spec, wf, imp, |k, t| {
        times.push(k as f64 / n as f64);
        triples.push(t);
    })?;
    Ok(ProbabilityTrace {
        times,
        triples,
        t1_index: wf.switch_index(),
        p_prime: helstrom_at_switch(spec.alpha_sq, spec.p, spec.t1),
        seed_correct: seed.unwrap_or(f64::NAN),
    })
}

/// Final probabilities only; avoids allocating the trace.
pub fn evolve_final(
    spec: &StrategySpec,
    wf: &WaveformTable,
    imp: &ImperfectionModel,
) -> Result<ProbabilityTriple> {
    let mut last = None;
    propagate(spec, wf, imp, |_, t| last = Some(t))?;
    Ok(last.expect("at least one boundary is observed"))
}

/// Runs the update and reports every boundary to `observe`. Returns the
/// second-mode seed if a switch occurred.
fn propagate<F>(
    spec: &StrategySpec,
    wf: &WaveformTable,
    imp: &ImperfectionModel,
    mut observe: F,
) -> Result<Option<f64>>
where
    F: FnMut(usize, ProbabilityTriple),
{
    let n = wf.n_bins();
    let dt = wf.dt();
    let a = spec.alpha_sq;
    let switch_at = wf.switch_index();

    let (mut pc, mut pe, mut pi) = (spec.p, 1.0 - spec.p, 0.0);
    let mut seed = None;

    for k in 0..=n {
        if k == switch_at && k < n {
            seed = Some(pc);
            if spec.v <= 0.5 {
                // The second mode opens on the inconclusive hypothesis.
                pc = 0.0;
                pi = 1.0;
            }
            pe = 1.0 - pc - pi;
        }
        let triple = ProbabilityTriple {
            p_c: pc,
            p_e: pe,
            p_i: pi,
        };
        if !triple.on_simplex(SIMPLEX_TOL) {
            return Err(OimError::SimplexViolation { bin: k, triple });
        }
        observe(k, triple);
        if k == n {
            break;
        }

        let bin = &wf.bins[k];
        let (n_plus, n_minus) = mean_counts(a, bin.mag_applied, imp);
        let (r_plus, r_minus) = (dt * n_plus, dt * n_minus);
        match (bin.mode, seed) {
            (Mode::First, _) | (Mode::Second, None) => {
                pc = pc * (1.0 - r_minus) + (1.0 - pc) * r_plus;
                pe = 1.0 - pc;
                pi = 0.0;
            }
            (Mode::Second, Some(q)) => {
                let next_pc = pc * (1.0 - r_minus) + (q - pc) * r_plus;
                let next_pe = pe * (1.0 - r_plus) + (1.0 - q - pe) * r_minus;
                pc = next_pc;
                pe = next_pe;
                pi = 1.0 - pc - pe;
            }
        }
    }
    Ok(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::helstrom_error;
    use crate::waveform::build_waveform;

    #[test]
    fn mean_count_examples() {
        let ideal = ImperfectionModel::ideal(16);
        let (np, nm) = mean_counts(0.2, 0.2f64.sqrt(), &ideal);
        assert!(nm.abs() < 1e-15);
        assert!((np - 0.8).abs() < 1e-14);

        let mut blind = ideal;
        blind.eta = 0.0;
        assert_eq!(mean_counts(0.2, 1.3, &blind), (0.0, 0.0));

        let imp = ImperfectionModel {
            eta: 0.72,
            xi: 0.998,
            nu: 0.03,
            ..ideal
        };
        let (_, nm) = mean_counts(0.2, 0.6028, &imp);
        let by_hand = 0.72 * (0.2 + 0.6028 * 0.6028 - 2.0 * 0.998 * 0.6028 * 0.2f64.sqrt()) + 0.03;
        assert!((nm - by_hand).abs() < 1e-14);
        assert!((nm - 0.0482055).abs() < 1e-6);
    }

    #[test]
    fn helstrom_at_switch_limits() {
        assert!((helstrom_at_switch(0.2, 0.5, 1.0) - 0.128964).abs() < 1e-6);
        assert!((helstrom_at_switch(0.2, 0.7, 1e-12) - 0.3).abs() < 1e-6);
        assert!((helstrom_at_switch(0.0, 0.7, 0.5) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn blind_detector_keeps_prior() {
        let spec = StrategySpec::dolinar(0.2, 0.6).unwrap();
        let mut imp = ImperfectionModel::ideal(128);
        imp.eta = 0.0;
        // eta = 0 is rejected by validation but is a legal evolution input.
        let wf = build_waveform(&spec, &imp);
        let trace = evolve(&spec, &wf, &imp).unwrap();
        for t in &trace.triples {
            assert!((t.p_c - 0.6).abs() < 1e-15);
            assert!((t.p_e - 0.4).abs() < 1e-15);
            assert_eq!(t.p_i, 0.0);
        }
    }

    #[test]
    fn dolinar_converges_to_helstrom() {
        let spec = StrategySpec::dolinar(0.2, 0.5).unwrap();
        let imp = ImperfectionModel::ideal(1024);
        let wf = build_waveform(&spec, &imp);
        let trace = evolve(&spec, &wf, &imp).unwrap();
        let pe = trace.final_triple().p_e;
        let h = helstrom_error(0.2, 0.5).unwrap();
        assert!((pe - h).abs() < 1e-3, "pe={pe} helstrom={h}");
        assert_eq!(
            trace.triples[0],
            ProbabilityTriple {
                p_c: 0.5,
                p_e: 0.5,
                p_i: 0.0
            }
        );
        assert_eq!(trace.triples.len(), 1025);
        assert_eq!(trace.t1_index, 1024);
    }

    #[test]
    fn grid_refinement_is_first_order() {
        let spec = StrategySpec::new(0.4, 0.5, 0.5, 0.3).unwrap();
        let pe_at = |n: usize| {
            let imp = ImperfectionModel::ideal(n);
            let wf = build_waveform(&spec, &imp);
            evolve_final(&spec, &wf, &imp).unwrap()
        };
        let coarse = pe_at(1024);
        let fine = pe_at(2048);
        let finer = pe_at(4096);
        let d1 = (coarse.p_e - fine.p_e).abs() + (coarse.p_i - fine.p_i).abs();
        let d2 = (fine.p_e - finer.p_e).abs() + (fine.p_i - finer.p_i).abs();
        assert!(d1 < 5e-3, "d1={d1}");
        // Halving dt should roughly halve the change.
        assert!(d2 < 0.75 * d1, "d1={d1} d2={d2}");
        // Richardson-extrapolated values from successive pairs agree.
        let r1 = 2.0 * fine.p_e - coarse.p_e;
        let r2 = 2.0 * finer.p_e - fine.p_e;
        assert!((r1 - r2).abs() < 1e-4, "r1={r1} r2={r2}");
    }

    #[test]
    fn switch_with_low_v_resets_to_inconclusive() {
        let spec = StrategySpec::new(0.2, 0.5, 0.5, 0.3).unwrap();
        let imp = ImperfectionModel::ideal(64);
        let wf = build_waveform(&spec, &imp);
        let trace = evolve(&spec, &wf, &imp).unwrap();
        assert_eq!(trace.t1_index, 32);
        let at_switch = trace.triples[32];
        assert_eq!(
            (at_switch.p_c, at_switch.p_e, at_switch.p_i),
            (0.0, 0.0, 1.0)
        );
        assert!(trace.seed_correct > 0.5);
    }

    #[test]
    fn switch_with_high_v_keeps_first_mode_values() {
        let spec = StrategySpec::new(0.2, 0.5, 0.5, 0.8).unwrap();
        let imp = ImperfectionModel::ideal(64);
        let wf = build_waveform(&spec, &imp);
        let trace = evolve(&spec, &wf, &imp).unwrap();
        let before = trace.triples[31];
        let at = trace.triples[32];
        assert_eq!(at.p_i, 0.0);
        assert!(at.p_c > before.p_c);
        assert_eq!(trace.seed_correct, at.p_c);
    }

    #[test]
    fn seed_matches_ideal_helstrom_success() {
        let spec = StrategySpec::new(0.6, 0.5, 0.4, 0.7).unwrap();
        let imp = ImperfectionModel::ideal(4096);
        let wf = build_waveform(&spec, &imp);
        let trace = evolve(&spec, &wf, &imp).unwrap();
        assert!((trace.seed_correct - (1.0 - trace.p_prime)).abs() < 1e-3);
    }

    #[test]
    fn degradation_is_monotone_in_device_parameters() {
        // Ideal design for a fixed target, imperfect execution.
        let opts = crate::solver::SolverOptions::default();
        let spec = crate::solver::solve_strategy(0.4, 0.5, 0.2, &opts).unwrap();
        let pe = |eta: f64, xi: f64, nu: f64| {
            let imp = ImperfectionModel {
                eta,
                xi,
                nu,
                ..ImperfectionModel::ideal(1024)
            };
            let wf = build_waveform(&spec, &imp);
            evolve_final(&spec, &wf, &imp).unwrap().p_e
        };
        let (e1, e2, e3) = (pe(1.0, 1.0, 0.0), pe(0.9, 1.0, 0.0), pe(0.7, 1.0, 0.0));
        assert!(e1 <= e2 && e2 <= e3, "{e1} {e2} {e3}");
        let (x1, x2, x3) = (pe(1.0, 1.0, 0.0), pe(1.0, 0.995, 0.0), pe(1.0, 0.98, 0.0));
        assert!(x1 <= x2 && x2 <= x3, "{x1} {x2} {x3}");
        let (d1, d2, d3) = (pe(1.0, 1.0, 0.0), pe(1.0, 1.0, 0.01), pe(1.0, 1.0, 0.05));
        assert!(d1 <= d2 && d2 <= d3, "{d1} {d2} {d3}");
    }
}
