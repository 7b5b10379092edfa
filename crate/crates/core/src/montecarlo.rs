//! Trial-level simulation of the receiver.
//!
//! Every trial draws its true state, then walks the waveform bin by bin:
//! a Poisson photon number is drawn for the current LO setting and clamped
//! to the on/off detector response, and each click flips the provisional
//! hypothesis. Trial `i` of a run uses its own ChaCha stream
//! `(master_seed, i)`, and ensemble counts are reduced as integers, so
//! results do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{OimError, Result};
use crate::evolution::mean_counts;
use crate::model::{ImperfectionModel, ProbabilityTriple, StrategySpec};
use crate::waveform::{Mode, WaveformTable};

/// Above this mean the Poisson sampler switches from inversion to
/// `rand_distr`.
const INVERSION_MAX_MEAN: f64 = 30.0;

/// RNG stream of trial `trial_index`.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}

/// Poisson count for uniform `u` by sequential inversion of the CDF.
fn poisson_inversion(mean: f64, u: f64) -> u64 {
    let mut k = 0u64;
    let mut term = (-mean).exp();
    let mut cdf = term;
    while u >= cdf && term > 0.0 {
        k += 1;
        term *= mean / k as f64;
        cdf += term;
    }
    k
}

/// Exact Poisson draw: inversion for small means, `rand_distr` otherwise.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean <= INVERSION_MAX_MEAN {
        poisson_inversion(mean, rng.random::<f64>())
    } else if mean.is_finite() {
        Poisson::new(mean)
            .expect("finite positive mean")
            .sample(rng) as u64
    } else {
        u64::MAX
    }
}

/// On/off detector response: a Poisson draw clamped to `{0, 1}`.
///
/// Inversion decides `count >= 1` at its first step (`u >= e^{-mean}`), so
/// this consumes one uniform and agrees draw-for-draw with
/// `sample_poisson(mean).min(1)` for means up to the inversion limit.
pub fn sample_detection<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u8 {
    click(rng.random::<f64>(), (-mean.max(0.0)).exp())
}

#[inline]
fn click(u: f64, no_click_prob: f64) -> u8 {
    (u >= no_click_prob) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Correct,
    Error,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    /// `+1` or `−1`.
    pub true_state: i8,
    /// One entry per bin, 0 or 1.
    pub detections: Vec<u8>,
    /// Provisional hypothesis at each bin boundary (`n_bins + 1` entries);
    /// 0 means inconclusive.
    pub hypothesis: Vec<i8>,
    /// Hypothesis handed from the first mode to the second.
    pub mode1_hypothesis: i8,
    pub outcome: Outcome,
    pub n1_final: u32,
    pub n2_final: u32,
}

impl TrialRecord {
    /// Detections packed 8 bins per byte, least significant bit first.
    pub fn packed_detections(&self) -> Vec<u8> {
        self.detections
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |b, (i, &d)| b | (d << i)))
            .collect()
    }
}

/// Per-bin no-click probabilities `e^{−n dt}` for the nulled and
/// anti-nulled true state.
struct BinTable {
    stay_nulled: Vec<f64>,
    stay_anti: Vec<f64>,
    mode: Vec<Mode>,
    switch_at: usize,
}

impl BinTable {
    fn new(spec: &StrategySpec, wf: &WaveformTable, imp: &ImperfectionModel) -> Self {
        let dt = wf.dt();
        let mut stay_nulled = Vec::with_capacity(wf.n_bins());
        let mut stay_anti = Vec::with_capacity(wf.n_bins());
        for bin in &wf.bins {
            let (n_plus, n_minus) = mean_counts(spec.alpha_sq, bin.mag_applied, imp);
            stay_nulled.push((-n_minus * dt).exp());
            stay_anti.push((-n_plus * dt).exp());
        }
        BinTable {
            stay_nulled,
            stay_anti,
            mode: wf.bins.iter().map(|b| b.mode).collect(),
            switch_at: wf.switch_index(),
        }
    }
}

/// Result of one trial without the per-bin vectors.
#[derive(Debug, Clone, Copy)]
struct TrialSummary {
    outcome: Outcome,
}

/// Runs one trial; `observe(k, hypothesis, true_state)` is called at every
/// boundary `k` and `on_bin(k, detection)` after every bin.
fn run_trial<R, O, B>(
    spec: &StrategySpec,
    table: &BinTable,
    rng: &mut R,
    mut observe: O,
    mut on_bin: B,
) -> (i8, i8, u32, u32, TrialSummary)
where
    R: Rng + ?Sized,
    O: FnMut(usize, i8, i8),
    B: FnMut(usize, u8),
{
    let n = table.mode.len();
    let s: i8 = if rng.random::<f64>() < spec.p { 1 } else { -1 };
    let mut hyp: i8 = 1;
    let mut mode1_hyp = 1;
    let (mut n1, mut n2) = (0u32, 0u32);
    // LO parity within the current mode; reset to N₀ at the switch.
    let mut parity = 0u32;
    let mut switched = false;
    for k in 0..=n {
        if k == table.switch_at && k < n {
            mode1_hyp = hyp;
            parity = spec.n0 as u32;
            hyp = if parity.is_multiple_of(2) {
                mode1_hyp
            } else {
                0
            };
            switched = true;
        }
        observe(k, hyp, s);
        if k == n {
            break;
        }
        let in_second = switched && table.mode[k] == Mode::Second;
        // State nulled by the current LO setting.
        let nulled = if in_second {
            if parity.is_multiple_of(2) {
                mode1_hyp
            } else {
                -mode1_hyp
            }
        } else {
            hyp
        };
        let stay = if nulled == s {
            table.stay_nulled[k]
        } else {
            table.stay_anti[k]
        };
        let d = click(rng.random::<f64>(), stay);
        on_bin(k, d);
        if d == 1 {
            if in_second {
                n2 += 1;
                parity += 1;
                hyp = if parity.is_multiple_of(2) {
                    mode1_hyp
                } else {
                    0
                };
            } else {
                n1 += 1;
                hyp = -hyp;
            }
        }
    }
    if !switched {
        mode1_hyp = hyp;
    }
    let outcome = if hyp == 0 {
        Outcome::Inconclusive
    } else if hyp == s {
        Outcome::Correct
    } else {
        Outcome::Error
    };
    (s, mode1_hyp, n1, n2, TrialSummary { outcome })
}

/// Simulates one trial and keeps its full record.
pub fn simulate_trial<R: Rng + ?Sized>(
    spec: &StrategySpec,
    wf: &WaveformTable,
    imp: &ImperfectionModel,
    rng: &mut R,
) -> TrialRecord {
    let table = BinTable::new(spec, wf, imp);
    simulate_with_table(spec, &table, rng)
}

fn simulate_with_table<R: Rng + ?Sized>(
    spec: &StrategySpec,
    table: &BinTable,
    rng: &mut R,
) -> TrialRecord {
    let n = table.mode.len();
    let mut hypothesis = Vec::with_capacity(n + 1);
    let mut detections = Vec::with_capacity(n);
    let (true_state, mode1_hypothesis, n1_final, n2_final, summary) = run_trial(
        spec,
        table,
        rng,
        |_, h, _| hypothesis.push(h),
        |_, d| detections.push(d),
    );
    TrialRecord {
        true_state,
        detections,
        hypothesis,
        mode1_hypothesis,
        outcome: summary.outcome,
        n1_final,
        n2_final,
    }
}

/// Records of trials `range` of a run; trial `i` uses `trial_rng(seed, i)`.
pub fn trial_records(
    spec: &StrategySpec,
    wf: &WaveformTable,
    imp: &ImperfectionModel,
    master_seed: u64,
    range: std::ops::Range<u64>,
) -> Vec<TrialRecord> {
    let table = BinTable::new(spec, wf, imp);
    range
        .into_par_iter()
        .map(|i| simulate_with_table(spec, &table, &mut trial_rng(master_seed, i)))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OutcomeCounts {
    pub correct: u64,
    pub error: u64,
    pub inconclusive: u64,
}

impl OutcomeCounts {
    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Correct => self.correct += 1,
            Outcome::Error => self.error += 1,
            Outcome::Inconclusive => self.inconclusive += 1,
        }
    }

    fn merge(&mut self, other: &OutcomeCounts) {
        self.correct += other.correct;
        self.error += other.error;
        self.inconclusive += other.inconclusive;
    }

    pub fn total(&self) -> u64 {
        self.correct + self.error + self.inconclusive
    }

    /// Sample frequencies `(p̂_C, p̂_E, p̂_I)`.
    pub fn frequencies(&self) -> ProbabilityTriple {
        let n = self.total().max(1) as f64;
        ProbabilityTriple {
            p_c: self.correct as f64 / n,
            p_e: self.error as f64 / n,
            p_i: self.inconclusive as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_trials: u64,
    pub n_batches: usize,
    pub master_seed: u64,
    pub counts: OutcomeCounts,
    pub p_c: f64,
    pub p_e: f64,
    pub p_i: f64,
    /// Binomial standard errors `sqrt(p̂(1 − p̂)/n)`.
    pub se_c: f64,
    pub se_e: f64,
    pub se_i: f64,
    /// Sample standard deviation of the per-batch frequencies (zero with a
    /// single batch).
    pub batch_sd: ProbabilityTriple,
    pub batch_counts: Vec<OutcomeCounts>,
    /// Frequencies of the provisional hypothesis scored at every boundary.
    pub time_resolved: Vec<ProbabilityTriple>,
}

#[derive(Clone)]
struct Accumulator {
    batches: Vec<OutcomeCounts>,
    /// Per boundary: correct, error, inconclusive.
    resolved: Vec<[u64; 3]>,
}

impl Accumulator {
    fn new(n_batches: usize, n_boundaries: usize) -> Self {
        Accumulator {
            batches: vec![OutcomeCounts::default(); n_batches],
            resolved: vec![[0; 3]; n_boundaries],
        }
    }

    fn merge(mut self, other: Accumulator) -> Accumulator {
        for (a, b) in self.batches.iter_mut().zip(&other.batches) {
            a.merge(b);
        }
        for (a, b) in self.resolved.iter_mut().zip(&other.resolved) {
            for i in 0..3 {
                a[i] += b[i];
            }
        }
        self
    }
}

/// Batch that trial `i` belongs to when `n` trials are split into
/// `batches` contiguous, near-equal parts.
fn batch_of(i: u64, n: u64, batches: usize) -> usize {
    ((i as u128 * batches as u128) / n as u128) as usize
}

/// Runs `n_trials` trials split into `n_batches` contiguous batches.
pub fn run_ensemble(
    spec: &StrategySpec,
    wf: &WaveformTable,
    imp: &ImperfectionModel,
    n_trials: u64,
    master_seed: u64,
    n_batches: usize,
) -> Result<EnsembleStats> {
    imp.validate()?;
    if n_trials == 0 {
        return Err(OimError::invalid("n_trials", "must be >= 1"));
    }
    if n_batches == 0 || n_batches as u64 > n_trials {
        return Err(OimError::invalid(
            "n_batches",
            format!("{n_batches} must lie in 1..={n_trials}"),
        ));
    }
    let table = BinTable::new(spec, wf, imp);
    let n_boundaries = wf.n_bins() + 1;
    let acc = (0..n_trials)
        .into_par_iter()
        .fold(
            || Accumulator::new(n_batches, n_boundaries),
            |mut acc, i| {
                let mut rng = trial_rng(master_seed, i);
                let resolved = &mut acc.resolved;
                let (.., summary) = run_trial(
                    spec,
                    &table,
                    &mut rng,
                    |k, h, s| {
                        let slot = if h == 0 {
                            2
                        } else if h == s {
                            0
                        } else {
                            1
                        };
                        resolved[k][slot] += 1;
                    },
                    |_, _| {},
                );
                acc.batches[batch_of(i, n_trials, n_batches)].add(summary.outcome);
                acc
            },
        )
        .reduce(
            || Accumulator::new(n_batches, n_boundaries),
            Accumulator::merge,
        );

    let mut counts = OutcomeCounts::default();
    for b in &acc.batches {
        counts.merge(b);
    }
    let f = counts.frequencies();
    let n = n_trials as f64;
    let se = |p: f64| (p * (1.0 - p) / n).sqrt();
    let batch_sd = batch_std(&acc.batches);
    let time_resolved = acc
        .resolved
        .iter()
        .map(|r| ProbabilityTriple {
            p_c: r[0] as f64 / n,
            p_e: r[1] as f64 / n,
            p_i: r[2] as f64 / n,
        })
        .collect();
    Ok(EnsembleStats {
        n_trials,
        n_batches,
        master_seed,
        counts,
        p_c: f.p_c,
        p_e: f.p_e,
        p_i: f.p_i,
        se_c: se(f.p_c),
        se_e: se(f.p_e),
        se_i: se(f.p_i),
        batch_sd,
        batch_counts: acc.batches,
        time_resolved,
    })
}

fn batch_std(batches: &[OutcomeCounts]) -> ProbabilityTriple {
    let k = batches.len();
    if k < 2 {
        return ProbabilityTriple {
            p_c: 0.0,
            p_e: 0.0,
            p_i: 0.0,
        };
    }
    let freqs: Vec<ProbabilityTriple> = batches.iter().map(|b| b.frequencies()).collect();
    let sd = |get: fn(&ProbabilityTriple) -> f64| {
        let mean = freqs.iter().map(get).sum::<f64>() / k as f64;
        let var = freqs.iter().map(|t| (get(t) - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        var.sqrt()
    };
    ProbabilityTriple {
        p_c: sd(|t| t.p_c),
        p_e: sd(|t| t.p_e),
        p_i: sd(|t| t.p_i),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::evolve;
    use crate::waveform::build_waveform;

    #[test]
    fn detection_limits() {
        let mut rng = trial_rng(1, 0);
        assert!((0..1000).all(|_| sample_detection(0.0, &mut rng) == 0));
        assert!((0..1000).all(|_| sample_detection(f64::INFINITY, &mut rng) == 1));
        assert!((0..1000).all(|_| sample_detection(1e3, &mut rng) == 1));
    }

    #[test]
    fn detection_frequency_matches_poisson_tail() {
        let mut rng = trial_rng(42, 3);
        let n = 1_000_000;
        let hits: u64 = (0..n).map(|_| sample_detection(0.1, &mut rng) as u64).sum();
        let p = 1.0 - (-0.1f64).exp();
        assert!((p - 0.09516).abs() < 1e-5);
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn detection_is_clamped_poisson() {
        for &mean in &[0.01, 0.3, 2.0, 9.0, 29.0] {
            let (mut a, mut b) = (trial_rng(5, 1), trial_rng(5, 1));
            for _ in 0..2000 {
                assert_eq!(
                    sample_detection(mean, &mut a) as u64,
                    sample_poisson(mean, &mut b).min(1)
                );
            }
        }
    }

    #[test]
    fn poisson_moments() {
        for &mean in &[0.5, 4.0, 80.0] {
            let mut rng = trial_rng(9, 0);
            let n = 200_000;
            let xs: Vec<f64> = (0..n)
                .map(|_| sample_poisson(mean, &mut rng) as f64)
                .collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(
                (m - mean).abs() < 4.0 * (mean / n as f64).sqrt(),
                "mean {m}"
            );
            assert!((var / mean - 1.0).abs() < 0.03, "var {var}");
        }
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: f64 = trial_rng(7, 0).random();
        let b: f64 = trial_rng(7, 1).random();
        let c: f64 = trial_rng(7, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn blind_detector_carries_prior_guess() {
        let spec = StrategySpec::new(0.3, 0.6, 0.5, 0.8).unwrap();
        let imp = ImperfectionModel {
            eta: 1e-300,
            ..ImperfectionModel::ideal(64)
        };
        let wf = build_waveform(&spec, &imp);
        let mut rng = trial_rng(3, 0);
        for _ in 0..200 {
            let r = simulate_trial(&spec, &wf, &imp, &mut rng);
            assert!(r.detections.iter().all(|&d| d == 0));
            assert_eq!(r.mode1_hypothesis, 1);
            // N₀ = 0: the prior guess stays conclusive.
            assert!(r.hypothesis.iter().all(|&h| h == 1));
            let expected = if r.true_state == 1 {
                Outcome::Correct
            } else {
                Outcome::Error
            };
            assert_eq!(r.outcome, expected);
        }
        let inconclusive = StrategySpec::new(0.3, 0.6, 0.5, 0.2).unwrap();
        let wf = build_waveform(&inconclusive, &imp);
        let r = simulate_trial(&inconclusive, &wf, &imp, &mut rng);
        assert_eq!(r.outcome, Outcome::Inconclusive);
        assert_eq!(r.hypothesis[32], 0);
        assert_eq!(r.hypothesis[31], 1);
    }

    #[test]
    fn record_bookkeeping() {
        let spec = StrategySpec::new(0.4, 0.5, 0.5, 0.7).unwrap();
        let imp = ImperfectionModel::ideal(128);
        let wf = build_waveform(&spec, &imp);
        let switch = wf.switch_index();
        for r in trial_records(&spec, &wf, &imp, 11, 0..300) {
            assert_eq!(r.hypothesis.len(), 129);
            assert_eq!(r.detections.len(), 128);
            let clicks: u32 = r.detections.iter().map(|&d| d as u32).sum();
            assert_eq!(clicks, r.n1_final + r.n2_final);
            for k in 0..128 {
                // Hypothesis changes only after a click (or at the switch).
                if r.hypothesis[k + 1] != r.hypothesis[k] {
                    assert_eq!(r.detections[k], 1, "bin {k}");
                }
            }
            let first_clicks: u32 = r.detections[..switch].iter().map(|&d| d as u32).sum();
            let expected = if first_clicks.is_multiple_of(2) {
                1
            } else {
                -1
            };
            assert_eq!(r.mode1_hypothesis, expected);
            for k in switch + 1..=128 {
                let h = r.hypothesis[k];
                assert!(h == 0 || h == r.mode1_hypothesis);
            }
            assert_eq!(r.packed_detections().len(), 16);
        }
    }

    #[test]
    fn ensemble_matches_evolution() {
        let spec = StrategySpec::new(0.4, 0.5, 0.6, 0.65).unwrap();
        let imp = ImperfectionModel::experimental();
        let wf = build_waveform(&spec, &imp);
        let stats = run_ensemble(&spec, &wf, &imp, 40_000, 2024, 5).unwrap();
        let trace = evolve(&spec, &wf, &imp).unwrap();
        let ev = trace.final_triple();
        assert_eq!(stats.counts.total(), 40_000);
        assert!((stats.p_c - ev.p_c).abs() < 4.0 * stats.se_c);
        assert!((stats.p_e - ev.p_e).abs() < 4.0 * stats.se_e);
        assert!((stats.p_i - ev.p_i).abs() < 4.0 * stats.se_i);
        let mid = trace.t1_index / 2;
        assert!((stats.time_resolved[mid].p_e - trace.triples[mid].p_e).abs() < 0.01);
        assert_eq!(stats.time_resolved.last().unwrap().p_e, stats.p_e);
    }

    #[test]
    fn ensemble_is_deterministic_and_validates() {
        let spec = StrategySpec::dolinar(0.2, 0.5).unwrap();
        let imp = ImperfectionModel::ideal(64);
        let wf = build_waveform(&spec, &imp);
        let a = run_ensemble(&spec, &wf, &imp, 5000, 1, 5).unwrap();
        let b = run_ensemble(&spec, &wf, &imp, 5000, 1, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.batch_counts.iter().map(|c| c.total()).sum::<u64>(), 5000);
        assert!(a.batch_counts.iter().all(|c| c.total() == 1000));
        assert!(a.batch_sd.p_e > 0.0);
        assert!(run_ensemble(&spec, &wf, &imp, 0, 1, 1).is_err());
        assert!(run_ensemble(&spec, &wf, &imp, 3, 1, 5).is_err());
    }
}
