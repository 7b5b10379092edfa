//! Inconclusive discrimination of M-PSK alphabets by sequential state
//! elimination followed by the binary optimal inconclusive measurement.
//!
//! The elimination stage tests the states in order `s₀, s₁, …`; each test
//! displaces the tested state to vacuum using `f|α|²/m` of the energy, so
//! a click removes it unambiguously. Testing stops once two candidates
//! remain (conclusive: hand the pair to the binary stage) or when every
//! state has been tested with three or more left (inconclusive).

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OimError, Result};
use crate::model::ImperfectionModel;
use crate::solver::{solve_strategy, SolverOptions};
use crate::waveform::build_waveform;

/// Largest alphabet accepted by the history enumeration.
pub const MAX_ENUMERATED_M: usize = 20;

/// Prior assigned to the surviving pair in the binary stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairPrior {
    /// Posterior of the pair given the elimination history.
    #[default]
    Posterior,
    /// Treat the pair as equiprobable.
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpskConfig {
    pub m: usize,
    pub alpha_sq: f64,
    /// Energy fraction spent on elimination; each test uses `f/m`.
    pub f: f64,
    /// Inconclusive probability budget of the binary stage, as an absolute
    /// contribution to the total. Split over conclusive histories in
    /// proportion to their probabilities.
    pub target_pi2: f64,
    #[serde(default)]
    pub pair_prior: PairPrior,
}

impl MpskConfig {
    pub fn new(m: usize, alpha_sq: f64, f: f64, target_pi2: f64) -> Result<Self> {
        let c = MpskConfig {
            m,
            alpha_sq,
            f,
            target_pi2,
            pair_prior: PairPrior::Posterior,
        };
        c.validate()?;
        Ok(c)
    }

    /// `f_M = (M − 1)/M`.
    pub fn default_fraction(m: usize) -> f64 {
        (m as f64 - 1.0) / m as f64
    }

    pub fn validate(&self) -> Result<()> {
        validate_alphabet(self.m, self.alpha_sq, self.f)?;
        if !(0.0..1.0).contains(&self.target_pi2) {
            return Err(OimError::invalid(
                "target_pi2",
                format!("{} must lie in [0, 1)", self.target_pi2),
            ));
        }
        Ok(())
    }

    /// Energy of one elimination test.
    pub fn stage_energy(&self) -> f64 {
        self.f * self.alpha_sq / self.m as f64
    }
}

fn validate_alphabet(m: usize, alpha_sq: f64, f: f64) -> Result<()> {
    if m < 3 {
        return Err(OimError::invalid("m", format!("{m} must be >= 3")));
    }
    if m > MAX_ENUMERATED_M {
        return Err(OimError::EnumerationLimit {
            m,
            max: MAX_ENUMERATED_M,
        });
    }
    if !(alpha_sq >= 0.0 && alpha_sq.is_finite()) {
        return Err(OimError::invalid(
            "alpha_sq",
            format!("{alpha_sq} must be >= 0"),
        ));
    }
    // Residual energy (1 − k f/m)|α|² must stay >= 0 up to k = m.
    if !(f > 0.0 && f <= 1.0) {
        return Err(OimError::invalid("f", format!("{f} must lie in (0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HybridResult {
    pub p_i_stage1: f64,
    pub p_i_stage2: f64,
    pub p_i_total: f64,
    pub p_e: f64,
    pub conditional_error: f64,
}

/// Probability of no click when testing `theta_test` with true state at
/// `theta_true`, both carrying mean photon number `stage_energy`.
pub fn vacuum_likelihood(theta_test: f64, theta_true: f64, stage_energy: f64) -> f64 {
    (-2.0 * stage_energy * (1.0 - (theta_true - theta_test).cos())).exp()
}

/// Complement of [`vacuum_likelihood`]; exactly 0 when testing the true
/// state.
fn click_likelihood(theta_test: f64, theta_true: f64, stage_energy: f64) -> f64 {
    -libm::expm1(-2.0 * stage_energy * (1.0 - (theta_true - theta_test).cos()))
}

fn phase(j: usize, m: usize) -> f64 {
    2.0 * PI * j as f64 / m as f64
}

/// One terminal detection history of the elimination stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EliminationHistory {
    /// Click (1) or vacuum (0) for each test performed, in test order.
    pub detections: Vec<u8>,
    /// Candidate states left at the end.
    pub survivors: Vec<usize>,
    /// `P(history | s_j)` for every state `j`.
    pub likelihood: Vec<f64>,
    /// `P(history)` under uniform priors.
    pub probability: f64,
}

impl EliminationHistory {
    pub fn tests_done(&self) -> usize {
        self.detections.len()
    }

    pub fn is_conclusive(&self) -> bool {
        self.survivors.len() == 2
    }
}

/// Walks the elimination tree depth first, calling `leaf` for every
/// terminal history with `(detections, survivors mask, likelihoods)`.
fn walk_histories<F>(m: usize, stage_energy: f64, mut leaf: F)
where
    F: FnMut(&[u8], u32, &[f64]),
{
    // (test index, survivors, likelihoods, detections)
    let mut stack: Vec<(usize, u32, Vec<f64>, Vec<u8>)> =
        vec![(0, (1u32 << m) - 1, vec![1.0; m], Vec::new())];
    // Both branches share the precomputed single-test likelihoods.
    let table: Vec<Vec<(f64, f64)>> = (0..m)
        .map(|t| {
            (0..m)
                .map(|j| {
                    (
                        vacuum_likelihood(phase(t, m), phase(j, m), stage_energy),
                        click_likelihood(phase(t, m), phase(j, m), stage_energy),
                    )
                })
                .collect()
        })
        .collect();
    while let Some((t, mask, lik, det)) = stack.pop() {
        if mask.count_ones() == 2 || t == m {
            leaf(&det, mask, &lik);
            continue;
        }
        let click: Vec<f64> = lik.iter().zip(&table[t]).map(|(l, e)| l * e.1).collect();
        let vacuum: Vec<f64> = lik.iter().zip(&table[t]).map(|(l, e)| l * e.0).collect();
        let mut det_click = det.clone();
        det_click.push(1);
        let mut det_vacuum = det;
        det_vacuum.push(0);
        // Pushed in reverse so that vacuum-first order is visited first.
        stack.push((t + 1, mask & !(1 << t), click, det_click));
        stack.push((t + 1, mask, vacuum, det_vacuum));
    }
}

/// Every terminal history of the elimination stage, including ones of
/// probability zero.
pub fn elimination_histories(m: usize, alpha_sq: f64, f: f64) -> Result<Vec<EliminationHistory>> {
    validate_alphabet(m, alpha_sq, f)?;
    let mut out = Vec::new();
    walk_histories(m, f * alpha_sq / m as f64, |det, mask, lik| {
        out.push(EliminationHistory {
            detections: det.to_vec(),
            survivors: (0..m).filter(|j| mask & (1 << j) != 0).collect(),
            likelihood: lik.to_vec(),
            probability: lik.iter().sum::<f64>() / m as f64,
        });
    });
    Ok(out)
}

/// Elimination-stage inconclusive probability `P_I^(1)`: the total
/// probability of histories that end with three or more candidates.
pub fn min_inconclusive_prob(m: usize, alpha_sq: f64, f: f64) -> Result<f64> {
    validate_alphabet(m, alpha_sq, f)?;
    let mut p = 0.0;
    walk_histories(m, f * alpha_sq / m as f64, |_, mask, lik| {
        if mask.count_ones() >= 3 {
            p += lik.iter().sum::<f64>() / m as f64;
        }
    });
    Ok(p)
}

/// Equivalent BPSK energy `|β|²` of a pair with phase difference `dtheta`
/// and energy `energy`: `|2β|² = |α₁ − α₂|²`.
pub fn pair_bpsk_energy(energy: f64, dtheta: f64) -> f64 {
    0.5 * energy * (1.0 - dtheta.cos())
}

/// `(P_E, P_I)` of the binary stage for one conclusive history, for a
/// conditional inconclusive target `c`.
fn binary_stage(beta_sq: f64, prior: f64, c: f64, opts: &SolverOptions) -> Result<(f64, f64)> {
    if beta_sq == 0.0 {
        // Identical states: guess the likelier one and discard a fraction c.
        return Ok(((1.0 - prior) * (1.0 - c), c));
    }
    let spec = solve_strategy(beta_sq, prior, c, opts)?;
    let imp = ImperfectionModel::ideal(opts.n_bins);
    let t = crate::evolution::evolve_final(&spec, &build_waveform(&spec, &imp), &imp)?;
    Ok((t.p_e, t.p_i))
}

/// Hybrid elimination + binary measurement for an M-PSK alphabet.
pub fn hybrid_tpsk(config: &MpskConfig, opts: &SolverOptions) -> Result<HybridResult> {
    config.validate()?;
    let m = config.m;
    let histories = elimination_histories(m, config.alpha_sq, config.f)?;
    let p_i1: f64 = histories
        .iter()
        .filter(|h| !h.is_conclusive())
        .map(|h| h.probability)
        .sum();
    let p_conc = 1.0 - p_i1;
    if config.target_pi2 > 0.0 && !(config.target_pi2 < p_conc) {
        return Err(OimError::Infeasible {
            target_pi: config.target_pi2,
            reason: format!("exceeds the conclusive probability {p_conc} of the elimination stage"),
        });
    }
    let c = if p_conc > 0.0 {
        config.target_pi2 / p_conc
    } else {
        0.0
    };
    let conclusive: Vec<&EliminationHistory> = histories
        .iter()
        .filter(|h| h.is_conclusive() && h.probability > 0.0)
        .collect();
    let stages: Vec<(f64, f64, f64)> = conclusive
        .par_iter()
        .map(|h| {
            let (i, j) = (h.survivors[0], h.survivors[1]);
            let residual = (1.0 - h.tests_done() as f64 * config.f / m as f64).max(0.0);
            let beta_sq = pair_bpsk_energy(residual * config.alpha_sq, phase(j, m) - phase(i, m));
            let prior = match config.pair_prior {
                PairPrior::Equal => 0.5,
                PairPrior::Posterior => {
                    let (li, lj) = (h.likelihood[i], h.likelihood[j]);
                    li.max(lj) / (li + lj)
                }
            };
            let (p_e, p_i) = binary_stage(beta_sq, prior, c, opts)?;
            Ok((h.probability, p_e, p_i))
        })
        .collect::<Result<_>>()?;
    let p_e: f64 = stages.iter().map(|(w, e, _)| w * e).sum();
    let p_i2: f64 = stages.iter().map(|(w, _, i)| w * i).sum();
    let p_i_total = p_i1 + p_i2;
    let conditional_error = if p_i_total < 1.0 {
        p_e / (1.0 - p_i_total)
    } else {
        f64::NAN
    };
    Ok(HybridResult {
        p_i_stage1: p_i1,
        p_i_stage2: p_i2,
        p_i_total,
        p_e,
        conditional_error,
    })
}

/// Heterodyne detection of an M-PSK alphabet, discretised into outcome
/// cells ordered from least to most reliable.
///
/// The outcome for state `j` is complex Gaussian with density
/// `exp(−|z − α_j|²)/π`; cells are designated inconclusive in order of
/// increasing maximum posterior until the target is met, with a
/// fractional share of the last cell. By symmetry only half of the
/// decision sector of `s₀` (`0 ≤ φ ≤ π/m`) is gridded, in polar cells whose
/// edges follow the decision boundary, so the integrand is smooth inside
/// every cell.
#[derive(Debug, Clone)]
pub struct HeterodyneTable {
    /// Cumulative outcome probability of the least reliable cells.
    cum_mass: Vec<f64>,
    /// Cumulative error probability of the same cells.
    cum_error: Vec<f64>,
    total_error: f64,
    /// Maximum posterior of each sorted cell.
    max_posterior: Vec<f64>,
}

/// Radial cells of the default heterodyne grid; the angular count is a
/// quarter of this.
pub const HETERODYNE_GRID: usize = 2000;

impl HeterodyneTable {
    pub fn new(m: usize, alpha_sq: f64, grid: usize) -> Result<Self> {
        if m < 2 {
            return Err(OimError::invalid("m", format!("{m} must be >= 2")));
        }
        if !(alpha_sq >= 0.0 && alpha_sq.is_finite()) {
            return Err(OimError::invalid(
                "alpha_sq",
                format!("{alpha_sq} must be >= 0"),
            ));
        }
        if grid < 16 {
            return Err(OimError::invalid("grid", "must be >= 16"));
        }
        let amp = alpha_sq.sqrt();
        // Six standard deviations (1/√2 per quadrature) beyond the states,
        // with margin for the radial direction.
        let r_max = amp + 6.0;
        let (n_r, n_phi) = (grid, (grid / 4).max(8));
        let (dr, dphi) = (r_max / n_r as f64, PI / m as f64 / n_phi as f64);
        let states: Vec<(f64, f64)> = (0..m)
            .map(|j| (amp * phase(j, m).cos(), amp * phase(j, m).sin()))
            .collect();
        // Each half-sector cell stands for 2m congruent cells.
        let copies = 2.0 * m as f64;
        let mut cells: Vec<(f64, f64, f64)> = (0..n_r * n_phi)
            .into_par_iter()
            .map(|idx| {
                let r = (idx % n_r) as f64 * dr + 0.5 * dr;
                let phi = (idx / n_r) as f64 * dphi + 0.5 * dphi;
                let (x, y) = (r * phi.cos(), r * phi.sin());
                let mut sum = 0.0;
                let mut best = 0.0f64;
                for &(sx, sy) in &states {
                    let w = (-((x - sx).powi(2) + (y - sy).powi(2))).exp();
                    sum += w;
                    best = best.max(w);
                }
                let mass = copies * sum * r * dr * dphi / (PI * m as f64);
                let posterior = if sum > 0.0 {
                    best / sum
                } else {
                    1.0 / m as f64
                };
                (posterior, mass, mass * (1.0 - posterior))
            })
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        let norm: f64 = cells.iter().map(|c| c.1).sum();
        let mut cum_mass = Vec::with_capacity(cells.len());
        let mut cum_error = Vec::with_capacity(cells.len());
        let (mut cm, mut ce) = (0.0, 0.0);
        for c in &cells {
            cm += c.1 / norm;
            ce += c.2 / norm;
            cum_mass.push(cm);
            cum_error.push(ce);
        }
        Ok(HeterodyneTable {
            total_error: ce,
            cum_mass,
            cum_error,
            max_posterior: cells.iter().map(|c| c.0).collect(),
        })
    }

    /// Maximum-a-posteriori error with no inconclusive outcomes.
    pub fn map_error(&self) -> f64 {
        self.total_error
    }

    /// `(P_E, threshold)` after declaring probability `target_pi` of the
    /// least reliable outcomes inconclusive; `threshold` is the maximum
    /// posterior at the cut.
    fn cut(&self, target_pi: f64) -> (f64, f64) {
        if target_pi <= 0.0 {
            return (self.total_error, 0.0);
        }
        let idx = self.cum_mass.partition_point(|&c| c < target_pi);
        if idx >= self.cum_mass.len() {
            return (0.0, 1.0);
        }
        let (prev_mass, prev_err) = if idx == 0 {
            (0.0, 0.0)
        } else {
            (self.cum_mass[idx - 1], self.cum_error[idx - 1])
        };
        let cell_mass = self.cum_mass[idx] - prev_mass;
        let cell_err = self.cum_error[idx] - prev_err;
        let frac = if cell_mass > 0.0 {
            (target_pi - prev_mass) / cell_mass
        } else {
            0.0
        };
        let removed = prev_err + frac * cell_err;
        (
            (self.total_error - removed).max(0.0),
            self.max_posterior[idx],
        )
    }

    /// `P_E^Het / (1 − P_I^Het)` at `P_I^Het = target_pi`.
    pub fn conditional_error(&self, target_pi: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&target_pi) {
            return Err(OimError::invalid(
                "target_pi",
                format!("{target_pi} must lie in [0, 1)"),
            ));
        }
        Ok(self.cut(target_pi).0 / (1.0 - target_pi))
    }

    /// Maximum-posterior threshold below which outcomes are inconclusive.
    pub fn threshold(&self, target_pi: f64) -> f64 {
        self.cut(target_pi).1
    }
}

/// Conditional heterodyne error at inconclusive probability `target_pi`.
pub fn heterodyne_baseline(m: usize, alpha_sq: f64, target_pi: f64) -> Result<f64> {
    HeterodyneTable::new(m, alpha_sq, HETERODYNE_GRID)?.conditional_error(target_pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterodyneSample {
    pub n: u64,
    pub p_i: f64,
    pub conditional_error: f64,
}

/// Monte-Carlo cross-check of the heterodyne baseline: outcomes whose
/// maximum posterior falls below `threshold` are inconclusive.
pub fn heterodyne_monte_carlo(
    m: usize,
    alpha_sq: f64,
    threshold: f64,
    n: u64,
    master_seed: u64,
) -> HeterodyneSample {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let amp = alpha_sq.sqrt();
    let states: Vec<(f64, f64)> = (0..m)
        .map(|j| (amp * phase(j, m).cos(), amp * phase(j, m).sin()))
        .collect();
    let (inc, err) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::montecarlo::trial_rng(master_seed, i);
            let j = rng.random_range(0..m);
            let gx: f64 = rng.sample(StandardNormal);
            let gy: f64 = rng.sample(StandardNormal);
            let (x, y) = (
                states[j].0 + gx / 2f64.sqrt(),
                states[j].1 + gy / 2f64.sqrt(),
            );
            let w: Vec<f64> = states
                .iter()
                .map(|&(sx, sy)| (-((x - sx).powi(2) + (y - sy).powi(2))).exp())
                .collect();
            let sum: f64 = w.iter().sum();
            let (arg, best) =
                w.iter().enumerate().fold(
                    (0, f64::MIN),
                    |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
                );
            if best / sum < threshold {
                (1u64, 0u64)
            } else {
                (0, (arg != j) as u64)
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let conclusive = n - inc;
    HeterodyneSample {
        n,
        p_i: inc as f64 / n as f64,
        conditional_error: if conclusive > 0 {
            err as f64 / conclusive as f64
        } else {
            f64::NAN
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub m: usize,
    pub alpha_sq_per_bit: f64,
    pub alpha_sq: f64,
    pub p_i_stage1: f64,
    pub log10_p_conc_max: f64,
}

/// `log10(1 − P_I^(1))` per alphabet size at fixed energy per bit, with
/// `f = (m − 1)/m`.
pub fn scaling_study(
    m_range: std::ops::RangeInclusive<usize>,
    alpha_sq_per_bit: f64,
) -> Result<Vec<ScalingPoint>> {
    if !(alpha_sq_per_bit > 0.0 && alpha_sq_per_bit.is_finite()) {
        return Err(OimError::invalid(
            "alpha_sq_per_bit",
            format!("{alpha_sq_per_bit} must be > 0"),
        ));
    }
    m_range
        .map(|m| {
            let alpha_sq = alpha_sq_per_bit * (m as f64).log2();
            let p = min_inconclusive_prob(m, alpha_sq, MpskConfig::default_fraction(m))?;
            Ok(ScalingPoint {
                m,
                alpha_sq_per_bit,
                alpha_sq,
                p_i_stage1: p,
                log10_p_conc_max: (1.0 - p).log10(),
            })
        })
        .collect()
}
