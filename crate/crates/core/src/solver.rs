//! Numerical design of the switching time `t1` and second-mode prior `v`.
//!
//! For a target inconclusive probability the solver scans switch points
//! on bin boundaries (`t1 = k / n_bins`), root-finds `v` so the ideal
//! evolution meets the target, and keeps the candidate with the smallest
//! final error. Ties within [`PE_TIE_EPS`] go to the smaller `t1`.
//!
//! Candidate evaluations reuse one first-mode trajectory: the first-mode
//! waveform does not depend on `t1`, so `P_C` at every boundary is computed
//! once and only the second mode is re-run per candidate.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{OimError, Result};
use crate::evolution::{evolve_final, mean_counts};
use crate::model::{ImperfectionModel, ProbabilityTriple, StrategySpec, DEFAULT_BINS};
use crate::waveform::build_waveform;

/// Search interval for `v`; the endpoints stand in for the open limits.
pub const V_MIN: f64 = 1e-12;
pub const V_MAX: f64 = 1.0 - 1e-12;

/// Two candidates whose errors differ by less than this are tied.
pub const PE_TIE_EPS: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Allowed |achieved P_I − target| for ideal devices.
    pub tol: f64,
    pub n_bins: usize,
    /// Evaluation budget of each inner root-find over `v`.
    pub max_root_evals: usize,
    /// Stride of the coarse scan over switch bins before local refinement.
    pub coarse_stride: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            n_bins: DEFAULT_BINS,
            max_root_evals: 200,
            coarse_stride: 16,
        }
    }
}

impl SolverOptions {
    pub fn with_bins(n_bins: usize) -> Self {
        SolverOptions {
            n_bins,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub target_pi: f64,
    pub achieved_pi: f64,
    pub achieved_pe: f64,
    pub t1: f64,
    pub v: f64,
    pub n0: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
    /// Grid points that could not be solved, with the reason.
    pub failures: Vec<(f64, OimError)>,
}

/// Final ideal-device probabilities of the strategy `(t1, v)`, via the
/// full waveform table and evolution.
pub fn evaluate_strategy(
    t1: f64,
    v: f64,
    alpha_sq: f64,
    p: f64,
    n_bins: usize,
) -> Result<ProbabilityTriple> {
    let spec = StrategySpec::new(alpha_sq, p, t1, v)?;
    let imp = ImperfectionModel::ideal(n_bins);
    imp.validate()?;
    let wf = build_waveform(&spec, &imp);
    evolve_final(&spec, &wf, &imp)
}

/// Ideal-device evaluator specialised to bin-aligned switch points.
#[derive(Debug, Clone)]
pub struct FrontierEvaluator {
    alpha_sq: f64,
    p: f64,
    n_bins: usize,
    /// `P_C` at each boundary of an uninterrupted first mode.
    first_mode_pc: Vec<f64>,
    /// `expm1(−4|α|²(m + ½)/n)` for second-mode bin offsets `m`.
    second_mode_expm1: Vec<f64>,
}

impl FrontierEvaluator {
    pub fn new(alpha_sq: f64, p: f64, n_bins: usize) -> Result<Self> {
        // Validates alpha_sq and p.
        let spec = StrategySpec::dolinar(alpha_sq, p)?;
        if n_bins < 2 {
            return Err(OimError::invalid(
                "n_bins",
                "the solver needs at least 2 bins",
            ));
        }
        let imp = ImperfectionModel::ideal(n_bins);
        let dt = imp.dt();
        let wf = build_waveform(&spec, &imp);
        let mut first_mode_pc = Vec::with_capacity(n_bins + 1);
        let mut pc = p;
        first_mode_pc.push(pc);
        for bin in &wf.bins {
            let (n_plus, n_minus) = mean_counts(alpha_sq, bin.mag_applied, &imp);
            pc = pc * (1.0 - dt * n_minus) + (1.0 - pc) * dt * n_plus;
            first_mode_pc.push(pc);
        }
        let second_mode_expm1 = (0..n_bins)
            .map(|m| libm::expm1(-4.0 * alpha_sq * (m as f64 + 0.5) * dt))
            .collect();
        Ok(FrontierEvaluator {
            alpha_sq,
            p,
            n_bins,
            first_mode_pc,
            second_mode_expm1,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn t1_of(&self, k: usize) -> f64 {
        k as f64 / self.n_bins as f64
    }

    /// Final probabilities when switching at boundary `k` with prior `v`.
    pub fn evaluate(&self, k: usize, v: f64) -> ProbabilityTriple {
        let n = self.n_bins;
        let q = self.first_mode_pc[k];
        if k >= n {
            return ProbabilityTriple {
                p_c: q,
                p_e: 1.0 - q,
                p_i: 0.0,
            };
        }
        let a = self.alpha_sq;
        let dt = 1.0 / n as f64;
        let sqrt_a = a.sqrt();
        let c = 4.0 * v * (1.0 - v);
        let (mut pc, mut pe) = if v <= 0.5 { (0.0, 0.0) } else { (q, 1.0 - q) };
        for m in 0..(n - k) {
            let denom = (1.0 - c) - c * self.second_mode_expm1[m];
            let mag = (a / denom).sqrt();
            // Inline of `mean_counts` for ideal devices.
            let base = a + mag * mag;
            let cross = 2.0 * mag * sqrt_a;
            let r_plus = dt * (base + cross);
            let r_minus = dt * (base - cross).max(0.0);
            let next_pc = pc * (1.0 - r_minus) + (q - pc) * r_plus;
            let next_pe = pe * (1.0 - r_plus) + (1.0 - q - pe) * r_minus;
            pc = next_pc;
            pe = next_pe;
        }
        ProbabilityTriple {
            p_c: pc,
            p_e: pe,
            p_i: 1.0 - pc - pe,
        }
    }

    fn spec(&self, k: usize, v: f64) -> Result<StrategySpec> {
        StrategySpec::new(self.alpha_sq, self.p, self.t1_of(k), v)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    k: usize,
    v: f64,
    triple: ProbabilityTriple,
    converged: bool,
}

/// Root-find `v` at switch bin `k` so that `P_I = target`. `None` when the
/// target lies outside the range reachable at this `k`.
fn solve_v(
    ev: &FrontierEvaluator,
    k: usize,
    target: f64,
    opts: &SolverOptions,
) -> Option<Candidate> {
    // P_I is non-increasing in v.
    let at_lo = ev.evaluate(k, V_MIN);
    let at_hi = ev.evaluate(k, V_MAX);
    if target > at_lo.p_i + opts.tol || target < at_hi.p_i - opts.tol {
        return None;
    }
    let (mut lo, mut hi) = (V_MIN, V_MAX);
    let mut best = if (at_lo.p_i - target).abs() <= (at_hi.p_i - target).abs() {
        (V_MIN, at_lo)
    } else {
        (V_MAX, at_hi)
    };
    let mut evals = 2;
    while evals < opts.max_root_evals && (best.1.p_i - target).abs() > opts.tol * 1e-3 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let t = ev.evaluate(k, mid);
        evals += 1;
        if (t.p_i - target).abs() < (best.1.p_i - target).abs() {
            best = (mid, t);
        }
        if t.p_i > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(Candidate {
        k,
        v: best.0,
        triple: best.1,
        converged: (best.1.p_i - target).abs() <= opts.tol,
    })
}

fn better(new: &Candidate, old: &Candidate, score: impl Fn(&Candidate) -> f64) -> bool {
    let (s_new, s_old) = (score(new), score(old));
    s_new < s_old - PE_TIE_EPS || ((s_new - s_old).abs() <= PE_TIE_EPS && new.k < old.k)
}

/// Coarse scan over `ks` followed by exhaustive refinement around the two
/// best coarse candidates.
fn scan_switch_bins<F>(
    n_bins: usize,
    stride: usize,
    mut probe: F,
    score: impl Fn(&Candidate) -> f64 + Copy,
) -> Option<Candidate>
where
    F: FnMut(usize) -> Option<Candidate>,
{
    let stride = stride.max(1);
    let last = n_bins - 1;
    let mut coarse: Vec<usize> = (1..=last).step_by(stride).collect();
    if coarse.last() != Some(&last) {
        coarse.push(last);
    }
    let mut found: Vec<Candidate> = coarse.iter().filter_map(|&k| probe(k)).collect();
    if found.is_empty() {
        return None;
    }
    found.sort_by(|a, b| score(a).total_cmp(&score(b)).then(a.k.cmp(&b.k)));
    let seeds: Vec<usize> = found.iter().take(2).map(|c| c.k).collect();
    let mut best = found[0];
    for seed in seeds {
        let lo = seed.saturating_sub(stride - 1).max(1);
        let hi = (seed + stride - 1).min(last);
        for k in lo..=hi {
            if let Some(c) = probe(k) {
                if better(&c, &best, score) {
                    best = c;
                }
            }
        }
    }
    Some(best)
}

/// Strategy with minimal ideal error among those reaching `target_pi`.
pub fn solve_strategy(
    alpha_sq: f64,
    p: f64,
    target_pi: f64,
    opts: &SolverOptions,
) -> Result<StrategySpec> {
    if !(0.0..1.0).contains(&target_pi) {
        return Err(OimError::invalid(
            "target_pi",
            format!("{target_pi} must lie in [0, 1)"),
        ));
    }
    if !(opts.tol > 0.0) {
        return Err(OimError::invalid("tol", "must be > 0"));
    }
    if target_pi == 0.0 {
        return StrategySpec::dolinar(alpha_sq, p);
    }
    let ev = FrontierEvaluator::new(alpha_sq, p, opts.n_bins)?;
    let mut best_unconverged: Option<Candidate> = None;
    let pe_score = |c: &Candidate| c.triple.p_e;
    let best = scan_switch_bins(
        ev.n_bins(),
        opts.coarse_stride,
        |k| {
            let c = solve_v(&ev, k, target_pi, opts)?;
            if c.converged {
                Some(c)
            } else {
                let closer = best_unconverged.is_none_or(|b| {
                    (c.triple.p_i - target_pi).abs() < (b.triple.p_i - target_pi).abs()
                });
                if closer {
                    best_unconverged = Some(c);
                }
                None
            }
        },
        pe_score,
    );
    match (best, best_unconverged) {
        (Some(c), _) => ev.spec(c.k, c.v)?.with_target(target_pi),
        (None, Some(c)) => Err(OimError::NonConvergence {
            target_pi,
            t1: ev.t1_of(c.k),
            v: c.v,
            achieved_pi: c.triple.p_i,
        }),
        (None, None) => Err(OimError::Infeasible {
            target_pi,
            reason: format!(
                "no switch time reaches it for |α|²={alpha_sq}, p={p} with {} bins",
                opts.n_bins
            ),
        }),
    }
}

/// The zero-error end of the frontier: `v → 0` with the switch time that
/// minimises `P_I`. Returns the strategy and its ideal probabilities.
pub fn usd_endpoint(
    alpha_sq: f64,
    p: f64,
    opts: &SolverOptions,
) -> Result<(StrategySpec, ProbabilityTriple)> {
    let ev = FrontierEvaluator::new(alpha_sq, p, opts.n_bins)?;
    let best = scan_switch_bins(
        ev.n_bins(),
        opts.coarse_stride,
        |k| {
            Some(Candidate {
                k,
                v: V_MIN,
                triple: ev.evaluate(k, V_MIN),
                converged: true,
            })
        },
        |c| c.triple.p_i,
    )
    .expect("every switch bin is a candidate");
    let spec = ev.spec(best.k, best.v)?.with_target(best.triple.p_i)?;
    Ok((spec, best.triple))
}

/// Solve each grid point for ideal devices, then execute the solved
/// strategy under `imp`. Points are independent and solved in parallel;
/// output order follows the grid.
pub fn tradeoff_curve(
    alpha_sq: f64,
    p: f64,
    pi_grid: &[f64],
    imp: &ImperfectionModel,
    opts: &SolverOptions,
) -> Result<TradeoffCurve> {
    imp.validate()?;
    if pi_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OimError::invalid("pi_grid", "must be strictly increasing"));
    }
    if let Some(&bad) = pi_grid.iter().find(|x| !(0.0..1.0).contains(*x)) {
        return Err(OimError::invalid(
            "pi_grid",
            format!("{bad} outside [0, 1)"),
        ));
    }
    let opts = SolverOptions {
        n_bins: imp.n_bins,
        ..*opts
    };
    let results: Vec<Result<TradeoffPoint>> = pi_grid
        .par_iter()
        .map(|&target| {
            let spec = solve_strategy(alpha_sq, p, target, &opts)?;
            let wf = build_waveform(&spec, imp);
            let t = evolve_final(&spec, &wf, imp)?;
            Ok(TradeoffPoint {
                target_pi: target,
                achieved_pi: t.p_i,
                achieved_pe: t.p_e,
                t1: spec.t1,
                v: spec.v,
                n0: spec.n0,
            })
        })
        .collect();
    let mut curve = TradeoffCurve {
        points: Vec::new(),
        failures: Vec::new(),
    };
    for (target, r) in pi_grid.iter().zip(results) {
        match r {
            Ok(pt) => curve.points.push(pt),
            Err(e) => curve.failures.push((*target, e)),
        }
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapPoint {
    pub r: f64,
    pub delta_pe: f64,
    pub delta_pi: f64,
    pub g_sq: f64,
}

/// Offset from `v = 1/2` used to probe the two sides of the parity jump.
const GAP_V_OFFSET: f64 = 1e-9;

/// Frontier strategy at which the solved `v` crosses 1/2, i.e. where the
/// second mode changes its opening parity. Located by bisection on the
/// target over the ideal frontier.
pub fn parity_switch_point(alpha_sq: f64, p: f64, opts: &SolverOptions) -> Result<StrategySpec> {
    let (_, usd) = usd_endpoint(alpha_sq, p, opts)?;
    let (mut lo, mut hi) = (0.01 * usd.p_i, 0.999 * usd.p_i);
    let lo_spec = solve_strategy(alpha_sq, p, lo, opts)?;
    let hi_spec = solve_strategy(alpha_sq, p, hi, opts)?;
    if !(lo_spec.v > 0.5 && hi_spec.v <= 0.5) {
        return Err(OimError::Infeasible {
            target_pi: hi,
            reason: "the solved v does not cross 1/2 on this frontier".into(),
        });
    }
    let mut best = lo_spec;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let s = solve_strategy(alpha_sq, p, mid, opts)?;
        if s.v > 0.5 {
            lo = mid;
            best = s;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Span of the tradeoff curve that a bound `R` on the LO power makes
/// unreachable.
///
/// On the ideal frontier the second mode opens with a diverging LO where
/// `v` crosses 1/2, so the strategies on either side (opening conclusive
/// or inconclusive) meet continuously. Clamping the LO to `sqrt(R |α|²)`
/// splits them: the gap is the distance between the two clamped
/// executions at `v = 1/2 ± ε`. The switch point is designed on the
/// default grid; executions run on `opts.n_bins`, which must resolve the
/// clamped interval `~1/(4 R |α|²)`.
pub fn gap_scaling(alpha_sq: f64, r_values: &[f64], opts: &SolverOptions) -> Result<Vec<GapPoint>> {
    if let Some(&bad) = r_values.iter().find(|r| !(**r > 1.0)) {
        return Err(OimError::invalid("r_values", format!("{bad} must be > 1")));
    }
    let design = SolverOptions {
        n_bins: DEFAULT_BINS,
        ..*opts
    };
    let switch = parity_switch_point(alpha_sq, 0.5, &design)?;
    let opening_conclusive = StrategySpec::new(alpha_sq, 0.5, switch.t1, 0.5 + GAP_V_OFFSET)?;
    let opening_inconclusive = StrategySpec::new(alpha_sq, 0.5, switch.t1, 0.5 - GAP_V_OFFSET)?;
    r_values
        .par_iter()
        .map(|&r| {
            let imp = ImperfectionModel {
                r_max: r,
                ..ImperfectionModel::ideal(opts.n_bins)
            };
            let run = |spec: &StrategySpec| evolve_final(spec, &build_waveform(spec, &imp), &imp);
            let upper = run(&opening_conclusive)?;
            let lower = run(&opening_inconclusive)?;
            let delta_pe = upper.p_e - lower.p_e;
            let delta_pi = lower.p_i - upper.p_i;
            Ok(GapPoint {
                r,
                delta_pe,
                delta_pi,
                g_sq: delta_pe * delta_pe + delta_pi * delta_pi,
            })
        })
        .collect()
}
