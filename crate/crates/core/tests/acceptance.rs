//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, even on success.

use std::time::{Duration, Instant};

use oim_core::bounds::{helstrom_error, idp_bound};
use oim_core::evolution::evolve_final;
use oim_core::export::Table;
use oim_core::montecarlo::run_ensemble;
use oim_core::mpsk::{
    heterodyne_monte_carlo, hybrid_tpsk, min_inconclusive_prob, scaling_study, HeterodyneTable,
    MpskConfig, HETERODYNE_GRID,
};
use oim_core::solver::{
    evaluate_strategy, gap_scaling, solve_strategy, tradeoff_curve, usd_endpoint, SolverOptions,
};
use oim_core::waveform::build_waveform;
use oim_core::{ImperfectionModel, StrategySpec};
use serde_json::json;

const ALPHAS: [f64; 3] = [0.2, 0.4, 0.6];
const SEED: u64 = 20_240_601;

type Check = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

/// Least-squares slope and coefficient of determination.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn imperfect() -> ImperfectionModel {
    ImperfectionModel::experimental()
}

fn endpoints() -> Verdict {
    let opts = SolverOptions::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for &a in &ALPHAS {
        let start = Instant::now();
        let mesd = solve_strategy(a, 0.5, 0.0, &opts).unwrap();
        let pe = evaluate_strategy(mesd.t1, mesd.v, a, 0.5, opts.n_bins)
            .unwrap()
            .p_e;
        let (_, usd) = usd_endpoint(a, 0.5, &opts).unwrap();
        let elapsed = start.elapsed();
        let d_pe = (pe - helstrom_error(a, 0.5).unwrap()).abs();
        let d_pi = (usd.p_i - idp_bound(a)).abs();
        ok &= d_pe < 2e-3 && d_pi < 2e-3 && usd.p_e < 1e-9 && within(elapsed, 10.0);
        notes.push(format!(
            "a={a}: dPE={d_pe:.1e} dPI={d_pi:.1e} {:.2}s",
            elapsed.as_secs_f64()
        ));
    }
    verdict(ok, notes.join("; "))
}

fn ideal_curves() -> Verdict {
    let opts = SolverOptions::default();
    let imp = ImperfectionModel::ideal(opts.n_bins);
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for &a in &ALPHAS {
        let (_, usd) = usd_endpoint(a, 0.5, &opts).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| i as f64 / 20.0 * usd.p_i).collect();
        let curve = tradeoff_curve(a, 0.5, &grid, &imp, &opts).unwrap();
        let pe: Vec<f64> = curve.points.iter().map(|p| p.achieved_pe).collect();
        let max_rise = pe.windows(2).map(|w| w[1] - w[0]).fold(f64::MIN, f64::max);
        let min_d2 = pe
            .windows(3)
            .map(|w| w[2] - 2.0 * w[1] + w[0])
            .fold(f64::MAX, f64::min);
        ok &= curve.failures.is_empty() && pe.len() == 20 && max_rise <= 0.0 && min_d2 >= -1e-6;
        notes.push(format!(
            "a={a}: max rise {max_rise:.1e}, min d2 {min_d2:.1e}"
        ));
    }
    let elapsed = start.elapsed();
    ok &= within(elapsed, 60.0);
    notes.push(format!("{:.1}s", elapsed.as_secs_f64()));
    verdict(ok, notes.join("; "))
}

fn mc_vs_evolution() -> Verdict {
    let opts = SolverOptions::default();
    let finite_r = ImperfectionModel {
        r_max: 50.0,
        ..ImperfectionModel::ideal(opts.n_bins)
    };
    let devices = [
        ("ideal", ImperfectionModel::ideal(opts.n_bins)),
        ("imperfect", imperfect()),
        ("R=50", finite_r),
    ];
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &a in &ALPHAS {
        let spec = solve_strategy(a, 0.5, 0.2, &opts).unwrap();
        for (_, imp) in &devices {
            let wf = build_waveform(&spec, imp);
            let evo = evolve_final(&spec, &wf, imp).unwrap();
            let mc = run_ensemble(&spec, &wf, imp, 50_000, SEED, 5).unwrap();
            for (m, e, se) in [
                (mc.p_c, evo.p_c, mc.se_c),
                (mc.p_e, evo.p_e, mc.se_e),
                (mc.p_i, evo.p_i, mc.se_i),
            ] {
                worst = worst.max((m - e).abs() / se);
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 3.0 && within(elapsed, 30.0),
        format!(
            "9 configurations, max |z| = {worst:.2}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn helstrom_crossing() -> Verdict {
    let opts = SolverOptions::default();
    let helstrom = helstrom_error(0.2, 0.5).unwrap();
    let grid: Vec<f64> = (0..60).map(|i| i as f64 * 0.01).collect();
    let curve = tradeoff_curve(0.2, 0.5, &grid, &imperfect(), &opts).unwrap();
    let mut pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (p.achieved_pi, p.achieved_pe))
        .collect();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let above: Vec<&(f64, f64)> = pts.iter().filter(|p| p.0 >= 0.20).collect();
    let below_all = !above.is_empty() && above.iter().all(|p| p.1 < helstrom);
    let crossing = pts.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.1 >= helstrom && b.1 < helstrom)
            .then(|| a.0 + (a.1 - helstrom) / (a.1 - b.1) * (b.0 - a.0))
    });
    let ok = below_all && crossing.is_some_and(|c| (c - 0.18).abs() <= 0.04);
    verdict(
        ok,
        format!(
            "crossing at P_I = {:.3}, {} points with P_I >= 0.20 all below {helstrom:.4}: {below_all}",
            crossing.unwrap_or(f64::NAN),
            above.len()
        ),
    )
}

fn dolinar_imperfect() -> Verdict {
    let start = Instant::now();
    let spec = StrategySpec::dolinar(0.2, 0.5).unwrap();
    let imp = imperfect();
    let wf = build_waveform(&spec, &imp);
    let stats = run_ensemble(&spec, &wf, &imp, 250_000, SEED, 5).unwrap();
    let elapsed = start.elapsed();
    verdict(
        (stats.p_e - 0.18).abs() <= 0.01 && within(elapsed, 20.0),
        format!(
            "P_E = {:.4} +- {:.4}, {:.1}s",
            stats.p_e,
            stats.se_e,
            elapsed.as_secs_f64()
        ),
    )
}

fn gap_slope() -> Verdict {
    let r_values = [10.0, 30.0, 100.0, 300.0, 1000.0];
    let opts = SolverOptions::with_bins(65_536);
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for &a in &ALPHAS {
        let gaps = gap_scaling(a, &r_values, &opts).unwrap();
        let xs: Vec<f64> = gaps.iter().map(|g| g.r.ln()).collect();
        let ys: Vec<f64> = gaps.iter().map(|g| g.g_sq.ln()).collect();
        let (slope, _) = linear_fit(&xs, &ys);
        ok &= (slope + 1.0).abs() <= 0.15;
        notes.push(format!("a={a}: slope {slope:.3}"));
    }
    let elapsed = start.elapsed();
    ok &= within(elapsed, 120.0);
    notes.push(format!("{:.1}s", elapsed.as_secs_f64()));
    verdict(ok, notes.join("; "))
}

fn elimination_floor() -> Verdict {
    let start = Instant::now();
    let expected = [0.766, 0.587, 0.449];
    let got: Vec<f64> = ALPHAS
        .iter()
        .map(|&a| min_inconclusive_prob(3, a, 2.0 / 3.0).unwrap())
        .collect();
    let ok = got.iter().zip(expected).all(|(g, e)| (g - e).abs() <= 1e-3)
        && within(start.elapsed(), 1.0);
    verdict(ok, format!("{got:.4?}"))
}

fn tpsk_beats_heterodyne() -> Verdict {
    let opts = SolverOptions::default();
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for &a in &ALPHAS {
        let het = HeterodyneTable::new(3, a, HETERODYNE_GRID).unwrap();
        for f in [0.66, 0.90] {
            let p_conc = 1.0 - min_inconclusive_prob(3, a, f).unwrap();
            let mut wins = 0;
            for i in 0..10 {
                let cfg = MpskConfig::new(3, a, f, i as f64 / 10.0 * p_conc).unwrap();
                let r = hybrid_tpsk(&cfg, &opts).unwrap();
                if r.conditional_error < het.conditional_error(r.p_i_total).unwrap() {
                    wins += 1;
                }
            }
            ok &= wins > 0;
            notes.push(format!("a={a} f={f}: {wins}/10"));
        }
    }
    let elapsed = start.elapsed();
    ok &= within(elapsed, 120.0);
    notes.push(format!("{:.1}s", elapsed.as_secs_f64()));
    verdict(ok, notes.join("; "))
}

fn m_scaling() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for per_bit in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let pts = scaling_study(3..=8, per_bit).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| (p.m * p.m) as f64).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.log10_p_conc_max).collect();
        let (_, r2) = linear_fit(&xs, &ys);
        ok &= r2 > 0.98;
        notes.push(format!("{per_bit}: R2={r2:.4}"));
    }
    ok &= within(start.elapsed(), 30.0);
    verdict(ok, notes.join("; "))
}

/// Ensemble and heterodyne Monte-Carlo tables rendered inside a pool of
/// `threads` workers.
fn randomized_csv(threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    pool.install(|| {
        let opts = SolverOptions::default();
        let imp = imperfect();
        let spec = solve_strategy(0.2, 0.5, 0.2, &opts).unwrap();
        let wf = build_waveform(&spec, &imp);
        let stats = run_ensemble(&spec, &wf, &imp, 20_000, SEED, 5).unwrap();
        let mut t = Table::new(&["quantity", "p_c", "p_e", "p_i", "se_e", "batch_sd_e"]);
        t.push(vec![
            "ensemble".into(),
            stats.p_c.into(),
            stats.p_e.into(),
            stats.p_i.into(),
            stats.se_e.into(),
            stats.batch_sd.p_e.into(),
        ]);
        for (k, r) in stats.time_resolved.iter().enumerate().step_by(64) {
            t.push(vec![
                format!("boundary {k}").as_str().into(),
                r.p_c.into(),
                r.p_e.into(),
                r.p_i.into(),
                0.0.into(),
                0.0.into(),
            ]);
        }
        let het = HeterodyneTable::new(3, 0.4, HETERODYNE_GRID).unwrap();
        let h = heterodyne_monte_carlo(3, 0.4, het.threshold(0.3), 20_000, SEED);
        t.push(vec![
            "heterodyne".into(),
            (1.0 - h.p_i).into(),
            h.conditional_error.into(),
            h.p_i.into(),
            0.0.into(),
            0.0.into(),
        ]);
        t.to_csv(&json!({"seed": SEED, "trials": 20_000}))
    })
}

fn determinism() -> Verdict {
    let reference = randomized_csv(1);
    let same = [4, 8].iter().all(|&n| randomized_csv(n) == reference);
    verdict(
        same,
        format!(
            "{} bytes, identical for 1, 4 and 8 workers: {same}",
            reference.len()
        ),
    )
}

fn main() {
    let criteria: [Check; 10] = [
        ("Helstrom and IDP endpoints", endpoints),
        ("ideal frontiers monotone and convex", ideal_curves),
        ("Monte-Carlo agrees with evolution", mc_vs_evolution),
        ("imperfect frontier crosses Helstrom", helstrom_crossing),
        ("imperfect Dolinar error", dolinar_imperfect),
        ("gap scales as 1/R", gap_slope),
        ("TPSK elimination floor", elimination_floor),
        ("TPSK hybrid beats heterodyne", tpsk_beats_heterodyne),
        ("elimination floor scales with M^2", m_scaling),
        ("randomized runs independent of worker count", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag} {name} ({})", i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
