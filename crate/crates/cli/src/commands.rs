//! One function per subcommand. Each validates its whole configuration
//! before computing anything and returns a [`Report`].

use oim_core::export::{Cell, Table};
use oim_core::montecarlo::{run_ensemble, trial_records, Outcome};
use oim_core::mpsk::{self, HeterodyneTable, MpskConfig, HETERODYNE_GRID};
use oim_core::solver::{self, SolverOptions};
use oim_core::waveform::build_waveform;
use oim_core::{bounds, evolution, ImperfectionModel, OimError, StrategySpec};
use serde_json::{json, Value};

use crate::config::Settings;
use crate::output::{self, Failure, Report};
use crate::CliError;

const DEFAULT_ALPHAS: [f64; 3] = [0.2, 0.4, 0.6];
const DEFAULT_PI_POINTS: usize = 20;
const DEFAULT_TRIALS: u64 = 250_000;
const DEFAULT_BATCHES: usize = 5;
const DEFAULT_DUMP_LIMIT: u64 = 1000;
/// Grid fine enough to resolve the clamped interval at R = 1000.
const GAP_BINS: usize = 65536;

fn alphas(s: &Settings, allow_zero: bool) -> Result<Vec<f64>, CliError> {
    let a = s.alpha_sq(DEFAULT_ALPHAS.to_vec());
    if a.is_empty() {
        return Err(usage("alpha_sq", "at least one value is required"));
    }
    for &x in &a {
        let ok = x.is_finite() && if allow_zero { x >= 0.0 } else { x > 0.0 };
        if !ok {
            let bound = if allow_zero { ">= 0" } else { "> 0" };
            return Err(usage("alpha_sq", &format!("{x} must be {bound}")));
        }
    }
    Ok(a)
}

fn usage(field: &'static str, reason: &str) -> CliError {
    CliError::Core(OimError::InvalidParameter {
        field,
        reason: reason.to_string(),
    })
}

/// Prior for the binary commands; checks every alpha against the strategy
/// domain up front.
fn binary_prior(s: &Settings, alphas: &[f64]) -> Result<f64, CliError> {
    let p = s.p(0.5);
    for &a in alphas {
        StrategySpec::new(a, p, 1.0, 0.5)?;
    }
    Ok(p)
}

fn targets(s: &Settings, default: &[f64]) -> Result<Vec<f64>, CliError> {
    let t = s.pi().unwrap_or_else(|| default.to_vec());
    if let Some(&bad) = t.iter().find(|x| !(0.0..1.0).contains(*x)) {
        return Err(usage("pi", &format!("{bad} must lie in [0, 1)")));
    }
    Ok(t)
}

fn solver_options(s: &Settings, n_bins: usize) -> Result<SolverOptions, CliError> {
    let tol = s.tol(SolverOptions::default().tol);
    if !(tol > 0.0 && tol < 1.0) {
        return Err(usage("tol", &format!("{tol} must lie in (0, 1)")));
    }
    Ok(SolverOptions {
        tol,
        ..SolverOptions::with_bins(n_bins)
    })
}

/// The given seed, or a fresh one that is reported on stderr and recorded
/// in the output configuration.
fn seed(s: &Settings) -> u64 {
    s.seed().unwrap_or_else(|| {
        let seed = rand::random::<u64>();
        eprintln!("no --seed given; using generated seed {seed}");
        seed
    })
}

fn ensemble_settings(s: &Settings) -> Result<(u64, usize), CliError> {
    let trials = s.trials(DEFAULT_TRIALS);
    let batches = s.batches(DEFAULT_BATCHES);
    if trials == 0 {
        return Err(usage("trials", "must be >= 1"));
    }
    if batches == 0 || batches as u64 > trials {
        return Err(usage(
            "batches",
            &format!("{batches} must lie in 1..={trials}"),
        ));
    }
    Ok((trials, batches))
}

fn failure(alpha_sq: f64, target: f64, e: &OimError) -> Failure {
    Failure {
        alpha_sq,
        target,
        error: e.to_string(),
        code: crate::core_exit_code(e),
    }
}

/// Ideal-device design for `target`, executed later under the actual
/// device model.
fn design(a: f64, p: f64, target: f64, opts: &SolverOptions) -> Result<StrategySpec, OimError> {
    solver::solve_strategy(a, p, target, opts)
}

pub fn bounds(s: &Settings) -> Result<Report, CliError> {
    let alphas = alphas(s, true)?;
    let p = s.p(0.5);
    bounds::helstrom_error(0.0, p)?;
    let mut table = Table::new(&["alpha_sq", "p", "helstrom", "idp", "homodyne"]);
    for &a in &alphas {
        table.push(vec![
            a.into(),
            p.into(),
            bounds::helstrom_error(a, p)?.into(),
            bounds::idp_bound(a).into(),
            bounds::homodyne_error(a).into(),
        ]);
    }
    Ok(Report {
        command: "bounds",
        config: json!({"command": "bounds", "alpha_sq": alphas, "p": p}),
        table,
        failures: Vec::new(),
    })
}

pub fn tradeoff(s: &Settings) -> Result<Report, CliError> {
    let alphas = alphas(s, false)?;
    let p = binary_prior(s, &alphas)?;
    let imp = s.imperfections(oim_core::model::DEFAULT_BINS)?;
    let opts = solver_options(s, imp.n_bins)?;
    let explicit = s.pi().map(|_| targets(s, &[])).transpose()?;
    let points = s.pi_points(DEFAULT_PI_POINTS);
    if explicit.is_none() && points == 0 {
        return Err(usage("pi_points", "must be >= 1"));
    }
    let mut table = Table::new(&[
        "alpha_sq",
        "target_pi",
        "achieved_pi",
        "achieved_pe",
        "t1",
        "v",
        "n0",
    ]);
    let mut failures = Vec::new();
    let mut grids = Vec::new();
    for &a in &alphas {
        // Without explicit targets the grid spans [0, P_I) of the ideal
        // zero-error end of the frontier.
        let grid = match &explicit {
            Some(g) => g.clone(),
            None => {
                let (_, usd) = solver::usd_endpoint(a, p, &opts)?;
                (0..points)
                    .map(|i| i as f64 / points as f64 * usd.p_i)
                    .collect()
            }
        };
        let curve = solver::tradeoff_curve(a, p, &grid, &imp, &opts)?;
        for pt in &curve.points {
            table.push(vec![
                a.into(),
                pt.target_pi.into(),
                pt.achieved_pi.into(),
                pt.achieved_pe.into(),
                pt.t1.into(),
                pt.v.into(),
                pt.n0.into(),
            ]);
        }
        failures.extend(curve.failures.iter().map(|(t, e)| failure(a, *t, e)));
        grids.push(grid);
    }
    Ok(Report {
        command: "tradeoff",
        config: json!({
            "command": "tradeoff", "alpha_sq": alphas, "p": p, "pi": grids,
            "imperfections": imp, "tol": opts.tol,
        }),
        table,
        failures,
    })
}

pub fn montecarlo(s: &Settings) -> Result<Report, CliError> {
    let alphas = alphas(s, false)?;
    let p = binary_prior(s, &alphas)?;
    let imp = s.imperfections(oim_core::model::DEFAULT_BINS)?;
    let opts = solver_options(s, imp.n_bins)?;
    let targets = targets(s, &[0.2])?;
    let (trials, batches) = ensemble_settings(s)?;
    let dump_limit = s.flags.dump_limit.unwrap_or(DEFAULT_DUMP_LIMIT);
    let seed = seed(s);
    let config = json!({
        "command": "montecarlo", "alpha_sq": alphas, "p": p, "pi": targets,
        "imperfections": imp, "trials": trials, "batches": batches, "seed": seed,
        "tol": opts.tol,
    });

    let mut table = Table::new(&[
        "alpha_sq",
        "target_pi",
        "t1",
        "v",
        "achieved_pc",
        "achieved_pi",
        "achieved_pe",
        "se_pc",
        "se_pi",
        "se_pe",
        "batch_sd_pi",
        "batch_sd_pe",
        "evolution_pi",
        "evolution_pe",
        "n_trials",
        "n_batches",
        "master_seed",
    ]);
    let mut dump = Table::new(&[
        "alpha_sq",
        "target_pi",
        "trial",
        "true_state",
        "mode1_hypothesis",
        "outcome",
        "n1_final",
        "n2_final",
        "detections",
    ]);
    let mut failures = Vec::new();
    for &a in &alphas {
        for &target in &targets {
            let spec = match design(a, p, target, &opts) {
                Ok(spec) => spec,
                Err(e) => {
                    failures.push(failure(a, target, &e));
                    continue;
                }
            };
            let wf = build_waveform(&spec, &imp);
            let stats = run_ensemble(&spec, &wf, &imp, trials, seed, batches)?;
            let evo = evolution::evolve_final(&spec, &wf, &imp)?;
            table.push(vec![
                a.into(),
                target.into(),
                spec.t1.into(),
                spec.v.into(),
                stats.p_c.into(),
                stats.p_i.into(),
                stats.p_e.into(),
                stats.se_c.into(),
                stats.se_i.into(),
                stats.se_e.into(),
                stats.batch_sd.p_i.into(),
                stats.batch_sd.p_e.into(),
                evo.p_i.into(),
                evo.p_e.into(),
                trials.into(),
                batches.into(),
                Cell::Text(seed.to_string()),
            ]);
            if s.flags.dump_trials.is_some() {
                let n = dump_limit.min(trials);
                for (i, r) in trial_records(&spec, &wf, &imp, seed, 0..n)
                    .iter()
                    .enumerate()
                {
                    let hex: String = r
                        .packed_detections()
                        .iter()
                        .map(|b| format!("{b:02x}"))
                        .collect();
                    dump.push(vec![
                        a.into(),
                        target.into(),
                        i.into(),
                        i64::from(r.true_state).into(),
                        i64::from(r.mode1_hypothesis).into(),
                        outcome_name(r.outcome).into(),
                        u64::from(r.n1_final).into(),
                        u64::from(r.n2_final).into(),
                        Cell::Text(hex),
                    ]);
                }
            }
        }
    }
    if let Some(path) = &s.flags.dump_trials {
        output::write(path, dump.to_csv(&config).as_bytes())?;
    }
    Ok(Report {
        command: "montecarlo",
        config,
        table,
        failures,
    })
}

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Correct => "correct",
        Outcome::Error => "error",
        Outcome::Inconclusive => "inconclusive",
    }
}

pub fn dolinar(s: &Settings) -> Result<Report, CliError> {
    let default: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let alphas = {
        let a = s.alpha_sq(default);
        for &x in &a {
            if !(x > 0.0 && x.is_finite()) {
                return Err(usage("alpha_sq", &format!("{x} must be > 0")));
            }
        }
        a
    };
    let p = binary_prior(s, &alphas)?;
    let imp = s.imperfections(oim_core::model::DEFAULT_BINS)?;
    let (trials, batches) = ensemble_settings(s)?;
    let seed = seed(s);
    let mut table = Table::new(&[
        "alpha_sq",
        "pe_mc",
        "se_pe",
        "pe_evolution",
        "helstrom_ideal",
        "helstrom_eta",
        "homodyne_ideal",
        "homodyne_eta",
    ]);
    for &a in &alphas {
        let spec = StrategySpec::dolinar(a, p)?;
        let wf = build_waveform(&spec, &imp);
        let stats = run_ensemble(&spec, &wf, &imp, trials, seed, batches)?;
        let evo = evolution::evolve_final(&spec, &wf, &imp)?;
        table.push(vec![
            a.into(),
            stats.p_e.into(),
            stats.se_e.into(),
            evo.p_e.into(),
            bounds::helstrom_error(a, p)?.into(),
            bounds::helstrom_error(imp.eta * a, p)?.into(),
            bounds::homodyne_error(a).into(),
            bounds::homodyne_error(imp.eta * a).into(),
        ]);
    }
    Ok(Report {
        command: "dolinar",
        config: json!({
            "command": "dolinar", "alpha_sq": alphas, "p": p, "imperfections": imp,
            "trials": trials, "batches": batches, "seed": seed,
        }),
        table,
        failures: Vec::new(),
    })
}

/// Shared setup of the single-strategy commands.
struct Design {
    alphas: Vec<f64>,
    p: f64,
    targets: Vec<f64>,
    imp: ImperfectionModel,
    opts: SolverOptions,
}

fn designed_strategies(s: &Settings, default_pi: f64) -> Result<Design, CliError> {
    let alphas = alphas(s, false)?;
    let p = binary_prior(s, &alphas)?;
    let imp = s.imperfections(oim_core::model::DEFAULT_BINS)?;
    let opts = solver_options(s, imp.n_bins)?;
    let targets = targets(s, &[default_pi])?;
    Ok(Design {
        alphas,
        p,
        targets,
        imp,
        opts,
    })
}

fn strategy_config(
    command: &str,
    alphas: &[f64],
    p: f64,
    targets: &[f64],
    imp: &ImperfectionModel,
    tol: f64,
) -> Value {
    json!({
        "command": command, "alpha_sq": alphas, "p": p, "pi": targets,
        "imperfections": imp, "tol": tol,
    })
}

pub fn waveform(s: &Settings) -> Result<Report, CliError> {
    let Design {
        alphas,
        p,
        targets,
        imp,
        opts,
    } = designed_strategies(s, 0.19)?;
    let mut table = Table::new(&[
        "alpha_sq",
        "target_pi",
        "t1",
        "v",
        "bin_index",
        "t_mid",
        "mag_ideal",
        "mag_applied",
        "mode",
    ]);
    let mut failures = Vec::new();
    for &a in &alphas {
        for &target in &targets {
            let spec = match design(a, p, target, &opts) {
                Ok(spec) => spec,
                Err(e) => {
                    failures.push(failure(a, target, &e));
                    continue;
                }
            };
            let wf = build_waveform(&spec, &imp);
            for (k, b) in wf.bins.iter().enumerate() {
                table.push(vec![
                    a.into(),
                    target.into(),
                    spec.t1.into(),
                    spec.v.into(),
                    k.into(),
                    b.t_mid.into(),
                    b.mag_ideal.into(),
                    b.mag_applied.into(),
                    b.mode.as_str().into(),
                ]);
            }
        }
    }
    Ok(Report {
        command: "waveform",
        config: strategy_config("waveform", &alphas, p, &targets, &imp, opts.tol),
        table,
        failures,
    })
}

pub fn evolve(s: &Settings) -> Result<Report, CliError> {
    let Design {
        alphas,
        p,
        targets,
        imp,
        opts,
    } = designed_strategies(s, 0.31)?;
    let mut table = Table::new(&["alpha_sq", "target_pi", "t", "p_c", "p_e", "p_i"]);
    let mut failures = Vec::new();
    for &a in &alphas {
        for &target in &targets {
            let spec = match design(a, p, target, &opts) {
                Ok(spec) => spec,
                Err(e) => {
                    failures.push(failure(a, target, &e));
                    continue;
                }
            };
            let trace = evolution::evolve(&spec, &build_waveform(&spec, &imp), &imp)?;
            for (t, x) in trace.times.iter().zip(&trace.triples) {
                table.push(vec![
                    a.into(),
                    target.into(),
                    (*t).into(),
                    x.p_c.into(),
                    x.p_e.into(),
                    x.p_i.into(),
                ]);
            }
        }
    }
    Ok(Report {
        command: "evolve",
        config: strategy_config("evolve", &alphas, p, &targets, &imp, opts.tol),
        table,
        failures,
    })
}

pub fn tpsk(s: &Settings) -> Result<Report, CliError> {
    let alphas = alphas(s, false)?;
    let m = s.m(3);
    let fs = s.f(vec![0.66, 0.90]);
    let pair_prior = s.pair_prior();
    let n_bins = s
        .flags
        .n_bins
        .or(s.file.n_bins)
        .unwrap_or(oim_core::model::DEFAULT_BINS);
    let opts = solver_options(s, n_bins)?;
    let explicit = s.pi().map(|_| targets(s, &[])).transpose()?;
    let points = s.pi_points(DEFAULT_PI_POINTS);
    if explicit.is_none() && points == 0 {
        return Err(usage("pi_points", "must be >= 1"));
    }
    for &a in &alphas {
        for &f in &fs {
            MpskConfig::new(m, a, f, 0.0)?;
        }
    }

    let mut table = Table::new(&[
        "m",
        "alpha_sq",
        "f",
        "target_pi2",
        "p_i_stage1",
        "p_i_total",
        "p_e",
        "conditional_error",
        "heterodyne_conditional_error",
    ]);
    let mut failures = Vec::new();
    for &a in &alphas {
        let het = HeterodyneTable::new(m, a, HETERODYNE_GRID)?;
        for &f in &fs {
            // Default budgets span [0, P_conc) of the elimination stage.
            let budgets = match &explicit {
                Some(g) => g.clone(),
                None => {
                    let p_conc = 1.0 - mpsk::min_inconclusive_prob(m, a, f)?;
                    (0..points)
                        .map(|i| i as f64 / points as f64 * p_conc)
                        .collect()
                }
            };
            for target in budgets {
                let config = MpskConfig {
                    pair_prior,
                    ..MpskConfig::new(m, a, f, target)?
                };
                let r = match mpsk::hybrid_tpsk(&config, &opts) {
                    Ok(r) => r,
                    Err(e) => {
                        failures.push(failure(a, target, &e));
                        continue;
                    }
                };
                let baseline = if r.p_i_total < 1.0 {
                    het.conditional_error(r.p_i_total)?
                } else {
                    f64::NAN
                };
                table.push(vec![
                    m.into(),
                    a.into(),
                    f.into(),
                    target.into(),
                    r.p_i_stage1.into(),
                    r.p_i_total.into(),
                    r.p_e.into(),
                    r.conditional_error.into(),
                    baseline.into(),
                ]);
            }
        }
    }
    Ok(Report {
        command: "tpsk",
        config: json!({
            "command": "tpsk", "m": m, "alpha_sq": alphas, "f": fs,
            "pi": explicit, "pi_points": points, "pair_prior": pair_prior,
            "n_bins": n_bins, "tol": opts.tol,
        }),
        table,
        failures,
    })
}

pub fn mpsk_scaling(s: &Settings) -> Result<Report, CliError> {
    let (m_min, m_max) = (s.m_min(3), s.m_max(8));
    if m_min > m_max {
        return Err(usage("m_min", &format!("{m_min} exceeds m_max {m_max}")));
    }
    let per_bit = s.per_bit(vec![0.2, 0.4, 0.6, 0.8, 1.0]);
    let mut table = Table::new(&[
        "m",
        "alpha_sq_per_bit",
        "alpha_sq",
        "p_i_stage1",
        "log10_p_conc_max",
    ]);
    let studies = per_bit
        .iter()
        .map(|&e| mpsk::scaling_study(m_min..=m_max, e))
        .collect::<Result<Vec<_>, _>>()?;
    for pt in studies.iter().flatten() {
        table.push(vec![
            pt.m.into(),
            pt.alpha_sq_per_bit.into(),
            pt.alpha_sq.into(),
            pt.p_i_stage1.into(),
            pt.log10_p_conc_max.into(),
        ]);
    }
    Ok(Report {
        command: "mpsk-scaling",
        config: json!({
            "command": "mpsk-scaling", "m_min": m_min, "m_max": m_max, "per_bit": per_bit,
        }),
        table,
        failures: Vec::new(),
    })
}

pub fn gap(s: &Settings) -> Result<Report, CliError> {
    let alphas = alphas(s, false)?;
    let n_bins = s.flags.n_bins.or(s.file.n_bins).unwrap_or(GAP_BINS);
    let opts = solver_options(s, n_bins)?;
    let r_values = s.r_values(vec![10.0, 30.0, 100.0, 300.0, 1000.0]);
    if let Some(&bad) = r_values.iter().find(|r| !(**r > 1.0)) {
        return Err(usage("r_values", &format!("{bad} must be > 1")));
    }
    let mut table = Table::new(&["alpha_sq", "r", "delta_pe", "delta_pi", "g_sq"]);
    for &a in &alphas {
        for g in solver::gap_scaling(a, &r_values, &opts)? {
            table.push(vec![
                a.into(),
                g.r.into(),
                g.delta_pe.into(),
                g.delta_pi.into(),
                g.g_sq.into(),
            ]);
        }
    }
    Ok(Report {
        command: "gap",
        config: json!({
            "command": "gap", "alpha_sq": alphas, "p": 0.5, "r_values": r_values,
            "n_bins": n_bins, "tol": opts.tol,
        }),
        table,
        failures: Vec::new(),
    })
}
