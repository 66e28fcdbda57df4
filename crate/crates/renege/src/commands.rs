//! The four subcommands.

use std::fs;
use std::path::PathBuf;

use renege_core::age_posterior::{age_density_given_n, posterior_age};
use renege_core::equilibrium::{BestResponseReport, EquilibriumSolver, NmaxOutcome, SDiagnostics, ArrivalUtility};
use renege_core::simulator::{AgeWindow, Coordinate, Deviation, SimConfig, SimEstimate};
use renege_core::steady_state::BalanceResiduals;
use renege_core::utility::{type2_margin, u_type1};
use renege_core::{MarketParams, ServiceModel, SteadyState, Threshold, ThresholdProfile};
use serde::Serialize;

use crate::checks::{self, Check};
use crate::config::{with_parameter, RunConfig};
use crate::output::{sig6, write_csv, write_json};
use crate::replicate::{run_replications, trace_lines};
use crate::CliError;

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: PathBuf,
    pub curves: bool,
    pub seed: Option<u64>,
    pub horizon: Option<u64>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            cfg.simulation.seed = s;
        }
        if let Some(h) = self.horizon {
            cfg.simulation.horizon_events = h;
            if cfg.simulation.warmup_events.is_some_and(|w| w >= h) {
                cfg.simulation.warmup_events = None;
            }
        }
        if let Some(t) = self.tol {
            cfg.solver.eps_root = t;
        }
        cfg.validate()
    }
}

fn build_model(cfg: &RunConfig) -> Result<ServiceModel, CliError> {
    let model = cfg.model.build()?;
    if !model.is_imrl() {
        return Err(CliError::Model("model failed IMRL certification".into()));
    }
    Ok(model)
}

fn solver(cfg: &RunConfig) -> Result<EquilibriumSolver, CliError> {
    Ok(EquilibriumSolver::new(cfg.params(), build_model(cfg)?, cfg.solver.options()?)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub n_max: NmaxOutcome,
    pub arrival_utilities: Vec<ArrivalUtility>,
    pub s_thresholds: Vec<SDiagnostics>,
    pub pi: Option<Vec<f64>>,
    pub balance: Option<BalanceResiduals>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveOutput {
    pub n_max: usize,
    #[serde(rename = "T")]
    pub t: Vec<Threshold>,
    #[serde(rename = "S")]
    pub s: Vec<Threshold>,
    pub diagnostics: Diagnostics,
}

pub struct Solved {
    pub profile: ThresholdProfile,
    pub steady: Option<SteadyState>,
    pub diagnostics: Diagnostics,
}

pub fn solve(cfg: &RunConfig) -> Result<Solved, CliError> {
    let solver = solver(cfg)?;
    if let Some(n) = cfg.solver.n_max {
        let (profile, diag) = solver.profile_with_diagnostics(n)?;
        let steady = solver.steady_state(&profile)?;
        let balance = steady.balance_residuals().ok();
        return Ok(Solved {
            diagnostics: Diagnostics {
                n_max: NmaxOutcome::Exact(n),
                arrival_utilities: Vec::new(),
                s_thresholds: diag,
                pi: Some(steady.pi.clone()),
                balance,
            },
            profile,
            steady: Some(steady),
        });
    }
    let eq = solver.solve()?;
    let balance = eq.steady.as_ref().and_then(|s| s.balance_residuals().ok());
    Ok(Solved {
        diagnostics: Diagnostics {
            n_max: eq.n_max,
            arrival_utilities: eq.arrival_utilities,
            s_thresholds: eq.s_diagnostics,
            pi: eq.steady.as_ref().map(|s| s.pi.clone()),
            balance,
        },
        profile: eq.profile,
        steady: eq.steady,
    })
}

/// `n_max=3 T1=7.73704 S1=7.19812 S2=3.92752`.
pub fn profile_row(profile: &ThresholdProfile, outcome: NmaxOutcome) -> String {
    let mut row = match outcome {
        NmaxOutcome::Exact(n) => format!("n_max={n}"),
        NmaxOutcome::AtLeast { lower, upper } => format!("n_max>={lower} (<= {upper})"),
    };
    for (i, t) in profile.t.iter().enumerate() {
        row += &format!(" T{}={}", i + 1, sig6(t.value()));
    }
    for (i, s) in profile.s.iter().enumerate() {
        row += &format!(" S{}={}", i + 1, sig6(s.value()));
    }
    row
}

pub fn cmd_solve(cfg: &RunConfig, o: &Overrides) -> Result<(), CliError> {
    let solved = solve(cfg)?;
    println!("{}", profile_row(&solved.profile, solved.diagnostics.n_max));
    if let Some(pi) = &solved.diagnostics.pi {
        let cells: Vec<String> = pi.iter().enumerate().map(|(n, p)| format!("pi{n}={}", sig6(*p))).collect();
        println!("{}", cells.join(" "));
    }
    let out = SolveOutput {
        n_max: solved.profile.n_max,
        t: solved.profile.t.clone(),
        s: solved.profile.s.clone(),
        diagnostics: solved.diagnostics.clone(),
    };
    write_json(&o.out, "profile.json", &out)?;
    if o.curves {
        if let Some(st) = &solved.steady {
            write_curves(st, o)?;
        } else {
            eprintln!("curves skipped: no analytic steady state for this balking level");
        }
    }
    Ok(())
}

fn write_curves(st: &SteadyState, o: &Overrides) -> Result<(), CliError> {
    let marg = st.age_marginals();
    let header: Vec<String> = ["a", "p0", "p01", "p012", "p1", "p12"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<f64>> = (0..marg.nodes.len())
        .map(|i| vec![marg.nodes[i], marg.p0[i], marg.p01[i], marg.p012[i], marg.p1[i], marg.p12[i]])
        .collect();
    write_csv(&o.out, "steady_state.csv", &header, &rows)?;
    let header: Vec<String> = ["t", "a", "density"].iter().map(|s| s.to_string()).collect();
    let params = *st.params();
    let model = st.model().clone();
    let mut utility_rows = Vec::new();
    for n in 1..=2usize.min(st.n_max.saturating_sub(1)) {
        let s_n = st.profile().s_n(n);
        let top = if s_n.is_finite() { s_n } else { 30.0 * model.mean() };
        let mut rows = Vec::new();
        let prior = age_density_given_n(n, st)?;
        for (a, d) in prior.nodes.iter().zip(&prior.density) {
            rows.push(vec![f64::NAN, *a, *d]);
        }
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let post = posterior_age(n, frac * top, st)?;
            for (a, d) in post.nodes.iter().zip(&post.density) {
                rows.push(vec![frac * top, *a, *d]);
            }
        }
        write_csv(&o.out, &format!("posterior_n{n}.csv"), &header, &rows)?;
        for i in 0..=40 {
            let t = top * i as f64 / 40.0;
            let u2 = match posterior_age(n, t, st) {
                Ok(p) => type2_margin(&params, &model, n, &p)?,
                Err(_) => f64::NAN,
            };
            utility_rows.push(vec![n as f64, t, u_type1(&params, &model, n, t).unwrap_or(f64::NAN), u2]);
        }
    }
    let header: Vec<String> = ["n", "t", "u_type1", "u_type2_margin"].iter().map(|s| s.to_string()).collect();
    write_csv(&o.out, "utility_curves.csv", &header, &utility_rows)?;
    Ok(())
}

pub fn sim_config(cfg: &RunConfig, model: &ServiceModel, profile: &ThresholdProfile, deviations: Vec<Deviation>) -> SimConfig {
    let s = &cfg.simulation;
    let mut sc = SimConfig::new(cfg.params(), model.clone(), profile.clone(), s.horizon_events, s.seed);
    if let Some(w) = s.warmup_events {
        sc.warmup_events = w;
    }
    sc.batches = s.batches;
    sc.deviations = deviations;
    sc.y_windows = vec![AgeWindow { n: 1, lo: 0.45, hi: 0.55 }, AgeWindow { n: 2, lo: 0.45, hi: 0.55 }];
    sc
}

fn resolve_deviations(cfg: &RunConfig, profile: &ThresholdProfile, default: bool) -> Result<Vec<Deviation>, CliError> {
    match &cfg.deviations {
        Some(list) => list.iter().map(|d| d.resolve(profile)).collect(),
        None if default => Ok(default_deviations(profile, 0.5)),
        None => Ok(Vec::new()),
    }
}

/// `x ± delta` for every finite threshold.
pub fn default_deviations(profile: &ThresholdProfile, delta: f64) -> Vec<Deviation> {
    let mut out = Vec::new();
    let coords = (1..profile.n_max)
        .map(|n| (Coordinate::S(n), profile.s_n(n)))
        .chain((1..profile.n_max.saturating_sub(1)).map(|n| (Coordinate::T(n), profile.t_n(n))));
    for (c, x) in coords {
        if x.is_finite() {
            out.push(Deviation { coordinate: c, value: (x - delta).max(0.0) });
            out.push(Deviation { coordinate: c, value: x + delta });
        }
    }
    out
}

fn simulate(cfg: &RunConfig, model: &ServiceModel, profile: &ThresholdProfile, deviations: Vec<Deviation>) -> Result<SimEstimate, CliError> {
    if !profile.is_resolved() {
        return Err(CliError::Config("profile has unresolved thresholds".into()));
    }
    let sc = sim_config(cfg, model, profile, deviations);
    if let Some(path) = &cfg.simulation.trace_path {
        let lines = trace_lines(&sc, 1_000_000)?;
        fs::write(path, lines.join("\n") + "\n")?;
    }
    Ok(run_replications(&sc, cfg.simulation.replications)?)
}

pub fn cmd_simulate(cfg: &RunConfig, o: &Overrides) -> Result<(), CliError> {
    let profile = cfg.given_profile()?.ok_or_else(|| CliError::Config("simulate needs profile or profile_path".into()))?;
    let model = build_model(cfg)?;
    let deviations = resolve_deviations(cfg, &profile, false)?;
    let est = simulate(cfg, &model, &profile, deviations)?;
    for (n, e) in est.pi_hat().iter().enumerate() {
        println!("pi{n}={} se={}", sig6(e.mean), sig6(e.se));
    }
    write_json(&o.out, "sim_estimate.json", &est)?;
    let header: Vec<String> = ["n", "lo", "hi", "count", "density"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for n in 1..est.age_histograms.len() {
        let h = est.estimate_age_given_n(n);
        for (i, c) in h.histogram.counts.iter().enumerate() {
            let (lo, hi) = h.histogram.bin_edges(i);
            rows.push(vec![n as f64, lo, hi, *c as f64, h.density[i]]);
        }
    }
    write_csv(&o.out, "age_histograms.csv", &header, &rows)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub profile: ThresholdProfile,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

pub fn verify(cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let model = build_model(cfg)?;
    let solver = solver(cfg)?;
    let profile = match cfg.given_profile()? {
        Some(p) => p,
        None => solve(cfg)?.profile,
    };
    let steady = solver.steady_state(&profile)?;
    let deviations = resolve_deviations(cfg, &profile, true)?;
    let est = simulate(cfg, &model, &profile, deviations)?;
    let mut all = checks::occupancy_checks(&est, &steady, 3.0);
    for n in 1..=2.min(profile.n_max) {
        all.push(checks::age_check(&est, &steady, n, 0.05)?);
    }
    if profile.n_max >= 3 {
        all.push(checks::gap_check(&est, &steady, AgeWindow { n: 2, lo: 0.45, hi: 0.55 }, 0.05)?);
    }
    all.extend(checks::threshold_checks(&est, 2.0));
    all.extend(checks::deviation_checks(&BestResponseReport::from_estimate(&est)));
    let all_pass = all.iter().all(|c| c.pass);
    Ok(VerifyReport { profile, checks: all, all_pass })
}

pub fn cmd_verify(cfg: &RunConfig, o: &Overrides) -> Result<(), CliError> {
    let report = verify(cfg)?;
    for c in &report.checks {
        println!(
            "{} {} statistic={} limit={} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            sig6(c.statistic),
            sig6(c.limit),
            c.detail
        );
    }
    write_json(&o.out, "verify_report.json", &report)?;
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}

pub fn cmd_sweep(cfg: &RunConfig, o: &Overrides) -> Result<(), CliError> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep section missing".into()))?;
    if sweep.values.is_empty() {
        return Err(CliError::Config("sweep: empty range".into()));
    }
    let mut results = Vec::new();
    for &v in &sweep.values {
        let c = with_parameter(cfg, &sweep.parameter, v)?;
        let solved = solve(&c)?;
        println!("{}={} {}", sweep.parameter, sig6(v), profile_row(&solved.profile, solved.diagnostics.n_max));
        results.push((v, solved));
    }
    let width_t = results.iter().map(|(_, s)| s.profile.t.len()).max().unwrap_or(0);
    let width_s = results.iter().map(|(_, s)| s.profile.s.len()).max().unwrap_or(0);
    let mut header = vec![sweep.parameter.clone(), "n_max".into(), "n_max_exact".into()];
    header.extend((1..=width_t).map(|i| format!("T{i}")));
    header.extend((1..=width_s).map(|i| format!("S{i}")));
    let rows: Vec<Vec<f64>> = results
        .iter()
        .map(|(v, s)| {
            let mut row = vec![*v, s.profile.n_max as f64, if s.diagnostics.n_max.is_exact() { 1.0 } else { 0.0 }];
            row.extend((0..width_t).map(|i| s.profile.t.get(i).map_or(f64::NAN, |x| x.value())));
            row.extend((0..width_s).map(|i| s.profile.s.get(i).map_or(f64::NAN, |x| x.value())));
            row
        })
        .collect();
    write_csv(&o.out, "sweep.csv", &header, &rows)?;
    Ok(())
}

/// Market and model of a config, for callers that bypass the commands.
pub fn market_and_model(cfg: &RunConfig) -> Result<(MarketParams, ServiceModel), CliError> {
    Ok((cfg.params(), build_model(cfg)?))
}
