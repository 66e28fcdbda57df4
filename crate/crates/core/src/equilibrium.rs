//! Equilibrium profile: type-I thresholds, type-II thresholds and the
//! balking level.
//!
//! `T_n` solves `G_n(t) = 0` directly. `S_n` depends only on `S_1..S_{n-1}`
//! and `T_1..T_{n-1}`, so it is found in the chain truncated at `n + 1`,
//! where arrivals finding `n` are the last to join: for each candidate the
//! steady state is re-solved and the posterior utility at `t = S_n` is
//! evaluated. The balking level is scanned upward from `n = 1`.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::age_posterior::{age_density_given_n, posterior_age};
use crate::distributions::ServiceModel;
use crate::numerics::{find_root_with, RootOptions, Tolerance};
use crate::profile::{Threshold, ThresholdProfile};
use crate::simulator::{self, Deviation, DeviationStat, Estimate, SimConfig, SimEstimate};
use crate::steady_state::{solve_steady_state, SteadyOptions, SteadyState};
use crate::utility::{g_value, type2_margin, MarketParams};
use crate::{Error, Result};

/// Largest balking level handled by the analytic chain.
pub const ANALYTIC_N_MAX: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: Tolerance,
    pub steady: SteadyOptions,
    /// Cap on outer iterations per `S_n`.
    pub max_outer: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        let tol = Tolerance::default();
        Self { tol, steady: SteadyOptions { points: 400, tol }, max_outer: 60 }
    }
}

impl SolverOptions {
    pub fn with_points(points: usize) -> Self {
        let mut o = Self::default();
        o.steady.points = points;
        o
    }
}

/// Outcome of the balking-level scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NmaxOutcome {
    Exact(usize),
    /// Arrivals finding `lower - 1` still gain by joining, but the chain
    /// needed to test `lower` is beyond the analytic range. `upper` is the
    /// coarse bound `⌊V/(C x̄)⌋ + 1`.
    AtLeast { lower: usize, upper: usize },
}

impl NmaxOutcome {
    /// The exact level, or the lower bound.
    pub fn value(self) -> usize {
        match self {
            NmaxOutcome::Exact(n) => n,
            NmaxOutcome::AtLeast { lower, .. } => lower,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, NmaxOutcome::Exact(_))
    }
}

/// `Û_n(0)` recorded during the scan.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArrivalUtility {
    pub n: usize,
    pub utility: f64,
    pub expected_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SDiagnostics {
    pub n: usize,
    pub iterations: usize,
    /// `u_type2(n, S_n)` before clamping, under the converged steady state.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub profile: ThresholdProfile,
    pub n_max: NmaxOutcome,
    pub arrival_utilities: Vec<ArrivalUtility>,
    pub s_diagnostics: Vec<SDiagnostics>,
    /// Steady state of the returned profile when it is analytic.
    pub steady: Option<SteadyState>,
}

fn require_imrl(model: &ServiceModel) -> Result<()> {
    if model.is_imrl() {
        Ok(())
    } else {
        Err(Error::NotImrl)
    }
}

/// `V/C - (n-1) x̄`: the residual level at which `G_n` vanishes.
fn residual_level(params: &MarketParams, model: &ServiceModel, n: usize) -> f64 {
    params.v / params.c - (n as f64 - 1.0) * model.mean()
}

pub fn solve_t_threshold(params: &MarketParams, model: &ServiceModel, n: usize) -> Result<Threshold> {
    require_imrl(model)?;
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("T_n needs n >= 1".into()));
    }
    if model.mrl_limit() <= residual_level(params, model, n) {
        return Ok(Threshold::Never);
    }
    let g = |t: f64| g_value(params, model, n, t);
    if g(0.0)? <= 0.0 {
        return Ok(Threshold::At(0.0));
    }
    let end = model.support_end();
    let mut hi = model.mean().max(1e-6);
    loop {
        if hi >= end {
            hi = end * (1.0 - 1e-12);
            break;
        }
        if g(hi)? <= 0.0 {
            break;
        }
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::RootNotBracketed);
        }
    }
    let mut err = None;
    let root = find_root_with(
        |t| match g(t) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        hi,
        RootOptions { xtol: 1e-10, ftol: 1e-10, max_iter: 400 },
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(Threshold::At(root?))
}

/// `T_1..T_{n_max-2}`.
pub fn t_sequence(params: &MarketParams, model: &ServiceModel, n_max: usize) -> Result<Vec<Threshold>> {
    (1..n_max.saturating_sub(1)).map(|n| solve_t_threshold(params, model, n)).collect()
}

/// `Û_n(0) = V - C (E[m_X(A) | N = n] + (n-1) x̄)` for an arrival finding `n`.
pub fn utility_at_arrival(n: usize, steady: &SteadyState) -> Result<ArrivalUtility> {
    let params = steady.params();
    let model = steady.model();
    if n == 0 {
        return Ok(ArrivalUtility { n, utility: params.v, expected_residual: 0.0 });
    }
    let prior = age_density_given_n(n, steady)?;
    let r = prior.expected_residual(model)?;
    Ok(ArrivalUtility { n, utility: params.v - params.c * (r + (n as f64 - 1.0) * model.mean()), expected_residual: r })
}

/// Coarse balking bound `⌊V/(C x̄)⌋ + 1`.
pub fn n_max_bound(params: &MarketParams, model: &ServiceModel) -> usize {
    (params.v / (params.c * model.mean())).floor() as usize + 1
}

fn truncated_profile(n_max: usize, t: &[Threshold], s: &[Threshold]) -> Result<ThresholdProfile> {
    ThresholdProfile::new(n_max, t[..n_max.saturating_sub(2)].to_vec(), s[..n_max - 1].to_vec())
}

/// Margin of a type-II customer who found `n`, evaluated at its own
/// threshold in the chain truncated at `n + 1` with `S_n = s`.
fn s_margin(
    params: &MarketParams,
    model: &ServiceModel,
    n: usize,
    s: f64,
    prior_s: &[Threshold],
    t: &[Threshold],
    opts: &SolverOptions,
) -> Result<(f64, SteadyState)> {
    let mut ss = prior_s[..n - 1].to_vec();
    ss.push(Threshold::At(s));
    let profile = truncated_profile(n + 1, t, &ss)?;
    let steady = solve_steady_state(&profile, params, model, &opts.steady)?;
    let margin = match posterior_age(n, s, &steady) {
        Ok(post) => type2_margin(params, model, n, &post)?,
        Err(Error::PosteriorUndefined) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok((margin, steady))
}

/// `S_n` given converged `S_1..S_{n-1}` and `T_1..T_{n-1}`. Returns the
/// threshold and the number of outer iterations.
pub fn solve_s_threshold(
    params: &MarketParams,
    model: &ServiceModel,
    n: usize,
    prior_s: &[Threshold],
    t: &[Threshold],
    opts: &SolverOptions,
) -> Result<(Threshold, usize)> {
    require_imrl(model)?;
    if n == 0 {
        return Err(Error::InvalidParameter("S_n needs n >= 1".into()));
    }
    if n >= ANALYTIC_N_MAX {
        return Err(Error::SimulationRequired(n + 1));
    }
    if prior_s.len() < n - 1 || t.len() < n - 1 {
        return Err(Error::InvalidParameter("S_n needs S_1..S_{n-1} and T_1..T_{n-1}".into()));
    }
    if model.mrl_limit() <= residual_level(params, model, n) {
        return Ok((Threshold::Never, 0));
    }
    let hi = match solve_t_threshold(params, model, n)? {
        Threshold::At(x) => x,
        _ => return Ok((Threshold::Never, 0)),
    };
    if hi <= 0.0 {
        return Ok((Threshold::At(0.0), 0));
    }
    let mut iterations = 0usize;
    let mut err = None;
    let (m0, _) = s_margin(params, model, n, 0.0, prior_s, t, opts)?;
    if m0 <= 0.0 {
        return Ok((Threshold::At(0.0), 1));
    }
    let root = find_root_with(
        |s| {
            iterations += 1;
            match s_margin(params, model, n, s, prior_s, t, opts) {
                Ok((m, _)) => m.min(1e6),
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        0.0,
        hi,
        RootOptions { xtol: opts.tol.eps_root * 1e-2, ftol: opts.tol.eps_root * 1e-1, max_iter: opts.max_outer },
    );
    if let Some(e) = err {
        return Err(e);
    }
    let root = root.map_err(|_| Error::FixedPointDidNotConverge)?;
    if iterations >= opts.max_outer + 2 {
        return Err(Error::FixedPointDidNotConverge);
    }
    Ok((Threshold::At(root), iterations + 1))
}

/// Profile with a fixed balking level `n_max ≤ 3`.
pub fn solve_profile(params: &MarketParams, model: &ServiceModel, n_max: usize, opts: &SolverOptions) -> Result<ThresholdProfile> {
    Ok(solve_profile_with_diagnostics(params, model, n_max, opts)?.0)
}

fn solve_profile_with_diagnostics(
    params: &MarketParams,
    model: &ServiceModel,
    n_max: usize,
    opts: &SolverOptions,
) -> Result<(ThresholdProfile, Vec<SDiagnostics>)> {
    require_imrl(model)?;
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    if n_max > ANALYTIC_N_MAX {
        return Err(Error::SimulationRequired(n_max));
    }
    let t = t_sequence(params, model, n_max.max(ANALYTIC_N_MAX))?;
    let mut s = Vec::new();
    let mut diag = Vec::new();
    for n in 1..n_max {
        let (th, iterations) = solve_s_threshold(params, model, n, &s, &t, opts)?;
        s.push(th);
        let margin = certify_s(params, model, n, &s, &t, opts)?;
        diag.push(SDiagnostics { n, iterations, margin });
    }
    Ok((ThresholdProfile::new(n_max, t[..n_max.saturating_sub(2)].to_vec(), s)?, diag))
}

fn certify_s(params: &MarketParams, model: &ServiceModel, n: usize, s: &[Threshold], t: &[Threshold], opts: &SolverOptions) -> Result<f64> {
    match s[n - 1] {
        Threshold::At(x) => Ok(s_margin(params, model, n, x, s, t, opts)?.0),
        _ => Ok(f64::INFINITY),
    }
}

/// Full pipeline. Beyond the analytic range the result carries the balking
/// lower bound, the type-I thresholds and `S_1, S_2`, with later type-II
/// entries left unresolved.
pub fn solve_equilibrium(params: &MarketParams, model: &ServiceModel, opts: &SolverOptions) -> Result<Equilibrium> {
    require_imrl(model)?;
    params.validate()?;
    opts.tol.validate()?;
    let bound = n_max_bound(params, model);
    let t_all = t_sequence(params, model, bound.max(ANALYTIC_N_MAX))?;
    let mut s: Vec<Threshold> = Vec::new();
    let mut utilities = Vec::new();
    let mut diag = Vec::new();
    let mut outcome = None;
    let mut steady = None;
    for n in 1..bound {
        if n > ANALYTIC_N_MAX {
            // IMRL brackets the arrival utility between the residual at age
            // zero and the limiting residual.
            let upper = params.v - params.c * n as f64 * model.mean();
            let lower = params.v - params.c * (model.mrl_limit() + (n as f64 - 1.0) * model.mean());
            if upper <= 0.0 {
                outcome = Some(NmaxOutcome::Exact(n));
                break;
            }
            if lower > 0.0 {
                s.push(Threshold::Never);
                continue;
            }
            outcome = Some(NmaxOutcome::AtLeast { lower: n, upper: bound });
            break;
        }
        let profile = truncated_profile(n, &t_all, &s)?;
        let st = solve_steady_state(&profile, params, model, &opts.steady)?;
        let u = utility_at_arrival(n, &st)?;
        utilities.push(u);
        if u.utility <= 0.0 {
            outcome = Some(NmaxOutcome::Exact(n));
            steady = Some(st);
            break;
        }
        if n < ANALYTIC_N_MAX {
            let (th, iterations) = solve_s_threshold(params, model, n, &s, &t_all, opts)?;
            s.push(th);
            diag.push(SDiagnostics { n, iterations, margin: certify_s(params, model, n, &s, &t_all, opts)? });
        } else if model.mrl_limit() <= residual_level(params, model, n) {
            s.push(Threshold::Never);
        } else {
            s.push(Threshold::Unresolved);
        }
    }
    let outcome = outcome.unwrap_or(NmaxOutcome::Exact(bound));
    let n_max = outcome.value();
    while s.len() < n_max - 1 {
        s.push(Threshold::Unresolved);
    }
    let profile = ThresholdProfile::new(n_max, t_all[..n_max.saturating_sub(2)].to_vec(), s[..n_max - 1].to_vec())?;
    if steady.is_none() && n_max <= ANALYTIC_N_MAX {
        steady = Some(solve_steady_state(&profile, params, model, &opts.steady)?);
    }
    Ok(Equilibrium { profile, n_max: outcome, arrival_utilities: utilities, s_diagnostics: diag, steady })
}

/// Balking level alone; see [`solve_equilibrium`].
pub fn solve_n_max(params: &MarketParams, model: &ServiceModel, opts: &SolverOptions) -> Result<NmaxOutcome> {
    Ok(solve_equilibrium(params, model, opts)?.n_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimBudget {
    pub horizon_events: u64,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviationCheck {
    pub deviation: Deviation,
    /// Deviating payoff minus the profile payoff for the same arrivals.
    pub gain: Estimate,
    pub deviating_payoff: Estimate,
    pub profile_payoff: Estimate,
    /// Gain exceeds two standard errors.
    pub improves: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BestResponseReport {
    pub checks: Vec<DeviationCheck>,
}

impl BestResponseReport {
    pub fn from_estimate(est: &SimEstimate) -> Self {
        Self { checks: est.deviations.iter().map(check_of).collect() }
    }

    pub fn is_nash(&self) -> bool {
        self.checks.iter().all(|c| !c.improves)
    }
}

fn check_of(d: &DeviationStat) -> DeviationCheck {
    let gain = d.delta.estimate();
    DeviationCheck {
        deviation: d.deviation,
        gain,
        deviating_payoff: d.tagged.estimate(),
        profile_payoff: d.base.estimate(),
        improves: gain.mean > 2.0 * gain.se,
    }
}

/// Simulated payoff of each single-coordinate deviation against a
/// population playing `profile`. Replications run sequentially.
pub fn verify_best_response(
    profile: &ThresholdProfile,
    params: &MarketParams,
    model: &ServiceModel,
    budget: &SimBudget,
    deviations: &[Deviation],
) -> Result<BestResponseReport> {
    if deviations.is_empty() {
        return Ok(BestResponseReport::default());
    }
    let mut merged: Option<SimEstimate> = None;
    for r in 0..budget.replications.max(1) {
        let mut cfg = SimConfig::new(*params, model.clone(), profile.clone(), budget.horizon_events, budget.seed + r as u64);
        cfg.deviations = deviations.to_vec();
        let est = simulator::run(&cfg)?;
        match merged.as_mut() {
            Some(m) => m.merge(&est),
            None => merged = Some(est),
        }
    }
    Ok(merged.map(|m| BestResponseReport::from_estimate(&m)).unwrap_or_default())
}

/// Convenience wrapper bundling the inputs of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolver {
    pub params: MarketParams,
    pub model: ServiceModel,
    pub options: SolverOptions,
}

impl EquilibriumSolver {
    pub fn new(params: MarketParams, model: ServiceModel, options: SolverOptions) -> Result<Self> {
        params.validate()?;
        options.tol.validate()?;
        require_imrl(&model)?;
        Ok(Self { params, model, options })
    }

    pub fn t_threshold(&self, n: usize) -> Result<Threshold> {
        solve_t_threshold(&self.params, &self.model, n)
    }

    pub fn profile(&self, n_max: usize) -> Result<ThresholdProfile> {
        solve_profile(&self.params, &self.model, n_max, &self.options)
    }

    pub fn profile_with_diagnostics(&self, n_max: usize) -> Result<(ThresholdProfile, Vec<SDiagnostics>)> {
        solve_profile_with_diagnostics(&self.params, &self.model, n_max, &self.options)
    }

    pub fn solve(&self) -> Result<Equilibrium> {
        solve_equilibrium(&self.params, &self.model, &self.options)
    }

    pub fn steady_state(&self, profile: &ThresholdProfile) -> Result<SteadyState> {
        solve_steady_state(profile, &self.params, &self.model, &self.options.steady)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn paper() -> (MarketParams, ServiceModel) {
        (
            MarketParams::new(3.0, 4.85, 1.0).unwrap(),
            ServiceModel::hyperexponential(vec![0.95, 0.05], vec![1.0, 0.2]).unwrap(),
        )
    }

    #[test]
    fn t1_closed_form() {
        let (p, m) = paper();
        let t1 = solve_t_threshold(&p, &m, 1).unwrap().value();
        let exact = libm::log(3.85 * 0.95 / (0.15 * 0.05)) / 0.8;
        assert!((t1 - exact).abs() < 1e-8);
    }

    #[test]
    fn t_edge_cases() {
        let (p, m) = paper();
        assert_eq!(solve_t_threshold(&p, &m, 5).unwrap(), Threshold::At(0.0));
        let t4 = solve_t_threshold(&p, &m, 4).unwrap().value();
        assert!(t4 > 0.0 && t4 < 1.0);
        let e = ServiceModel::exponential(1.0).unwrap();
        assert_eq!(solve_t_threshold(&p, &e, 2).unwrap(), Threshold::Never);
        let u = ServiceModel::uniform(0.0, 1.0).unwrap();
        assert!(matches!(solve_t_threshold(&p, &u, 1), Err(Error::NotImrl)));
    }

    #[test]
    fn bound_for_paper_case() {
        let (p, m) = paper();
        assert_eq!(n_max_bound(&p, &m), 5);
    }

    #[test]
    fn exponential_thresholds_are_infinite() {
        let p = MarketParams::new(1.0, 5.0, 1.0).unwrap();
        let e = ServiceModel::exponential(1.0).unwrap();
        let eq = solve_equilibrium(&p, &e, &SolverOptions::with_points(60)).unwrap();
        assert_eq!(eq.n_max, NmaxOutcome::Exact(5));
        assert!(eq.profile.t.iter().chain(&eq.profile.s).all(|x| matches!(x, Threshold::Never | Threshold::Unresolved)));
    }

    #[test]
    fn empty_deviation_list() {
        let (p, m) = paper();
        let prof = ThresholdProfile::from_values(3, &[7.7], &[7.2, 3.1]).unwrap();
        let r = verify_best_response(&prof, &p, &m, &SimBudget { horizon_events: 10, replications: 1, seed: 0 }, &[]).unwrap();
        assert!(r.checks.is_empty());
    }
}
